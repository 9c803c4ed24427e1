use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric triangular cycle between `base_lr` and `max_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub max_lr: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, max_lr: f64, period: usize) -> Result<Self> {
        let s = LrSchedule { base_lr, max_lr, period };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rates need 0 < base_lr <= max_lr, got {} and {}",
                self.base_lr, self.max_lr
            )));
        }
        if self.period == 0 {
            return Err(Error::InvalidArgument("schedule period must be positive".into()));
        }
        Ok(())
    }
}

/// Rises linearly from `base_lr` to `max_lr` over the first half period and
/// falls back over the second half.
pub fn triangular_lr(step: usize, sched: &LrSchedule) -> f64 {
    let period = sched.period.max(1) as f64;
    let t = (step % sched.period.max(1)) as f64;
    let half = period / 2.0;
    let a = if t <= half { t / half } else { (period - t) / half };
    let lr = sched.base_lr * (1.0 - a) + sched.max_lr * a;
    lr.clamp(sched.base_lr, sched.max_lr)
}

/// The last `n_last` cycle boundaries (multiples of the period) not after
/// `total_steps`, in increasing order.
pub fn snapshot_steps(total_steps: usize, sched: &LrSchedule, n_last: usize) -> Result<Vec<usize>> {
    sched.validate()?;
    let completed = total_steps / sched.period;
    if completed < n_last {
        return Err(Error::TooFewCycles {
            completed,
            requested: n_last,
        });
    }
    Ok((completed + 1 - n_last..=completed).map(|k| k * sched.period).filter(|&s| n_last > 0 && s > 0).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sched() -> LrSchedule {
        LrSchedule::new(0.1, 0.3, 1000).unwrap()
    }

    #[test]
    fn cycle_landmarks() {
        let s = sched();
        assert_eq!(triangular_lr(0, &s), 0.1);
        assert_eq!(triangular_lr(500, &s), 0.3);
        assert_eq!(triangular_lr(1000, &s), 0.1);
        assert!((triangular_lr(250, &s) - 0.2).abs() < 1e-15);
        assert!((triangular_lr(750, &s) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn snapshot_enumeration() {
        let s = sched();
        assert_eq!(snapshot_steps(3000, &s, 3).unwrap(), vec![1000, 2000, 3000]);
        assert_eq!(snapshot_steps(3999, &s, 3).unwrap(), vec![1000, 2000, 3000]);
        assert_eq!(snapshot_steps(5400, &s, 1).unwrap(), vec![5000]);
        assert!(matches!(
            snapshot_steps(2500, &s, 3),
            Err(Error::TooFewCycles { completed: 2, requested: 3 })
        ));
        assert!(snapshot_steps(2500, &s, 0).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(LrSchedule::new(0.0, 1.0, 10).is_err());
        assert!(LrSchedule::new(0.2, 0.1, 10).is_err());
        assert!(LrSchedule::new(0.1, 0.2, 0).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_periodic(base in 1e-6f64..1.0, extra in 0.0f64..2.0, period in 1usize..500, step in 0usize..100_000) {
            let s = LrSchedule::new(base, base + extra, period).unwrap();
            let lr = triangular_lr(step, &s);
            prop_assert!(lr >= s.base_lr && lr <= s.max_lr);
            prop_assert_eq!(lr, triangular_lr(step + period, &s));
        }
    }
}
