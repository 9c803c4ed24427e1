//! MPJPE evaluation, per-action aggregation, flip test-time augmentation and
//! snapshot-ensemble averaging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose3D;

/// Left/right joint pairing used by horizontal flips. Always an involution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct JointFlipMap {
    permutation: Vec<usize>,
}

/// Joint names of the assumed 17-joint Human3.6M ordering behind
/// [`JointFlipMap::h36m17`]. The challenge defines its own order; pass a
/// custom map when it differs.
pub const H36M17_JOINTS: [&str; 17] = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
];

impl JointFlipMap {
    pub fn new(permutation: Vec<usize>) -> Result<Self> {
        let n = permutation.len();
        for (j, &p) in permutation.iter().enumerate() {
            if p >= n || permutation[p] != j {
                return Err(Error::InvalidArgument(format!(
                    "flip map is not an involution at joint {j} -> {p}"
                )));
            }
        }
        Ok(JointFlipMap { permutation })
    }

    pub fn identity(joints: usize) -> Self {
        JointFlipMap {
            permutation: (0..joints).collect(),
        }
    }

    pub fn h36m17() -> Self {
        let mut perm: Vec<usize> = (0..17).collect();
        for (a, b) in [(1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16)] {
            perm.swap(a, b);
        }
        JointFlipMap { permutation: perm }
    }

    /// The 17-joint map when `joints == 17`, the identity otherwise.
    pub fn default_for(joints: usize) -> Self {
        if joints == 17 {
            Self::h36m17()
        } else {
            Self::identity(joints)
        }
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn partner(&self, joint: usize) -> usize {
        self.permutation[joint]
    }
}

impl TryFrom<Vec<usize>> for JointFlipMap {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        JointFlipMap::new(v)
    }
}

impl From<JointFlipMap> for Vec<usize> {
    fn from(m: JointFlipMap) -> Self {
        m.permutation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame_id: String,
    pub action: String,
    pub pred: Pose3D,
    pub gt: Pose3D,
}

/// Mean Euclidean joint distance after subtracting each pose's root.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    pred.check_compatible(gt)?;
    let (a, b) = (pred.root_relative(), gt.root_relative());
    let total: f64 = a
        .joints
        .iter()
        .zip(&b.joints)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum();
    Ok(total / a.joints.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub action: String,
    pub frames: usize,
    pub mpjpe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    /// Sorted by action name.
    pub rows: Vec<ActionRow>,
    /// Mean over all frames.
    pub frame_mean: f64,
    /// Mean of the per-action means.
    pub action_mean: f64,
}

pub fn per_action_report(records: &[EvalRecord]) -> Result<ActionReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no evaluation records".into()));
    }
    // Sorting first makes every sum independent of the input order.
    let mut scored = records
        .iter()
        .map(|r| Ok((r.action.as_str(), r.frame_id.as_str(), mpjpe(&r.pred, &r.gt)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));

    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &(action, _, e) in &scored {
        groups.entry(action).or_default().push(e);
    }
    let rows: Vec<ActionRow> = groups
        .into_iter()
        .map(|(action, errs)| ActionRow {
            action: action.to_string(),
            frames: errs.len(),
            mpjpe: errs.iter().sum::<f64>() / errs.len() as f64,
        })
        .collect();
    let frame_mean = scored.iter().map(|s| s.2).sum::<f64>() / scored.len() as f64;
    let action_mean = rows.iter().map(|r| r.mpjpe).sum::<f64>() / rows.len() as f64;
    Ok(ActionReport {
        rows,
        frame_mean,
        action_mean,
    })
}

/// Mirrors a camera-space pose about the Y-Z plane: X is negated and each
/// joint moves to its left/right partner.
pub fn flip_pose(pose: &Pose3D, map: &JointFlipMap) -> Result<Pose3D> {
    if map.len() != pose.num_joints() {
        return Err(Error::LengthMismatch {
            left: map.len(),
            right: pose.num_joints(),
        });
    }
    let mut joints = vec![[0.0; 3]; pose.num_joints()];
    for (j, p) in pose.joints.iter().enumerate() {
        joints[map.partner(j)] = [-p[0], p[1], p[2]];
    }
    Ok(Pose3D {
        joints,
        root_index: map.partner(pose.root_index),
    })
}

/// Averages a plain prediction with the un-flipped prediction made on the
/// mirrored input.
pub fn tta_average(pred_plain: &Pose3D, pred_from_flipped_input: &Pose3D, map: &JointFlipMap) -> Result<Pose3D> {
    pred_plain.check_compatible(pred_from_flipped_input)?;
    let unflipped = flip_pose(pred_from_flipped_input, map)?;
    Ok(Pose3D {
        joints: pred_plain
            .joints
            .iter()
            .zip(&unflipped.joints)
            .map(|(a, b)| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])])
            .collect(),
        root_index: pred_plain.root_index,
    })
}

/// Per-coordinate arithmetic mean. Values are summed in sorted order so the
/// result does not depend on the order of `preds`.
pub fn ensemble_average(preds: &[Pose3D]) -> Result<Pose3D> {
    let first = preds
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty list of poses".into()))?;
    for p in &preds[1..] {
        first.check_compatible(p)?;
    }
    let k = preds.len() as f64;
    let mut column = Vec::with_capacity(preds.len());
    let joints = (0..first.num_joints())
        .map(|j| {
            let mut out = [0.0; 3];
            for (c, slot) in out.iter_mut().enumerate() {
                column.clear();
                column.extend(preds.iter().map(|p| p.joints[j][c]));
                column.sort_by(f64::total_cmp);
                *slot = column.iter().sum::<f64>() / k;
            }
            out
        })
        .collect();
    Ok(Pose3D {
        joints,
        root_index: first.root_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose17() -> Pose3D {
        let joints = (0..17)
            .map(|j| [j as f64 * 10.0 - 80.0, (j * j) as f64 - 40.0, 3000.0 + j as f64 * 7.0])
            .collect();
        Pose3D::new(joints, 0).unwrap()
    }

    #[test]
    fn flip_map_validation() {
        assert!(JointFlipMap::new(vec![1, 0, 2]).is_ok());
        assert!(JointFlipMap::new(vec![1, 2, 0]).is_err());
        assert!(JointFlipMap::new(vec![3, 1, 2]).is_err());
        let m = JointFlipMap::h36m17();
        assert_eq!(m.partner(0), 0);
        assert_eq!(m.partner(1), 4);
        assert_eq!(m.partner(16), 13);
        assert!(JointFlipMap::new(m.clone().into()).is_ok());
        let parsed: std::result::Result<JointFlipMap, _> = serde_json::from_str("[1, 2, 0]");
        assert!(parsed.is_err());
    }

    #[test]
    fn identical_and_translated_poses_score_zero() {
        let p = pose17();
        assert_eq!(mpjpe(&p, &p).unwrap(), 0.0);
        assert_eq!(mpjpe(&p.translated([128.0, -64.0, 512.0]), &p).unwrap(), 0.0);
    }

    #[test]
    fn single_joint_offset() {
        let gt = pose17();
        let mut pred = gt.clone();
        pred.joints[5][0] += 3.0;
        pred.joints[5][1] += 4.0;
        let e = mpjpe(&pred, &gt).unwrap();
        assert!((e - 5.0 / 17.0).abs() < 1e-9);
        assert!((e - 0.2941).abs() < 1e-4);
    }

    #[test]
    fn mismatched_joint_counts() {
        let a = pose17();
        let b = Pose3D::new(vec![[0.0; 3]; 16], 0).unwrap();
        assert!(mpjpe(&a, &b).is_err());
    }

    fn record(frame: &str, action: &str, err: f64) -> EvalRecord {
        let gt = Pose3D::new(vec![[0.0; 3], [0.0, 0.0, 100.0]], 0).unwrap();
        let mut pred = gt.clone();
        pred.joints[1][0] += 2.0 * err;
        EvalRecord {
            frame_id: frame.into(),
            action: action.into(),
            pred,
            gt,
        }
    }

    #[test]
    fn action_means() {
        let r = per_action_report(&[record("a", "Walk", 10.0), record("b", "Walk", 20.0)]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].mpjpe, 15.0);
        assert_eq!(r.frame_mean, 15.0);

        let r = per_action_report(&[record("a", "Sit", 10.0), record("b", "Walk", 30.0)]).unwrap();
        assert_eq!(r.rows.iter().map(|r| r.mpjpe).collect::<Vec<_>>(), [10.0, 30.0]);
        assert_eq!(r.frame_mean, 20.0);
        assert_eq!(r.action_mean, 20.0);

        // frame- and action-weighted means differ once groups are unbalanced
        let r = per_action_report(&[record("a", "Sit", 10.0), record("b", "Walk", 30.0), record("c", "Walk", 50.0)]).unwrap();
        assert_eq!(r.frame_mean, 30.0);
        assert_eq!(r.action_mean, 25.0);
        assert!(per_action_report(&[]).is_err());
    }

    #[test]
    fn report_ignores_record_order() {
        let mut records: Vec<_> = (0..40)
            .map(|i| record(&format!("f{i:02}"), ["Sit", "Walk", "Eat"][i % 3], 0.1 + i as f64 * 1.37))
            .collect();
        let a = per_action_report(&records).unwrap();
        records.reverse();
        records.swap(3, 17);
        assert_eq!(per_action_report(&records).unwrap(), a);
    }

    #[test]
    fn flip_moves_joint_to_partner() {
        let mut p = Pose3D::new(vec![[0.0; 3]; 17], 0).unwrap();
        p.joints[1] = [100.0, 0.0, 0.0];
        let f = flip_pose(&p, &JointFlipMap::h36m17()).unwrap();
        assert_eq!(f.joints[4], [-100.0, 0.0, 0.0]);
        assert_eq!(f.joints[1], [-0.0, 0.0, 0.0]);
    }

    #[test]
    fn mirror_symmetric_pose_is_fixed() {
        let map = JointFlipMap::h36m17();
        let mut p = Pose3D::new(vec![[0.0, 0.0, 3000.0]; 17], 0).unwrap();
        for (j, y) in [(7, -200.0), (8, -400.0), (9, -500.0), (10, -600.0)] {
            p.joints[j] = [0.0, y, 3000.0];
        }
        for (l, r, x) in [(4, 1, 120.0), (5, 2, 130.0), (6, 3, 140.0), (11, 14, 180.0), (12, 15, 250.0), (13, 16, 300.0)] {
            p.joints[l] = [x, l as f64 * 10.0, 3010.0];
            p.joints[r] = [-x, l as f64 * 10.0, 3010.0];
        }
        assert_eq!(flip_pose(&p, &map).unwrap(), p);
    }

    #[test]
    fn tta_midpoint() {
        let map = JointFlipMap::identity(1);
        let a = Pose3D::new(vec![[0.0, 0.0, 0.0]], 0).unwrap();
        let b = Pose3D::new(vec![[-2.0, 2.0, 2.0]], 0).unwrap();
        assert_eq!(tta_average(&a, &b, &map).unwrap().joints[0], [1.0, 1.0, 1.0]);

        // an exactly flip-equivariant predictor collapses the average
        let map = JointFlipMap::h36m17();
        let plain = pose17();
        let from_flipped = flip_pose(&plain, &map).unwrap();
        assert_eq!(tta_average(&plain, &from_flipped, &map).unwrap(), plain);
    }

    #[test]
    fn ensemble_cases() {
        let p = pose17();
        assert_eq!(ensemble_average(&[p.clone()]).unwrap(), p);
        assert_eq!(ensemble_average(&vec![p.clone(); 4]).unwrap(), p);
        let up = p.translated([8.0, -4.0, 2.0]);
        let down = p.translated([-8.0, 4.0, -2.0]);
        assert_eq!(ensemble_average(&[up, down]).unwrap(), p);
        assert!(ensemble_average(&[]).is_err());
        assert!(ensemble_average(&[p, Pose3D::new(vec![[0.0; 3]], 0).unwrap()]).is_err());
    }

    fn arb_pose(j: usize) -> impl Strategy<Value = Pose3D> {
        prop::collection::vec(prop::array::uniform3(-2000.0f64..2000.0), j)
            .prop_map(|joints| Pose3D { joints, root_index: 0 })
    }

    proptest! {
        #[test]
        fn mpjpe_properties(a in arb_pose(17), b in arb_pose(17), t1 in prop::array::uniform3(-500.0f64..500.0), t2 in prop::array::uniform3(-500.0f64..500.0)) {
            let map = JointFlipMap::h36m17();
            let e = mpjpe(&a, &b).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert_eq!(e, mpjpe(&b, &a).unwrap());
            prop_assert!((mpjpe(&a.translated(t1), &b.translated(t2)).unwrap() - e).abs() < 1e-9);
            let fa = flip_pose(&a, &map).unwrap();
            prop_assert_eq!(&flip_pose(&fa, &map).unwrap(), &a);
            prop_assert!((mpjpe(&fa, &flip_pose(&b, &map).unwrap()).unwrap() - e).abs() < 1e-9);
        }

        #[test]
        fn ensemble_order_and_translation(poses in prop::collection::vec(arb_pose(5), 1..6), t in prop::array::uniform3(-500.0f64..500.0)) {
            let avg = ensemble_average(&poses).unwrap();
            let mut rev = poses.clone();
            rev.reverse();
            prop_assert_eq!(&ensemble_average(&rev).unwrap(), &avg);
            let moved: Vec<_> = poses.iter().map(|p| p.translated(t)).collect();
            let avg_moved = ensemble_average(&moved).unwrap();
            for (a, b) in avg_moved.joints.iter().zip(&avg.translated(t).joints) {
                for c in 0..3 {
                    prop_assert!((a[c] - b[c]).abs() < 1e-9);
                }
            }
        }
    }
}
