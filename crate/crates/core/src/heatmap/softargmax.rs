use super::{cast, CoordinateGrid, Real, Volume};
use crate::error::{Error, Result};

/// Softmax over every entry jointly, with max-subtraction.
pub fn softmax_volume<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&h| (h - max).exp()).collect();
    let total: T = out.iter().copied().sum();
    for p in &mut out {
        *p = *p / total;
    }
    out
}

/// Expected grid coordinate `(x, y, ΔZ)` under the softmax of a volume.
pub fn soft_argmax3<T: Real>(volume: &Volume<T>, grid: &CoordinateGrid) -> Result<[T; 3]> {
    grid.check_volume(volume)?;
    let p = softmax_volume(&volume.data);
    let (mx, my, mz) = marginals(volume, &p);
    Ok([
        expectation(&mx, &grid.x),
        expectation(&my, &grid.y),
        expectation(&mz, &grid.z),
    ])
}

pub fn soft_argmax1<T: Real>(logits: &[T], coords: &[f64]) -> Result<T> {
    if logits.len() != coords.len() || logits.is_empty() {
        return Err(Error::Shape(format!("{} logits for {} coordinates", logits.len(), coords.len())));
    }
    let p = softmax_volume(logits);
    Ok(expectation(&p, coords))
}

fn expectation<T: Real>(p: &[T], coords: &[f64]) -> T {
    p.iter().zip(coords).map(|(&p, &g)| p * cast::<T>(g)).sum()
}

/// Probability mass per column, row and depth slice.
fn marginals<T: Real>(volume: &Volume<T>, p: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut mx = vec![T::zero(); volume.width];
    let mut my = vec![T::zero(); volume.height];
    let mut mz = vec![T::zero(); volume.depth];
    for d in 0..volume.depth {
        for v in 0..volume.height {
            let row = &p[volume.index(d, v, 0)..volume.index(d, v, 0) + volume.width];
            let mut row_sum = T::zero();
            for (u, &q) in row.iter().enumerate() {
                mx[u] = mx[u] + q;
                row_sum = row_sum + q;
            }
            my[v] = my[v] + row_sum;
            mz[d] = mz[d] + row_sum;
        }
    }
    (mx, my, mz)
}

/// `∂μ/∂h_k = p_k·(g_k − μ)` for each output coordinate, in the volume's
/// flat logit order.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftArgmaxJacobian<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub z: Vec<T>,
}

pub fn soft_argmax3_grad<T: Real>(volume: &Volume<T>, grid: &CoordinateGrid) -> Result<SoftArgmaxJacobian<T>> {
    let [mu_x, mu_y, mu_z] = soft_argmax3(volume, grid)?;
    let p = softmax_volume(&volume.data);
    let n = p.len();
    let mut jac = SoftArgmaxJacobian {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
    };
    for d in 0..volume.depth {
        let gz = cast::<T>(grid.z[d]);
        for v in 0..volume.height {
            let gy = cast::<T>(grid.y[v]);
            for u in 0..volume.width {
                let pk = p[volume.index(d, v, u)];
                jac.x.push(pk * (cast::<T>(grid.x[u]) - mu_x));
                jac.y.push(pk * (gy - mu_y));
                jac.z.push(pk * (gz - mu_z));
            }
        }
    }
    Ok(jac)
}

/// Vector-Jacobian product: gradient of `upstream · (x, y, ΔZ)` with respect
/// to every logit.
pub fn soft_argmax3_vjp<T: Real>(volume: &Volume<T>, grid: &CoordinateGrid, upstream: [T; 3]) -> Result<Vec<T>> {
    let [mu_x, mu_y, mu_z] = soft_argmax3(volume, grid)?;
    let p = softmax_volume(&volume.data);
    let [gx, gy, gz] = upstream;
    let mut out = Vec::with_capacity(p.len());
    for d in 0..volume.depth {
        let dz = gz * (cast::<T>(grid.z[d]) - mu_z);
        for v in 0..volume.height {
            let dy = gy * (cast::<T>(grid.y[v]) - mu_y);
            for u in 0..volume.width {
                let dx = gx * (cast::<T>(grid.x[u]) - mu_x);
                out.push(p[volume.index(d, v, u)] * (dx + dy + dz));
            }
        }
    }
    Ok(out)
}

pub fn soft_argmax1_grad<T: Real>(logits: &[T], coords: &[f64]) -> Result<Vec<T>> {
    let mu = soft_argmax1(logits, coords)?;
    let p = softmax_volume(logits);
    Ok(p.iter().zip(coords).map(|(&p, &g)| p * (cast::<T>(g) - mu)).collect())
}
