//! Principal components of state samples by power iteration on the
//! covariance matrix with deflation.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::check_dim;
use crate::{Error, Result};

const MAX_ITERS: usize = 100_000;
const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal directions in order of decreasing variance.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    /// Fewer components than requested carried variance.
    pub rank_deficient: bool,
}

/// Sample covariance (divisor `n - 1`) of the rows of `data`.
pub fn covariance<S: AsRef<[f64]>>(data: &[S]) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.len() < 2 {
        return Err(Error::TooFewSamples(data.len()));
    }
    let d = data[0].as_ref().len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for row in data {
        let row = row.as_ref();
        check_dim("pca row", d, row.len())?;
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for row in data {
        for (c, (x, m)) in centred.iter_mut().zip(row.as_ref().iter().zip(&mean)) {
            *c = x - m;
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += centred[i] * centred[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mean, cov))
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Up to `k` leading components of at least three rows.
pub fn pca<S: AsRef<[f64]>>(data: &[S], k: usize) -> Result<Pca> {
    if data.len() < 3 {
        return Err(Error::TooFewSamples(data.len()));
    }
    let (mean, mut cov) = covariance(data)?;
    let d = mean.len();
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let floor = TOLERANCE * trace.max(f64::MIN_POSITIVE);
    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut variances = Vec::new();
    let mut next = vec![0.0; d];
    for _ in 0..k.min(d) {
        // start from the column with the most remaining mass
        let col = (0..d)
            .max_by(|&a, &b| cov[a * d + a].partial_cmp(&cov[b * d + b]).unwrap_or(core::cmp::Ordering::Equal))
            .unwrap_or(0);
        if cov[col * d + col] <= floor {
            break;
        }
        let mut v: Vec<f64> = (0..d).map(|j| cov[j * d + col]).collect();
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..MAX_ITERS {
            for c in &components {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
            let len = norm(&v);
            if len <= 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= len);
            mat_vec(&cov, &v, &mut next);
            lambda = dot(&v, &next);
            let residual = next.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
            core::mem::swap(&mut v, &mut next);
            if residual <= TOLERANCE * lambda.abs().max(floor) {
                let len = norm(&v);
                v.iter_mut().for_each(|x| *x /= len);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                iterations: MAX_ITERS,
                residual: lambda,
            });
        }
        if lambda <= floor {
            break;
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        variances.push(lambda);
    }
    Ok(Pca {
        rank_deficient: components.len() < k.min(d),
        mean,
        components,
        variances,
    })
}

impl Pca {
    /// Coordinates of `point` along each component, after centring.
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        check_dim("pca point", self.mean.len(), point.len())?;
        let centred: Vec<f64> = point.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self.components.iter().map(|c| dot(&centred, c)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn anisotropic(n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        // sd 3 along the first axis, 1 along the second, embedded in 5-D
        (0..n)
            .map(|_| {
                let (a, b) = (3.0 * rng.normal(), rng.normal());
                vec![a, b, 0.0, 0.0, 0.0]
            })
            .collect()
    }

    #[test]
    fn dominant_axis_recovered() {
        let mut rng = Rng::new(1);
        let data = anisotropic(10_000, &mut rng);
        let p = pca(&data, 2).unwrap();
        assert!(p.components[0][0].abs() > 0.99);
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = Rng::new(2);
        let data: Vec<Vec<f64>> = (0..500).map(|_| (0..6).map(|k| (k + 1) as f64 * rng.normal()).collect()).collect();
        let p = pca(&data, 4).unwrap();
        for i in 0..p.components.len() {
            for j in 0..p.components.len() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&p.components[i], &p.components[j]) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn matches_dense_eigendecomposition() {
        let mut rng = Rng::new(3);
        let mix: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let z: Vec<f64> = (0..4).map(|k| (4 - k) as f64 * rng.normal()).collect();
                (0..4).map(|i| (0..4).map(|j| mix[i * 4 + j] * z[j]).sum()).collect()
            })
            .collect();
        let p = pca(&data, 2).unwrap();
        let (_, cov) = covariance(&data).unwrap();
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(4, 4, &cov));
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        for (k, &idx) in order.iter().take(2).enumerate() {
            assert!((p.variances[k] - eig.eigenvalues[idx]).abs() < 1e-8 * eig.eigenvalues[idx]);
            let cos: f64 = (0..4).map(|i| p.components[k][i] * eig.eigenvectors[(i, idx)]).sum();
            assert!((cos.abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn line_data_has_one_component() {
        let data: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca(&data, 2).unwrap();
        assert_eq!(p.components.len(), 1);
        assert!(p.rank_deficient);
        let rest = covariance(&data).unwrap().1;
        let trace: f64 = (0..3).map(|i| rest[i * 3 + i]).sum();
        assert!((p.variances[0] - trace).abs() < 1e-8 * trace);
    }

    #[test]
    fn projections_are_centred() {
        let mut rng = Rng::new(4);
        let data: Vec<Vec<f64>> = (0..400).map(|_| vec![5.0 + rng.normal(), -3.0 + 0.5 * rng.normal(), rng.normal()]).collect();
        let p = pca(&data, 2).unwrap();
        let mut sum = [0.0; 2];
        for row in &data {
            let c = p.project(row).unwrap();
            sum[0] += c[0];
            sum[1] += c[1];
        }
        assert!(sum.iter().all(|s| (s / data.len() as f64).abs() < 1e-10));
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(pca(&[vec![1.0], vec![2.0]], 1), Err(Error::TooFewSamples(2))));
    }
}
