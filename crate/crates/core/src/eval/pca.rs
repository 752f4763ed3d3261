use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Rng;

const MAX_ITERS: usize = 20_000;
const TOL: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Population covariance of the rows of `x` about `mean`.
pub fn covariance(x: &[Vec<f64>], mean: &[f64]) -> Vec<Vec<f64>> {
    let f = mean.len();
    let mut c = vec![vec![0.0; f]; f];
    for r in x {
        let d: Vec<f64> = r.iter().zip(mean).map(|(a, m)| a - m).collect();
        for i in 0..f {
            for j in i..f {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    let m = x.len() as f64;
    for i in 0..f {
        for j in i..f {
            c[i][j] /= m;
            c[j][i] = c[i][j];
        }
    }
    c
}

/// Top-`k` principal axes by power iteration on the covariance, deflating
/// after each component.
pub fn pca_fit(features: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let m = features.len();
    let f = features.first().map_or(0, Vec::len);
    if k == 0 || k > f {
        return Err(Error::Invalid(format!("PCA needs 1 <= k <= {f} features, got k={k}")));
    }
    if m <= k {
        return Err(Error::Invalid(format!("PCA needs more than k={k} samples, got {m}")));
    }
    let mut mean = vec![0.0; f];
    for r in features {
        if r.len() != f {
            return Err(Error::dim("PCA feature row", f, r.len()));
        }
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v / m as f64;
        }
    }
    let mut cov = covariance(features, &mean);
    let mut rng = Rng::new(0x9ca);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v = rng.gaussian(f);
        let orthogonalize = |v: &mut Vec<f64>, comps: &[Vec<f64>]| {
            for c in comps {
                let p = dot(v, c);
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        };
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        for _ in 0..MAX_ITERS {
            let mut w = mat_vec(&cov, &v);
            orthogonalize(&mut w, &components);
            if normalize(&mut w) == 0.0 {
                break;
            }
            if dot(&w, &v) < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            v = w;
            if delta < TOL {
                break;
            }
        }
        let lambda = dot(&v, &mat_vec(&cov, &v)).max(0.0);
        for i in 0..f {
            for j in 0..f {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        let lambda = explained.last().map_or(lambda, |&prev: &f64| lambda.min(prev));
        explained.push(lambda);
        components.push(v);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
    })
}

impl PcaModel {
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.mean.len() {
            return Err(Error::dim("PCA input", self.mean.len(), z.len()));
        }
        let d: Vec<f64> = z.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &d)).collect())
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(y) {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += a * v);
        }
        out
    }
}
