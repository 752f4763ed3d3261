use serde::{Deserialize, Serialize};

use super::Episode;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel affine normalization, channels ordered `q1..qN, dq1..dqN, tau1..tauN`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn joints(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn apply(&self, ep: &Episode) -> Result<Episode> {
        if ep.joints() * 3 != self.channels() {
            return Err(Error::dim(format!("normalizing episode {}", ep.id), self.channels(), ep.joints() * 3));
        }
        let mut out = ep.clone();
        for s in &mut out.series {
            for c in 0..self.channels() {
                let v = s.channel_mut(c);
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }

    pub fn normalize_value(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize_value(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}

/// Population mean and standard deviation of every channel over all
/// time steps of the given (training) episodes.
pub fn fit_normalizer(train: &[Episode]) -> Result<NormStats> {
    let first = train
        .iter()
        .find(|e| !e.is_empty())
        .ok_or_else(|| Error::Invalid("cannot fit normalizer on an empty training set".into()))?;
    let channels = first.joints() * 3;
    let mut count = 0usize;
    let mut sum = vec![0.0; channels];
    for ep in train {
        if ep.joints() * 3 != channels && !ep.is_empty() {
            return Err(Error::dim(format!("episode {} channels", ep.id), channels, ep.joints() * 3));
        }
        for s in &ep.series {
            for (c, acc) in sum.iter_mut().enumerate() {
                *acc += s.channel(c);
            }
            count += 1;
        }
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; channels];
    for ep in train {
        for s in &ep.series {
            for (c, acc) in sq.iter_mut().enumerate() {
                *acc += (s.channel(c) - mean[c]).powi(2);
            }
        }
    }
    let std = sq
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let sd = (s / n).sqrt();
            if sd < STD_FLOOR {
                log::warn!("channel {c} is constant on the training split; std clamped to {STD_FLOOR}");
                STD_FLOOR
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{JointState, Material, Thickness};
    use crate::nn::Rng;

    fn ep(id: &str, rows: Vec<[f64; 3]>) -> Episode {
        Episode {
            id: id.into(),
            rate_hz: 10.0,
            material: Material::Maple,
            thickness: Thickness::In3_8,
            times: (0..rows.len()).map(|i| i as f64).collect(),
            series: rows
                .into_iter()
                .map(|[q, dq, tau]| JointState { q: vec![q], dq: vec![dq], tau: vec![tau] })
                .collect(),
        }
    }

    #[test]
    fn two_point_channel() {
        let e = ep("a", vec![[0.0, 1.0, 5.0], [2.0, 3.0, 5.0]]);
        let st = fit_normalizer(std::slice::from_ref(&e)).unwrap();
        assert_eq!(st.mean[0], 1.0);
        assert_eq!(st.std[0], 1.0);
        assert_eq!(st.std[2], STD_FLOOR);
        let n = st.apply(&e).unwrap();
        assert_eq!(n.series[0].q[0], -1.0);
        assert_eq!(n.series[1].q[0], 1.0);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(fit_normalizer(&[]).is_err());
    }

    fn random_episodes(seed: u64) -> Vec<Episode> {
        let mut rng = Rng::new(seed);
        (0..4)
            .map(|k| {
                ep(
                    &format!("e{k}"),
                    (0..50)
                        .map(|_| [3.0 + 2.0 * rng.normal(), -1.0 + 0.1 * rng.normal(), 40.0 * rng.normal()])
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn normalized_training_set_has_unit_moments() {
        let eps = random_episodes(4);
        let st = fit_normalizer(&eps).unwrap();
        let normed: Vec<Episode> = eps.iter().map(|e| st.apply(e).unwrap()).collect();
        let again = fit_normalizer(&normed).unwrap();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-9);
            assert!((again.std[c] - 1.0).abs() < 1e-6);
        }
        // already standardized data: stats are the identity transform
        let renormed = again.apply(&normed[0]).unwrap();
        for (a, b) in renormed.series.iter().zip(&normed[0].series) {
            assert!((a.q[0] - b.q[0]).abs() < 1e-9 && (a.tau[0] - b.tau[0]).abs() < 1e-9);
        }
    }
}
