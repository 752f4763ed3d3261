use serde::{Deserialize, Serialize};

use super::{Episode, EpisodeLabels};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub win: usize,
    pub k_on: f64,
    pub k_off: f64,
    pub min_len: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            win: 10,
            k_on: 3.0,
            k_off: 1.5,
            min_len: 5,
        }
    }
}

/// Moving standard deviation of each joint torque over the trailing window
/// `[t + 1 - win, t]` (truncated at the episode start), summed over joints.
pub fn windowed_torque_std(ep: &Episode, win: usize) -> Vec<f64> {
    let n = ep.joints();
    (0..ep.len())
        .map(|t| {
            let hi = t + 1;
            let lo = hi.saturating_sub(win);
            let m = (hi - lo) as f64;
            (0..n)
                .map(|j| {
                    let vals = ep.series[lo..hi].iter().map(|s| s.tau[j]);
                    let mean = vals.clone().sum::<f64>() / m;
                    (vals.map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt()
                })
                .sum()
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Hysteresis detector on the windowed torque std: an interval opens when the
/// signal exceeds `k_on` times the episode median and closes when it drops
/// below `k_off` times the median. Intervals shorter than `min_len` are dropped.
pub fn label_cutting(ep: &Episode, cfg: &LabelerConfig) -> Result<EpisodeLabels> {
    if cfg.win < 2 {
        return Err(Error::Invalid(format!("labeler window must be >= 2, got {}", cfg.win)));
    }
    if !(cfg.k_on > 0.0 && cfg.k_off > 0.0) {
        return Err(Error::Invalid("labeler thresholds must be positive".into()));
    }
    let s = windowed_torque_std(ep, cfg.win);
    let med = median(&s);
    if med <= 0.0 {
        log::warn!("episode {}: median windowed torque std is zero, labeling all non-cutting", ep.id);
        return Ok(EpisodeLabels::default());
    }
    let on = cfg.k_on * med;
    let off = cfg.k_off * med;

    let mut intervals = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &v) in s.iter().enumerate() {
        match open {
            None if v > on => open = Some(t),
            Some(start) if v < off => {
                intervals.push((start, t));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        intervals.push((start, s.len()));
    }
    intervals.retain(|&(a, b)| b - a >= cfg.min_len);
    Ok(EpisodeLabels {
        cut_intervals: intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{JointState, Material, Thickness};
    use crate::nn::Rng;

    fn episode_from_torque(tau: &[f64]) -> Episode {
        Episode {
            id: "t".into(),
            rate_hz: 10.0,
            material: Material::Oak,
            thickness: Thickness::In1_4,
            times: (0..tau.len()).map(|i| i as f64 * 0.1).collect(),
            series: tau
                .iter()
                .map(|&v| JointState {
                    q: vec![0.0, 0.0],
                    dq: vec![0.0, 0.0],
                    tau: vec![v, 0.5 * v],
                })
                .collect(),
        }
    }

    fn noisy_with_bursts(bursts: &[(usize, usize)], len: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..len)
            .map(|t| {
                let base = 0.01 * rng.normal();
                if bursts.iter().any(|&(a, b)| a <= t && t < b) {
                    base + 0.5 * rng.normal()
                } else {
                    base
                }
            })
            .collect()
    }

    #[test]
    fn zero_torque_has_no_intervals() {
        let ep = episode_from_torque(&[0.0; 50]);
        assert!(label_cutting(&ep, &LabelerConfig::default()).unwrap().cut_intervals.is_empty());
    }

    #[test]
    fn window_below_two_rejected() {
        let ep = episode_from_torque(&[0.0; 5]);
        let cfg = LabelerConfig { win: 1, ..Default::default() };
        assert!(label_cutting(&ep, &cfg).is_err());
    }

    #[test]
    fn two_bursts_give_two_disjoint_intervals() {
        let bursts = [(40, 70), (120, 150)];
        let ep = episode_from_torque(&noisy_with_bursts(&bursts, 200, 11));
        let cfg = LabelerConfig::default();
        let labels = label_cutting(&ep, &cfg).unwrap();
        assert_eq!(labels.cut_intervals.len(), 2, "{:?}", labels);
        assert!(labels.is_valid(ep.len()));
        for (&(s, e), &(a, b)) in labels.cut_intervals.iter().zip(&bursts) {
            assert!(s.abs_diff(a) <= cfg.win && e.abs_diff(b) <= cfg.win, "({s},{e}) vs ({a},{b})");
        }
    }

    #[test]
    fn windowed_std_of_ramp_matches_direct_computation() {
        let tau: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ep = episode_from_torque(&tau);
        let s = windowed_torque_std(&ep, 4);
        // interior window of 4 consecutive integers: std = sqrt(1.25); joint 2 is half
        let expected = 1.25f64.sqrt() * 1.5;
        assert!((s[15] - expected).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn positive_scaling_preserves_intervals(seed in 0u64..1000, c in 0.1f64..10.0) {
                let tau = noisy_with_bursts(&[(30, 60)], 120, seed);
                let scaled: Vec<f64> = tau.iter().map(|v| v * c).collect();
                let cfg = LabelerConfig::default();
                let a = label_cutting(&episode_from_torque(&tau), &cfg).unwrap();
                let b = label_cutting(&episode_from_torque(&scaled), &cfg).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
