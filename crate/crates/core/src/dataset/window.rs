use serde::{Deserialize, Serialize};

use super::{Episode, EpisodeLabels, Material, Thickness};

/// One model input: `H` consecutive joint states flattened channel-major
/// (positions block, velocities block, torques block; each block time-major,
/// joints fastest) plus the next-step `q` then `dq`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub x: Vec<f64>,
    pub y_next: Vec<f64>,
    pub cutting: bool,
    pub material: Material,
    pub thickness: Thickness,
    pub episode_id: String,
    /// Index of the last state inside the window; the target is `t_index + 1`.
    pub t_index: usize,
}

impl WindowSample {
    /// Index into `x` of channel `block` (0 = q, 1 = dq, 2 = tau), step `t`, joint `j`.
    pub fn x_index(h: usize, n: usize, block: usize, t: usize, j: usize) -> usize {
        block * h * n + t * n + j
    }

    /// The window re-ordered as `H` per-step vectors `[q, dq, tau]`.
    pub fn sequence(&self, h: usize, n: usize) -> Vec<Vec<f64>> {
        (0..h)
            .map(|t| {
                (0..3)
                    .flat_map(|b| (0..n).map(move |j| (b, j)))
                    .map(|(b, j)| self.x[Self::x_index(h, n, b, t, j)])
                    .collect()
            })
            .collect()
    }

    /// Last observed `q` and `dq`, i.e. the persistence forecast of `y_next`.
    pub fn last_state(&self, h: usize, n: usize) -> Vec<f64> {
        (0..2)
            .flat_map(|b| (0..n).map(move |j| (b, j)))
            .map(|(b, j)| self.x[Self::x_index(h, n, b, h - 1, j)])
            .collect()
    }
}

/// Slides an `h`-step window over an (already normalized) episode. Sample `i`
/// covers `[i, i + h)` and targets index `i + h`; it is flagged cutting when
/// the target lies inside a cut interval.
pub fn window(ep: &Episode, labels: &EpisodeLabels, h: usize) -> Vec<WindowSample> {
    let len = ep.len();
    if h == 0 || len < h + 1 {
        log::warn!("episode {} has {} states, too short for window {}", ep.id, len, h);
        return Vec::new();
    }
    let n = ep.joints();
    (0..len - h)
        .map(|i| {
            let mut x = vec![0.0; 3 * h * n];
            for t in 0..h {
                let s = &ep.series[i + t];
                for j in 0..n {
                    x[WindowSample::x_index(h, n, 0, t, j)] = s.q[j];
                    x[WindowSample::x_index(h, n, 1, t, j)] = s.dq[j];
                    x[WindowSample::x_index(h, n, 2, t, j)] = s.tau[j];
                }
            }
            let target = &ep.series[i + h];
            let mut y_next = target.q.clone();
            y_next.extend_from_slice(&target.dq);
            WindowSample {
                x,
                y_next,
                cutting: labels.contains(i + h),
                material: ep.material.clone(),
                thickness: ep.thickness.clone(),
                episode_id: ep.id.clone(),
                t_index: i + h - 1,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::JointState;

    fn ramp_episode(len: usize, n: usize) -> Episode {
        Episode {
            id: "ramp".into(),
            rate_hz: 10.0,
            material: Material::Birch,
            thickness: Thickness::In1_4,
            times: (0..len).map(|i| i as f64 * 0.1).collect(),
            series: (0..len)
                .map(|t| JointState {
                    q: (0..n).map(|j| (t * 10 + j) as f64).collect(),
                    dq: (0..n).map(|j| -((t * 10 + j) as f64)).collect(),
                    tau: (0..n).map(|j| 1000.0 + (t * 10 + j) as f64).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn minimal_length_gives_one_sample() {
        let ep = ramp_episode(11, 2);
        assert_eq!(window(&ep, &EpisodeLabels::default(), 10).len(), 1);
    }

    #[test]
    fn count_formula() {
        let ep = ramp_episode(30, 2);
        assert_eq!(window(&ep, &EpisodeLabels::default(), 10).len(), 20);
        assert!(window(&ramp_episode(10, 2), &EpisodeLabels::default(), 10).is_empty());
    }

    #[test]
    fn ramp_layout_matches_index_arithmetic() {
        let (h, n) = (4, 3);
        let ep = ramp_episode(12, n);
        let samples = window(&ep, &EpisodeLabels::default(), h);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.x.len(), 3 * h * n);
            for t in 0..h {
                for j in 0..n {
                    let v = ((i + t) * 10 + j) as f64;
                    assert_eq!(s.x[t * n + j], v);
                    assert_eq!(s.x[h * n + t * n + j], -v);
                    assert_eq!(s.x[2 * h * n + t * n + j], 1000.0 + v);
                }
            }
            let tv: Vec<f64> = (0..n).map(|j| ((i + h) * 10 + j) as f64).collect();
            assert_eq!(&s.y_next[..n], tv.as_slice());
            assert_eq!(s.t_index, i + h - 1);
            assert_eq!(s.sequence(h, n)[h - 1][0], ((i + h - 1) * 10) as f64);
            assert_eq!(s.last_state(h, n)[0], ((i + h - 1) * 10) as f64);
        }
    }

    #[test]
    fn cutting_flag_follows_target_index() {
        let ep = ramp_episode(20, 1);
        let labels = EpisodeLabels { cut_intervals: vec![(8, 12)] };
        let samples = window(&ep, &labels, 5);
        let flagged: Vec<usize> = samples.iter().filter(|s| s.cutting).map(|s| s.t_index + 1).collect();
        assert_eq!(flagged, vec![8, 9, 10, 11]);
    }
}
