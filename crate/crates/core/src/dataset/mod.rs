//! Episode ingestion, torque-variance cut labeling, normalization, windowing
//! and episode-level splitting.

mod io;
mod label;
mod norm;
mod split;
mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_episodes, load_episodes_with_report, write_episode, EpisodeMeta, LoadReport};
pub use label::{label_cutting, windowed_torque_std, LabelerConfig};
pub use norm::{fit_normalizer, NormStats, STD_FLOOR};
pub use split::{split, Split, SplitRatios};
pub use window::{window, WindowSample};

/// Joint positions (rad), velocities (rad/s) and torques (N·m) at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub tau: Vec<f64>,
}

impl JointState {
    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            dq: vec![0.0; n],
            tau: vec![0.0; n],
        }
    }

    pub fn joints(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.dq).chain(&self.tau).all(|v| v.is_finite())
    }

    /// Channel value by flat index `q1..qN, dq1..dqN, tau1..tauN`.
    pub fn channel(&self, c: usize) -> f64 {
        let n = self.q.len();
        match c / n {
            0 => self.q[c],
            1 => self.dq[c - n],
            _ => self.tau[c - 2 * n],
        }
    }

    fn channel_mut(&mut self, c: usize) -> &mut f64 {
        let n = self.q.len();
        match c / n {
            0 => &mut self.q[c],
            1 => &mut self.dq[c - n],
            _ => &mut self.tau[c - 2 * n],
        }
    }
}

macro_rules! label_enum {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(into = "String", try_from = "String")]
        pub enum $name {
            $($variant,)*
            /// Free-form label, always prefixed `synthetic-`.
            Synthetic(String),
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $($name::$variant => f.write_str($text),)*
                    $name::Synthetic(s) => f.write_str(s),
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let t = s.trim();
                $(if t.eq_ignore_ascii_case($text) {
                    return Ok($name::$variant);
                })*
                if t.starts_with("synthetic-") && t.len() > "synthetic-".len() {
                    return Ok($name::Synthetic(t.to_string()));
                }
                Err(format!("unknown {} label {:?}", stringify!($name).to_lowercase(), s))
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.to_string()
            }
        }

        impl TryFrom<String> for $name {
            type Error = String;

            fn try_from(s: String) -> std::result::Result<Self, String> {
                s.parse()
            }
        }
    };
}

label_enum!(Material {
    Lvl => "LVL",
    Maple => "Maple",
    Oak => "Oak",
    Birch => "Birch",
    Hardwood => "Hardwood",
});

label_enum!(Thickness {
    In3_16 => "3/16",
    In1_4 => "1/4",
    In5_16 => "5/16",
    In3_8 => "3/8",
    In7_16 => "7/16",
});

impl Thickness {
    pub const CATALOG: [Thickness; 5] = [
        Thickness::In3_16,
        Thickness::In1_4,
        Thickness::In5_16,
        Thickness::In3_8,
        Thickness::In7_16,
    ];

    /// Thickness in inches; `None` for synthetic labels.
    pub fn inches(&self) -> Option<f64> {
        Some(match self {
            Thickness::In3_16 => 3.0 / 16.0,
            Thickness::In1_4 => 0.25,
            Thickness::In5_16 => 5.0 / 16.0,
            Thickness::In3_8 => 3.0 / 8.0,
            Thickness::In7_16 => 7.0 / 16.0,
            Thickness::Synthetic(_) => return None,
        })
    }

    pub fn from_inches(v: f64) -> Option<Thickness> {
        Self::CATALOG
            .into_iter()
            .find(|t| (t.inches().unwrap() - v).abs() < 1e-6)
    }
}

/// One recorded approach/cut/retract run of the arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub rate_hz: f64,
    pub material: Material,
    pub thickness: Thickness,
    pub times: Vec<f64>,
    pub series: Vec<JointState>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.series.first().map_or(0, JointState::joints)
    }

    pub fn stratum(&self) -> (Material, Thickness) {
        (self.material.clone(), self.thickness.clone())
    }
}

/// Half-open `[start, end)` sample ranges in which the arm is cutting.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLabels {
    pub cut_intervals: Vec<(usize, usize)>,
}

impl EpisodeLabels {
    pub fn contains(&self, t: usize) -> bool {
        self.cut_intervals.iter().any(|&(s, e)| s <= t && t < e)
    }

    /// Intervals are non-empty, ordered, disjoint and end within `len`.
    pub fn is_valid(&self, len: usize) -> bool {
        let mut prev_end = 0;
        for &(s, e) in &self.cut_intervals {
            if s >= e || s < prev_end || e > len {
                return false;
            }
            prev_end = e;
        }
        true
    }

    pub fn covered(&self) -> usize {
        self.cut_intervals.iter().map(|(s, e)| e - s).sum()
    }
}

/// Intersection-over-union of the sample sets covered by two labelings.
pub fn interval_iou(a: &EpisodeLabels, b: &EpisodeLabels, len: usize) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for t in 0..len {
        let (x, y) = (a.contains(t), b.contains(t));
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
