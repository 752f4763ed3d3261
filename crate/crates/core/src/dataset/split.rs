use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Episode, Material, Thickness};
use crate::error::{Error, Result};
use crate::nn::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Episode ids per partition, each list sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub stratified: bool,
}

impl Split {
    pub fn select<'a>(&self, episodes: &'a [Episode], ids: &[String]) -> Vec<&'a Episode> {
        episodes.iter().filter(|e| ids.contains(&e.id)).collect()
    }
}

fn counts(n: usize, r: &SplitRatios) -> (usize, usize, usize) {
    let val = ((r.val * n as f64).round() as usize).max(1);
    let test = ((r.test * n as f64).round() as usize).max(1);
    (n - val - test, val, test)
}

fn assign(ids: &mut Vec<String>, r: &SplitRatios, rng: &mut Rng, out: &mut Split) {
    ids.sort();
    rng.shuffle(ids);
    let (_, n_val, n_test) = counts(ids.len(), r);
    out.val.extend(ids.drain(..n_val));
    out.test.extend(ids.drain(..n_test));
    out.train.append(ids);
}

/// Episode-level train/val/test partition, stratified by (material,
/// thickness) when every stratum has at least three episodes.
pub fn split(episodes: &[Episode], ratios: SplitRatios, seed: u64) -> Result<Split> {
    if episodes.len() < 3 {
        return Err(Error::Invalid(format!("need at least 3 episodes to split, got {}", episodes.len())));
    }
    if [ratios.train, ratios.val, ratios.test].iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Invalid("split ratios must be non-negative".into()));
    }
    let mut strata: BTreeMap<(Material, Thickness), Vec<String>> = BTreeMap::new();
    for e in episodes {
        strata.entry(e.stratum()).or_default().push(e.id.clone());
    }

    let mut rng = Rng::new(seed);
    let mut out = Split::default();
    if strata.values().all(|ids| ids.len() >= 3) {
        out.stratified = true;
        for ids in strata.values_mut() {
            assign(ids, &ratios, &mut rng, &mut out);
        }
    } else {
        log::warn!("some (material, thickness) stratum has fewer than 3 episodes; splitting unstratified");
        let mut ids: Vec<String> = episodes.iter().map(|e| e.id.clone()).collect();
        assign(&mut ids, &ratios, &mut rng, &mut out);
    }
    out.train.sort();
    out.val.sort();
    out.test.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::JointState;
    use std::collections::BTreeSet;

    fn eps(groups: &[(Material, usize)]) -> Vec<Episode> {
        let mut out = Vec::new();
        for (m, k) in groups {
            for i in 0..*k {
                out.push(Episode {
                    id: format!("{m}-{i:03}"),
                    rate_hz: 10.0,
                    material: m.clone(),
                    thickness: Thickness::In1_4,
                    times: vec![0.0],
                    series: vec![JointState::zeros(1)],
                });
            }
        }
        out
    }

    #[test]
    fn ten_episodes_split_8_1_1() {
        let e = eps(&[(Material::Oak, 10)]);
        let s = split(&e, SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split(&e, SplitRatios::default(), 1).unwrap());
    }

    #[test]
    fn every_split_sees_every_material() {
        let e = eps(&[(Material::Oak, 20), (Material::Maple, 20), (Material::Birch, 20)]);
        let s = split(&e, SplitRatios::default(), 9).unwrap();
        assert!(s.stratified);
        for part in [&s.train, &s.val, &s.test] {
            let mats: BTreeSet<&str> = part.iter().map(|id| id.split('-').next().unwrap()).collect();
            assert_eq!(mats.len(), 3, "{part:?}");
        }
    }

    #[test]
    fn tiny_strata_fall_back_to_unstratified() {
        let e = eps(&[(Material::Oak, 5), (Material::Maple, 2)]);
        let s = split(&e, SplitRatios::default(), 3).unwrap();
        assert!(!s.stratified);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 7);
    }

    #[test]
    fn too_few_episodes() {
        assert!(split(&eps(&[(Material::Oak, 2)]), SplitRatios::default(), 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_property(seed in any::<u64>(), a in 3usize..15, b in 1usize..15) {
                let e = eps(&[(Material::Oak, a), (Material::Lvl, b)]);
                let s = split(&e, SplitRatios::default(), seed).unwrap();
                let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
                prop_assert_eq!(all.len(), e.len());
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), e.len());
            }
        }
    }
}
