use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// F1 of class `1` treated as positive.
    Binary,
    /// Unweighted mean of per-class F1 over every class seen in truth or predictions.
    Macro,
}

fn class_f1(preds: &[usize], truth: &[usize], class: usize) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in preds.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 / (1.0 / p + 1.0 / r)
}

pub fn f1_score(preds: &[usize], truth: &[usize], averaging: Averaging) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Invalid("F1 of an empty prediction set".into()));
    }
    if preds.len() != truth.len() {
        return Err(Error::dim("predictions vs truth", truth.len(), preds.len()));
    }
    Ok(match averaging {
        Averaging::Binary => class_f1(preds, truth, 1),
        Averaging::Macro => {
            let classes: BTreeSet<usize> = preds.iter().chain(truth).copied().collect();
            classes.iter().map(|&c| class_f1(preds, truth, c)).sum::<f64>() / classes.len() as f64
        }
    })
}

/// `k x k` counts, rows indexed by truth and columns by prediction.
pub fn confusion_matrix(preds: &[usize], truth: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for (&p, &t) in preds.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

pub fn rmse(preds: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::dim("rmse rows", truth.len(), preds.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (p, t)) in preds.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(Error::dim(format!("rmse row {i}"), t.len(), p.len()));
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((sum / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;

    #[test]
    fn perfect_and_plugged_values() {
        let t = [0, 1, 1, 0, 2];
        assert_eq!(f1_score(&t, &t, Averaging::Macro).unwrap(), 1.0);
        // tp = 2, fp = 2, fn = 0: p = 0.5, r = 1
        let preds = [1, 1, 1, 1];
        let truth = [1, 0, 1, 0];
        assert!((f1_score(&preds, &truth, Averaging::Binary).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_positive_predictions_score_zero() {
        assert_eq!(f1_score(&[0, 0], &[1, 0], Averaging::Binary).unwrap(), 0.0);
        assert!(f1_score(&[], &[], Averaging::Binary).is_err());
        assert!(f1_score(&[0], &[0, 1], Averaging::Binary).is_err());
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let truth = [0, 0, 1, 2, 2, 2];
        let preds = [0, 1, 1, 2, 0, 2];
        let m = confusion_matrix(&preds, &truth, 3);
        assert_eq!(m.iter().map(|r| r.iter().sum::<usize>()).collect::<Vec<_>>(), vec![2, 1, 3]);
        assert_eq!(m[2][0], 1);
    }

    #[test]
    fn rmse_cases() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v - 0.25).collect()).collect();
        assert!((rmse(&b, &a).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rmse_matches_two_pass_streaming() {
        let mut rng = Rng::new(3);
        let p: Vec<Vec<f64>> = (0..200).map(|_| rng.gaussian(12)).collect();
        let t: Vec<Vec<f64>> = (0..200).map(|_| rng.gaussian(12)).collect();
        // column-major accumulation with a running mean
        let mut mean = 0.0;
        let mut k = 0.0;
        for j in (0..12).rev() {
            for i in (0..200).rev() {
                k += 1.0;
                let e = (p[i][j] - t[i][j]).powi(2);
                mean += (e - mean) / k;
            }
        }
        assert!((rmse(&p, &t).unwrap() - mean.sqrt()).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn macro_f1_invariant_under_relabeling(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), perm_seed in any::<u64>()) {
                let mut perm: Vec<usize> = (0..4).collect();
                crate::nn::Rng::new(perm_seed).shuffle(&mut perm);
                let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
                let p2: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
                let t2: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
                let a = f1_score(&p, &t, Averaging::Macro).unwrap();
                let b = f1_score(&p2, &t2, Averaging::Macro).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }

            #[test]
            fn f1_invariant_under_pair_order(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..60), seed in any::<u64>()) {
                let mut shuffled = pairs.clone();
                crate::nn::Rng::new(seed).shuffle(&mut shuffled);
                let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
                let (p2, t2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
                prop_assert_eq!(
                    f1_score(&p, &t, Averaging::Binary).unwrap(),
                    f1_score(&p2, &t2, Averaging::Binary).unwrap()
                );
            }
        }
    }
}
