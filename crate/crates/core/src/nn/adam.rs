use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one parameter set, in the order given by
/// [`Parameters::params`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.params().iter().map(|p| p.len()).collect();
        Self {
            config,
            step_count: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so an error leaves both params and state intact.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.params();
        if gs.len() != self.first_moment.len() {
            return Err(Error::dim("adam parameter groups", self.first_moment.len(), gs.len()));
        }
        for (i, (g, m)) in gs.iter().zip(&self.first_moment).enumerate() {
            if g.len() != m.len() {
                return Err(Error::dim(format!("adam group {i}"), m.len(), g.len()));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient group {i} entry {j}")));
            }
        }
        let mut ps = params.params_mut();
        if ps.len() != gs.len() {
            return Err(Error::dim("adam parameter groups", gs.len(), ps.len()));
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in ps
            .iter_mut()
            .zip(&gs)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn params(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Scalar(vec![1.5, -2.0]);
        let g = Scalar(vec![0.0, 0.0]);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            st.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.0, vec![1.5, -2.0]);
        assert!(st.first_moment[0].iter().all(|&v| v == 0.0));
        assert!(st.second_moment[0].iter().all(|&v| v == 0.0));
        assert_eq!(st.step_count, 5);
    }

    #[test]
    fn first_step_magnitude() {
        // m_hat = 1, v_hat = 1  =>  delta = -lr / (1 + eps)
        let mut p = Scalar(vec![0.0]);
        let g = Scalar(vec![1.0]);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        st.step(&mut p, &g).unwrap();
        let expected = -5e-4 / (1.0 + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-18, "{} vs {}", p.0[0], expected);
        assert!((p.0[0] - (-4.99999995e-4)).abs() < 1e-15);
    }

    #[test]
    fn repeated_positive_gradient_descends() {
        let mut p = Scalar(vec![0.0]);
        let g = Scalar(vec![1.0]);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        st.step(&mut p, &g).unwrap();
        let after_one = p.0[0];
        st.step(&mut p, &g).unwrap();
        assert!(after_one < 0.0 && p.0[0] < after_one);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = Scalar(vec![1.0]);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let err = st.step(&mut p, &Scalar(vec![f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(st.step_count, 0);
    }
}
