//! Gaussian-latent VAE over flattened windows, with reconstruction,
//! next-state prediction, or both as decoder targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Parameters, Rng};
use crate::train::{half_sq_error, Objective};

pub use crate::train::LossBreakdown;

pub const HIDDEN: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Recon,
    Pred,
    Both,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Recon, Mode::Pred, Mode::Both];

    pub fn uses_recon(self) -> bool {
        matches!(self, Mode::Recon | Mode::Both)
    }

    pub fn uses_pred(self) -> bool {
        matches!(self, Mode::Pred | Mode::Both)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Recon => "recon",
            Mode::Pred => "pred",
            Mode::Both => "both",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recon" => Ok(Mode::Recon),
            "pred" => Ok(Mode::Pred),
            "both" => Ok(Mode::Both),
            other => Err(Error::Invalid(format!("unknown mode '{other}' (recon, pred, both)"))),
        }
    }
}

/// Decoder pair shared by the VAE and the VQ-VAE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoders {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon_decoder: Option<DenseNet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_decoder: Option<DenseNet>,
}

impl Decoders {
    pub(crate) fn build(mode: Mode, latent: usize, h: usize, n: usize, rng: &mut Rng) -> Self {
        Self {
            recon_decoder: mode
                .uses_recon()
                .then(|| DenseNet::mlp(&[latent, HIDDEN, HIDDEN, 3 * h * n], Activation::Identity, rng)),
            pred_decoder: mode
                .uses_pred()
                .then(|| DenseNet::mlp(&[latent, HIDDEN, HIDDEN, 2 * n], Activation::Identity, rng)),
        }
    }

    pub(crate) fn check(&self, mode: Mode) -> Result<()> {
        if mode.uses_recon() && self.recon_decoder.is_none() {
            return Err(Error::Invalid(format!("mode {mode} needs a reconstruction decoder")));
        }
        if mode.uses_pred() && self.pred_decoder.is_none() {
            return Err(Error::Invalid(format!("mode {mode} needs a prediction decoder")));
        }
        Ok(())
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            recon_decoder: self.recon_decoder.as_ref().map(DenseNet::zeros_like),
            pred_decoder: self.pred_decoder.as_ref().map(DenseNet::zeros_like),
        }
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for d in [&self.recon_decoder, &self.pred_decoder].into_iter().flatten() {
            out.extend(d.params());
        }
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for d in [&mut self.recon_decoder, &mut self.pred_decoder].into_iter().flatten() {
            out.extend(d.params_mut());
        }
        out
    }

    /// Task losses of the active decoders at latent `z`. Returns
    /// `(recon, pred, dtotal/dz)`; `pred` is already unweighted.
    pub(crate) fn losses(
        &self,
        mode: Mode,
        lambda_pred: f64,
        z: &[f64],
        sample: &WindowSample,
        grads: Option<&mut Decoders>,
    ) -> Result<(f64, f64, Vec<f64>)> {
        self.check(mode)?;
        let mut dz = vec![0.0; z.len()];
        let (mut recon, mut pred) = (0.0, 0.0);
        let mut grads = grads;
        if mode.uses_recon() {
            let dec = self.recon_decoder.as_ref().expect("checked");
            let (xh, tape) = dec.forward(z)?;
            if xh.len() != sample.x.len() {
                return Err(Error::dim("reconstruction target", xh.len(), sample.x.len()));
            }
            let (l, g) = half_sq_error(&xh, &sample.x);
            recon = l;
            if let Some(gr) = grads.as_deref_mut() {
                let gz = dec.backward_into(&tape, &g, gr.recon_decoder.as_mut().expect("same shape"))?;
                add_into(&mut dz, &gz, 1.0);
            }
        }
        if mode.uses_pred() {
            let dec = self.pred_decoder.as_ref().expect("checked");
            let (yh, tape) = dec.forward(z)?;
            if yh.len() != sample.y_next.len() {
                return Err(Error::dim("prediction target", yh.len(), sample.y_next.len()));
            }
            let (l, mut g) = half_sq_error(&yh, &sample.y_next);
            pred = l;
            if let Some(gr) = grads.as_deref_mut() {
                g.iter_mut().for_each(|v| *v *= lambda_pred);
                let gz = dec.backward_into(&tape, &g, gr.pred_decoder.as_mut().expect("same shape"))?;
                add_into(&mut dz, &gz, 1.0);
            }
        }
        Ok((recon, pred, dz))
    }

    pub(crate) fn predict_next(&self, z: &[f64]) -> Result<Vec<f64>> {
        match &self.pred_decoder {
            Some(d) => d.predict(z),
            None => Err(Error::Invalid("model has no prediction decoder".into())),
        }
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub latent_dim: usize,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub arch: VaeArch,
    /// `3·H·N -> 2·L`: first half `mu`, second half `logvar`.
    pub encoder: DenseNet,
    #[serde(flatten)]
    pub decoders: Decoders,
    pub beta_kl: f64,
    pub lambda_pred: f64,
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
}

impl VaeModel {
    pub fn new(arch: VaeArch, beta_kl: f64, lambda_pred: f64, rng: &mut Rng) -> Result<Self> {
        if arch.latent_dim == 0 || arch.h == 0 || arch.n == 0 {
            return Err(Error::Invalid("H, N and L must all be positive".into()));
        }
        if !(beta_kl >= 0.0 && lambda_pred >= 0.0) {
            return Err(Error::Invalid("beta_kl and lambda_pred must be non-negative".into()));
        }
        let input = 3 * arch.h * arch.n;
        let encoder = DenseNet::mlp(&[input, HIDDEN, HIDDEN, 2 * arch.latent_dim], Activation::Identity, rng);
        let decoders = Decoders::build(arch.mode, arch.latent_dim, arch.h, arch.n, rng);
        Ok(Self {
            arch,
            encoder,
            decoders,
            beta_kl,
            lambda_pred,
            norm_stats: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.decoders.check(self.arch.mode)?;
        let l = self.arch.latent_dim;
        if l == 0 {
            return Err(Error::Invalid("latent dimension must be >= 1".into()));
        }
        if self.encoder.output_dim() != 2 * l {
            return Err(Error::dim("encoder output", 2 * l, self.encoder.output_dim()));
        }
        if self.encoder.input_dim() != 3 * self.arch.h * self.arch.n {
            return Err(Error::dim("encoder input", 3 * self.arch.h * self.arch.n, self.encoder.input_dim()));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("encoder input entry {i}")));
        }
        let mut out = self.encoder.predict(x)?;
        let logvar = out.split_off(self.arch.latent_dim);
        Ok((out, logvar))
    }

    /// Posterior mean, used as the classification feature.
    pub fn latent_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(x)?.0)
    }

    /// Next-state forecast from the posterior mean.
    pub fn predict_next(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decoders.predict_next(&self.encode(x)?.0)
    }

    pub fn loss(&self, sample: &WindowSample, eps: &[f64]) -> Result<LossBreakdown> {
        self.loss_with_eps(sample, eps, None)
    }

    pub fn loss_and_grad(&self, sample: &WindowSample, eps: &[f64]) -> Result<(LossBreakdown, VaeModel)> {
        let mut g = Objective::zeros_like(self);
        let l = self.loss_with_eps(sample, eps, Some(&mut g))?;
        Ok((l, g))
    }

    fn loss_with_eps(&self, sample: &WindowSample, eps: &[f64], grads: Option<&mut VaeModel>) -> Result<LossBreakdown> {
        let l = self.arch.latent_dim;
        if eps.len() != l {
            return Err(Error::dim("reparameterization noise", l, eps.len()));
        }
        let (enc_out, tape) = self.encoder.forward(&sample.x)?;
        let (mu, logvar) = enc_out.split_at(l);
        let z = reparameterize(mu, logvar, eps);
        let kl = kl_divergence(mu, logvar);

        let mut grads = grads;
        let (recon, pred, dz) = self.decoders.losses(
            self.arch.mode,
            self.lambda_pred,
            &z,
            sample,
            grads.as_deref_mut().map(|g| &mut g.decoders),
        )?;
        let total = recon + self.lambda_pred * pred + self.beta_kl * kl;

        if let Some(g) = grads {
            let mut d_out = vec![0.0; 2 * l];
            for j in 0..l {
                let sd = (0.5 * logvar[j]).exp();
                d_out[j] = dz[j] + self.beta_kl * mu[j];
                d_out[l + j] = dz[j] * eps[j] * 0.5 * sd + self.beta_kl * 0.5 * (logvar[j].exp() - 1.0);
            }
            self.encoder.backward_into(&tape, &d_out, &mut g.encoder)?;
        }
        Ok(LossBreakdown {
            total,
            kl,
            recon,
            pred,
            ..Default::default()
        })
    }
}

impl Parameters for VaeModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.params();
        out.extend(self.decoders.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoders.params_mut());
        out
    }
}

impl Objective for VaeModel {
    fn sample_loss(&self, sample: &WindowSample, noise: Option<&mut Rng>, grads: Option<&mut Self>) -> Result<LossBreakdown> {
        let eps = match noise {
            Some(rng) => rng.gaussian(self.arch.latent_dim),
            None => vec![0.0; self.arch.latent_dim],
        };
        self.loss_with_eps(sample, &eps, grads)
    }

    fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            encoder: self.encoder.zeros_like(),
            decoders: self.decoders.zeros_like(),
            beta_kl: self.beta_kl,
            lambda_pred: self.lambda_pred,
            norm_stats: None,
        }
    }
}

/// `z = mu + exp(logvar / 2) * eps`, element-wise.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    let s: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv - lv.exp_m1() - m * m)
        .sum();
    (-0.5 * s).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Material, Thickness};
    use crate::nn::ParamsExt;

    fn sample(h: usize, n: usize, rng: &mut Rng) -> WindowSample {
        WindowSample {
            x: rng.gaussian(3 * h * n),
            y_next: rng.gaussian(2 * n),
            cutting: false,
            material: Material::Oak,
            thickness: Thickness::In1_4,
            episode_id: "s".into(),
            t_index: 0,
        }
    }

    fn model(mode: Mode, l: usize, seed: u64) -> VaeModel {
        let arch = VaeArch {
            h: 3,
            n: 2,
            latent_dim: l,
            mode,
        };
        VaeModel::new(arch, 0.7, 1.3, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn zero_encoder_gives_standard_posterior() {
        let mut m = model(Mode::Both, 4, 1);
        m.encoder.set_zero();
        let (mu, lv) = m.encode(&vec![0.3; 18]).unwrap();
        assert_eq!(mu, vec![0.0; 4]);
        assert_eq!(lv, vec![0.0; 4]);
    }

    #[test]
    fn encoder_output_sizes() {
        for l in [4, 6, 11] {
            let m = model(Mode::Recon, l, 2);
            assert_eq!(m.encoder.output_dim(), 2 * l);
            let x = vec![0.1; 18];
            assert_eq!(m.encode(&x).unwrap(), m.encode(&x).unwrap());
            assert_eq!(m.latent_features(&x).unwrap(), m.encode(&x).unwrap().0);
        }
    }

    #[test]
    fn encode_rejects_bad_input() {
        let m = model(Mode::Recon, 2, 2);
        assert!(m.encode(&[0.0; 5]).is_err());
        let mut x = vec![0.0; 18];
        x[3] = f64::NAN;
        assert!(m.encode(&x).is_err());
    }

    #[test]
    fn reparameterize_cases() {
        assert_eq!(reparameterize(&[1.0, -2.0], &[0.3, 4.0], &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(reparameterize(&[1.0], &[0.0], &[0.25]), vec![1.25]);
    }

    #[test]
    fn reparameterized_spread_matches_sigma() {
        let mut rng = Rng::new(8);
        let (mu, lv) = (0.4, -1.2f64);
        let n = 100_000;
        let zs: Vec<f64> = (0..n).map(|_| reparameterize(&[mu], &[lv], &[rng.normal()])[0]).collect();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd / (0.5 * lv).exp() - 1.0).abs() < 0.02);
    }

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(kl_divergence(&[0.0], &[0.0]), 0.0);
        assert!((kl_divergence(&[1.0], &[0.0]) - 0.5).abs() < 1e-12);
        assert!(kl_divergence(&[0.0, 0.0], &[1e-9, -1e-9]) >= 0.0);
    }

    #[test]
    fn perfect_decoders_give_zero_loss() {
        let mut m = model(Mode::Both, 2, 3);
        m.encoder.set_zero();
        let mut s = sample(3, 2, &mut Rng::new(1));
        // zero weights, biases equal to the targets: constant perfect output
        for (dec, target) in [(&mut m.decoders.recon_decoder, &mut s.x), (&mut m.decoders.pred_decoder, &mut s.y_next)] {
            let d = dec.as_mut().unwrap();
            d.set_zero();
            let last = d.layers.last_mut().unwrap();
            last.bias_mut().copy_from_slice(target);
        }
        let l = m.loss(&s, &[0.0, 0.0]).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn recon_mode_has_no_pred_term() {
        let m = model(Mode::Recon, 2, 4);
        let s = sample(3, 2, &mut Rng::new(2));
        let l = m.loss(&s, &[0.3, -0.1]).unwrap();
        assert_eq!(l.pred, 0.0);
        assert!((l.total - (l.recon + m.beta_kl * l.kl)).abs() < 1e-12);
    }

    #[test]
    fn missing_decoder_is_an_error() {
        let mut m = model(Mode::Recon, 2, 4);
        m.arch.mode = Mode::Both;
        let s = sample(3, 2, &mut Rng::new(2));
        assert!(m.loss(&s, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn inactive_decoder_receives_no_gradient() {
        let mut m = model(Mode::Both, 2, 5);
        m.arch.mode = Mode::Recon;
        let s = sample(3, 2, &mut Rng::new(3));
        let (_, g) = m.loss_and_grad(&s, &[0.2, 0.4]).unwrap();
        assert!(g.decoders.pred_decoder.unwrap().flat().iter().all(|v| *v == 0.0));
        assert!(g.decoders.recon_decoder.unwrap().flat().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn checkpoint_json_round_trip() {
        let m = model(Mode::Pred, 3, 6);
        let s = serde_json::to_string(&m).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["arch"]["L"], 3);
        assert!(v.get("recon_decoder").is_none());
        let back: VaeModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kl_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..6), lv in prop::collection::vec(-5.0f64..5.0, 6)) {
                let lv = &lv[..mu.len()];
                let k = kl_divergence(&mu, lv);
                prop_assert!(k >= 0.0);
                if mu.iter().chain(lv).any(|v| v.abs() > 1e-3) {
                    prop_assert!(k > 0.0);
                }
            }
        }
    }
}
