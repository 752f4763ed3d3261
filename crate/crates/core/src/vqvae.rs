//! Vector-quantised autoencoder: `G` encoder groups of width `D` are snapped
//! to the nearest row of one shared `K x D` codebook. Decoders see the
//! quantised vector; gradients cross the quantiser unchanged.

use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Parameters, Rng};
use crate::train::{LossBreakdown, Objective};
use crate::vae::{Decoders, Mode, HIDDEN};

#[derive(Clone, Debug, PartialEq)]
pub struct CodeBook {
    embeddings: Vec<f64>,
    num_codes: usize,
    code_dim: usize,
}

impl CodeBook {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_codes = rows.len();
        if num_codes < 2 {
            return Err(Error::Invalid(format!("codebook needs at least 2 rows, got {num_codes}")));
        }
        let code_dim = rows[0].len();
        if code_dim == 0 {
            return Err(Error::Invalid("codebook rows must be non-empty".into()));
        }
        let mut embeddings = Vec::with_capacity(num_codes * code_dim);
        for (k, r) in rows.into_iter().enumerate() {
            if r.len() != code_dim {
                return Err(Error::dim(format!("codebook row {k}"), code_dim, r.len()));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("codebook row {k}")));
            }
            embeddings.extend(r);
        }
        Ok(Self {
            embeddings,
            num_codes,
            code_dim,
        })
    }

    /// Rows drawn from `0.1 * N(0, 1)`.
    pub fn random(num_codes: usize, code_dim: usize, rng: &mut Rng) -> Result<Self> {
        Self::from_rows((0..num_codes).map(|_| rng.gaussian(code_dim).iter().map(|v| 0.1 * v).collect()).collect())
    }

    pub fn num_codes(&self) -> usize {
        self.num_codes
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.embeddings[k * self.code_dim..(k + 1) * self.code_dim]
    }

    fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.embeddings[k * self.code_dim..(k + 1) * self.code_dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.embeddings.chunks(self.code_dim).map(<[f64]>::to_vec).collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            embeddings: vec![0.0; self.embeddings.len()],
            ..*self
        }
    }
}

impl Serialize for CodeBook {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CodeBook {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        CodeBook::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Nearest codebook row per group; ties go to the lowest index.
pub fn quantize(cb: &CodeBook, z_e: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    let d = cb.code_dim;
    if z_e.is_empty() || z_e.len() % d != 0 {
        return Err(Error::dim("pre-latent length (multiple of code_dim)", d, z_e.len()));
    }
    let mut indices = Vec::with_capacity(z_e.len() / d);
    let mut z_q = Vec::with_capacity(z_e.len());
    for g in z_e.chunks(d) {
        let mut best = (0, f64::INFINITY);
        for k in 0..cb.num_codes {
            let dist: f64 = g.iter().zip(cb.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.1 {
                best = (k, dist);
            }
        }
        indices.push(best.0);
        z_q.extend_from_slice(cb.row(best.0));
    }
    Ok((indices, z_q))
}

/// Forward value of the straight-through estimator: the decoder sees `z_q`,
/// while the backward pass hands the decoder gradient to `z_e` as is.
pub fn straight_through(z_e: &[f64], z_q: &[f64]) -> Result<Vec<f64>> {
    if z_e.len() != z_q.len() {
        return Err(Error::dim("straight-through operands", z_e.len(), z_q.len()));
    }
    Ok(z_q.to_vec())
}

/// Backward rule of [`straight_through`]: the identity.
pub fn straight_through_grad(grad_decoder_input: &[f64]) -> Vec<f64> {
    grad_decoder_input.to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqArch {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqVaeModel {
    pub arch: VqArch,
    /// `3·H·N -> G·D`.
    pub encoder: DenseNet,
    #[serde(flatten)]
    pub decoders: Decoders,
    pub codebook: CodeBook,
    #[serde(rename = "D")]
    pub code_dim: usize,
    #[serde(rename = "G")]
    pub groups: usize,
    #[serde(rename = "K")]
    pub num_codes: usize,
    pub beta_commit: f64,
    pub lambda_pred: f64,
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
}

impl VqVaeModel {
    pub fn new(
        arch: VqArch,
        code_dim: usize,
        groups: usize,
        num_codes: usize,
        beta_commit: f64,
        lambda_pred: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if arch.h == 0 || arch.n == 0 || code_dim == 0 || groups == 0 {
            return Err(Error::Invalid("H, N, D and G must all be positive".into()));
        }
        if !(beta_commit >= 0.0 && lambda_pred >= 0.0) {
            return Err(Error::Invalid("beta_commit and lambda_pred must be non-negative".into()));
        }
        let latent = code_dim * groups;
        let encoder = DenseNet::mlp(&[3 * arch.h * arch.n, HIDDEN, HIDDEN, latent], Activation::Identity, rng);
        let decoders = Decoders::build(arch.mode, latent, arch.h, arch.n, rng);
        let codebook = CodeBook::random(num_codes, code_dim, rng)?;
        Ok(Self {
            arch,
            encoder,
            decoders,
            codebook,
            code_dim,
            groups,
            num_codes,
            beta_commit,
            lambda_pred,
            norm_stats: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.decoders.check(self.arch.mode)?;
        if self.codebook.code_dim() != self.code_dim || self.codebook.num_codes() != self.num_codes {
            return Err(Error::Invalid("codebook shape disagrees with D/K".into()));
        }
        if self.encoder.output_dim() != self.code_dim * self.groups {
            return Err(Error::dim("encoder output", self.code_dim * self.groups, self.encoder.output_dim()));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("encoder input entry {i}")));
        }
        self.encoder.predict(x)
    }

    /// Quantised latent (length `G·D`) and its code indices.
    pub fn latent_features(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
        let (idx, z_q) = quantize(&self.codebook, &self.encode(x)?)?;
        Ok((z_q, idx))
    }

    pub fn predict_next(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decoders.predict_next(&self.latent_features(x)?.0)
    }

    pub fn vq_loss(&self, sample: &WindowSample) -> Result<LossBreakdown> {
        self.loss_inner(sample, None)
    }

    pub fn loss_and_grad(&self, sample: &WindowSample) -> Result<(LossBreakdown, VqVaeModel)> {
        let mut g = Objective::zeros_like(self);
        let l = self.loss_inner(sample, Some(&mut g))?;
        Ok((l, g))
    }

    fn loss_inner(&self, sample: &WindowSample, grads: Option<&mut VqVaeModel>) -> Result<LossBreakdown> {
        let (z_e, tape) = self.encoder.forward(&sample.x)?;
        let (idx, z_q) = quantize(&self.codebook, &z_e)?;
        let dec_in = straight_through(&z_e, &z_q)?;

        let mut grads = grads;
        let (recon, pred, dz) = self.decoders.losses(
            self.arch.mode,
            self.lambda_pred,
            &dec_in,
            sample,
            grads.as_deref_mut().map(|g| &mut g.decoders),
        )?;
        let gap: f64 = z_e.iter().zip(&z_q).map(|(a, b)| (a - b) * (a - b)).sum();
        let codebook = gap;
        let commitment = self.beta_commit * gap;
        let total = recon + self.lambda_pred * pred + codebook + commitment;

        if let Some(g) = grads {
            let mut dz_e = straight_through_grad(&dz);
            for (d, (a, b)) in dz_e.iter_mut().zip(z_e.iter().zip(&z_q)) {
                *d += 2.0 * self.beta_commit * (a - b);
            }
            self.encoder.backward_into(&tape, &dz_e, &mut g.encoder)?;
            let d = self.code_dim;
            for (gi, &k) in idx.iter().enumerate() {
                let row = g.codebook.row_mut(k);
                for j in 0..d {
                    row[j] += 2.0 * (z_q[gi * d + j] - z_e[gi * d + j]);
                }
            }
        }
        Ok(LossBreakdown {
            total,
            recon,
            pred,
            codebook,
            commitment,
            ..Default::default()
        })
    }

    /// Number of distinct codes used over `samples`.
    pub fn active_codes(&self, samples: &[WindowSample]) -> Result<usize> {
        let mut used = vec![false; self.num_codes];
        for s in samples {
            for k in self.latent_features(&s.x)?.1 {
                used[k] = true;
            }
        }
        Ok(used.iter().filter(|u| **u).count())
    }
}

impl Parameters for VqVaeModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.params();
        out.extend(self.decoders.params());
        out.push(&self.codebook.embeddings);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoders.params_mut());
        out.push(&mut self.codebook.embeddings);
        out
    }
}

impl Objective for VqVaeModel {
    fn sample_loss(&self, sample: &WindowSample, _noise: Option<&mut Rng>, grads: Option<&mut Self>) -> Result<LossBreakdown> {
        self.loss_inner(sample, grads)
    }

    fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            encoder: self.encoder.zeros_like(),
            decoders: self.decoders.zeros_like(),
            codebook: self.codebook.zeros_like(),
            norm_stats: None,
            ..*self
        }
    }
}
