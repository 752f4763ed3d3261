#![allow(dead_code)]

use latentdyn::dataset::{Material, Thickness, WindowSample};
use latentdyn::lstm::LstmModel;
use latentdyn::nn::{Parameters, ParamsExt, Rng};
use latentdyn::vae::{Mode, VaeArch, VaeModel};
use latentdyn::vqvae::{quantize, VqArch, VqVaeModel};

pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between `analytic` and central differences
/// of `f` over every parameter of `model`.
pub fn max_fd_error<M: Parameters + Clone>(model: &M, analytic: &M, f: impl Fn(&M) -> f64) -> f64 {
    let a = analytic.flat();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (i, &ai) in a.iter().enumerate() {
        let orig = *probe.param_at_mut(i).unwrap();
        *probe.param_at_mut(i).unwrap() = orig + FD_STEP;
        let up = f(&probe);
        *probe.param_at_mut(i).unwrap() = orig - FD_STEP;
        let down = f(&probe);
        *probe.param_at_mut(i).unwrap() = orig;
        let num = (up - down) / (2.0 * FD_STEP);
        let err = (ai - num).abs() / ai.abs().max(num.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

pub fn toy_sample(h: usize, n: usize, rng: &mut Rng) -> WindowSample {
    WindowSample {
        x: rng.gaussian(3 * h * n),
        y_next: rng.gaussian(2 * n),
        cutting: false,
        material: Material::Maple,
        thickness: Thickness::In1_4,
        episode_id: "toy".into(),
        t_index: h - 1,
    }
}

/// Worst FD error of the VAE objective for one mode and latent size.
pub fn vae_fd_error(mode: Mode, l: usize, seed: u64) -> f64 {
    let (h, n) = (3, 2);
    let mut rng = Rng::new(seed);
    let arch = VaeArch { h, n, latent_dim: l, mode };
    let m = VaeModel::new(arch, 0.8, 1.5, &mut rng).unwrap();
    let s = toy_sample(h, n, &mut rng);
    let eps = rng.gaussian(l);
    let (_, g) = m.loss_and_grad(&s, &eps).unwrap();
    max_fd_error(&m, &g, |p| p.loss(&s, &eps).unwrap().total)
}

fn half_sq(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// Straight-through surrogate of the VQ objective with the code assignment
/// and the quantisation offset `z_q - z_e` frozen at `base`.
pub fn vq_surrogate(m: &VqVaeModel, base: &VqVaeModel, s: &WindowSample) -> f64 {
    let z_e0 = base.encoder.predict(&s.x).unwrap();
    let (idx, z_q0) = quantize(&base.codebook, &z_e0).unwrap();
    let z_e = m.encoder.predict(&s.x).unwrap();
    let dec_in: Vec<f64> = z_e.iter().zip(z_e0.iter().zip(&z_q0)).map(|(e, (e0, q0))| e + (q0 - e0)).collect();
    let mut total = 0.0;
    if m.arch.mode.uses_recon() {
        total += half_sq(&m.decoders.recon_decoder.as_ref().unwrap().predict(&dec_in).unwrap(), &s.x);
    }
    if m.arch.mode.uses_pred() {
        let p = half_sq(&m.decoders.pred_decoder.as_ref().unwrap().predict(&dec_in).unwrap(), &s.y_next);
        total += m.lambda_pred * p;
    }
    let d = m.code_dim;
    for (g, &k) in idx.iter().enumerate() {
        let row = m.codebook.row(k);
        for j in 0..d {
            total += (z_e0[g * d + j] - row[j]).powi(2);
            total += m.beta_commit * (z_e[g * d + j] - z_q0[g * d + j]).powi(2);
        }
    }
    total
}

pub fn vq_fd_error(mode: Mode, seed: u64) -> f64 {
    let (h, n) = (2, 2);
    let mut rng = Rng::new(seed);
    let m = VqVaeModel::new(VqArch { h, n, mode }, 2, 2, 6, 0.25, 1.2, &mut rng).unwrap();
    let s = toy_sample(h, n, &mut rng);
    let (l, g) = m.loss_and_grad(&s).unwrap();
    assert!((l.total - vq_surrogate(&m, &m, &s)).abs() < 1e-10);
    max_fd_error(&m, &g, |p| vq_surrogate(p, &m, &s))
}

pub fn lstm_fd_error(h: usize, n: usize, hidden: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let m = LstmModel::new(h, n, hidden, &mut rng).unwrap();
    let seq: Vec<Vec<f64>> = (0..h).map(|_| rng.gaussian(3 * n)).collect();
    let y = rng.gaussian(2 * n);
    let mut g = latentdyn::train::Objective::zeros_like(&m);
    m.seq_loss(&seq, &y, Some(&mut g)).unwrap();
    max_fd_error(&m, &g, |p| p.seq_loss(&seq, &y, None).unwrap())
}
