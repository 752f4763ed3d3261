//! Synthetic cutting simulator.
//!
//! Each joint is a decoupled double integrator `m q'' = tau_cmd - b q' - f`,
//! driven by a PD controller tracking a constant-velocity approach that
//! reverses (retract) at the end of the cut. While the cut window is active the
//! contact joint is loaded by the spring-damper force
//! `f = Kp (x - x_r) + Kd (x' - x_r')` with `x` the contact joint position.
//! The material surface `x_r` starts at the entry position, advances with the
//! commanded feed (material is removed as the blade moves), trails the blade
//! by a thickness-dependent penetration depth and carries a per-substep grain
//! disturbance. The recorded torque is the commanded torque plus the contact
//! load plus sensor noise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_episode, Episode, EpisodeLabels, JointState, Material, Thickness};
use crate::error::{Error, Result};
use crate::nn::Rng;

pub const INCH: f64 = 0.0254;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecimenSpec {
    /// Contact stiffness (material proxy).
    pub kp: f64,
    /// Contact damping.
    pub kd: f64,
    /// Specimen thickness in metres.
    pub thickness: f64,
    pub label_material: Material,
    pub label_thickness: Thickness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub start: Vec<f64>,
    /// Approach velocity per joint; negated after the reversal time.
    pub velocity: Vec<f64>,
    /// Per-episode uniform jitter on each start position.
    #[serde(default)]
    pub start_jitter: f64,
    /// Per-episode relative jitter on the approach speed (shared by all joints).
    #[serde(default)]
    pub speed_jitter: f64,
    /// Pause between the end of the cut and the start of the reversal.
    #[serde(default)]
    pub retract_delay_s: f64,
    /// Duration of the cosine velocity reversal; zero reverses instantly.
    #[serde(default)]
    pub reversal_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_joints: usize,
    pub inertia: Vec<f64>,
    pub viscous_damping: Vec<f64>,
    /// PD controller `(kp_ctrl, kd_ctrl)` shared by all joints.
    pub pd_gains: (f64, f64),
    pub trajectory: TrajectorySpec,
    pub contact_joint: usize,
    pub noise_std: f64,
    #[serde(default)]
    pub grain_std: f64,
    /// Penetration depth per metre of specimen thickness (rad/m).
    pub penetration_gain: f64,
    pub rate_hz: f64,
    pub duration_s: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub specimen: SpecimenSpec,
    /// `(t_on, t_off)` seconds; `None` for a free-motion episode.
    pub cut_window: Option<(f64, f64)>,
}

fn default_substeps() -> usize {
    10
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_joints;
        let bad = |m: String| Err(Error::Invalid(m));
        if n == 0 {
            return bad("n_joints must be positive".into());
        }
        for (name, len) in [
            ("inertia", self.inertia.len()),
            ("viscous_damping", self.viscous_damping.len()),
            ("trajectory.start", self.trajectory.start.len()),
            ("trajectory.velocity", self.trajectory.velocity.len()),
        ] {
            if len != n {
                return Err(Error::dim(name, n, len));
            }
        }
        if self.inertia.iter().any(|&m| !(m > 0.0)) {
            return bad("inertia entries must be positive".into());
        }
        if self.contact_joint >= n {
            return bad(format!("contact_joint {} out of range", self.contact_joint));
        }
        if !(self.rate_hz > 0.0 && self.duration_s > 0.0 && self.substeps > 0) {
            return bad("rate_hz, duration_s and substeps must be positive".into());
        }
        let s = &self.specimen;
        if !(s.kp >= 0.0 && s.kd >= 0.0 && s.thickness > 0.0) {
            return bad("specimen needs kp, kd >= 0 and thickness > 0".into());
        }
        if !(self.noise_std >= 0.0 && self.grain_std >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if let Some((on, off)) = self.cut_window {
            if !(0.0 <= on && on < off && off <= self.duration_s) {
                return bad(format!("cut window ({on}, {off}) not inside [0, {}]", self.duration_s));
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    fn reversal_time(&self) -> f64 {
        self.cut_window
            .map_or(0.5 * self.duration_s, |(_, off)| off + self.trajectory.retract_delay_s)
    }

    fn in_contact(&self, t: f64) -> bool {
        self.cut_window.is_some_and(|(on, off)| on <= t && t < off)
    }

    /// Spring-damper load on the contact joint at position `x`, velocity
    /// `xdot`, against a surface at `x_ref` moving with `xdot_ref`.
    pub fn contact_load(&self, x: f64, xdot: f64, x_ref: f64, xdot_ref: f64) -> f64 {
        self.specimen.kp * (x - x_ref) + self.specimen.kd * (xdot - xdot_ref)
    }

    /// Penetration depth, signed along the contact joint's approach direction.
    fn penetration_depth(&self) -> f64 {
        let dir = if self.trajectory.velocity[self.contact_joint] < 0.0 { -1.0 } else { 1.0 };
        dir * self.penetration_gain * self.specimen.thickness
    }
}

/// Per-joint plant state.
#[derive(Clone, Debug, PartialEq)]
struct Plant {
    q: Vec<f64>,
    dq: Vec<f64>,
}

impl Plant {
    /// One semi-implicit Euler step: velocity first, then position with the
    /// updated velocity.
    fn step(&mut self, spec: &SimSpec, torque: &[f64], dt: f64) {
        for j in 0..self.q.len() {
            let acc = (torque[j] - spec.viscous_damping[j] * self.dq[j]) / spec.inertia[j];
            self.dq[j] += dt * acc;
            self.q[j] += dt * self.dq[j];
        }
    }

    #[cfg(test)]
    fn kinetic_energy(&self, spec: &SimSpec) -> f64 {
        self.dq
            .iter()
            .zip(&spec.inertia)
            .map(|(v, m)| 0.5 * m * v * v)
            .sum()
    }
}

struct Reference {
    start: Vec<f64>,
    velocity: Vec<f64>,
    t_rev: f64,
    ramp: f64,
}

impl Reference {
    /// Signed travel (in units of approach velocity) and velocity factor at `t`.
    fn profile(&self, t: f64) -> (f64, f64) {
        use std::f64::consts::PI;
        if t < self.t_rev {
            (t, 1.0)
        } else if t < self.t_rev + self.ramp {
            let phase = PI * (t - self.t_rev) / self.ramp;
            (self.t_rev + self.ramp / PI * phase.sin(), phase.cos())
        } else {
            (self.t_rev - (t - self.t_rev - self.ramp), -1.0)
        }
    }

    fn at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (travel, factor) = self.profile(t);
        let q = self
            .start
            .iter()
            .zip(&self.velocity)
            .map(|(s, v)| s + v * travel)
            .collect();
        let dq = self.velocity.iter().map(|v| factor * v).collect();
        (q, dq)
    }
}

/// Simulates one episode; returns it with the ground-truth cut labels.
pub fn simulate_episode(spec: &SimSpec, seed: u64, id: &str) -> Result<(Episode, EpisodeLabels)> {
    spec.validate()?;
    let n = spec.n_joints;
    let root = Rng::new(seed);
    let mut traj_rng = root.derive(0);
    let mut grain_rng = root.derive(1);
    let mut noise_rng = root.derive(2);

    let speed = 1.0 + spec.trajectory.speed_jitter * traj_rng.uniform_range(-1.0, 1.0);
    let start: Vec<f64> = spec
        .trajectory
        .start
        .iter()
        .map(|s| s + spec.trajectory.start_jitter * traj_rng.uniform_range(-1.0, 1.0))
        .collect();
    let reference = Reference {
        velocity: spec.trajectory.velocity.iter().map(|v| v * speed).collect(),
        start,
        t_rev: spec.reversal_time(),
        ramp: spec.trajectory.reversal_s,
    };

    let (q0, dq0) = reference.at(0.0);
    let mut plant = Plant { q: q0, dq: dq0 };
    let (kp_c, kd_c) = spec.pd_gains;
    let c = spec.contact_joint;
    let dt_sample = 1.0 / spec.rate_hz;
    let dt = dt_sample / spec.substeps as f64;
    let depth = spec.penetration_depth();
    // (blade position, commanded position) at first contact
    let mut entry: Option<(f64, f64)> = None;

    let torques = |plant: &Plant, t: f64, entry: &mut Option<(f64, f64)>, grain: f64| -> (Vec<f64>, f64) {
        let (q_ref, dq_ref) = reference.at(t);
        let cmd: Vec<f64> = (0..n)
            .map(|j| kp_c * (q_ref[j] - plant.q[j]) + kd_c * (dq_ref[j] - plant.dq[j]))
            .collect();
        let load = if spec.in_contact(t) {
            let (x_entry, r_entry) = *entry.get_or_insert((plant.q[c], q_ref[c]));
            let surface = x_entry + (q_ref[c] - r_entry) - depth + grain;
            spec.contact_load(plant.q[c], plant.dq[c], surface, dq_ref[c])
        } else {
            0.0
        };
        (cmd, load)
    };

    let total = spec.samples();
    let mut times = Vec::with_capacity(total);
    let mut series = Vec::with_capacity(total);
    let mut contact_flags = Vec::with_capacity(total);
    for k in 0..total {
        let t_k = k as f64 * dt_sample;
        let mut applied = vec![0.0; n];
        for s in 0..spec.substeps {
            let t = t_k + s as f64 * dt;
            let grain = spec.grain_std * grain_rng.normal();
            let (cmd, load) = torques(&plant, t, &mut entry, grain);
            if s == 0 {
                let mut tau = cmd.clone();
                tau[c] += load;
                for v in tau.iter_mut() {
                    *v += spec.noise_std * noise_rng.normal();
                }
                times.push(t_k);
                series.push(JointState {
                    q: plant.q.clone(),
                    dq: plant.dq.clone(),
                    tau,
                });
                contact_flags.push(spec.in_contact(t_k));
            }
            applied.copy_from_slice(&cmd);
            applied[c] -= load;
            plant.step(spec, &applied, dt);
        }
        if !(plant.q.iter().chain(&plant.dq).all(|v| v.is_finite())) {
            return Err(Error::NonFinite(format!("simulation diverged at sample {k} (t = {t_k:.3} s)")));
        }
    }

    let mut intervals = Vec::new();
    let mut open = None;
    for (k, &flag) in contact_flags.iter().enumerate() {
        match (open, flag) {
            (None, true) => open = Some(k),
            (Some(s), false) => {
                intervals.push((s, k));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        intervals.push((s, total));
    }

    let ep = Episode {
        id: id.to_string(),
        rate_hz: spec.rate_hz,
        material: spec.specimen.label_material.clone(),
        thickness: spec.specimen.label_thickness.clone(),
        times,
        series,
    };
    Ok((ep, EpisodeLabels { cut_intervals: intervals }))
}

#[derive(Clone, Copy, Debug)]
struct MaterialPreset {
    name: &'static str,
    kp: f64,
    kd: f64,
    feed: f64,
}

const MATERIALS: [MaterialPreset; 3] = [
    MaterialPreset { name: "synthetic-soft", kp: 80.0, kd: 8.0, feed: 1.2 },
    MaterialPreset { name: "synthetic-medium", kp: 120.0, kd: 12.0, feed: 1.0 },
    MaterialPreset { name: "synthetic-hard", kp: 180.0, kd: 18.0, feed: 0.8 },
];

/// A six-joint arm cutting one specimen; `feed` scales the approach speed.
pub fn base_spec(kp: f64, kd: f64, thickness: Thickness, material: Material, feed: f64) -> SimSpec {
    let t_in = thickness.inches().unwrap_or(0.25);
    let t_on = 14.0;
    let t_off = t_on + 10.0 + 8.0 * t_in;
    SimSpec {
        n_joints: 6,
        inertia: vec![0.5; 6],
        viscous_damping: vec![0.5; 6],
        pd_gains: (200.0, 20.0),
        trajectory: TrajectorySpec {
            start: vec![0.0, 0.5, -0.3, 1.0, 0.2, -0.5],
            velocity: [0.04, -0.03, 0.05, 0.02, -0.02, 0.03].iter().map(|v| v * feed).collect(),
            start_jitter: 0.02,
            speed_jitter: 0.03,
            retract_delay_s: 1.5,
            reversal_s: 2.0,
        },
        contact_joint: 2,
        noise_std: 0.01,
        grain_std: 0.02,
        penetration_gain: 12.0,
        rate_hz: 10.0,
        duration_s: t_off + 4.0,
        substeps: 10,
        specimen: SpecimenSpec {
            kp,
            kd,
            thickness: t_in * INCH,
            label_material: material,
            label_thickness: thickness,
        },
        cut_window: Some((t_on, t_off)),
    }
}

/// Three stiffness classes crossed with two thicknesses (1/4 in, 3/8 in).
pub fn default_catalog() -> Vec<SimSpec> {
    let mut out = Vec::new();
    for m in MATERIALS {
        for th in [Thickness::In1_4, Thickness::In3_8] {
            out.push(base_spec(m.kp, m.kd, th, Material::Synthetic(m.name.into()), m.feed));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub spec_index: usize,
    pub material: Material,
    pub thickness: Thickness,
    pub cut_intervals: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub catalog_size: usize,
    pub episodes: Vec<ManifestEntry>,
}

pub fn episode_id(spec_index: usize, k: usize) -> String {
    format!("synth-{spec_index:02}-{k:03}")
}

/// In-memory counterpart of [`make_dataset`].
pub fn generate(catalog: &[SimSpec], episodes: usize, seed: u64) -> Result<Vec<(Episode, EpisodeLabels, ManifestEntry)>> {
    if catalog.is_empty() {
        return Err(Error::Invalid("empty catalog".into()));
    }
    let root = Rng::new(seed);
    let mut seeds: Vec<Rng> = (0..catalog.len()).map(|i| root.derive(i as u64)).collect();
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let (i, k) = (e % catalog.len(), e / catalog.len());
        let ep_seed = seeds[i].next_u64();
        let id = episode_id(i, k);
        let (ep, labels) = simulate_episode(&catalog[i], ep_seed, &id)?;
        let entry = ManifestEntry {
            id,
            seed: ep_seed,
            spec_index: i,
            material: ep.material.clone(),
            thickness: ep.thickness.clone(),
            cut_intervals: labels.cut_intervals.clone(),
        };
        out.push((ep, labels, entry));
    }
    out.sort_by(|a, b| a.2.id.cmp(&b.2.id));
    Ok(out)
}

/// Simulates `episodes` episodes, assigned round-robin over the catalog, and
/// writes them in the canonical CSV/JSON schema under `dir`.
pub fn make_dataset(catalog: &[SimSpec], episodes: usize, seed: u64, dir: &Path) -> Result<Manifest> {
    let generated = generate(catalog, episodes, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(generated.len());
    for (ep, _, entry) in generated {
        write_episode(dir, &ep)?;
        entries.push(entry);
    }
    Ok(Manifest {
        seed,
        catalog_size: catalog.len(),
        episodes: entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{interval_iou, label_cutting, load_episodes, windowed_torque_std, LabelerConfig};

    fn spec() -> SimSpec {
        default_catalog()[2].clone()
    }

    #[test]
    fn reference_travel_integrates_velocity_factor() {
        let r = Reference {
            start: vec![0.0],
            velocity: vec![1.0],
            t_rev: 5.0,
            ramp: 1.5,
        };
        let h = 1e-6;
        for i in 0..100 {
            let t = 0.0913 * i as f64;
            let (_, f) = r.profile(t);
            let d = (r.profile(t + h).0 - r.profile(t - h).0) / (2.0 * h);
            assert!((d - f).abs() < 1e-6, "t={t}: {d} vs {f}");
        }
        for t in [5.0, 6.5] {
            assert!((r.profile(t - 1e-9).0 - r.profile(t + 1e-9).0).abs() < 1e-8);
        }
        assert_eq!(r.profile(9.0).1, -1.0);
    }

    #[test]
    fn noiseless_runs_are_bit_identical() {
        let mut s = spec();
        s.noise_std = 0.0;
        s.grain_std = 0.0;
        let (a, la) = simulate_episode(&s, 1, "a").unwrap();
        let (b, lb) = simulate_episode(&s, 1, "a").unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn ground_truth_matches_cut_window() {
        let s = spec();
        let (ep, labels) = simulate_episode(&s, 3, "x").unwrap();
        let (on, off) = s.cut_window.unwrap();
        assert_eq!(ep.len(), (s.duration_s * s.rate_hz).round() as usize);
        assert_eq!(labels.cut_intervals, vec![((on * 10.0).round() as usize, (off * 10.0).round() as usize)]);
    }

    #[test]
    fn doubling_stiffness_doubles_contact_torque_at_entry() {
        let mut base = spec();
        base.specimen.kd = 0.0;
        let run = |kp: f64| {
            let mut s = base.clone();
            s.specimen.kp = kp;
            simulate_episode(&s, 17, "p").unwrap().0
        };
        let free = run(0.0);
        let one = run(40.0);
        let two = run(80.0);
        let k_on = (base.cut_window.unwrap().0 * base.rate_hz).round() as usize;
        let c = base.contact_joint;
        assert_eq!(free.series[k_on].q, one.series[k_on].q);
        let d1 = one.series[k_on].tau[c] - free.series[k_on].tau[c];
        let d2 = two.series[k_on].tau[c] - free.series[k_on].tau[c];
        assert!(d1 > 0.0);
        assert!((d2 - 2.0 * d1).abs() < 1e-9 * d1.abs().max(1.0), "{d1} {d2}");
    }

    #[test]
    fn null_specimen_shows_no_contact_signature() {
        let mut s = spec();
        s.specimen.kp = 0.0;
        s.specimen.kd = 0.0;
        let (ep, truth) = simulate_episode(&s, 5, "n").unwrap();
        let w = windowed_torque_std(&ep, 10);
        let (a, b) = truth.cut_intervals[0];
        let inside = median(w[a..b].to_vec());
        let med = median(w[..a].iter().chain(&w[b..]).copied().collect());
        assert!(inside / med < LabelerConfig::default().k_on, "ratio {}", inside / med);
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn contact_phase_signature_for_default_specs() {
        for (i, s) in default_catalog().iter().enumerate() {
            let (ep, truth) = simulate_episode(s, 100 + i as u64, "s").unwrap();
            let w = windowed_torque_std(&ep, 10);
            let (a, b) = truth.cut_intervals[0];
            let mut outside: Vec<f64> = w[..a].iter().chain(&w[b..]).copied().collect();
            outside.sort_by(f64::total_cmp);
            let med = outside[outside.len() / 2];
            let inside = mean(&w[a..b]);
            assert!(inside > 3.0 * med, "spec {i}: inside {inside} vs median {med}");
        }
    }

    #[test]
    fn free_plant_loses_kinetic_energy() {
        let mut s = spec();
        s.viscous_damping = vec![0.8; 6];
        let mut plant = Plant {
            q: vec![0.0; 6],
            dq: vec![1.0, -0.5, 0.3, 2.0, -1.0, 0.1],
        };
        let kd_ctrl = 5.0;
        let mut prev = plant.kinetic_energy(&s);
        for _ in 0..500 {
            // zero reference motion: the PD derivative term only damps
            let torque: Vec<f64> = plant.dq.iter().map(|v| -kd_ctrl * v).collect();
            plant.step(&s, &torque, 0.01);
            let e = plant.kinetic_energy(&s);
            assert!(e <= prev + 1e-15);
            prev = e;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn stiffness_separates_torque_variance() {
        let base = spec();
        let variance_mean = |kp: f64| {
            let mut s = base.clone();
            s.specimen.kp = kp;
            let vals: Vec<f64> = (0..20)
                .map(|seed| {
                    let (ep, _) = simulate_episode(&s, seed, "v").unwrap();
                    let tau: Vec<f64> = ep.series.iter().map(|x| x.tau.iter().sum::<f64>()).collect();
                    let m = mean(&tau);
                    tau.iter().map(|v| (v - m).powi(2)).sum::<f64>() / tau.len() as f64
                })
                .collect();
            mean(&vals)
        };
        let lo = variance_mean(40.0);
        let hi = variance_mean(80.0);
        assert!(hi > 1.2 * lo, "{lo} vs {hi}");
    }

    #[test]
    fn labeler_recovers_simulated_intervals() {
        let cfg = LabelerConfig::default();
        for (i, s) in default_catalog().iter().enumerate() {
            let (ep, truth) = simulate_episode(s, 7 + i as u64, "l").unwrap();
            let got = label_cutting(&ep, &cfg).unwrap();
            assert_eq!(got.cut_intervals.len(), 1, "spec {i}: {got:?} vs {truth:?}");
            let (a, b) = got.cut_intervals[0];
            let (ta, tb) = truth.cut_intervals[0];
            assert!(a.abs_diff(ta) <= cfg.win, "onset ({a},{b}) vs ({ta},{tb})");
            assert!(b + cfg.win >= tb && b <= tb + 2 * cfg.win, "exit ({a},{b}) vs ({ta},{tb})");
            assert!(interval_iou(&got, &truth, ep.len()) >= 0.8);
        }
    }

    #[test]
    fn unstable_gains_report_first_bad_step() {
        let mut s = spec();
        s.pd_gains = (1e9, 0.0);
        s.substeps = 1;
        let err = simulate_episode(&s, 1, "u").unwrap_err();
        assert!(err.to_string().contains("sample"), "{err}");
    }

    #[test]
    fn dataset_files_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cat = vec![spec()];
        let m = make_dataset(&cat, 1, 9, dir.path()).unwrap();
        assert_eq!(m.episodes.len(), 1);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let cat = default_catalog();
        let gen = generate(&cat, 12, 4).unwrap();
        make_dataset(&cat, 12, 4, dir.path()).unwrap();
        let loaded = load_episodes(dir.path()).unwrap();
        assert_eq!(loaded.len(), gen.len());
        for ((ep, _, _), back) in gen.iter().zip(&loaded) {
            assert_eq!(ep.id, back.id);
            for (a, b) in ep.series.iter().zip(&back.series) {
                for c in 0..18 {
                    assert!((a.channel(c) - b.channel(c)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_window_rejected() {
        let mut s = spec();
        s.cut_window = Some((10.0, 5.0));
        assert!(simulate_episode(&s, 0, "bad").is_err());
    }
}
