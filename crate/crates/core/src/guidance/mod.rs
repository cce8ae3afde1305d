//! Classifier-free and constraint guidance, and the placement sampler.

pub mod potentials;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{ddim_from_x0, ddim_timesteps, gaussian, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::{
    energy_terms, max_congestion, reference_placement, rudy_map_coords, EnergyRefs, EnergyWeights,
    DEFAULT_RESOLUTION,
};
use crate::model::{Conditioning, GraphContext, ScoreModel};
use crate::netlist::{coords_to_flat, flat_to_coords, ModuleKind, Netlist, Placement};

pub use potentials::{
    congestion_surrogate, hpwl_gradient, phi_congestion, phi_legality, phi_legality_hashed,
    phi_legality_pairs, separation, Potential, HASH_THRESHOLD,
};

/// `eps_uncond + s·(eps_cond - eps_uncond)`.
pub fn cfg_combine(eps_cond: &[f64], eps_uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(Error::ShapeMismatch {
            expected: eps_cond.len(),
            actual: eps_uncond.len(),
        });
    }
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(c, u)| u + scale * (c - u))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    #[default]
    Ddim,
    Ddpm,
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(Self::Ddim),
            "ddpm" => Ok(Self::Ddpm),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampler '{other}', expected ddim or ddpm"
            ))),
        }
    }
}

/// Sampling and guidance settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Classifier-free guidance scale `s`.
    pub cfg_scale: f64,
    /// Target relative energy fed to the conditional branch.
    pub e_rel_target: f64,
    /// Legality weight at `t = T`, decaying linearly to 0.
    pub w_legality: f64,
    /// Congestion weight at `t = 0`, growing linearly from 0.
    pub w_congestion: f64,
    /// Congestion threshold. `None` uses 0.9 of the reference layout's peak.
    pub c_threshold: Option<f64>,
    /// Log-sum-exp temperature of the congestion surrogate.
    pub tau: f64,
    /// When set, HPWL is added to the guidance potential with this weight.
    pub w_hpwl: f64,
    pub sampler: Sampler,
    /// DDIM step count. DDPM always walks the full schedule.
    pub steps: usize,
    pub resolution: (usize, usize),
    /// Sample with the EMA weights rather than the live ones.
    pub use_ema: bool,
    /// Record the predicted clean placement every this many steps (0: never).
    pub snapshot_every: usize,
    /// Clip each predicted clean placement to the canvas before stepping.
    pub clip_x0: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            cfg_scale: 2.0,
            e_rel_target: 0.95,
            w_legality: 5.0e5,
            w_congestion: 1.0,
            c_threshold: None,
            tau: 0.05,
            w_hpwl: 0.0,
            sampler: Sampler::Ddim,
            steps: 50,
            resolution: DEFAULT_RESOLUTION,
            use_ema: true,
            snapshot_every: 0,
            clip_x0: true,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        Conditioning::energy(self.e_rel_target)?;
        let checks = [
            ("cfg_scale", self.cfg_scale),
            ("w_legality", self.w_legality),
            ("w_congestion", self.w_congestion),
            ("w_hpwl", self.w_hpwl),
        ];
        for (name, v) in checks {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidArgument("resolution must be at least 1x1".into()));
        }
        Ok(())
    }

    /// The same settings with every constraint weight set to 0.
    pub fn unguided(&self) -> Self {
        Self {
            w_legality: 0.0,
            w_congestion: 0.0,
            w_hpwl: 0.0,
            ..self.clone()
        }
    }

    /// `(w_leg(t), w_cong(t))` with linear schedules over `[0, T]`.
    pub fn weights_at(&self, t: usize, total: usize) -> (f64, f64) {
        let frac = t as f64 / total as f64;
        (self.w_legality * frac, self.w_congestion * (1.0 - frac))
    }
}

/// Default congestion threshold: 0.9 of the reference layout's peak RUDY.
pub fn default_threshold(netlist: &Netlist, resolution: (usize, usize)) -> Result<f64> {
    let reference = reference_placement(netlist.num_modules());
    Ok(0.9 * max_congestion(&rudy_map_coords(netlist, &reference, resolution)?))
}

/// Gradient of the weighted guidance potential at `x0_hat`, flat.
pub fn guidance_gradient(
    netlist: &Netlist,
    x0_hat: &[[f64; 2]],
    w_leg: f64,
    w_cong: f64,
    w_hpwl: f64,
    c_th: f64,
    config: &GuidanceConfig,
) -> Vec<f64> {
    let n = netlist.num_modules();
    let mut grad = vec![0.0; 2 * n];
    let mut add = |p: Potential, w: f64| {
        for (g, v) in grad.chunks_exact_mut(2).zip(&p.grad) {
            g[0] += w * v[0];
            g[1] += w * v[1];
        }
    };
    if w_leg > 0.0 {
        add(phi_legality(netlist, x0_hat), w_leg);
    }
    if w_cong > 0.0 {
        add(
            phi_congestion(netlist, x0_hat, config.resolution, c_th, config.tau),
            w_cong,
        );
    }
    if w_hpwl > 0.0 {
        add(hpwl_gradient(netlist, x0_hat), w_hpwl);
    }
    grad
}

/// `eps + sqrt(1-ab)/sqrt(ab) · grad`, which lowers the potential of the
/// implied clean placement.
pub fn guided_epsilon(eps: &[f64], grad: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let k = (1.0 - ab).sqrt() / ab.sqrt();
    eps.iter().zip(grad).map(|(e, g)| e + k * g).collect()
}

/// Longest flow sub-step per unit of the largest guidance weight.
const FLOW_STEP: f64 = 0.05;

/// Sub-step budget of one guided update.
const FLOW_SUBSTEPS: usize = 50;

/// Moves `x0_hat` along the gradient flow `dx/dτ = -∇Φ(x)` of the weighted
/// guidance potential for time `horizon`.
///
/// One explicit step of length `horizon` is exactly the update that
/// [`guided_epsilon`] implies for the clean placement. The flow is instead
/// integrated in sub-steps no longer than `FLOW_STEP / w_max`, at most
/// `FLOW_SUBSTEPS` of them, so large weights or early timesteps cannot
/// overshoot. With `clip_x0` every sub-step is projected onto the canvas.
/// `pin` restores constrained coordinates after every sub-step.
pub fn guided_x0(
    netlist: &Netlist,
    x0_hat: &[f64],
    horizon: f64,
    (w_leg, w_cong, w_hpwl): (f64, f64, f64),
    c_th: f64,
    config: &GuidanceConfig,
    mut pin: impl FnMut(&mut [f64]),
) -> Vec<f64> {
    let mut x = x0_hat.to_vec();
    let w_max = w_leg.max(w_cong).max(w_hpwl);
    if !(w_max > 0.0 && horizon > 0.0) {
        return x;
    }
    let h_max = FLOW_STEP / w_max;
    let mut remaining = horizon;
    for _ in 0..FLOW_SUBSTEPS {
        let h = remaining.min(h_max);
        let grad = guidance_gradient(netlist, &flat_to_coords(&x), w_leg, w_cong, w_hpwl, c_th, config);
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        for (v, g) in x.iter_mut().zip(&grad) {
            *v -= h * g;
            if config.clip_x0 {
                *v = v.clamp(-1.0, 1.0);
            }
        }
        pin(&mut x);
        remaining -= h;
        if remaining <= 0.0 {
            break;
        }
    }
    x
}

/// Per-step record of a sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub energy: f64,
    pub hpwl: f64,
    pub max_congestion: f64,
    pub overlap_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x0_hat: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub placement: Placement,
    /// Coordinates that had to be clamped into the canvas.
    pub clamped: usize,
    /// Predicted clean coordinates clipped to the canvas over all steps.
    pub x0_clips: usize,
    pub trace: Vec<TraceEntry>,
}

/// Trace as JSON lines.
pub fn trace_jsonl(trace: &[TraceEntry]) -> Result<String> {
    let mut out = String::new();
    for entry in trace {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    Ok(out)
}

/// Pinned positions: I/O pads at their given centers.
pub fn pad_constraints(netlist: &Netlist, placement: Option<&Placement>) -> Vec<Option<[f64; 2]>> {
    netlist
        .modules
        .iter()
        .map(|m| match (m.kind, placement) {
            (ModuleKind::IoPad, Some(p)) => Some(p.coords()[m.id]),
            _ => None,
        })
        .collect()
}

fn record(
    netlist: &Netlist,
    coords: &[[f64; 2]],
    t: usize,
    refs: &EnergyRefs,
    config: &GuidanceConfig,
    snapshot: Option<Vec<[f64; 2]>>,
) -> Result<TraceEntry> {
    let clamped: Vec<[f64; 2]> = coords
        .iter()
        .map(|c| [c[0].clamp(-1.0, 1.0), c[1].clamp(-1.0, 1.0)])
        .collect();
    let terms = energy_terms(
        netlist,
        &clamped,
        &EnergyWeights::default(),
        refs,
        config.resolution,
    )?;
    Ok(TraceEntry {
        t,
        energy: terms.energy,
        hpwl: terms.hpwl,
        max_congestion: terms.max_congestion,
        overlap_ratio: terms.overlap_ratio,
        x0_hat: snapshot,
    })
}

fn pin(x: &mut [f64], fixed: &[Option<[f64; 2]>], ab: f64, noise: &[f64]) {
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    for (i, f) in fixed.iter().enumerate() {
        if let Some(p) = f {
            x[2 * i] = a * p[0] + s * noise[2 * i];
            x[2 * i + 1] = a * p[1] + s * noise[2 * i + 1];
        }
    }
}

/// Samples one placement of `netlist` from `model`.
///
/// Modules with a `fixed` position are held there by replacing their
/// coordinates with forward-noised copies of the target at every step.
pub fn sample_placement(
    model: &ScoreModel,
    netlist: &Netlist,
    config: &GuidanceConfig,
    fixed: &[Option<[f64; 2]>],
    seed: u64,
) -> Result<SampleResult> {
    config.validate()?;
    let n = netlist.num_modules();
    if fixed.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: fixed.len(),
        });
    }
    let net = model.net()?;
    let schedule = model.noise_schedule()?;
    let params = if config.use_ema { &model.ema } else { &model.params };
    if params.all_zero() {
        log::warn!("sampling with an all-zero parameter set; results are untrained noise");
    }
    let total = schedule.steps;
    let ctx = GraphContext::new(netlist);
    let embedding = net.encode_netlist(params, &ctx);
    let refs = EnergyRefs::from_reference(netlist, config.resolution)?;
    let c_th = match config.c_threshold {
        Some(c) => c,
        None => default_threshold(netlist, config.resolution)?,
    };
    let cond = Conditioning::energy(config.e_rel_target)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&mut rng, 2 * n);
    let pad_noise = gaussian(&mut rng, 2 * n);
    pin(&mut x, fixed, schedule.alpha_bar(total), &pad_noise);

    let timesteps: Vec<usize> = match config.sampler {
        Sampler::Ddim => ddim_timesteps(total, config.steps.min(total))?,
        Sampler::Ddpm => (0..=total).rev().collect(),
    };
    let mut trace = Vec::with_capacity(timesteps.len());
    trace.push(record(netlist, &flat_to_coords(&x), total, &refs, config, None)?);

    let mut x0_clips = 0;
    let guided = config.w_legality > 0.0 || config.w_congestion > 0.0 || config.w_hpwl > 0.0;
    for (k, pair) in timesteps.windows(2).enumerate() {
        let (t, t_prev) = (pair[0], pair[1]);
        let eps_cond = net.score_forward(params, &ctx, &embedding, &x, t, total, cond)?;
        let mut eps = if config.cfg_scale == 1.0 {
            eps_cond
        } else {
            let eps_null = net.score_forward(params, &ctx, &embedding, &x, t, total, Conditioning::Null)?;
            cfg_combine(&eps_cond, &eps_null, config.cfg_scale)?
        };
        let ab = schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut x0: Vec<f64> = x.iter().zip(&eps).map(|(xv, e)| (xv - s * e) / a).collect();
        pin(&mut x0, fixed, 1.0, &pad_noise);
        if guided {
            let (w_leg, w_cong) = config.weights_at(t, total);
            let horizon = (1.0 - ab) / ab;
            x0 = guided_x0(
                netlist,
                &x0,
                horizon,
                (w_leg, w_cong, config.w_hpwl),
                c_th,
                config,
                |v| pin(v, fixed, 1.0, &pad_noise),
            );
            eps = x.iter().zip(&x0).map(|(xv, x0v)| (xv - a * x0v) / s).collect();
        }
        if x0.iter().chain(&eps).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite state at t = {t}")));
        }
        if config.clip_x0 {
            let before = x0_clips;
            for v in &mut x0 {
                if v.abs() > 1.0 {
                    *v = v.clamp(-1.0, 1.0);
                    x0_clips += 1;
                }
            }
            if x0_clips > before {
                eps = x.iter().zip(&x0).map(|(xv, x0v)| (xv - a * x0v) / s).collect();
            }
        }
        x = match config.sampler {
            Sampler::Ddim => ddim_from_x0(&x0, &eps, t_prev, &schedule),
            Sampler::Ddpm => {
                let noise = gaussian(&mut rng, 2 * n);
                ddpm_posterior(&x, &x0, t, &schedule, &noise)
            }
        };
        pin(&mut x, fixed, schedule.alpha_bar(t_prev), &pad_noise);
        let snapshot = (config.snapshot_every > 0 && ((k + 1) % config.snapshot_every == 0 || t_prev == 0))
            .then(|| flat_to_coords(&x0));
        trace.push(record(
            netlist,
            &flat_to_coords(&x),
            t_prev,
            &refs,
            config,
            snapshot,
        )?);
    }

    let (placement, clamped) = Placement::clamped(&flat_to_coords(&x))?;
    if clamped > 0 {
        log::debug!("clamped {clamped} coordinates into the canvas");
    }
    Ok(SampleResult {
        placement,
        clamped,
        x0_clips,
        trace,
    })
}

/// Ancestral step written in terms of a predicted clean sample.
fn ddpm_posterior(x_t: &[f64], x0: &[f64], t: usize, schedule: &NoiseSchedule, noise: &[f64]) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let beta = schedule.beta(t);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let sd = if t > 1 { beta.sqrt() } else { 0.0 };
    x_t.iter()
        .zip(x0)
        .zip(noise)
        .map(|((xt, x0), z)| c0 * x0 + ct * xt + sd * z)
        .collect()
}

/// Samples `count` placements with seeds `seed, seed+1, ...` and keeps the
/// one with the lowest composite energy.
pub fn best_of(
    model: &ScoreModel,
    netlist: &Netlist,
    config: &GuidanceConfig,
    fixed: &[Option<[f64; 2]>],
    seed: u64,
    count: usize,
) -> Result<(SampleResult, f64)> {
    let refs = EnergyRefs::from_reference(netlist, config.resolution)?;
    let mut best: Option<(SampleResult, f64)> = None;
    for k in 0..count.max(1) as u64 {
        let s = sample_placement(model, netlist, config, fixed, seed.wrapping_add(k))?;
        let e = energy_terms(
            netlist,
            s.placement.coords(),
            &EnergyWeights::default(),
            &refs,
            config.resolution,
        )?
        .energy;
        if best.as_ref().is_none_or(|(_, b)| e < *b) {
            best = Some((s, e));
        }
    }
    Ok(best.expect("at least one sample"))
}

/// Flat coordinates of a placement, for callers working in model space.
pub fn placement_flat(placement: &Placement) -> Vec<f64> {
    coords_to_flat(placement.coords())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::diffusion::ScheduleKind;
    use crate::model::tests::toy_netlist;
    use crate::model::ScoreNetConfig;

    fn small_model() -> ScoreModel {
        let cfg = ScoreNetConfig {
            width: 16,
            gnn_layers: 1,
            attn_layers: 1,
            heads: 2,
        };
        ScoreModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn cfg_examples() {
        let c = [1.0, 2.0];
        let u = [0.5, -1.0];
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.to_vec());
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.to_vec());
        assert_eq!(cfg_combine(&c, &u, 2.0).unwrap(), vec![1.5, 5.0]);
        assert!(cfg_combine(&c, &[1.0], 1.0).is_err());
    }

    #[test]
    fn guidance_lowers_the_implied_potential() {
        let s = make_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let n = toy_netlist(6, 1);
        let x0: Vec<[f64; 2]> = (0..6).map(|i| [0.01 * i as f64, 0.013 * i as f64]).collect();
        let before = phi_legality(&n, &x0).value;
        assert!(before > 0.0);
        let t = 300;
        let ab = s.alpha_bar(t);
        let eps = vec![0.0; 12];
        let x_t: Vec<f64> = coords_to_flat(&x0).iter().map(|v| v * ab.sqrt()).collect();
        let grad = coords_to_flat(&phi_legality(&n, &x0).grad);
        let step: Vec<f64> = grad.iter().map(|g| g * 1e-3).collect();
        let eps_hat = guided_epsilon(&eps, &step, t, &s);
        let x0_new: Vec<f64> = x_t
            .iter()
            .zip(&eps_hat)
            .map(|(x, e)| (x - (1.0 - ab).sqrt() * e) / ab.sqrt())
            .collect();
        assert!(phi_legality(&n, &flat_to_coords(&x0_new)).value < before);
    }

    #[test]
    fn trace_has_one_entry_per_step() {
        let model = small_model();
        let n = toy_netlist(5, 2);
        let config = GuidanceConfig {
            steps: 10,
            snapshot_every: 5,
            ..Default::default()
        };
        let fixed = vec![None; 5];
        let r = sample_placement(&model, &n, &config, &fixed, 0).unwrap();
        assert_eq!(r.trace.len(), 11);
        assert_eq!(r.trace[0].t, 1000);
        assert_eq!(r.trace[10].t, 0);
        assert_eq!(r.trace.iter().filter(|e| e.x0_hat.is_some()).count(), 2);
        assert_eq!(r.placement.len(), 5);
        let lines = trace_jsonl(&r.trace).unwrap();
        assert_eq!(lines.lines().count(), 11);
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = small_model();
        let n = toy_netlist(6, 3);
        let config = GuidanceConfig {
            steps: 8,
            ..Default::default()
        };
        let fixed = vec![None; 6];
        let a = sample_placement(&model, &n, &config, &fixed, 11).unwrap();
        let b = sample_placement(&model, &n, &config, &fixed, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_placement(&model, &n, &config, &fixed, 12).unwrap();
        assert_ne!(a.placement, c.placement);
    }

    #[test]
    fn fixed_modules_stay_put() {
        let model = small_model();
        let n = toy_netlist(6, 4);
        let mut fixed = vec![None; 6];
        fixed[2] = Some([0.5, -0.25]);
        let config = GuidanceConfig {
            steps: 6,
            ..Default::default()
        };
        let r = sample_placement(&model, &n, &config, &fixed, 0).unwrap();
        assert_eq!(r.placement.coords()[2], [0.5, -0.25]);
        for sampler in [Sampler::Ddpm] {
            let cfg = GuidanceConfig {
                sampler,
                ..config.clone()
            };
            let r = sample_placement(&model, &n, &cfg, &fixed, 0).unwrap();
            assert_eq!(r.trace.len(), 1001);
            assert_eq!(r.placement.coords()[2], [0.5, -0.25]);
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let model = small_model();
        let n = toy_netlist(4, 5);
        let bad = GuidanceConfig {
            e_rel_target: 1.5,
            ..Default::default()
        };
        assert!(sample_placement(&model, &n, &bad, &[None; 4], 0).is_err());
        assert!(sample_placement(&model, &n, &GuidanceConfig::default(), &[None; 3], 0).is_err());
        assert!("ddpm".parse::<Sampler>().is_ok());
        assert!("euler".parse::<Sampler>().is_err());
    }
}
