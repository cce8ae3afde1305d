//! Buffer-based fine-tuning on an unseen netlist with quality-weighted
//! denoising and a hinge penalty on sample diversity.

use std::rc::Rc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape};
use crate::diffusion::{gaussian, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::guidance::{sample_placement, GuidanceConfig};
use crate::metrics::{
    composite_energy, relative_energy, update_bounds, EnergyRefs, EnergySpec, EnergyWeights,
};
use crate::model::train::{accumulate, apply_update, denoising_grads, zero_grads};
use crate::model::{Conditioning, GraphContext, ParamSet, ScoreModel, ScoreNet, TrainConfig};
use crate::netlist::{Netlist, Placement};

/// Exponent of the default quality weighting `ω = e_rel^κ`.
pub const DEFAULT_KAPPA: f64 = 4.0;

/// Share of the schedule at which the diversity proxy noises buffer entries.
const DIVERSITY_T_FRACTION: f64 = 0.5;

/// Draws of the proxy whose median becomes the default diversity floor.
const BETA_DRAWS: usize = 5;

/// Trailing window of the divergence check.
const DIVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub placement: Placement,
    pub energy: f64,
    pub e_rel: f64,
}

/// Generated placements of one netlist, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementBuffer {
    pub netlist: String,
    pub capacity: usize,
    pub resolution: (usize, usize),
    pub entries: Vec<BufferEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub size: usize,
    pub capacity: usize,
    pub best_energy: Option<f64>,
    pub worst_energy: Option<f64>,
    pub mean_energy: Option<f64>,
}

impl PlacementBuffer {
    pub fn new(netlist: &str, capacity: usize, resolution: (usize, usize)) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument(
                "buffer capacity must be at least 1".into(),
            ));
        }
        Ok(Self {
            netlist: netlist.to_owned(),
            capacity,
            resolution,
            entries: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> BufferStats {
        let energies: Vec<f64> = self.entries.iter().map(|e| e.energy).collect();
        BufferStats {
            size: energies.len(),
            capacity: self.capacity,
            best_energy: energies.first().copied(),
            worst_energy: energies.last().copied(),
            mean_energy: (!energies.is_empty()).then(|| energies.iter().sum::<f64>() / energies.len() as f64),
        }
    }
}

/// Scores `placement`, widens the netlist's energy bounds in `spec`, inserts
/// the entry in energy order and evicts the worst entries beyond capacity.
/// Unset normalizers in `spec` are measured on the reference layout first.
/// Returns the composite energy of the new placement.
pub fn buffer_add(
    buffer: &mut PlacementBuffer,
    placement: Placement,
    spec: &mut EnergySpec,
    netlist: &Netlist,
) -> Result<f64> {
    if netlist.name != buffer.netlist {
        return Err(Error::InvalidArgument(format!(
            "buffer holds netlist '{}', not '{}'",
            buffer.netlist, netlist.name
        )));
    }
    if spec.refs.is_none() {
        spec.refs = Some(EnergyRefs::from_reference(netlist, buffer.resolution)?);
    }
    let energy = composite_energy(netlist, &placement, spec, buffer.resolution)?;
    update_bounds(spec, &netlist.name, energy);
    let bounds = spec.bounds_of(&netlist.name).expect("bounds were recorded");
    let at = buffer.entries.partition_point(|e| e.energy <= energy);
    buffer.entries.insert(
        at,
        BufferEntry {
            placement,
            energy,
            e_rel: 1.0,
        },
    );
    buffer.entries.truncate(buffer.capacity);
    for e in &mut buffer.entries {
        e.e_rel = relative_energy(e.energy, bounds);
    }
    Ok(energy)
}

/// Quality weight `e_rel^κ` of a buffer entry.
pub fn weight_fn(e_rel: f64, kappa: f64) -> Result<f64> {
    if !(e_rel > 0.0 && e_rel <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "e_rel must lie in (0, 1], got {e_rel}"
        )));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be non-negative, got {kappa}"
        )));
    }
    Ok(e_rel.powf(kappa))
}

/// Mean Euclidean distance over all pairs of placements, each taken as one
/// flat coordinate vector.
pub fn mean_pairwise_distance(samples: &[Vec<[f64; 2]>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: bad.len(),
        });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            let d2: f64 = a
                .iter()
                .zip(b)
                .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                .sum();
            total += d2.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Diversity of the sampler on `netlist`: mean pairwise distance of
/// `n_samples` placements drawn with seeds `seed, seed+1, ...`.
pub fn entropy_estimate(
    model: &ScoreModel,
    netlist: &Netlist,
    config: &GuidanceConfig,
    fixed: &[Option<[f64; 2]>],
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "entropy estimate needs at least 2 samples, got {n_samples}"
        )));
    }
    let samples = (0..n_samples as u64)
        .map(|k| {
            sample_placement(model, netlist, config, fixed, seed.wrapping_add(k))
                .map(|s| s.placement.coords().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    mean_pairwise_distance(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Weighted-loss updates of the full budget.
    pub steps: usize,
    /// Share of the full budget spent, in `(0, 1]`.
    pub data_fraction: f64,
    pub samples_per_round: usize,
    pub updates_per_round: usize,
    pub capacity: usize,
    pub kappa: f64,
    /// Weight of the diversity hinge; 0 disables it.
    pub lambda: f64,
    /// Diversity floor. `None` uses the median proxy of the starting model.
    pub beta: Option<f64>,
    /// Buffer entries per diversity proxy evaluation.
    pub diversity_samples: usize,
    /// Abort once the trailing mean loss exceeds this multiple of the mean
    /// over the first window of updates.
    pub divergence_factor: f64,
    /// Placements sampled before and after fine-tuning for the report.
    pub eval_samples: usize,
    pub seed: u64,
    pub lr: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub p_uncond: f64,
    pub log_every: usize,
    pub guidance: GuidanceConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            data_fraction: 1.0,
            samples_per_round: 16,
            updates_per_round: 100,
            capacity: 256,
            kappa: DEFAULT_KAPPA,
            lambda: 0.1,
            beta: None,
            diversity_samples: 4,
            divergence_factor: 10.0,
            eval_samples: 8,
            seed: 0,
            lr: 3e-3,
            lr_min: 1e-6,
            batch_size: 8,
            grad_clip: 1.0,
            ema_decay: 0.999,
            p_uncond: 0.1,
            log_every: 10,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        self.optimizer().validate()?;
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "data_fraction must lie in (0, 1], got {}",
                self.data_fraction
            )));
        }
        if self.updates_per_round == 0 || self.capacity == 0 || self.diversity_samples < 2 {
            return Err(Error::InvalidArgument(
                "updates_per_round and capacity must be positive and diversity_samples at least 2".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.kappa >= 0.0) {
            return Err(Error::InvalidArgument(
                "lambda and kappa must be non-negative".into(),
            ));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "beta must be non-negative, got {b}"
                )));
            }
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidArgument("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }

    /// Update steps actually run: the full budget scaled by `data_fraction`.
    pub fn effective_steps(&self) -> usize {
        ((self.steps as f64 * self.data_fraction).round() as usize).max(1)
    }

    fn optimizer(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            lr_min: self.lr_min,
            batch_size: self.batch_size,
            grad_clip: self.grad_clip,
            ema_decay: self.ema_decay,
            p_uncond: self.p_uncond,
            seed: self.seed,
            log_every: self.log_every,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub steps: usize,
    /// Weighted-loss updates applied; fewer than `steps` while the buffer is empty.
    pub updates: usize,
    pub rounds: usize,
    pub sample_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    pub energy_before: Vec<f64>,
    pub energy_after: Vec<f64>,
    pub entropy_before: Option<f64>,
    pub entropy_after: Option<f64>,
    pub beta: Option<f64>,
    /// `(update, diversity proxy)` every `log_every` updates.
    pub entropy_curve: Vec<(usize, f64)>,
    pub losses: Vec<f64>,
    pub buffer: BufferStats,
    pub diverged: bool,
    pub message: Option<String>,
}

impl FinetuneReport {
    pub fn mean_before(&self) -> Option<f64> {
        mean(&self.energy_before)
    }

    pub fn mean_after(&self) -> Option<f64> {
        mean(&self.energy_after)
    }

    /// Mean energy before over mean energy after; above 1 means improvement.
    pub fn energy_retention(&self) -> Option<f64> {
        Some(self.mean_before()? / self.mean_after()?)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub struct FinetuneOutcome {
    /// Fine-tuned copy; equals the input model when training diverged.
    pub model: ScoreModel,
    pub report: FinetuneReport,
    pub buffer: PlacementBuffer,
}

/// Samples placements of `netlist` with `model`, scoring each with the
/// default composite energy.
fn sample_energies(
    model: &ScoreModel,
    netlist: &Netlist,
    config: &GuidanceConfig,
    fixed: &[Option<[f64; 2]>],
    seeds: &[u64],
) -> Result<(Vec<f64>, Vec<Vec<[f64; 2]>>)> {
    let spec = EnergySpec::new(EnergyWeights::default())?
        .with_refs(EnergyRefs::from_reference(netlist, config.resolution)?)?;
    let mut energies = Vec::with_capacity(seeds.len());
    let mut coords = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let p = sample_placement(model, netlist, config, fixed, s)?.placement;
        energies.push(composite_energy(netlist, &p, &spec, config.resolution)?);
        coords.push(p.coords().to_vec());
    }
    Ok((energies, coords))
}

/// Inputs shared by every gradient evaluation of one fine-tuning run.
struct StepContext<'a> {
    net: &'a ScoreNet,
    ctx: &'a GraphContext,
    schedule: &'a NoiseSchedule,
    cond: Conditioning,
}

/// A noised buffer entry at the diversity timestep.
struct DiversityState {
    x_t: Vec<f64>,
}

/// Diversity proxy of the one-step clean predictions from `states` and,
/// when `hinge = Some((lambda, beta))` is active, the parameter gradient of
/// `lambda · max(0, beta - H)`.
fn diversity_term(
    sc: &StepContext,
    params: &ParamSet,
    states: &[DiversityState],
    hinge: Option<(f64, f64)>,
) -> Result<(f64, Option<Vec<Option<Matrix>>>)> {
    let total = sc.schedule.steps;
    let t = ((total as f64 * DIVERSITY_T_FRACTION).round() as usize).clamp(1, total);
    let ab = sc.schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut tapes = Vec::with_capacity(states.len());
    let mut x0: Vec<Vec<[f64; 2]>> = Vec::with_capacity(states.len());
    for st in states {
        let mut tape = Tape::new();
        let p = sc.net.bind(&mut tape, params);
        let h = sc.net.encode_tape(&mut tape, &p, sc.ctx);
        let out = sc
            .net
            .score_tape(&mut tape, &p, sc.ctx, h, &st.x_t, t, total, sc.cond)?;
        let eps = &tape.value(out).data;
        x0.push(
            st.x_t
                .chunks_exact(2)
                .zip(eps.chunks_exact(2))
                .map(|(x, e)| [(x[0] - s * e[0]) / a, (x[1] - s * e[1]) / a])
                .collect(),
        );
        tapes.push((tape, out));
    }
    let value = mean_pairwise_distance(&x0)?;
    let Some((lambda, _)) = hinge.filter(|&(l, b)| l > 0.0 && value < b) else {
        return Ok((value, None));
    };
    let k = states.len();
    let pairs = (k * (k - 1) / 2) as f64;
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; 2 * x0[0].len()]; k];
    for i in 0..k {
        for j in i + 1..k {
            let diff: Vec<f64> = x0[i]
                .iter()
                .zip(&x0[j])
                .flat_map(|(p, q)| [p[0] - q[0], p[1] - q[1]])
                .collect();
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for (m, d) in diff.iter().enumerate() {
                dh[i][m] += d / (norm * pairs);
                dh[j][m] -= d / (norm * pairs);
            }
        }
    }
    let mut sum = zero_grads(params);
    for ((tape, out), g) in tapes.iter_mut().zip(dh) {
        let n = g.len() / 2;
        let c = Rc::new(Matrix::from_vec(
            n,
            2,
            g.iter().map(|v| lambda * s / a * v).collect(),
        ));
        let loss = tape.dot_const(*out, c);
        accumulate(&mut sum, &tape.backward(loss, params.len()), 1.0);
    }
    Ok((value, Some(sum.into_iter().map(Some).collect())))
}

/// One batch of quality-weighted denoising terms. Returns the weighted mean
/// loss and its gradient.
fn weighted_loss_grads(
    sc: &StepContext,
    params: &ParamSet,
    buffer: &PlacementBuffer,
    config: &FinetuneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Matrix>)> {
    let drop = rng.random_bool(config.p_uncond);
    let scale = 1.0 / config.batch_size as f64;
    let mut sum = zero_grads(params);
    let mut loss = 0.0;
    for _ in 0..config.batch_size {
        let entry = &buffer.entries[rng.random_range(0..buffer.len())];
        let t = rng.random_range(1..=sc.schedule.steps);
        let x0 = entry.placement.to_flat();
        let noise = gaussian(rng, x0.len());
        let w = weight_fn(entry.e_rel, config.kappa)?;
        let cond = if drop {
            Conditioning::Null
        } else {
            Conditioning::Energy(entry.e_rel)
        };
        let (l, g) = denoising_grads(
            sc.net,
            params,
            sc.ctx,
            sc.schedule,
            &x0,
            t,
            &noise,
            cond,
            w * scale,
        )?;
        loss += w * l * scale;
        accumulate(&mut sum, &g, 1.0);
    }
    Ok((loss, sum))
}

fn diversity_states(
    buffer: &PlacementBuffer,
    count: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DiversityState>> {
    let t = ((schedule.steps as f64 * DIVERSITY_T_FRACTION).round() as usize).clamp(1, schedule.steps);
    let picks: Vec<usize> = if buffer.len() >= count {
        sample_indices(rng, buffer.len(), count).into_vec()
    } else {
        (0..count).map(|k| k % buffer.len()).collect()
    };
    picks
        .into_iter()
        .map(|i| {
            let x0 = buffer.entries[i].placement.to_flat();
            let noise = gaussian(rng, x0.len());
            q_sample(&x0, t, schedule, &noise).map(|(x_t, _)| DiversityState { x_t })
        })
        .collect()
}

/// Fine-tunes a copy of `model` on `netlist`.
///
/// Every `updates_per_round` updates a round of `samples_per_round`
/// placements is drawn with the current model and added to the buffer.
/// Each update takes one batch of buffer entries, weights each denoising
/// term by `weight_fn(e_rel)` and, when the diversity proxy of the model
/// falls below `beta`, adds the gradient of `lambda · (beta - H)`. The
/// input model is never modified.
pub fn finetune(
    model: &ScoreModel,
    netlist: &Netlist,
    fixed: &[Option<[f64; 2]>],
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    model.validate()?;
    let n = netlist.num_modules();
    if fixed.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: fixed.len(),
        });
    }
    let mut tuned = model.clone();
    let net = model.net()?;
    let schedule = model.noise_schedule()?;
    let ctx = GraphContext::new(netlist);
    let sc = StepContext {
        net: &net,
        ctx: &ctx,
        schedule: &schedule,
        cond: Conditioning::energy(config.guidance.e_rel_target)?,
    };
    let optimizer = config.optimizer();
    let steps = config.effective_steps();
    let rounds = steps.div_ceil(config.updates_per_round);
    let eval_seeds: Vec<u64> = (0..config.eval_samples as u64)
        .map(|k| {
            config
                .seed
                .wrapping_mul(0x1000_0000)
                .wrapping_add(0x8000_0000 + k)
        })
        .collect();
    let (energy_before, eval_before) = sample_energies(model, netlist, &config.guidance, fixed, &eval_seeds)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buffer = PlacementBuffer::new(&netlist.name, config.capacity, config.guidance.resolution)?;
    let mut spec = EnergySpec::new(EnergyWeights::default())?;
    let mut sample_seeds = Vec::new();
    let mut beta = config.beta;
    let mut losses = Vec::with_capacity(steps);
    let mut entropy_curve = Vec::new();
    let mut updates = 0usize;
    let mut diverged = None;

    for step in 0..steps {
        if step % config.updates_per_round == 0 {
            for _ in 0..config.samples_per_round {
                let seed = config
                    .seed
                    .wrapping_mul(0x1000_0000)
                    .wrapping_add(sample_seeds.len() as u64);
                let s = sample_placement(&tuned, netlist, &config.guidance, fixed, seed)?;
                buffer_add(&mut buffer, s.placement, &mut spec, netlist)?;
                sample_seeds.push(seed);
            }
        }
        if buffer.is_empty() {
            continue;
        }
        let (loss, mut grads) = weighted_loss_grads(&sc, &tuned.params, &buffer, config, &mut rng)?;
        let log_now = updates % config.log_every == 0;
        if buffer.len() >= 2 && (config.lambda > 0.0 || log_now) {
            if beta.is_none() && config.lambda > 0.0 {
                let mut draws = (0..BETA_DRAWS)
                    .map(|_| {
                        let states =
                            diversity_states(&buffer, config.diversity_samples, &schedule, &mut rng)?;
                        diversity_term(&sc, &model.params, &states, None).map(|(h, _)| h)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                draws.sort_by(f64::total_cmp);
                beta = Some(draws[BETA_DRAWS / 2]);
            }
            let states = diversity_states(&buffer, config.diversity_samples, &schedule, &mut rng)?;
            let hinge = beta.map(|b| (config.lambda, b));
            let (h, penalty) = diversity_term(&sc, &tuned.params, &states, hinge)?;
            if log_now {
                entropy_curve.push((updates, h));
            }
            if let Some(p) = penalty {
                accumulate(&mut grads, &p, 1.0);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "fine-tuning loss became {loss} at update {updates}"
            )));
        }
        losses.push(loss);
        if losses.len() >= DIVERGENCE_WINDOW {
            let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
            let initial = mean(&losses[..DIVERGENCE_WINDOW]);
            let trailing = mean(&losses[losses.len() - DIVERGENCE_WINDOW..]);
            if trailing > config.divergence_factor * initial {
                diverged = Some(format!(
                    "trailing loss {trailing:.4} exceeds {} x the initial {initial:.4} at update {updates}",
                    config.divergence_factor
                ));
                break;
            }
        }
        let lr = optimizer.learning_rate(updates, steps);
        apply_update(&mut tuned, &mut grads, lr, &optimizer)?;
        updates += 1;
    }

    if diverged.is_some() {
        tuned = model.clone();
    }
    let (energy_after, eval_after) = sample_energies(&tuned, netlist, &config.guidance, fixed, &eval_seeds)?;
    let report = FinetuneReport {
        steps,
        updates,
        rounds,
        sample_seeds,
        entropy_before: mean_pairwise_distance(&eval_before).ok(),
        entropy_after: mean_pairwise_distance(&eval_after).ok(),
        eval_seeds,
        energy_before,
        energy_after,
        beta,
        entropy_curve,
        losses,
        buffer: buffer.stats(),
        diverged: diverged.is_some(),
        message: diverged,
    };
    Ok(FinetuneOutcome {
        model: tuned,
        report,
        buffer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy_netlist;
    use crate::model::ScoreNetConfig;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_model() -> ScoreModel {
        let mut m = ScoreModel::new(
            ScoreNetConfig {
                width: 16,
                gnn_layers: 1,
                attn_layers: 1,
                heads: 2,
            },
            3,
        )
        .unwrap();
        m.schedule_steps = 100;
        m
    }

    fn quick_guidance() -> GuidanceConfig {
        GuidanceConfig {
            steps: 5,
            ..GuidanceConfig::default()
        }
    }

    fn placement(n: usize, seed: u64) -> Placement {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Placement::new(
            (0..n)
                .map(|_| [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn add_to_empty_buffer() {
        let nl = toy_netlist(6, 0);
        let mut buf = PlacementBuffer::new(&nl.name, 4, (8, 8)).unwrap();
        let mut spec = EnergySpec::default();
        buffer_add(&mut buf, placement(6, 0), &mut spec, &nl).unwrap();
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.entries[0].e_rel, 1.0);
        assert!(spec.refs.is_some());
    }

    #[test]
    fn over_capacity_evicts_the_highest_energy() {
        let nl = toy_netlist(6, 0);
        let mut buf = PlacementBuffer::new(&nl.name, 3, (8, 8)).unwrap();
        let mut spec = EnergySpec::default();
        let energies: Vec<f64> = (0..4)
            .map(|s| buffer_add(&mut buf, placement(6, s), &mut spec, &nl).unwrap())
            .collect();
        let mut sorted = energies.clone();
        sorted.sort_by(f64::total_cmp);
        let kept: Vec<f64> = buf.entries.iter().map(|e| e.energy).collect();
        assert_eq!(kept, sorted[..3]);
    }

    #[test]
    fn rejects_other_netlists() {
        let nl = toy_netlist(6, 0);
        let mut buf = PlacementBuffer::new("other", 3, (8, 8)).unwrap();
        assert!(buffer_add(&mut buf, placement(6, 0), &mut EnergySpec::default(), &nl).is_err());
        assert!(PlacementBuffer::new("x", 0, (8, 8)).is_err());
    }

    proptest! {
        #[test]
        fn buffer_stays_sorted_and_bounded(seeds in prop::collection::vec(0u64..1000, 1..20), cap in 1usize..6) {
            let nl = toy_netlist(5, 1);
            let mut buf = PlacementBuffer::new(&nl.name, cap, (8, 8)).unwrap();
            let mut spec = EnergySpec::default();
            let mut all = Vec::new();
            for &s in &seeds {
                all.push(buffer_add(&mut buf, placement(5, s), &mut spec, &nl).unwrap());
            }
            all.sort_by(f64::total_cmp);
            all.truncate(cap);
            let kept: Vec<f64> = buf.entries.iter().map(|e| e.energy).collect();
            prop_assert_eq!(kept, all);
            let (lo, hi) = spec.bounds_of(&nl.name).unwrap();
            for e in &buf.entries {
                prop_assert_eq!(e.e_rel, relative_energy(e.energy, (lo, hi)));
            }
        }

        #[test]
        fn weight_is_monotone(a in 0.001f64..1.0, b in 0.001f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(weight_fn(lo, DEFAULT_KAPPA).unwrap() <= weight_fn(hi, DEFAULT_KAPPA).unwrap());
        }

        #[test]
        fn pairwise_distance_is_non_negative(pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 2..6)) {
            let samples: Vec<Vec<[f64; 2]>> = pts.iter().map(|v| v.chunks(2).map(|c| [c[0], c[1]]).collect()).collect();
            prop_assert!(mean_pairwise_distance(&samples).unwrap() >= 0.0);
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight_fn(1.0, 4.0).unwrap(), 1.0);
        assert_eq!(weight_fn(0.5, 4.0).unwrap(), 0.0625);
        assert!(weight_fn(0.0, 4.0).is_err());
        assert!(weight_fn(1.5, 4.0).is_err());
    }

    #[test]
    fn pairwise_distance_examples() {
        let same = vec![vec![[0.1, 0.2], [0.3, 0.4]]; 3];
        assert_eq!(mean_pairwise_distance(&same).unwrap(), 0.0);
        let two = vec![vec![[0.0, 0.0]], vec![[0.3, 0.4]]];
        assert!((mean_pairwise_distance(&two).unwrap() - 0.5).abs() < 1e-15);
        let three = vec![vec![[0.0, 0.0]], vec![[0.3, 0.4]], vec![[0.0, 0.4]]];
        let want = (0.5 + 0.4 + 0.3) / 3.0;
        assert!((mean_pairwise_distance(&three).unwrap() - want).abs() < 1e-15);
        assert!(mean_pairwise_distance(&same[..1]).is_err());
    }

    #[test]
    fn entropy_estimate_needs_two_samples() {
        let nl = toy_netlist(5, 0);
        let m = tiny_model();
        let fixed = vec![None; 5];
        assert!(entropy_estimate(&m, &nl, &quick_guidance(), &fixed, 1, 0).is_err());
        assert!(entropy_estimate(&m, &nl, &quick_guidance(), &fixed, 3, 0).unwrap() >= 0.0);
    }

    fn filled_buffer(nl: &Netlist, count: u64) -> PlacementBuffer {
        let mut buf = PlacementBuffer::new(&nl.name, 16, (8, 8)).unwrap();
        let mut spec = EnergySpec::default();
        for s in 0..count {
            buffer_add(&mut buf, placement(nl.num_modules(), s), &mut spec, nl).unwrap();
        }
        buf
    }

    #[test]
    fn diversity_gradient_matches_finite_differences() {
        let nl = toy_netlist(5, 2);
        let m = tiny_model();
        let net = m.net().unwrap();
        let schedule = m.noise_schedule().unwrap();
        let ctx = GraphContext::new(&nl);
        let sc = StepContext {
            net: &net,
            ctx: &ctx,
            schedule: &schedule,
            cond: Conditioning::Energy(0.9),
        };
        let buf = filled_buffer(&nl, 4);
        let states = diversity_states(&buf, 3, &schedule, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (h, grads) = diversity_term(&sc, &m.params, &states, Some((0.7, 1e6))).unwrap();
        let grads = grads.unwrap();
        let penalty = |p: &ParamSet| -0.7 * diversity_term(&sc, p, &states, None).unwrap().0;
        assert!((penalty(&m.params) + 0.7 * h).abs() < 1e-12);
        let eps = 1e-6;
        let mut checked = 0;
        for (ti, g) in grads.iter().enumerate() {
            let g = g.as_ref().unwrap();
            for k in (0..g.data.len()).step_by(7) {
                let mut up = m.params.clone();
                up.tensors[ti].data[k] += eps;
                let mut down = m.params.clone();
                down.tensors[ti].data[k] -= eps;
                let fd = (penalty(&up) - penalty(&down)) / (2.0 * eps);
                let err = (fd - g.data[k]).abs() / fd.abs().max(g.data[k].abs()).max(1e-4);
                assert!(err < 1e-3, "tensor {ti}[{k}]: fd {fd} vs {}", g.data[k]);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn inactive_hinge_adds_nothing() {
        let nl = toy_netlist(5, 2);
        let m = tiny_model();
        let net = m.net().unwrap();
        let schedule = m.noise_schedule().unwrap();
        let ctx = GraphContext::new(&nl);
        let sc = StepContext {
            net: &net,
            ctx: &ctx,
            schedule: &schedule,
            cond: Conditioning::Energy(0.9),
        };
        let buf = filled_buffer(&nl, 4);
        let states = diversity_states(&buf, 3, &schedule, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(diversity_term(&sc, &m.params, &states, Some((0.0, 1e6)))
            .unwrap()
            .1
            .is_none());
        assert!(diversity_term(&sc, &m.params, &states, Some((1.0, 0.0)))
            .unwrap()
            .1
            .is_none());
    }

    fn quick_config() -> FinetuneConfig {
        FinetuneConfig {
            steps: 6,
            samples_per_round: 3,
            updates_per_round: 3,
            eval_samples: 2,
            batch_size: 2,
            diversity_samples: 2,
            guidance: quick_guidance(),
            ..FinetuneConfig::default()
        }
    }

    #[test]
    fn zero_lambda_matches_weighted_loss_alone() {
        let nl = toy_netlist(5, 4);
        let m = tiny_model();
        let fixed = vec![None; 5];
        let plain = FinetuneConfig {
            lambda: 0.0,
            ..quick_config()
        };
        let a = finetune(&m, &nl, &fixed, &plain).unwrap();
        let b = finetune(&m, &nl, &fixed, &plain).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.report.beta, None);

        let net = m.net().unwrap();
        let schedule = m.noise_schedule().unwrap();
        let ctx = GraphContext::new(&nl);
        let sc = StepContext {
            net: &net,
            ctx: &ctx,
            schedule: &schedule,
            cond: Conditioning::Energy(0.95),
        };
        let buf = filled_buffer(&nl, 4);
        let (l1, g1) =
            weighted_loss_grads(&sc, &m.params, &buf, &plain, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (l2, g2) =
            weighted_loss_grads(&sc, &m.params, &buf, &plain, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        let states = diversity_states(&buf, 2, &schedule, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(diversity_term(&sc, &m.params, &states, Some((0.0, f64::MAX)))
            .unwrap()
            .1
            .is_none());
    }

    #[test]
    fn finetune_leaves_the_input_untouched_and_reports() {
        let nl = toy_netlist(5, 4);
        let m = tiny_model();
        let before = m.clone();
        let fixed = vec![None; 5];
        let out = finetune(&m, &nl, &fixed, &quick_config()).unwrap();
        assert_eq!(m, before);
        let r = &out.report;
        assert_eq!(r.steps, 6);
        assert_eq!(r.updates, 6);
        assert_eq!(r.rounds, 2);
        assert_eq!(r.sample_seeds.len(), 6);
        assert_eq!(r.energy_before.len(), 2);
        assert_eq!(r.energy_after.len(), 2);
        assert!(r.beta.is_some());
        assert!(!r.diverged);
        assert_ne!(out.model.params, m.params);
        assert_eq!(out.model.step, m.step + 6);
        let json = serde_json::to_value(r).unwrap();
        for key in [
            "steps",
            "buffer",
            "energy_before",
            "energy_after",
            "entropy_curve",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn empty_buffer_means_no_updates() {
        let nl = toy_netlist(5, 4);
        let m = tiny_model();
        let config = FinetuneConfig {
            samples_per_round: 0,
            ..quick_config()
        };
        let out = finetune(&m, &nl, &vec![None; 5], &config).unwrap();
        assert_eq!(out.report.updates, 0);
        assert_eq!(out.model.params, m.params);
    }

    #[test]
    fn data_fraction_scales_the_budget() {
        let c = FinetuneConfig {
            data_fraction: 0.05,
            ..FinetuneConfig::default()
        };
        assert_eq!(c.effective_steps(), 100);
        assert!(FinetuneConfig {
            data_fraction: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn divergence_aborts_and_keeps_the_original() {
        let nl = toy_netlist(5, 4);
        let m = tiny_model();
        let config = FinetuneConfig {
            lr: 5.0,
            lr_min: 5.0,
            grad_clip: 1e9,
            divergence_factor: 1.01,
            steps: 30,
            updates_per_round: 30,
            ..quick_config()
        };
        let out = finetune(&m, &nl, &vec![None; 5], &config).unwrap();
        assert!(out.report.diverged);
        assert!(out.report.message.is_some());
        assert_eq!(out.model.params, m.params);
    }
}
