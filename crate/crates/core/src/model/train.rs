//! Denoising-loss training: Adam with cosine learning-rate decay, global
//! gradient clipping, conditioning dropout and an EMA weight copy.

use std::f64::consts::PI;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape};
use crate::diffusion::{gaussian, make_schedule, q_sample, NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::metrics::{
    energy_terms, relative_energy, update_bounds, EnergyRefs, EnergySpec, EnergyWeights, DEFAULT_RESOLUTION,
};
use crate::model::{Conditioning, GraphContext, ParamSet, ScoreNet, ScoreNetConfig};
use crate::netlist::{flat_to_coords, Netlist};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Where training takes each example's conditioning value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningSource {
    /// Recompute from per-netlist composite-energy bounds over the dataset.
    #[default]
    Bounds,
    /// Use the value stored with each example.
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub schedule_steps: usize,
    pub p_uncond: f64,
    pub seed: u64,
    pub conditioning: ConditioningSource,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            grad_clip: 1.0,
            ema_decay: 0.9999,
            steps: 2000,
            schedule: ScheduleKind::Cosine,
            schedule_steps: 1000,
            p_uncond: 0.1,
            seed: 0,
            conditioning: ConditioningSource::Bounds,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_min", self.lr_min),
            ("adam_eps", self.adam_eps),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::InvalidArgument(
                "ema_decay and p_uncond must lie in [0, 1]".into(),
            ));
        }
        if self.batch_size == 0 || self.schedule_steps == 0 || self.log_every == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, schedule_steps and log_every must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Cosine-annealed rate for step `i` of `total`.
    pub fn learning_rate(&self, i: usize, total: usize) -> f64 {
        let frac = if total <= 1 {
            0.0
        } else {
            i as f64 / (total - 1) as f64
        };
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows, t.cols))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// `shadow <- decay * shadow + (1 - decay) * live`.
pub fn ema_update(shadow: &mut ParamSet, live: &ParamSet, decay: f64) {
    for (s, l) in shadow.tensors.iter_mut().zip(&live.tensors) {
        for (a, b) in s.data.iter_mut().zip(&l.data) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

/// Network weights, EMA copy and optimizer state: everything a checkpoint holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub version: u32,
    pub config: ScoreNetConfig,
    pub schedule: ScheduleKind,
    pub schedule_steps: usize,
    pub step: u64,
    pub params: ParamSet,
    pub ema: ParamSet,
    pub adam: AdamState,
}

impl ScoreModel {
    pub fn new(config: ScoreNetConfig, seed: u64) -> Result<Self> {
        let net = ScoreNet::new(config)?;
        let params = net.init_params(seed);
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config,
            schedule: ScheduleKind::Cosine,
            schedule_steps: 1000,
            step: 0,
            ema: params.clone(),
            adam: AdamState::new(&params),
            params,
        })
    }

    pub fn net(&self) -> Result<ScoreNet> {
        ScoreNet::new(self.config)
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.schedule, self.schedule_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let net = self.net()?;
        net.check_params(&self.params)?;
        net.check_params(&self.ema)?;
        if !self.params.same_shapes(&ParamSet {
            names: vec![],
            tensors: self.adam.m.clone(),
        }) || self.adam.m.len() != self.adam.v.len()
        {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameters".into(),
            ));
        }
        if !self.params.all_finite() || !self.ema.all_finite() {
            return Err(Error::Checkpoint("checkpoint holds non-finite weights".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let model: Self =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        model.validate()?;
        Ok(model)
    }
}

/// One placement of one netlist with its stored conditioning value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub netlist: usize,
    pub placement: Vec<f64>,
    pub e_rel: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub netlists: Vec<Netlist>,
    pub examples: Vec<TrainExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every step.
    pub losses: Vec<f64>,
    /// `(step, loss, learning rate)` every `log_every` steps.
    pub logged: Vec<(u64, f64, f64)>,
    /// Conditioning values actually used, per example.
    pub e_rel: Vec<f64>,
    pub bounds: EnergySpec,
}

impl TrainReport {
    /// Mean of the first and last `window` losses.
    pub fn smoothed_ends(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (
            mean(&self.losses[..w]),
            mean(&self.losses[self.losses.len() - w..]),
        )
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss,lr\n");
        for (s, l, lr) in &self.logged {
            out.push_str(&format!("{s},{l},{lr}\n"));
        }
        out
    }
}

/// Conditioning values from per-netlist composite-energy bounds.
pub fn bounds_conditioning(data: &TrainData, weights: &EnergyWeights) -> Result<(Vec<f64>, EnergySpec)> {
    let mut spec = EnergySpec::new(*weights)?;
    let refs: Vec<EnergyRefs> = data
        .netlists
        .iter()
        .map(|n| EnergyRefs::from_reference(n, DEFAULT_RESOLUTION))
        .collect::<Result<_>>()?;
    let mut energies = Vec::with_capacity(data.examples.len());
    for ex in &data.examples {
        let netlist = &data.netlists[ex.netlist];
        let coords = flat_to_coords(&ex.placement);
        let e = energy_terms(netlist, &coords, weights, &refs[ex.netlist], DEFAULT_RESOLUTION)?.energy;
        update_bounds(&mut spec, &netlist.name, e);
        energies.push(e);
    }
    let e_rel = data
        .examples
        .iter()
        .zip(&energies)
        .map(|(ex, &e)| {
            let b = spec
                .bounds_of(&data.netlists[ex.netlist].name)
                .expect("bounds were recorded");
            relative_energy(e, b)
        })
        .collect();
    Ok((e_rel, spec))
}

/// Loss and parameter gradients of one weighted denoising term.
#[allow(clippy::too_many_arguments)]
pub fn denoising_grads(
    net: &ScoreNet,
    params: &ParamSet,
    ctx: &GraphContext,
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    noise: &[f64],
    cond: Conditioning,
    weight: f64,
) -> Result<(f64, Vec<Option<Matrix>>)> {
    let (xt, eps) = q_sample(x0, t, schedule, noise)?;
    let mut tape = Tape::new();
    let p = net.bind(&mut tape, params);
    let h = net.encode_tape(&mut tape, &p, ctx);
    let out = net.score_tape(&mut tape, &p, ctx, h, &xt, t, schedule.steps, cond)?;
    let target = Rc::new(Matrix::from_vec(ctx.num_modules, 2, eps));
    let loss = tape.mse(out, target);
    let value = tape.value(loss).data[0];
    let loss = if weight == 1.0 {
        loss
    } else {
        tape.scale(loss, weight)
    };
    Ok((value, tape.backward(loss, params.len())))
}

/// Adds `scale * g` into the running gradient sum.
pub fn accumulate(sum: &mut [Matrix], grads: &[Option<Matrix>], scale: f64) {
    for (s, g) in sum.iter_mut().zip(grads) {
        if let Some(g) = g {
            for (a, b) in s.data.iter_mut().zip(&g.data) {
                *a += scale * b;
            }
        }
    }
}

pub fn zero_grads(params: &ParamSet) -> Vec<Matrix> {
    params
        .tensors
        .iter()
        .map(|t| Matrix::zeros(t.rows, t.cols))
        .collect()
}

/// Clips to `max_norm` globally, takes one Adam step and refreshes the EMA.
/// Returns the pre-clip gradient norm.
pub fn apply_update(
    model: &mut ScoreModel,
    grads: &mut [Matrix],
    lr: f64,
    config: &TrainConfig,
) -> Result<f64> {
    let norm = grads.iter().map(Matrix::norm_sq).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient norm at step {}",
            model.step
        )));
    }
    if norm > config.grad_clip {
        let s = config.grad_clip / norm;
        for g in grads.iter_mut() {
            for v in &mut g.data {
                *v *= s;
            }
        }
    }
    let adam = &mut model.adam;
    adam.step += 1;
    let t = adam.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let (m, v, p) = (&mut adam.m[i], &mut adam.v[i], &mut model.params.tensors[i]);
        for k in 0..g.data.len() {
            let gk = g.data[k];
            m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
            v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
            let mh = m.data[k] / c1;
            let vh = v.data[k] / c2;
            p.data[k] -= lr * mh / (vh.sqrt() + config.adam_eps);
        }
    }
    model.step += 1;
    // Effective decay ramps up from 0.1 over the first steps.
    let s = model.step as f64;
    let decay = config.ema_decay.min((1.0 + s) / (10.0 + s));
    ema_update(&mut model.ema, &model.params, decay);
    Ok(norm)
}

/// Trains `model` in place on `data`.
pub fn train(model: &mut ScoreModel, data: &TrainData, config: &TrainConfig) -> Result<TrainReport> {
    train_with(model, data, config, |_, _| {})
}

/// [`train`] with a progress callback receiving `(step, loss)`.
pub fn train_with(
    model: &mut ScoreModel,
    data: &TrainData,
    config: &TrainConfig,
    mut progress: impl FnMut(u64, f64),
) -> Result<TrainReport> {
    config.validate()?;
    if data.examples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let net = model.net()?;
    model.schedule = config.schedule;
    model.schedule_steps = config.schedule_steps;
    let schedule = model.noise_schedule()?;
    let contexts: Vec<GraphContext> = data.netlists.iter().map(GraphContext::new).collect();
    let (e_rel, bounds) = match config.conditioning {
        ConditioningSource::Bounds => bounds_conditioning(data, &EnergyWeights::default())?,
        ConditioningSource::Dataset => (
            data.examples.iter().map(|e| e.e_rel).collect(),
            EnergySpec::default(),
        ),
    };
    for (i, ex) in data.examples.iter().enumerate() {
        if ex.placement.len() != 2 * data.netlists[ex.netlist].num_modules() {
            return Err(Error::ShapeMismatch {
                expected: 2 * data.netlists[ex.netlist].num_modules(),
                actual: ex.placement.len(),
            });
        }
        Conditioning::energy(e_rel[i])?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ model.step.wrapping_mul(0x9E37_79B9));
    let mut losses = Vec::with_capacity(config.steps);
    let mut logged = Vec::new();
    for i in 0..config.steps {
        let lr = config.learning_rate(i, config.steps);
        let drop = rng.random_bool(config.p_uncond);
        let mut sum = zero_grads(&model.params);
        let mut batch_loss = 0.0;
        let scale = 1.0 / config.batch_size as f64;
        for _ in 0..config.batch_size {
            let idx = rng.random_range(0..data.examples.len());
            let ex = &data.examples[idx];
            let t = rng.random_range(1..=schedule.steps);
            let noise = gaussian(&mut rng, ex.placement.len());
            let cond = if drop {
                Conditioning::Null
            } else {
                Conditioning::Energy(e_rel[idx])
            };
            let (loss, grads) = denoising_grads(
                &net,
                &model.params,
                &contexts[ex.netlist],
                &schedule,
                &ex.placement,
                t,
                &noise,
                cond,
                1.0,
            )?;
            batch_loss += loss * scale;
            accumulate(&mut sum, &grads, scale);
        }
        if !batch_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {batch_loss} at step {} (lr {lr})",
                model.step
            )));
        }
        apply_update(model, &mut sum, lr, config)?;
        losses.push(batch_loss);
        if i % config.log_every == 0 || i + 1 == config.steps {
            logged.push((model.step, batch_loss, lr));
        }
        progress(model.step, batch_loss);
    }
    Ok(TrainReport {
        losses,
        logged,
        e_rel,
        bounds,
    })
}
