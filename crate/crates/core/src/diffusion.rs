//! Noise schedules and the DDPM / DDIM update rules.
//!
//! Coordinates are flat `[x0, y0, x1, y1, ...]` slices. Timesteps run from
//! `1` to `T`; `alpha_bar(0)` is 1.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    #[default]
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown schedule `{other}`"))),
        }
    }
}

/// `beta`, `alpha` and `alpha_bar` tables, indexed by `t - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let (lo, hi) = (1e-4, 0.02);
            (0..steps)
                .map(|i| {
                    if steps == 1 {
                        lo
                    } else {
                        lo + (hi - lo) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: usize| {
                let u = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (u * FRAC_PI_2).cos().powi(2)
            };
            (1..=steps)
                .map(|t| (1.0 - f(t) / f(t - 1)).clamp(1e-12, MAX_BETA))
                .collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        kind,
        steps,
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::OutOfRange(format!(
                "timestep {t} outside 0..={}",
                self.steps
            )));
        }
        Ok(())
    }

    /// `alpha_bar` with the convention `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Noise level `sqrt(1 - alpha_bar(t))`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// CSV of `t, beta, alpha_bar`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha_bar\n");
        for t in 1..=self.steps {
            let _ = writeln!(out, "{t},{},{}", self.beta(t), self.alpha_bar(t));
        }
        out
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Forward process `sqrt(ab)·x0 + sqrt(1-ab)·noise`. Returns `x_t` and the
/// noise used.
pub fn q_sample(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    same_len(x0, noise)?;
    schedule.check(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let xt = x0.iter().zip(noise).map(|(x, e)| a * x + s * e).collect();
    Ok((xt, noise.to_vec()))
}

/// Inverts [`q_sample`] for a predicted noise.
pub fn predict_x0(x_t: &[f64], t: usize, eps_hat: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    same_len(x_t, eps_hat)?;
    schedule.check(t)?;
    let ab = schedule.alpha_bar(t);
    if ab <= 0.0 {
        return Err(Error::Numeric(format!("alpha_bar({t}) is zero")));
    }
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| (x - s * e) / a).collect())
}

/// Ancestral DDPM step with `sigma_t² = beta_t`. `noise` is ignored at `t = 1`.
pub fn ddpm_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    same_len(x_t, eps_hat)?;
    if t == 0 {
        return Err(Error::InvalidArgument("ddpm_step needs t >= 1".into()));
    }
    schedule.check(t)?;
    let beta = schedule.beta(t);
    let scale = 1.0 / schedule.alpha(t).sqrt();
    let coef = beta / schedule.sigma(t);
    let mean = x_t.iter().zip(eps_hat).map(|(x, e)| scale * (x - coef * e));
    if t == 1 {
        return Ok(mean.collect());
    }
    same_len(x_t, noise)?;
    let sd = beta.sqrt();
    Ok(mean.zip(noise).map(|(m, z)| m + sd * z).collect())
}

/// Deterministic DDIM update from `t` to `t_prev < t`.
pub fn ddim_step(
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!(
            "DDIM steps must decrease, got {t} -> {t_prev}"
        )));
    }
    schedule.check(t)?;
    let x0 = predict_x0(x_t, t, eps_hat, schedule)?;
    Ok(ddim_from_x0(&x0, eps_hat, t_prev, schedule))
}

/// `sqrt(ab_prev)·x0 + sqrt(1-ab_prev)·eps`.
pub fn ddim_from_x0(x0: &[f64], eps: &[f64], t_prev: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t_prev);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect()
}

/// Uniform-stride DDIM timesteps from `T` down to the first stride, then 0.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::InvalidArgument(format!(
            "cannot take {steps} sampling steps from a {total}-step schedule"
        )));
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| (total as f64 * (steps - i) as f64 / steps as f64).round() as usize)
        .collect();
    ts.dedup();
    ts.push(0);
    Ok(ts)
}

/// One training example: `(x_t, noise, t)` with `t` uniform on `1..=T`.
pub fn training_target(
    x0: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>, usize) {
    let t = rng.random_range(1..=schedule.steps);
    let noise = gaussian(rng, x0.len());
    let (xt, eps) = q_sample(x0, t, schedule, &noise).expect("shapes agree by construction");
    (xt, eps, t)
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}
