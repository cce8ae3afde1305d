//! Pre-training corpus: generated designs, perturbed placements and labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::generate::{generate_netlist, GenStats};
use super::{EdgeModelParams, GenSpec, ProcessSpec};
use crate::error::{Error, Result};
use crate::metrics::{energy_terms, hpwl_coords, EnergyRefs, EnergyWeights, DEFAULT_RESOLUTION};
use crate::model::{TrainData, TrainExample};
use crate::netlist::{coords_to_flat, ModuleKind, NetKind, Netlist, Placement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    /// Inclusive module-count range.
    pub n_range: (usize, usize),
    pub aspect_range: (f64, f64),
    /// Inclusive range of the per-design net-size cap.
    pub fanout_range: (usize, usize),
    /// Target share of the die covered by modules.
    pub utilization: f64,
    pub mean_degree: f64,
    /// Standard deviations of the Gaussian jitter variants.
    pub jitter: Vec<f64>,
    /// Fractions of modules exchanged in the swap variants.
    pub swaps: Vec<f64>,
    pub global_nets: bool,
    pub seed: u64,
    pub process: ProcessSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 10,
            n_range: (50, 2000),
            aspect_range: (0.5, 2.0),
            fanout_range: (2, 50),
            utilization: 0.35,
            mean_degree: 3.0,
            jitter: vec![0.02, 0.05, 0.1, 0.2],
            swaps: vec![0.1, 0.3, 0.6],
            global_nets: false,
            seed: 0,
            process: ProcessSpec::nm45(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("dataset count must be at least 1".into()));
        }
        let (lo, hi) = self.n_range;
        if lo < 8 || hi < lo {
            return Err(Error::InvalidArgument(format!(
                "n_range must satisfy 8 <= lo <= hi, got ({lo}, {hi})"
            )));
        }
        let (alo, ahi) = self.aspect_range;
        if !(alo > 0.0 && ahi >= alo) {
            return Err(Error::InvalidArgument(
                "aspect_range must be positive and ordered".into(),
            ));
        }
        let (flo, fhi) = self.fanout_range;
        if flo < 2 || fhi < flo {
            return Err(Error::InvalidArgument(
                "fanout_range must satisfy 2 <= lo <= hi".into(),
            ));
        }
        if !(self.utilization > 0.0 && self.utilization < 1.0) {
            return Err(Error::InvalidArgument("utilization must lie in (0, 1)".into()));
        }
        if self
            .jitter
            .iter()
            .chain(&self.swaps)
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "variant magnitudes must be non-negative".into(),
            ));
        }
        self.process.validate()
    }

    /// Placements per design: the base layout plus every variant.
    pub fn variants_per_instance(&self) -> usize {
        1 + self.jitter.len() + self.swaps.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub placement: Placement,
    pub energy: f64,
    pub e_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub netlist: Netlist,
    /// Base layout first.
    pub variants: Vec<Variant>,
    pub stats: GenStats,
    pub spec: GenSpec,
    /// Quadratic-wirelength lower-bound proxy of the composite energy.
    pub e_analytical: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn num_examples(&self) -> usize {
        self.instances.iter().map(|i| i.variants.len()).sum()
    }

    /// Training view: one example per variant, labelled with its stored e_rel.
    pub fn to_train_data(&self) -> TrainData {
        let mut data = TrainData::default();
        for (k, inst) in self.instances.iter().enumerate() {
            data.netlists.push(inst.netlist.clone());
            for v in &inst.variants {
                data.examples.push(TrainExample {
                    netlist: k,
                    placement: coords_to_flat(v.placement.coords()),
                    e_rel: v.e_rel,
                });
            }
        }
        data
    }
}

/// `exp(-(E - E_a) / E_a)`, capped at 1.
pub fn analytic_e_rel(e: f64, e_analytical: f64) -> f64 {
    if !(e_analytical > 0.0) || e <= e_analytical {
        return 1.0;
    }
    (-(e - e_analytical) / e_analytical).exp()
}

/// Minimizer of the quadratic star-model wirelength
/// `Σ_nets Σ_pins (p - mean_net)²` over signal nets, with `fixed` modules
/// held in place. A tiny pull towards the centre keeps it well posed.
pub fn analytical_placement(netlist: &Netlist, fixed: &[Option<[f64; 2]>]) -> Result<Vec<[f64; 2]>> {
    let n = netlist.num_modules();
    if fixed.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: fixed.len(),
        });
    }
    const REG: f64 = 1e-6;
    let nets: Vec<_> = netlist
        .nets
        .iter()
        .filter(|e| e.kind == NetKind::Signal)
        .collect();
    let free: Vec<bool> = fixed.iter().map(|f| f.is_none()).collect();
    let apply = |u: &[f64], axis: usize, with_offsets: bool| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for net in &nets {
            let pos = |ep: &crate::netlist::Endpoint| {
                let off = netlist.modules[ep.module].pins[ep.pin];
                u[ep.module]
                    + if with_offsets {
                        if axis == 0 {
                            off.dx
                        } else {
                            off.dy
                        }
                    } else {
                        0.0
                    }
            };
            let mean = net.endpoints.iter().map(pos).sum::<f64>() / net.endpoints.len() as f64;
            for ep in &net.endpoints {
                out[ep.module] += 2.0 * (pos(ep) - mean);
            }
        }
        for v in 0..n {
            if free[v] {
                out[v] += 2.0 * REG * u[v];
            } else {
                out[v] = 0.0;
            }
        }
        out
    };
    let mut result = vec![[0.0; 2]; n];
    for axis in 0..2 {
        let x0: Vec<f64> = fixed.iter().map(|f| f.map_or(0.0, |p| p[axis])).collect();
        let b = apply(&x0, axis, true);
        let mut u = vec![0.0; n];
        let mut r: Vec<f64> = b.iter().map(|v| -v).collect();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let tol = 1e-24 * (1.0 + rr);
        for _ in 0..(4 * n + 20) {
            if rr <= tol {
                break;
            }
            let hp = apply(&p, axis, false);
            let php: f64 = p.iter().zip(&hp).map(|(a, b)| a * b).sum();
            if !(php > 0.0) {
                break;
            }
            let alpha = rr / php;
            for v in 0..n {
                u[v] += alpha * p[v];
                r[v] -= alpha * hp[v];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            for v in 0..n {
                p[v] = r[v] + beta * p[v];
            }
            rr = rr_new;
        }
        for v in 0..n {
            result[v][axis] = (x0[v] + u[v]).clamp(-1.0, 1.0);
        }
    }
    Ok(result)
}

fn jitter(rng: &mut ChaCha8Rng, netlist: &Netlist, base: &Placement, sigma: f64) -> Result<Placement> {
    let normal =
        Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let coords: Vec<[f64; 2]> = base
        .coords()
        .iter()
        .zip(&netlist.modules)
        .map(|(c, m)| {
            if m.kind == ModuleKind::IoPad || sigma == 0.0 {
                *c
            } else {
                [
                    (c[0] + normal.sample(rng)).clamp(-1.0, 1.0),
                    (c[1] + normal.sample(rng)).clamp(-1.0, 1.0),
                ]
            }
        })
        .collect();
    Placement::new(coords)
}

fn swap(rng: &mut ChaCha8Rng, netlist: &Netlist, base: &Placement, fraction: f64) -> Result<Placement> {
    let mut movable: Vec<usize> = netlist
        .modules
        .iter()
        .filter(|m| m.kind != ModuleKind::IoPad)
        .map(|m| m.id)
        .collect();
    movable.shuffle(rng);
    let pairs = ((fraction * movable.len() as f64) / 2.0).round() as usize;
    let mut coords = base.coords().to_vec();
    for k in 0..pairs.min(movable.len() / 2) {
        coords.swap(movable[2 * k], movable[2 * k + 1]);
    }
    Placement::new(coords)
}

/// Generates `spec.count` designs, each with its base placement and the
/// jitter and swap variants, labelled against the analytical bound.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = EnergyWeights::default();
    let mut instances = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let n = rng.random_range(spec.n_range.0..=spec.n_range.1);
        let aspect = if spec.aspect_range.0 == spec.aspect_range.1 {
            spec.aspect_range.0
        } else {
            rng.random_range(spec.aspect_range.0..=spec.aspect_range.1)
        };
        let fanout = rng.random_range(spec.fanout_range.0..=spec.fanout_range.1);
        let mut gen = GenSpec::with_size(n, spec.utilization, &spec.process, rng.random());
        gen.aspect = aspect;
        gen.max_fanout = fanout;
        gen.mean_degree = spec.mean_degree;
        gen.global_nets = spec.global_nets;
        let params = EdgeModelParams::for_chip(gen.a_target, &spec.process);
        let g = generate_netlist(&gen, &spec.process, &params)?;
        let refs = EnergyRefs::from_reference(&g.netlist, DEFAULT_RESOLUTION)?;
        let fixed: Vec<Option<[f64; 2]>> = g
            .netlist
            .modules
            .iter()
            .map(|m| (m.kind == ModuleKind::IoPad).then(|| g.placement.coords()[m.id]))
            .collect();
        let qp = analytical_placement(&g.netlist, &fixed)?;
        let e_analytical = weights.hpwl * hpwl_coords(&g.netlist, &qp) / refs.hpwl;

        let mut placements = vec![("base".to_string(), g.placement.clone())];
        for &s in &spec.jitter {
            placements.push((
                format!("jitter_{s}"),
                jitter(&mut rng, &g.netlist, &g.placement, s)?,
            ));
        }
        for &f in &spec.swaps {
            placements.push((format!("swap_{f}"), swap(&mut rng, &g.netlist, &g.placement, f)?));
        }
        let variants = placements
            .into_iter()
            .map(|(label, placement)| {
                let energy = energy_terms(
                    &g.netlist,
                    placement.coords(),
                    &weights,
                    &refs,
                    DEFAULT_RESOLUTION,
                )?
                .energy;
                Ok(Variant {
                    label,
                    e_rel: analytic_e_rel(energy, e_analytical),
                    placement,
                    energy,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        instances.push(Instance {
            netlist: g.netlist,
            variants,
            stats: g.stats,
            spec: gen,
            e_analytical,
        });
    }
    Ok(Dataset { instances })
}
