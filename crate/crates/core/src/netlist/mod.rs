//! Hypergraph netlists and normalized placements.
//!
//! Module dimensions, pin offsets and placement coordinates all live in the
//! normalized canvas frame where the die maps onto `[-1, 1]²`. Each axis is
//! scaled independently, so a `200 x 100` die still fills the full square.

pub mod bookshelf;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that pins sit inside their module.
const PIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Macro,
    StandardCell,
    IoPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinDirection {
    Input,
    Output,
    #[default]
    Bidirectional,
}

/// Pin location relative to the center of its module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinOffset {
    pub dx: f64,
    pub dy: f64,
    #[serde(default)]
    pub direction: PinDirection,
}

impl PinOffset {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self {
            dx,
            dy,
            direction: PinDirection::Bidirectional,
        }
    }

    pub fn with_direction(mut self, direction: PinDirection) -> Self {
        self.direction = direction;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub id: usize,
    pub name: String,
    pub width: f64,
    pub height: f64,
    pub kind: ModuleKind,
    pub pins: Vec<PinOffset>,
}

impl Module {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Mean pin offset, zero for pinless modules.
    pub fn mean_pin_offset(&self) -> [f64; 2] {
        if self.pins.is_empty() {
            return [0.0, 0.0];
        }
        let n = self.pins.len() as f64;
        let (sx, sy) = self
            .pins
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.dx, sy + p.dy));
        [sx / n, sy / n]
    }
}

/// A `(module, pin)` pair on a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub module: usize,
    pub pin: usize,
}

/// Role of a net. Clock and power nets come from the synthetic generator's
/// global networks and are kept apart from signal statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    #[default]
    Signal,
    Clock,
    Power,
}

/// Optional per-net annotations. Not read by any metric or model by default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetAnnotations {
    pub net_type: Option<String>,
    pub critical: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub id: usize,
    pub name: String,
    #[serde(default)]
    pub kind: NetKind,
    pub endpoints: Vec<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<NetAnnotations>,
}

/// Physical die extent, in the units of the source files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
}

/// Whether module geometry is still in physical units or already normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Physical,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub name: String,
    pub canvas: Canvas,
    pub units: Units,
    pub modules: Vec<Module>,
    pub nets: Vec<Net>,
}

/// Outcome of [`Netlist::validate`]. Isolated modules are reported, not rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub isolated: Vec<usize>,
}

impl Netlist {
    pub fn num_modules(&self) -> usize {
        self.modules.len()
    }

    pub fn num_nets(&self) -> usize {
        self.nets.len()
    }

    /// Checks every structural invariant and returns the isolated modules.
    pub fn validate(&self) -> Result<ValidationReport> {
        for (i, m) in self.modules.iter().enumerate() {
            if m.id != i {
                return Err(Error::InvalidNetlist(format!(
                    "module ids must be dense: position {i} holds id {}",
                    m.id
                )));
            }
            let finite = m.width.is_finite() && m.height.is_finite();
            let positive = m.width > 0.0 && m.height > 0.0;
            let pad_ok = m.kind == ModuleKind::IoPad && m.width >= 0.0 && m.height >= 0.0;
            if !finite || !(positive || pad_ok) {
                return Err(Error::NonPositiveDimension {
                    name: m.name.clone(),
                    width: m.width,
                    height: m.height,
                });
            }
            for (j, p) in m.pins.iter().enumerate() {
                if !p.dx.is_finite() || !p.dy.is_finite() {
                    return Err(Error::InvalidNetlist(format!(
                        "module `{}` pin {j} has a non-finite offset",
                        m.name
                    )));
                }
                let sx = PIN_SLACK * (1.0 + m.width);
                let sy = PIN_SLACK * (1.0 + m.height);
                if p.dx.abs() > m.width / 2.0 + sx || p.dy.abs() > m.height / 2.0 + sy {
                    return Err(Error::InvalidNetlist(format!(
                        "module `{}` pin {j} offset ({}, {}) lies outside its {} x {} rectangle",
                        m.name, p.dx, p.dy, m.width, m.height
                    )));
                }
            }
        }
        for (i, net) in self.nets.iter().enumerate() {
            if net.id != i {
                return Err(Error::InvalidNetlist(format!(
                    "net ids must be dense: position {i} holds id {}",
                    net.id
                )));
            }
            if net.endpoints.is_empty() {
                return Err(Error::InvalidNetlist(format!("net `{}` is empty", net.name)));
            }
            let mut seen = std::collections::BTreeSet::new();
            for ep in &net.endpoints {
                let module = self.modules.get(ep.module).ok_or_else(|| {
                    Error::InvalidNetlist(format!(
                        "net `{}` references module {} of {}",
                        net.name,
                        ep.module,
                        self.modules.len()
                    ))
                })?;
                if ep.pin >= module.pins.len() {
                    return Err(Error::InvalidNetlist(format!(
                        "net `{}` references pin {} of module `{}` which has {}",
                        net.name,
                        ep.pin,
                        module.name,
                        module.pins.len()
                    )));
                }
                if !seen.insert(*ep) {
                    return Err(Error::InvalidNetlist(format!(
                        "net `{}` lists endpoint ({}, {}) twice",
                        net.name, ep.module, ep.pin
                    )));
                }
            }
        }
        let degrees = self.module_degrees();
        Ok(ValidationReport {
            isolated: degrees
                .iter()
                .enumerate()
                .filter(|(_, d)| **d == 0)
                .map(|(i, _)| i)
                .collect(),
        })
    }

    /// Number of distinct nets touching each module.
    pub fn module_degrees(&self) -> Vec<usize> {
        self.module_degrees_where(|_| true)
    }

    /// Like [`Netlist::module_degrees`] but counting only nets accepted by `keep`.
    pub fn module_degrees_where(&self, keep: impl Fn(&Net) -> bool) -> Vec<usize> {
        let mut degree = vec![0usize; self.modules.len()];
        let mut last_net = vec![usize::MAX; self.modules.len()];
        for net in self.nets.iter().filter(|n| keep(n)) {
            for ep in &net.endpoints {
                if last_net[ep.module] != net.id {
                    last_net[ep.module] = net.id;
                    degree[ep.module] += 1;
                }
            }
        }
        degree
    }

    /// For every module, the distinct nets it belongs to, in net order.
    pub fn nets_of_modules(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.modules.len()];
        for net in &self.nets {
            for ep in &net.endpoints {
                let list: &mut Vec<usize> = &mut out[ep.module];
                if list.last() != Some(&net.id) {
                    list.push(net.id);
                }
            }
        }
        out
    }
}

/// Rescales a physical netlist so the die spans `[-1, 1]²`. Normalized
/// netlists are returned unchanged.
pub fn normalize_canvas(netlist: &Netlist) -> Result<Netlist> {
    if netlist.units == Units::Normalized {
        return Ok(netlist.clone());
    }
    let Canvas { width, height } = netlist.canvas;
    if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
        return Err(Error::InvalidNetlist(format!(
            "canvas must have positive area, got {width} x {height}"
        )));
    }
    let sx = 2.0 / width;
    let sy = 2.0 / height;
    let mut out = netlist.clone();
    out.units = Units::Normalized;
    for m in &mut out.modules {
        m.width *= sx;
        m.height *= sy;
        for p in &mut m.pins {
            p.dx *= sx;
            p.dy *= sy;
        }
    }
    Ok(out)
}

/// Per-module center coordinates on the normalized canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    coords: Vec<[f64; 2]>,
}

impl Placement {
    /// Builds a placement, rejecting non-finite or out-of-canvas coordinates.
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        for (i, c) in coords.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(Error::InvalidPlacement(format!(
                    "module {i} has non-finite coordinates"
                )));
            }
            if c[0].abs() > 1.0 || c[1].abs() > 1.0 {
                return Err(Error::InvalidPlacement(format!(
                    "module {i} at ({}, {}) lies outside [-1, 1]²",
                    c[0], c[1]
                )));
            }
        }
        Ok(Self { coords })
    }

    /// Clamps every coordinate into `[-1, 1]` and reports how many values moved.
    pub fn clamped(coords: &[[f64; 2]]) -> Result<(Self, usize)> {
        let mut clamps = 0;
        let mut out = Vec::with_capacity(coords.len());
        for (i, c) in coords.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(Error::Numeric(format!("module {i} has non-finite coordinates")));
            }
            let mut p = *c;
            for v in &mut p {
                if v.abs() > 1.0 {
                    *v = v.clamp(-1.0, 1.0);
                    clamps += 1;
                }
            }
            out.push(p);
        }
        Ok((Self { coords: out }, clamps))
    }

    /// Flat `[x0, y0, x1, y1, ...]` layout used by the diffusion code.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        Self::new(flat_to_coords(values))
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        coords_to_flat(&self.coords)
    }

    pub fn check_matches(&self, netlist: &Netlist) -> Result<()> {
        if self.coords.len() != netlist.num_modules() {
            return Err(Error::ShapeMismatch {
                expected: netlist.num_modules(),
                actual: self.coords.len(),
            });
        }
        Ok(())
    }
}

pub fn flat_to_coords(values: &[f64]) -> Vec<[f64; 2]> {
    values.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

pub fn coords_to_flat(coords: &[[f64; 2]]) -> Vec<f64> {
    coords.iter().flat_map(|c| [c[0], c[1]]).collect()
}

/// Absolute position of a pin: module center plus pin offset.
pub fn pin_absolute_position(
    netlist: &Netlist,
    coords: &[[f64; 2]],
    module_id: usize,
    pin_index: usize,
) -> Result<[f64; 2]> {
    let module = netlist
        .modules
        .get(module_id)
        .ok_or_else(|| Error::OutOfRange(format!("module {module_id}")))?;
    let pin = module
        .pins
        .get(pin_index)
        .ok_or_else(|| Error::OutOfRange(format!("pin {pin_index} of module {module_id}")))?;
    let c = coords
        .get(module_id)
        .ok_or_else(|| Error::OutOfRange(format!("placement has no module {module_id}")))?;
    Ok([c[0] + pin.dx, c[1] + pin.dy])
}

/// Histogram of module degrees (distinct nets per module). Counts sum to N.
pub fn degree_histogram(netlist: &Netlist) -> BTreeMap<usize, usize> {
    histogram(&netlist.module_degrees())
}

pub fn histogram(values: &[usize]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for &d in values {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// Discrete power-law fit `P(k) ∝ k^-alpha` for `k >= k_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub k_min: usize,
    /// Kolmogorov-Smirnov distance between the tail and the fitted law.
    pub ks: f64,
    pub tail: usize,
}

/// Fits the tail exponent by maximum likelihood, choosing `k_min` by
/// minimum KS distance over candidates that keep at least `min_tail` samples.
///
/// Uses the continuous approximation `alpha = 1 + n / Σ ln(k / (k_min - 1/2))`.
pub fn fit_power_law(hist: &BTreeMap<usize, usize>, min_tail: usize) -> Option<PowerLawFit> {
    let samples: Vec<(usize, usize)> = hist
        .iter()
        .filter(|(k, c)| **k >= 1 && **c > 0)
        .map(|(k, c)| (*k, *c))
        .collect();
    let mut best: Option<PowerLawFit> = None;
    for (idx, &(k_min, _)) in samples.iter().enumerate() {
        let tail = &samples[idx..];
        let n: usize = tail.iter().map(|(_, c)| c).sum();
        if n < min_tail.max(2) || tail.len() < 2 {
            break;
        }
        let shift = k_min as f64 - 0.5;
        let log_sum: f64 = tail
            .iter()
            .map(|&(k, c)| c as f64 * (k as f64 / shift).ln())
            .sum();
        if log_sum <= 0.0 {
            continue;
        }
        let alpha = 1.0 + n as f64 / log_sum;
        let ks = ks_distance(tail, n, shift, alpha);
        if best.is_none_or(|b| ks < b.ks) {
            best = Some(PowerLawFit {
                alpha,
                k_min,
                ks,
                tail: n,
            });
        }
    }
    best
}

fn ks_distance(tail: &[(usize, usize)], n: usize, shift: f64, alpha: f64) -> f64 {
    // Compares complementary CDFs at every observed degree.
    let mut remaining = n as f64;
    let mut worst: f64 = 0.0;
    for &(k, c) in tail {
        let empirical = remaining / n as f64;
        let model = ((k as f64 - 0.5) / shift).powf(1.0 - alpha);
        worst = worst.max((empirical - model).abs());
        remaining -= c as f64;
    }
    worst
}
