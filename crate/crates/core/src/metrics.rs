//! Placement metrics: HPWL, RUDY congestion, overlap, composite energy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlist::{ModuleKind, Netlist, Placement};

/// Default congestion grid resolution.
pub const DEFAULT_RESOLUTION: (usize, usize) = (32, 32);

/// RUDY map over the normalized canvas, stored row-major with row 0 at `y = -1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<f64>,
}

impl CongestionGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.cols + col]
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }
}

/// Pin bounding box `(xmin, xmax, ymin, ymax)` of each net.
pub fn net_bboxes(netlist: &Netlist, coords: &[[f64; 2]]) -> Vec<[f64; 4]> {
    netlist
        .nets
        .iter()
        .map(|net| {
            let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
            for ep in &net.endpoints {
                let pin = netlist.modules[ep.module].pins[ep.pin];
                let c = coords[ep.module];
                let (x, y) = (c[0] + pin.dx, c[1] + pin.dy);
                b[0] = b[0].min(x);
                b[1] = b[1].max(x);
                b[2] = b[2].min(y);
                b[3] = b[3].max(y);
            }
            b
        })
        .collect()
}

/// Half-perimeter wirelength summed over nets.
pub fn hpwl(netlist: &Netlist, placement: &Placement) -> Result<f64> {
    placement.check_matches(netlist)?;
    Ok(hpwl_coords(netlist, placement.coords()))
}

/// [`hpwl`] on raw coordinates, which may leave the canvas.
pub fn hpwl_coords(netlist: &Netlist, coords: &[[f64; 2]]) -> f64 {
    net_bboxes(netlist, coords)
        .iter()
        .map(|b| (b[1] - b[0]) + (b[3] - b[2]))
        .sum()
}

fn cell_range(lo: f64, hi: f64, pitch: f64, n: usize) -> (usize, usize) {
    let last = n as f64 - 1.0;
    let a = ((lo + 1.0) / pitch).floor().clamp(0.0, last);
    let b = (((hi + 1.0) / pitch).ceil() - 1.0).clamp(0.0, last).max(a);
    (a as usize, b as usize)
}

/// RUDY congestion with `resolution = (rows, cols)`.
pub fn rudy_map(
    netlist: &Netlist,
    placement: &Placement,
    resolution: (usize, usize),
) -> Result<CongestionGrid> {
    placement.check_matches(netlist)?;
    rudy_map_coords(netlist, placement.coords(), resolution)
}

pub fn rudy_map_coords(
    netlist: &Netlist,
    coords: &[[f64; 2]],
    (rows, cols): (usize, usize),
) -> Result<CongestionGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "congestion grid must be at least 1x1, got {rows}x{cols}"
        )));
    }
    let px = 2.0 / cols as f64;
    let py = 2.0 / rows as f64;
    let mut grid = CongestionGrid::zeros(rows, cols);
    for b in net_bboxes(netlist, coords) {
        let w = (b[1] - b[0]).max(px);
        let h = (b[3] - b[2]).max(py);
        let density = 1.0 / w + 1.0 / h;
        let (c0, c1) = cell_range(b[0], b[1], px, cols);
        let (r0, r1) = cell_range(b[2], b[3], py, rows);
        for r in r0..=r1 {
            let row = &mut grid.cells[r * cols..(r + 1) * cols];
            for cell in &mut row[c0..=c1] {
                *cell += density;
            }
        }
    }
    Ok(grid)
}

pub fn max_congestion(grid: &CongestionGrid) -> f64 {
    grid.cells.iter().copied().fold(0.0, f64::max)
}

/// Overlap area of two axis-aligned rectangles given as centers and sizes.
pub fn rect_overlap(a: [f64; 2], sa: [f64; 2], b: [f64; 2], sb: [f64; 2]) -> f64 {
    let span = |k: usize| {
        let hi = (a[k] + sa[k] / 2.0).min(b[k] + sb[k] / 2.0);
        let lo = (a[k] - sa[k] / 2.0).max(b[k] - sb[k] / 2.0);
        (hi - lo).max(0.0)
    };
    span(0) * span(1)
}

/// Pairwise intersection area over total module area, I/O pads excluded.
pub fn overlap_ratio(netlist: &Netlist, placement: &Placement) -> Result<f64> {
    placement.check_matches(netlist)?;
    Ok(overlap_ratio_coords(netlist, placement.coords()))
}

pub fn overlap_ratio_coords(netlist: &Netlist, coords: &[[f64; 2]]) -> f64 {
    let bodies: Vec<([f64; 2], [f64; 2])> = netlist
        .modules
        .iter()
        .filter(|m| m.kind != ModuleKind::IoPad)
        .map(|m| (coords[m.id], [m.width, m.height]))
        .collect();
    let total: f64 = bodies.iter().map(|(_, s)| s[0] * s[1]).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut overlap = 0.0;
    for (i, (a, sa)) in bodies.iter().enumerate() {
        for (b, sb) in &bodies[i + 1..] {
            overlap += rect_overlap(*a, *sa, *b, *sb);
        }
    }
    overlap / total
}

/// Objective weights of the composite energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub hpwl: f64,
    pub cong: f64,
    pub over: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            hpwl: 1.0,
            cong: 0.5,
            over: 10.0,
        }
    }
}

/// Normalizers for the wirelength and congestion terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRefs {
    pub hpwl: f64,
    pub cong: f64,
}

impl EnergyRefs {
    /// Measures the reference layout of `netlist`, falling back to 1 for
    /// any zero normalizer.
    pub fn from_reference(netlist: &Netlist, resolution: (usize, usize)) -> Result<Self> {
        let reference = reference_placement(netlist.num_modules());
        let hpwl = hpwl_coords(netlist, &reference);
        let cong = max_congestion(&rudy_map_coords(netlist, &reference, resolution)?);
        let fix = |v: f64| if v > 0.0 && v.is_finite() { v } else { 1.0 };
        Ok(Self {
            hpwl: fix(hpwl),
            cong: fix(cong),
        })
    }
}

/// Modules on a uniform square grid in id order, filling rows from the bottom.
pub fn reference_placement(n: usize) -> Vec<[f64; 2]> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols).max(1);
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [
                -1.0 + (2.0 * c as f64 + 1.0) / cols as f64,
                -1.0 + (2.0 * r as f64 + 1.0) / rows as f64,
            ]
        })
        .collect()
}

/// Weights, normalizers and per-netlist energy bounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergySpec {
    pub weights: EnergyWeights,
    pub refs: Option<EnergyRefs>,
    /// Running `(E_min, E_max)` per netlist name.
    pub bounds: BTreeMap<String, (f64, f64)>,
}

impl EnergySpec {
    pub fn new(weights: EnergyWeights) -> Result<Self> {
        for v in [weights.hpwl, weights.cong, weights.over] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "energy weights must be non-negative, got {v}"
                )));
            }
        }
        Ok(Self {
            weights,
            refs: None,
            bounds: BTreeMap::new(),
        })
    }

    pub fn with_refs(mut self, refs: EnergyRefs) -> Result<Self> {
        if !(refs.hpwl > 0.0 && refs.cong > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "energy normalizers must be positive, got {} and {}",
                refs.hpwl, refs.cong
            )));
        }
        self.refs = Some(refs);
        Ok(self)
    }

    pub fn bounds_of(&self, netlist: &str) -> Option<(f64, f64)> {
        self.bounds.get(netlist).copied()
    }
}

/// Individual energy terms of one placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub hpwl: f64,
    pub max_congestion: f64,
    pub overlap_ratio: f64,
    pub energy: f64,
}

pub fn energy_terms(
    netlist: &Netlist,
    coords: &[[f64; 2]],
    weights: &EnergyWeights,
    refs: &EnergyRefs,
    resolution: (usize, usize),
) -> Result<EnergyTerms> {
    let hpwl = hpwl_coords(netlist, coords);
    let max_congestion = max_congestion(&rudy_map_coords(netlist, coords, resolution)?);
    let overlap_ratio = overlap_ratio_coords(netlist, coords);
    let energy = weights.hpwl * hpwl / refs.hpwl
        + weights.cong * max_congestion / refs.cong
        + weights.over * overlap_ratio;
    Ok(EnergyTerms {
        hpwl,
        max_congestion,
        overlap_ratio,
        energy,
    })
}

pub fn composite_energy(
    netlist: &Netlist,
    placement: &Placement,
    spec: &EnergySpec,
    resolution: (usize, usize),
) -> Result<f64> {
    placement.check_matches(netlist)?;
    let refs = spec.refs.as_ref().ok_or(Error::UnsetReferences)?;
    Ok(energy_terms(netlist, placement.coords(), &spec.weights, refs, resolution)?.energy)
}

/// `exp(-(E - E_min) / (E_max - E_min))`, clamped to 1 at or below `E_min`.
pub fn relative_energy(e: f64, (e_min, e_max): (f64, f64)) -> f64 {
    let span = e_max - e_min;
    if !(span > 0.0) || e <= e_min {
        return 1.0;
    }
    (-(e - e_min) / span).exp()
}

/// Widens the running bounds of `netlist_id` to include `e`.
pub fn update_bounds(spec: &mut EnergySpec, netlist_id: &str, e: f64) {
    spec.bounds
        .entry(netlist_id.to_owned())
        .and_modify(|(lo, hi)| {
            *lo = lo.min(e);
            *hi = hi.max(e);
        })
        .or_insert((e, e));
}

/// JSON-friendly summary of a placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hpwl: f64,
    pub max_congestion: f64,
    pub overlap_ratio: f64,
    pub energy: f64,
    pub e_rel: f64,
}

/// Evaluates every metric. `e_rel` uses the stored bounds for the netlist
/// when present and is 1 otherwise.
pub fn evaluate(
    netlist: &Netlist,
    placement: &Placement,
    spec: &EnergySpec,
    resolution: (usize, usize),
) -> Result<MetricsReport> {
    placement.check_matches(netlist)?;
    let refs = spec.refs.as_ref().ok_or(Error::UnsetReferences)?;
    let t = energy_terms(netlist, placement.coords(), &spec.weights, refs, resolution)?;
    let e_rel = spec
        .bounds_of(&netlist.name)
        .map_or(1.0, |b| relative_energy(t.energy, b));
    Ok(MetricsReport {
        hpwl: t.hpwl,
        max_congestion: t.max_congestion,
        overlap_ratio: t.overlap_ratio,
        energy: t.energy,
        e_rel,
    })
}
