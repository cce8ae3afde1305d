//! Validation scores of generated designs.

use serde::{Deserialize, Serialize};

use super::ProcessSpec;
use crate::error::{Error, Result};
use crate::metrics::net_bboxes;
use crate::netlist::{Canvas, NetKind, Netlist, Placement};

/// Additive smoothing applied to both histograms before the KL divergence.
pub const KL_EPSILON: f64 = 1e-9;

/// Utilization below which a congestion cell counts as routable.
pub const ROUTABLE_UTILIZATION: f64 = 0.9;

/// Probabilities over fixed bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHistogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ReferenceHistogram {
    /// Log-normal `(mu, sigma)` mass on `bins` log-spaced bins over `[lo, hi]`.
    pub fn lognormal(mu: f64, sigma: f64, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && sigma > 0.0 && bins > 0) {
            return Err(Error::InvalidArgument(
                "log-normal reference needs 0 < lo < hi, sigma > 0 and at least one bin".into(),
            ));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let edges: Vec<f64> = (0..=bins)
            .map(|k| (a + (b - a) * k as f64 / bins as f64).exp())
            .collect();
        let cdf = |x: f64| 0.5 * (1.0 + erf((x.ln() - mu) / (sigma * std::f64::consts::SQRT_2)));
        let mass: Vec<f64> = edges.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
        let total: f64 = mass.iter().sum();
        Ok(Self {
            probs: mass.iter().map(|m| m / total).collect(),
            edges,
        })
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }
}

impl Default for ReferenceHistogram {
    /// Net lengths on the normalized canvas: median 0.1, one e-fold spread.
    fn default() -> Self {
        Self::lognormal((0.1f64).ln(), 1.0, 1e-3, 4.0, 24).expect("valid constants")
    }
}

/// Abramowitz-Stegun 7.1.26 error function, accurate to 1.5e-7.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    if x >= 0.0 {
        y
    } else {
        -y
    }
}

/// Normalized histogram of per-net HPWL over `reference.edges`. Values
/// outside the range fall into the first or last bin.
pub fn wirelength_histogram(netlist: &Netlist, placement: &Placement, edges: &[f64]) -> Result<Vec<f64>> {
    placement.check_matches(netlist)?;
    let bins = edges.len().saturating_sub(1);
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0.0; bins];
    let mut total = 0.0;
    for (net, b) in netlist.nets.iter().zip(net_bboxes(netlist, placement.coords())) {
        if net.kind != NetKind::Signal {
            continue;
        }
        let len = (b[1] - b[0]) + (b[3] - b[2]);
        let k = edges[1..bins].partition_point(|&e| e <= len);
        counts[k] += 1.0;
        total += 1.0;
    }
    if total == 0.0 {
        return Err(Error::InvalidArgument("no signal nets to histogram".into()));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// `D_KL(p || q)` after additive smoothing of both distributions.
pub fn smoothed_kl(p: &[f64], q: &[f64]) -> f64 {
    let k = p.len() as f64;
    let zp = 1.0 + KL_EPSILON * k;
    let zq = q.iter().sum::<f64>() + KL_EPSILON * k;
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            let a = (a + KL_EPSILON) / zp;
            let b = (b + KL_EPSILON) / zq;
            a * (a / b).ln()
        })
        .sum()
}

/// `exp(-D_KL(P_gen || P_ref))` of the per-net HPWL distribution.
pub fn wirelength_score(
    netlist: &Netlist,
    placement: &Placement,
    reference: &ReferenceHistogram,
) -> Result<f64> {
    let hist = wirelength_histogram(netlist, placement, &reference.edges)?;
    Ok((-smoothed_kl(&hist, &reference.probs)).exp())
}

/// Routing tracks crossing one congestion cell, summed over the layer
/// stack. Layers alternate direction starting with horizontal.
pub fn track_capacity(process: &ProcessSpec, canvas: Canvas, (rows, cols): (usize, usize)) -> f64 {
    let cell_w = canvas.width / cols.max(1) as f64;
    let cell_h = canvas.height / rows.max(1) as f64;
    process
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i % 2 == 0 {
                cell_h / l.pitch
            } else {
                cell_w / l.pitch
            }
        })
        .sum()
}

/// Per-cell routing utilization, row-major: expected net crossings over
/// `capacity`. A net crosses a cell with probability equal to the share of
/// the cell covered by its bounding box.
pub fn congestion_utilization(
    netlist: &Netlist,
    placement: &Placement,
    (rows, cols): (usize, usize),
    capacity: f64,
) -> Result<Vec<f64>> {
    placement.check_matches(netlist)?;
    if rows == 0 || cols == 0 || !(capacity > 0.0) {
        return Err(Error::InvalidArgument(
            "congestion feasibility needs a non-empty grid and positive capacity".into(),
        ));
    }
    let (px, py) = (2.0 / cols as f64, 2.0 / rows as f64);
    let mut demand = vec![0.0; rows * cols];
    for b in net_bboxes(netlist, placement.coords()) {
        for r in 0..rows {
            let (y0, y1) = (-1.0 + r as f64 * py, -1.0 + (r + 1) as f64 * py);
            let fy = overlap_fraction(b[2], b[3], y0, y1, py);
            if fy == 0.0 {
                continue;
            }
            for c in 0..cols {
                let (x0, x1) = (-1.0 + c as f64 * px, -1.0 + (c + 1) as f64 * px);
                demand[r * cols + c] += fy * overlap_fraction(b[0], b[1], x0, x1, px);
            }
        }
    }
    Ok(demand.into_iter().map(|d| d / capacity).collect())
}

/// Share of the cell `[c0, c1]` covered by `[lo, hi]`; a degenerate span
/// lying inside the cell covers it fully along that axis.
fn overlap_fraction(lo: f64, hi: f64, c0: f64, c1: f64, pitch: f64) -> f64 {
    if hi <= lo {
        return if lo >= c0 && lo < c1 { 1.0 } else { 0.0 };
    }
    (hi.min(c1) - lo.max(c0)).max(0.0) / pitch
}

/// Fraction of congestion cells whose utilization stays below 0.9.
pub fn congestion_feasibility(
    netlist: &Netlist,
    placement: &Placement,
    resolution: (usize, usize),
    capacity: f64,
) -> Result<f64> {
    let u = congestion_utilization(netlist, placement, resolution, capacity)?;
    Ok(u.iter().filter(|&&v| v < ROUTABLE_UTILIZATION).count() as f64 / u.len() as f64)
}
