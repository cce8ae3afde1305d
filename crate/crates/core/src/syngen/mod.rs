//! Process-aware synthetic netlist generation.

pub mod dataset;
pub mod generate;
pub mod rent;
pub mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    analytic_e_rel, analytical_placement, build_dataset, Dataset, DatasetSpec, Instance, Variant,
};
pub use generate::{generate_netlist, GenStats, Generated};
pub use rent::{rent_exponent, rent_score, RentFit, RENT_EXPECTED};
pub use validate::{
    congestion_feasibility, congestion_utilization, track_capacity, wirelength_histogram, wirelength_score,
    ReferenceHistogram,
};

/// One metal layer: height above substrate, routing pitch and wire width, in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetalLayer {
    pub height: f64,
    pub pitch: f64,
    pub width: f64,
}

/// Geometric, electrical and layer-stack parameters of a process node.
///
/// Lengths are in µm, `r_sq` in Ω/□, `c_unit` in fF/µm, `f_max` in GHz and
/// `v_dd` in V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessSpec {
    pub h_sc: f64,
    pub w_min: f64,
    pub s_min: f64,
    pub p_grid: f64,
    pub r_sq: f64,
    pub c_unit: f64,
    pub f_max: f64,
    pub v_dd: f64,
    pub layers: Vec<MetalLayer>,
}

impl ProcessSpec {
    /// Representative 45 nm numbers with six metal layers, pitch doubling
    /// every two layers.
    pub fn nm45() -> Self {
        let layers = (0..6)
            .map(|i| {
                let band = (i / 2) as f64;
                let pitch = 0.14 * 2f64.powf(band);
                MetalLayer {
                    height: 0.2 + 0.25 * i as f64,
                    pitch,
                    width: pitch / 2.0,
                }
            })
            .collect();
        Self {
            h_sc: 1.4,
            w_min: 0.19,
            s_min: 0.07,
            p_grid: 0.19,
            r_sq: 0.08,
            c_unit: 0.2,
            f_max: 3.0,
            v_dd: 1.1,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("h_sc", self.h_sc),
            ("w_min", self.w_min),
            ("s_min", self.s_min),
            ("p_grid", self.p_grid),
            ("r_sq", self.r_sq),
            ("c_unit", self.c_unit),
            ("f_max", self.f_max),
            ("v_dd", self.v_dd),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument(
                "process needs at least one metal layer".into(),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.height > 0.0 && l.pitch > 0.0 && l.width > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "metal layer {i} needs positive height, pitch and width"
                )));
            }
        }
        Ok(())
    }

    /// Number of length bands: layers are assigned in pairs.
    pub fn bands(&self) -> usize {
        self.layers.len().div_ceil(2)
    }

    /// Upper length limit of each band but the last, in µm.
    pub fn band_limits(&self) -> Vec<f64> {
        (1..self.bands())
            .map(|b| 10.0 * self.p_grid * 10f64.powi(b as i32 - 1))
            .collect()
    }

    /// Wire width used by band `b`.
    pub fn band_width(&self, band: usize) -> f64 {
        self.layers[(2 * band).min(self.layers.len() - 1)].width
    }
}

impl Default for ProcessSpec {
    fn default() -> Self {
        Self::nm45()
    }
}

/// Target size of one generated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub n_total: usize,
    /// Die area in µm².
    pub a_target: f64,
    /// Clock frequency in GHz.
    pub f_target: f64,
    /// Die height over width.
    pub aspect: f64,
    /// Largest number of pins on one signal net.
    pub max_fanout: usize,
    /// Target mean number of nets per module.
    pub mean_degree: f64,
    /// Add the clock H-tree and the power mesh.
    pub global_nets: bool,
    pub seed: u64,
}

impl GenSpec {
    /// A design of `n_total` modules whose die is sized for roughly
    /// `utilization` of cell area.
    pub fn with_size(n_total: usize, utilization: f64, process: &ProcessSpec, seed: u64) -> Self {
        let mean_cell = process.h_sc * process.p_grid * 6.0;
        let macro_share = 0.01 * 1.5 * (n_total.max(2) as f64).ln() * (0.125f64).exp();
        let available = (utilization - macro_share).max(0.05);
        Self {
            n_total,
            a_target: n_total as f64 * mean_cell / available,
            f_target: 1.0,
            aspect: 1.0,
            max_fanout: 50,
            mean_degree: 3.0,
            global_nets: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_total < 8 {
            return Err(Error::InvalidArgument(format!(
                "a design needs at least 8 modules, got {}",
                self.n_total
            )));
        }
        for (name, v) in [
            ("a_target", self.a_target),
            ("f_target", self.f_target),
            ("aspect", self.aspect),
            ("mean_degree", self.mean_degree),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_fanout < 2 {
            return Err(Error::InvalidArgument("max_fanout must be at least 2".into()));
        }
        Ok(())
    }

    /// Die width and height in µm.
    pub fn die(&self) -> (f64, f64) {
        let w = (self.a_target / self.aspect).sqrt();
        (w, self.a_target / w)
    }

    /// Clock period in seconds.
    pub fn t_clk(&self) -> f64 {
        1e-9 / self.f_target
    }
}

/// Constants of the edge-probability model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeModelParams {
    pub gamma: f64,
    pub alpha: f64,
    pub lambda_rent: f64,
    pub kappa_fringe: f64,
    pub omega_local: f64,
    pub omega_global: f64,
    pub omega_io: f64,
    /// Length beyond which wire pruning sets in, µm.
    pub l_max1: f64,
    /// Decay length of wire pruning, µm.
    pub tau_wire: f64,
    /// Average switching current, A.
    pub i_avg: f64,
}

impl EdgeModelParams {
    pub fn for_chip(area: f64, process: &ProcessSpec) -> Self {
        Self {
            gamma: 1.0,
            alpha: 0.5,
            lambda_rent: area.sqrt() / 10.0,
            kappa_fringe: 0.3,
            omega_local: 2.0,
            omega_global: 0.5,
            omega_io: 0.8,
            l_max1: 50.0 * process.p_grid,
            tau_wire: 25.0 * process.p_grid,
            i_avg: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda_rent", self.lambda_rent),
            ("omega_local", self.omega_local),
            ("omega_global", self.omega_global),
            ("omega_io", self.omega_io),
            ("l_max1", self.l_max1),
            ("tau_wire", self.tau_wire),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.kappa_fringe >= 0.0 && self.i_avg >= 0.0) {
            return Err(Error::InvalidArgument(
                "kappa_fringe and i_avg must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `γ · d^-α · exp(-d / λ_rent)`, uncapped.
pub fn p_base(d: f64, params: &EdgeModelParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {d}"
        )));
    }
    Ok(params.gamma * d.powf(-params.alpha) * (-d / params.lambda_rent).exp())
}

/// Via resistance multiplier of band `band`.
pub fn rho_via(band: usize) -> f64 {
    1.0 + 0.1 * band as f64
}

/// Resistance of a wire of length `d` routed entirely on band `band`.
pub fn band_resistance(d: f64, band: usize, process: &ProcessSpec) -> f64 {
    process.r_sq * d / process.band_width(band) * rho_via(band)
}

/// Wire resistance (Ω) and capacitance (fF) at length `d` µm.
///
/// A wire climbs the stack with length: the part below the first band
/// limit runs on the lowest band, the next part on the band above, and so
/// on, so resistance is continuous and piecewise linear in `d`.
pub fn wire_rc(d: f64, process: &ProcessSpec, params: &EdgeModelParams) -> (f64, f64) {
    let d = d.max(0.0);
    let limits = process.band_limits();
    let mut r = 0.0;
    let mut start = 0.0;
    for band in 0..process.bands() {
        let end = limits.get(band).copied().unwrap_or(f64::INFINITY);
        if d <= start {
            break;
        }
        r += band_resistance(d.min(end) - start, band, process);
        start = end;
    }
    let c = process.c_unit * d * (1.0 + params.kappa_fringe);
    (r, c)
}

/// Routability factor `M_wire · M_delay · M_power` in `(0, 1]`.
pub fn m_phys(d: f64, process: &ProcessSpec, params: &EdgeModelParams, t_clk: f64) -> f64 {
    let (m_wire, m_delay, m_power) = m_phys_parts(d, process, params, t_clk);
    m_wire * m_delay * m_power
}

/// The three factors of [`m_phys`].
pub fn m_phys_parts(d: f64, process: &ProcessSpec, params: &EdgeModelParams, t_clk: f64) -> (f64, f64, f64) {
    let m_wire = if d <= params.l_max1 {
        1.0
    } else {
        (-(d - params.l_max1) / params.tau_wire).exp()
    };
    let (r, c) = wire_rc(d, process, params);
    let rc = r * c * 1e-15;
    let m_delay = (-(rc / (t_clk / 20.0) - 1.0).max(0.0)).exp();
    let m_power = (-(params.i_avg * r / (0.05 * process.v_dd) - 1.0).max(0.0)).exp();
    (m_wire, m_delay, m_power)
}

/// Topology weight of a pair: I/O pairs first, then same-block versus
/// cross-block.
pub fn m_design(i: usize, j: usize, blocks: &[Option<usize>], params: &EdgeModelParams) -> f64 {
    match (blocks[i], blocks[j]) {
        (None, _) | (_, None) => params.omega_io,
        (Some(a), Some(b)) if a == b => params.omega_local,
        _ => params.omega_global,
    }
}

/// `p_base · M_phys · M_design`, clipped to `[0, 1]`. `blocks[k]` is `None`
/// for I/O pads.
pub fn edge_probability(
    i: usize,
    j: usize,
    d: f64,
    process: &ProcessSpec,
    params: &EdgeModelParams,
    t_clk: f64,
    blocks: &[Option<usize>],
) -> Result<f64> {
    let p = p_base(d, params)? * m_phys(d, process, params, t_clk) * m_design(i, j, blocks, params);
    Ok(p.clamp(0.0, 1.0))
}
