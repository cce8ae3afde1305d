//! Constraint potentials with analytic gradients.

use crate::metrics::{max_congestion, net_bboxes, rudy_map_coords};
use crate::netlist::{ModuleKind, Netlist};

/// Module count from which [`phi_legality`] switches to a spatial hash.
pub const HASH_THRESHOLD: usize = 256;

/// A potential value with its gradient, one `[d/dx, d/dy]` per module.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub value: f64,
    pub grad: Vec<[f64; 2]>,
}

impl Potential {
    pub fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![[0.0, 0.0]; n],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0.0 && self.grad.iter().all(|g| g[0] == 0.0 && g[1] == 0.0)
    }
}

/// Signed separation of two rectangles: the largest per-axis gap between
/// them, negative when they intersect.
pub fn separation(a: [f64; 2], sa: [f64; 2], b: [f64; 2], sb: [f64; 2]) -> f64 {
    let dx = (a[0] - b[0]).abs() - (sa[0] + sb[0]) / 2.0;
    let dy = (a[1] - b[1]).abs() - (sa[1] + sb[1]) / 2.0;
    dx.max(dy)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_pair(netlist: &Netlist, coords: &[[f64; 2]], i: usize, j: usize, out: &mut Potential) {
    let (a, b) = (&netlist.modules[i], &netlist.modules[j]);
    let delta = [coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]];
    let gap = [
        delta[0].abs() - (a.width + b.width) / 2.0,
        delta[1].abs() - (a.height + b.height) / 2.0,
    ];
    let d = gap[0].max(gap[1]);
    if d >= 0.0 {
        return;
    }
    let axis = if gap[0] >= gap[1] { 0 } else { 1 };
    out.value += d * d;
    // d(d²)/dc_i = 2 d · sign(delta) along the active axis.
    let g = 2.0 * d * sign(delta[axis]);
    out.grad[i][axis] += g;
    out.grad[j][axis] -= g;
}

fn bodies(netlist: &Netlist) -> Vec<usize> {
    netlist
        .modules
        .iter()
        .filter(|m| m.kind != ModuleKind::IoPad)
        .map(|m| m.id)
        .collect()
}

/// `Σ_{i<j} max(0, -d_ij)²` over non-pad modules.
pub fn phi_legality(netlist: &Netlist, coords: &[[f64; 2]]) -> Potential {
    let ids = bodies(netlist);
    if ids.len() >= HASH_THRESHOLD {
        phi_legality_hashed(netlist, coords)
    } else {
        phi_legality_pairs(netlist, coords)
    }
}

/// All-pairs evaluation of [`phi_legality`].
pub fn phi_legality_pairs(netlist: &Netlist, coords: &[[f64; 2]]) -> Potential {
    let ids = bodies(netlist);
    let mut out = Potential::zero(netlist.num_modules());
    for (k, &i) in ids.iter().enumerate() {
        for &j in &ids[k + 1..] {
            add_pair(netlist, coords, i, j, &mut out);
        }
    }
    out
}

/// Spatial-hash evaluation of [`phi_legality`]. Each intersecting pair is
/// counted in the bucket holding the lower-left corner of the intersection.
pub fn phi_legality_hashed(netlist: &Netlist, coords: &[[f64; 2]]) -> Potential {
    let ids = bodies(netlist);
    let mut out = Potential::zero(netlist.num_modules());
    if ids.len() < 2 {
        return out;
    }
    let mut extents: Vec<f64> = ids
        .iter()
        .map(|&i| netlist.modules[i].width.max(netlist.modules[i].height))
        .collect();
    extents.sort_by(f64::total_cmp);
    let (lo, hi) = coords
        .iter()
        .fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), c| {
            (
                [lo[0].min(c[0]), lo[1].min(c[1])],
                [hi[0].max(c[0]), hi[1].max(c[1])],
            )
        });
    let pad = extents[extents.len() - 1];
    let origin = [lo[0] - pad, lo[1] - pad];
    let span = [(hi[0] - lo[0]) + 2.0 * pad, (hi[1] - lo[1]) + 2.0 * pad];
    let pitch = (2.0 * extents[extents.len() / 2])
        .max(span[0].max(span[1]) / (ids.len() as f64).sqrt().ceil())
        .max(1e-9);
    let cols = ((span[0] / pitch).ceil() as usize).max(1);
    let rows = ((span[1] / pitch).ceil() as usize).max(1);
    let cell = |v: f64, axis: usize, n: usize| -> usize {
        (((v - origin[axis]) / pitch).floor().max(0.0) as usize).min(n - 1)
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); rows * cols];
    for &i in &ids {
        let m = &netlist.modules[i];
        let (c0, c1) = (
            cell(coords[i][0] - m.width / 2.0, 0, cols),
            cell(coords[i][0] + m.width / 2.0, 0, cols),
        );
        let (r0, r1) = (
            cell(coords[i][1] - m.height / 2.0, 1, rows),
            cell(coords[i][1] + m.height / 2.0, 1, rows),
        );
        for r in r0..=r1 {
            for c in c0..=c1 {
                buckets[r * cols + c].push(i);
            }
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let bucket = &buckets[r * cols + c];
            for (k, &i) in bucket.iter().enumerate() {
                for &j in &bucket[k + 1..] {
                    let (a, b) = (&netlist.modules[i], &netlist.modules[j]);
                    let left = (coords[i][0] - a.width / 2.0).max(coords[j][0] - b.width / 2.0);
                    let bottom = (coords[i][1] - a.height / 2.0).max(coords[j][1] - b.height / 2.0);
                    if cell(left, 0, cols) != c || cell(bottom, 1, rows) != r {
                        continue;
                    }
                    let (p, q) = if i < j { (i, j) } else { (j, i) };
                    add_pair(netlist, coords, p, q, &mut out);
                }
            }
        }
    }
    out
}

/// Smoothed peak congestion `τ·log Σ_g exp(C_g / τ)` and its gradient.
///
/// `C_g` is a continuous RUDY map: each net spreads `1/W + 1/H` over its
/// bounding box, widened symmetrically to at least one cell pitch, in
/// proportion to its overlap with the cell.
pub fn congestion_surrogate(
    netlist: &Netlist,
    coords: &[[f64; 2]],
    (rows, cols): (usize, usize),
    tau: f64,
) -> Potential {
    let n = netlist.num_modules();
    let mut out = Potential::zero(n);
    if netlist.nets.is_empty() || rows == 0 || cols == 0 {
        return out;
    }
    let pitch = [2.0 / cols as f64, 2.0 / rows as f64];
    let dims = [cols, rows];

    struct Axis {
        lo: f64,
        hi: f64,
        /// d lo / d (min pin), d lo / d (max pin), likewise for hi.
        dlo: [f64; 2],
        dhi: [f64; 2],
        inv: f64,
        dinv: [f64; 2],
        first: usize,
        last: usize,
    }

    let boxes = net_bboxes(netlist, coords);
    let mut axes: Vec<[Axis; 2]> = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let make = |k: usize| {
            let (mn, mx) = (b[2 * k], b[2 * k + 1]);
            let p = pitch[k];
            let w = mx - mn;
            let (lo, hi, dlo, dhi, inv, dinv) = if w >= p {
                (
                    mn,
                    mx,
                    [1.0, 0.0],
                    [0.0, 1.0],
                    1.0 / w,
                    [1.0 / (w * w), -1.0 / (w * w)],
                )
            } else {
                let c = (mn + mx) / 2.0;
                (
                    c - p / 2.0,
                    c + p / 2.0,
                    [0.5, 0.5],
                    [0.5, 0.5],
                    1.0 / p,
                    [0.0, 0.0],
                )
            };
            let last_cell = dims[k] - 1;
            let first = (((lo + 1.0) / p).floor().max(0.0) as usize).min(last_cell);
            let last = ((((hi + 1.0) / p).ceil() - 1.0).max(0.0) as usize).min(last_cell);
            Axis {
                lo,
                hi,
                dlo,
                dhi,
                inv,
                dinv,
                first,
                last: last.max(first),
            }
        };
        axes.push([make(0), make(1)]);
    }
    let frac = |ax: &Axis, k: usize, idx: usize| -> (f64, f64, f64) {
        // Overlap fraction with cell `idx` and its derivatives in lo and hi.
        let (c_lo, c_hi) = (-1.0 + idx as f64 * pitch[k], -1.0 + (idx + 1) as f64 * pitch[k]);
        let (a, b) = (ax.lo.max(c_lo), ax.hi.min(c_hi));
        if b <= a {
            return (0.0, 0.0, 0.0);
        }
        let d_lo = if ax.lo > c_lo { -1.0 / pitch[k] } else { 0.0 };
        let d_hi = if ax.hi < c_hi { 1.0 / pitch[k] } else { 0.0 };
        ((b - a) / pitch[k], d_lo, d_hi)
    };

    let mut cells = vec![0.0; rows * cols];
    for ax in &axes {
        let density = ax[0].inv + ax[1].inv;
        for r in ax[1].first..=ax[1].last {
            let (fy, _, _) = frac(&ax[1], 1, r);
            if fy == 0.0 {
                continue;
            }
            for c in ax[0].first..=ax[0].last {
                let (fx, _, _) = frac(&ax[0], 0, c);
                cells[r * cols + c] += density * fx * fy;
            }
        }
    }
    let top = cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = cells.iter().map(|v| ((v - top) / tau).exp()).sum();
    out.value = top + tau * z.ln();
    let weight: Vec<f64> = cells.iter().map(|v| ((v - top) / tau).exp() / z).collect();

    for (net, (ax, b)) in netlist.nets.iter().zip(axes.iter().zip(&boxes)) {
        let density = ax[0].inv + ax[1].inv;
        // Gradient of the net's contribution in terms of (min, max) per axis.
        let mut g = [[0.0f64; 2]; 2];
        for r in ax[1].first..=ax[1].last {
            let (fy, dy_lo, dy_hi) = frac(&ax[1], 1, r);
            for c in ax[0].first..=ax[0].last {
                let w = weight[r * cols + c];
                if w == 0.0 {
                    continue;
                }
                let (fx, dx_lo, dx_hi) = frac(&ax[0], 0, c);
                if fx == 0.0 || fy == 0.0 {
                    continue;
                }
                for (k, (f_self, f_other, d_lo, d_hi)) in [(fx, fy, dx_lo, dx_hi), (fy, fx, dy_lo, dy_hi)]
                    .into_iter()
                    .enumerate()
                {
                    let a = &ax[k];
                    for e in 0..2 {
                        let dfrac = d_lo * a.dlo[e] + d_hi * a.dhi[e];
                        g[k][e] += w * (a.dinv[e] * f_self * f_other + density * dfrac * f_other);
                    }
                }
            }
        }
        for (k, gk) in g.iter().enumerate() {
            let (mn, mx) = (b[2 * k], b[2 * k + 1]);
            let mut min_owner = None;
            let mut max_owner = None;
            for ep in &net.endpoints {
                let pin = netlist.modules[ep.module].pins[ep.pin];
                let v = coords[ep.module][k] + if k == 0 { pin.dx } else { pin.dy };
                if v == mn && min_owner.is_none() {
                    min_owner = Some(ep.module);
                }
                if v == mx && max_owner.is_none() {
                    max_owner = Some(ep.module);
                }
            }
            if let Some(m) = min_owner {
                out.grad[m][k] += gk[0];
            }
            if let Some(m) = max_owner {
                out.grad[m][k] += gk[1];
            }
        }
    }
    out
}

/// `max(0, peak RUDY - C_th)` with the surrogate gradient when active.
pub fn phi_congestion(
    netlist: &Netlist,
    coords: &[[f64; 2]],
    resolution: (usize, usize),
    c_th: f64,
    tau: f64,
) -> Potential {
    let n = netlist.num_modules();
    let peak = match rudy_map_coords(netlist, coords, resolution) {
        Ok(grid) => max_congestion(&grid),
        Err(_) => return Potential::zero(n),
    };
    let excess = peak - c_th;
    if excess <= 0.0 {
        return Potential::zero(n);
    }
    let surrogate = congestion_surrogate(netlist, coords, resolution, tau);
    Potential {
        value: excess,
        grad: surrogate.grad,
    }
}

/// HPWL gradient: each net pulls its extreme pins inward.
pub fn hpwl_gradient(netlist: &Netlist, coords: &[[f64; 2]]) -> Potential {
    let mut out = Potential::zero(netlist.num_modules());
    for (net, b) in netlist.nets.iter().zip(net_bboxes(netlist, coords)) {
        out.value += (b[1] - b[0]) + (b[3] - b[2]);
        for k in 0..2 {
            let (mn, mx) = (b[2 * k], b[2 * k + 1]);
            if mx <= mn {
                continue;
            }
            let (mut lo, mut hi) = (None, None);
            for ep in &net.endpoints {
                let pin = netlist.modules[ep.module].pins[ep.pin];
                let v = coords[ep.module][k] + if k == 0 { pin.dx } else { pin.dy };
                if v == mn && lo.is_none() {
                    lo = Some(ep.module);
                }
                if v == mx && hi.is_none() {
                    hi = Some(ep.module);
                }
            }
            if let Some(m) = lo {
                out.grad[m][k] -= 1.0;
            }
            if let Some(m) = hi {
                out.grad[m][k] += 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::overlap_ratio_coords;
    use crate::netlist::{Canvas, Endpoint, Module, Net, NetKind, PinOffset, Units};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn squares(sizes: &[(f64, f64)]) -> Netlist {
        Netlist {
            name: "sq".into(),
            canvas: Canvas {
                width: 2.0,
                height: 2.0,
            },
            units: Units::Normalized,
            modules: sizes
                .iter()
                .enumerate()
                .map(|(id, &(w, h))| Module {
                    id,
                    name: format!("m{id}"),
                    width: w,
                    height: h,
                    kind: ModuleKind::Macro,
                    pins: vec![PinOffset::new(0.0, 0.0)],
                })
                .collect(),
            nets: vec![],
        }
    }

    fn random_netlist(rng: &mut ChaCha8Rng, n: usize, nets: usize) -> Netlist {
        let sizes: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.05..0.5), rng.random_range(0.05..0.5)))
            .collect();
        let mut nl = squares(&sizes);
        for m in &mut nl.modules {
            m.pins.clear();
        }
        for id in 0..nets {
            let k = rng.random_range(2..=n.min(5));
            let mut members: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let s = rng.random_range(i..n);
                members.swap(i, s);
            }
            let mut endpoints = Vec::new();
            for &m in &members[..k] {
                let md = &mut nl.modules[m];
                let (w, h) = (md.width, md.height);
                md.pins.push(PinOffset::new(
                    rng.random_range(-w / 2.0..w / 2.0),
                    rng.random_range(-h / 2.0..h / 2.0),
                ));
                endpoints.push(Endpoint {
                    module: m,
                    pin: md.pins.len() - 1,
                });
            }
            nl.nets.push(Net {
                id,
                name: format!("n{id}"),
                kind: NetKind::Signal,
                endpoints,
                annotations: None,
            });
        }
        nl
    }

    fn fd_check(f: impl Fn(&[[f64; 2]]) -> Potential, coords: &[[f64; 2]], h: f64) -> f64 {
        let base = f(coords);
        let mut num = vec![[0.0; 2]; coords.len()];
        let mut c = coords.to_vec();
        for i in 0..coords.len() {
            for k in 0..2 {
                let orig = c[i][k];
                c[i][k] = orig + h;
                let up = f(&c).value;
                c[i][k] = orig - h;
                let down = f(&c).value;
                c[i][k] = orig;
                num[i][k] = (up - down) / (2.0 * h);
            }
        }
        let diff: f64 = num
            .iter()
            .zip(&base.grad)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = num
            .iter()
            .chain(&base.grad)
            .map(|a| a[0] * a[0] + a[1] * a[1])
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        diff / scale
    }

    #[test]
    fn legality_examples() {
        let n = squares(&[(1.0, 1.0), (1.0, 1.0)]);
        let apart = phi_legality(&n, &[[-0.6, 0.0], [0.6, 0.0]]);
        assert!(apart.is_zero());
        let same = phi_legality(&n, &[[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(same.value, 1.0);
        assert_eq!(separation([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]), -1.0);
    }

    #[test]
    fn legality_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = random_netlist(&mut rng, 8, 0);
            let coords: Vec<[f64; 2]> = (0..8)
                .map(|_| [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)])
                .collect();
            let err = fd_check(|c| phi_legality(&n, c), &coords, 1e-7);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn legality_zero_iff_no_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = random_netlist(&mut rng, 6, 0);
            let coords: Vec<[f64; 2]> = (0..6)
                .map(|_| [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)])
                .collect();
            let phi = phi_legality(&n, &coords).value;
            assert_eq!(phi == 0.0, overlap_ratio_coords(&n, &coords) == 0.0);
        }
    }

    #[test]
    fn hashed_matches_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3, 40, 300] {
            let sizes: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.01..0.12), rng.random_range(0.01..0.12)))
                .collect();
            let nl = squares(&sizes);
            let coords: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let a = phi_legality_pairs(&nl, &coords);
            let b = phi_legality_hashed(&nl, &coords);
            assert!((a.value - b.value).abs() <= 1e-12 * a.value.max(1.0));
            for (x, y) in a.grad.iter().zip(&b.grad) {
                assert!((x[0] - y[0]).abs() < 1e-12 && (x[1] - y[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn congestion_examples() {
        let mut n = squares(&[(0.1, 0.1), (0.1, 0.1)]);
        n.nets.push(Net {
            id: 0,
            name: "n".into(),
            kind: NetKind::Signal,
            endpoints: vec![Endpoint { module: 0, pin: 0 }, Endpoint { module: 1, pin: 0 }],
            annotations: None,
        });
        let coords = [[0.0, 0.0], [0.5, 0.25]];
        let hot = phi_congestion(&n, &coords, (8, 4), 4.0, 0.05);
        assert!((hot.value - 2.0).abs() < 1e-12);
        assert!(hot.grad.iter().any(|g| g[0] != 0.0 || g[1] != 0.0));
        let cool = phi_congestion(&n, &coords, (8, 4), 7.0, 0.05);
        assert!(cool.is_zero());
    }

    #[test]
    fn congestion_surrogate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = random_netlist(&mut rng, 6, 6);
            let coords: Vec<[f64; 2]> = (0..6)
                .map(|_| [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)])
                .collect();
            let err = fd_check(|c| congestion_surrogate(&n, c, (8, 8), 0.05), &coords, 1e-7);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn descending_the_surrogate_relieves_a_hot_spot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = random_netlist(&mut rng, 8, 16);
        let coords: Vec<[f64; 2]> = (0..8)
            .map(|_| [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)])
            .collect();
        let base = congestion_surrogate(&n, &coords, (8, 8), 0.05);
        let norm: f64 = base.grad.iter().map(|g| g[0].hypot(g[1])).fold(0.0, f64::max);
        let step = 0.01 / norm;
        let moved: Vec<[f64; 2]> = coords
            .iter()
            .zip(&base.grad)
            .map(|(c, g)| [c[0] - step * g[0], c[1] - step * g[1]])
            .collect();
        assert!(congestion_surrogate(&n, &moved, (8, 8), 0.05).value < base.value);
    }

    #[test]
    fn hpwl_gradient_points_outward() {
        let mut n = squares(&[(0.1, 0.1), (0.1, 0.1)]);
        n.nets.push(Net {
            id: 0,
            name: "n".into(),
            kind: NetKind::Signal,
            endpoints: vec![Endpoint { module: 0, pin: 0 }, Endpoint { module: 1, pin: 0 }],
            annotations: None,
        });
        let g = hpwl_gradient(&n, &[[-0.5, 0.0], [0.5, 0.2]]);
        assert_eq!(g.grad, vec![[-1.0, -1.0], [1.0, 1.0]]);
        assert!((g.value - 1.2).abs() < 1e-12);
    }
}
