//! Three-phase netlist generation: modules, physical edges, refinement.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal, Pareto, Poisson};
use serde::{Deserialize, Serialize};

use super::rent::{rent_exponent, rent_score, RENT_EXPECTED};
use super::validate::{congestion_feasibility, track_capacity, wirelength_score, ReferenceHistogram};
use super::{m_design, m_phys, EdgeModelParams, GenSpec, ProcessSpec};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_RESOLUTION;
use crate::netlist::{
    degree_histogram, Canvas, Endpoint, Module, ModuleKind, Net, NetKind, Netlist, PinDirection, PinOffset,
    Placement, Units,
};

/// Shape of the Pareto weights that give the degree distribution its tail.
const PARETO_SHAPE: f64 = 1.05;
/// Accepted Rent exponent range.
const RENT_RANGE: (f64, f64) = (0.5, 0.7);
/// Refinement rounds spent steering the Rent exponent.
const RENT_ROUNDS: usize = 30;

/// Summary statistics of one generated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub n_macros: usize,
    pub n_cells: usize,
    pub n_pads: usize,
    pub n_nets: usize,
    pub gamma: f64,
    /// Factor applied to macro dimensions so they fit the site grid.
    pub macro_scale: f64,
    /// `None` when the design has too few bisection levels to fit.
    pub rent_exponent: Option<f64>,
    pub rent_score: Option<f64>,
    pub rent_rounds: usize,
    pub wirelength_score: f64,
    pub congestion_feasibility: f64,
    pub min_degree: usize,
    pub mean_degree: f64,
    pub degree_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub netlist: Netlist,
    pub placement: Placement,
    pub stats: GenStats,
}

/// Physical rectangle in µm, centred at `(x, y)`.
#[derive(Debug, Clone, Copy)]
struct Body {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    kind: ModuleKind,
}

/// Signal net under construction: a driver and its sinks.
#[derive(Debug, Clone)]
struct Star {
    driver: usize,
    sinks: Vec<usize>,
}

fn manhattan(a: &Body, b: &Body) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}

/// Generates a netlist with a legal placement for `spec`.
///
/// `params.gamma` is ignored: the base rate is calibrated so the expected
/// number of sink connections matches `spec.mean_degree`.
pub fn generate_netlist(
    spec: &GenSpec,
    process: &ProcessSpec,
    params: &EdgeModelParams,
) -> Result<Generated> {
    spec.validate()?;
    process.validate()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (die_w, die_h) = spec.die();
    let n = spec.n_total;
    let n_pads = ((n as f64).sqrt() / 2.0).round().max(4.0) as usize;
    let min_cell_area = process.h_sc * process.w_min.max(2.0 * process.p_grid);
    if die_h < process.h_sc || die_w < process.h_sc {
        return Err(Error::Infeasible(format!(
            "a {die_w:.3} x {die_h:.3} µm die cannot hold one {} µm cell row",
            process.h_sc
        )));
    }
    let n_cells_max = n.saturating_sub(n_pads + 1);
    if n_cells_max == 0 || n_cells_max as f64 * min_cell_area > 0.9 * spec.a_target {
        return Err(Error::Infeasible(format!(
            "{} µm² cannot hold {n} modules at cell height {} µm",
            spec.a_target, process.h_sc
        )));
    }

    // Phase 1: modules.
    let lambda = 1.5 * (n as f64).ln();
    let poisson = Poisson::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let drawn: f64 = poisson.sample(&mut rng);
    let n_macros = (drawn as usize).clamp(1, n - n_pads - 1);
    let n_cells = n - n_pads - n_macros;
    let (macros, macro_scale) = place_macros(&mut rng, n_macros, spec, process)?;
    let cells = fill_cells(&mut rng, n_cells, &macros, die_w, die_h, process)?;
    let pads = place_pads(&mut rng, n_pads, die_w, die_h, process);
    let bodies: Vec<Body> = macros.iter().chain(&cells).chain(&pads).copied().collect();
    let blocks: Vec<Option<usize>> = bodies
        .iter()
        .map(|b| match b.kind {
            ModuleKind::IoPad => None,
            _ => macros
                .iter()
                .enumerate()
                .min_by(|(_, p), (_, q)| {
                    let dp = (p.x - b.x).hypot(p.y - b.y);
                    let dq = (q.x - b.x).hypot(q.y - b.y);
                    dp.total_cmp(&dq)
                })
                .map(|(k, _)| k),
        })
        .collect();

    // Phase 2: physical edges.
    let t_clk = spec.t_clk();
    let pareto = Pareto::new(1.0, PARETO_SHAPE).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut weights: Vec<f64> = (0..n).map(|_| pareto.sample(&mut rng)).collect();
    let mean_w = weights.iter().sum::<f64>() / n as f64;
    for w in &mut weights {
        *w /= mean_w;
    }
    let mut factor = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = manhattan(&bodies[i], &bodies[j]).max(process.s_min);
            let base = d.powf(-params.alpha) * (-d / params.lambda_rent).exp();
            let q = base
                * m_phys(d, process, params, t_clk)
                * m_design(i, j, &blocks, params)
                * weights[i]
                * weights[j];
            factor[i * n + j] = q;
            factor[j * n + i] = q;
        }
    }
    let target = n as f64 * (spec.mean_degree - 1.0).max(0.1);
    let total: f64 = factor.iter().sum();
    let gamma = if total > 0.0 { target / total } else { 1.0 };
    let mut stars: Vec<Star> = Vec::new();
    for i in 0..n {
        let counts: Vec<usize> = (0..n)
            .map(|j| {
                if j == i {
                    0
                } else {
                    multiplicity(&mut rng, gamma * factor[i * n + j])
                }
            })
            .collect();
        let layers = counts.iter().copied().max().unwrap_or(0);
        for k in 1..=layers {
            let mut sinks: Vec<usize> = (0..n).filter(|&j| counts[j] >= k).collect();
            if sinks.len() > spec.max_fanout - 1 {
                sinks.sort_by(|&a, &b| {
                    manhattan(&bodies[i], &bodies[a]).total_cmp(&manhattan(&bodies[i], &bodies[b]))
                });
                sinks.truncate(spec.max_fanout - 1);
                sinks.sort_unstable();
            }
            stars.push(Star { driver: i, sinks });
        }
    }

    // Phase 3: refinement.
    repair_degrees(&mut stars, &bodies, spec.max_fanout);
    let mut rounds = 0;
    let mut netlist = assemble(&mut rng, &bodies, &stars, die_w, die_h, &[])?;
    let in_range = |p: f64| (RENT_RANGE.0..=RENT_RANGE.1).contains(&p);
    let mut fit = rent_exponent(&netlist).ok().map(|f| f.exponent);
    while let Some(p) = fit.filter(|&p| rounds < RENT_ROUNDS && !in_range(p)) {
        rounds += 1;
        let budget = (stars.len() / 20).max(1);
        if p < RENT_RANGE.0 {
            add_long_edges(&mut rng, &mut stars, n, budget, spec.max_fanout);
        } else {
            prune_long_edges(&mut stars, &bodies, n, budget);
        }
        repair_degrees(&mut stars, &bodies, spec.max_fanout);
        netlist = assemble(&mut rng, &bodies, &stars, die_w, die_h, &[])?;
        fit = rent_exponent(&netlist).ok().map(|f| f.exponent);
    }
    match fit {
        Some(p) if !in_range(p) => log::warn!(
            "Rent exponent {p:.3} outside [{}, {}] after {rounds} rounds",
            RENT_RANGE.0,
            RENT_RANGE.1
        ),
        None => log::warn!("design too small or fragmented for a Rent fit"),
        _ => {}
    }
    if spec.global_nets {
        let globals = global_nets(&bodies, die_w, die_h);
        netlist = assemble(&mut rng, &bodies, &stars, die_w, die_h, &globals)?;
    }
    netlist.name = format!("syn_{}_{}", n, spec.seed);
    netlist.validate()?;

    let coords: Vec<[f64; 2]> = bodies
        .iter()
        .map(|b| [2.0 * b.x / die_w - 1.0, 2.0 * b.y / die_h - 1.0])
        .collect();
    let placement = Placement::new(coords)?;
    let degrees = netlist.module_degrees();
    let capacity = track_capacity(process, netlist.canvas, DEFAULT_RESOLUTION);
    let stats = GenStats {
        n_macros,
        n_cells,
        n_pads,
        n_nets: netlist.num_nets(),
        gamma,
        macro_scale,
        rent_exponent: fit,
        rent_score: fit.map(|p| rent_score(p, RENT_EXPECTED)),
        rent_rounds: rounds,
        wirelength_score: wirelength_score(&netlist, &placement, &ReferenceHistogram::default())?,
        congestion_feasibility: congestion_feasibility(&netlist, &placement, DEFAULT_RESOLUTION, capacity)?,
        min_degree: degrees.iter().copied().min().unwrap_or(0),
        mean_degree: degrees.iter().sum::<usize>() as f64 / n as f64,
        degree_histogram: degree_histogram(&netlist),
    };
    Ok(Generated {
        netlist,
        placement,
        stats,
    })
}

/// Number of parallel connections for an unclipped edge rate `rate`: one
/// with probability `min(rate, 1)`, plus a Poisson count of the surplus.
fn multiplicity(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    let first = usize::from(rng.random::<f64>() < rate.min(1.0));
    let surplus = rate - 1.0;
    if surplus <= 0.0 {
        return first;
    }
    let extra: f64 = Poisson::new(surplus).map_or(0.0, |p| p.sample(rng));
    first + extra as usize
}

/// Macro bodies: log-normal areas, damped repulsion with wall constraints,
/// then snapping onto a grid of non-overlapping sites.
fn place_macros(
    rng: &mut ChaCha8Rng,
    count: usize,
    spec: &GenSpec,
    process: &ProcessSpec,
) -> Result<(Vec<Body>, f64)> {
    let (die_w, die_h) = spec.die();
    let area = LogNormal::new((0.01 * spec.a_target).ln(), 0.5)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut dims: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let a: f64 = area.sample(rng);
            let r: f64 = rng.random_range(0.5..2.0);
            ((a / r).sqrt(), (a * r).sqrt())
        })
        .collect();
    let mut scale = 1.0f64;
    let limit = 0.5 * die_w.min(die_h);
    let widest = dims.iter().map(|d| d.0.max(d.1)).fold(0.0, f64::max);
    if widest > limit {
        scale = limit / widest;
    }
    let (pitch_x, pitch_y, cols, rows) = loop {
        let pw = dims.iter().map(|d| d.0).fold(0.0, f64::max) * scale + process.s_min;
        let ph = dims.iter().map(|d| d.1).fold(0.0, f64::max) * scale + process.s_min;
        let cols = (die_w / pw).floor() as usize;
        let rows = (die_h / ph).floor() as usize;
        if cols * rows >= count && cols > 0 && rows > 0 {
            break (die_w / cols as f64, die_h / rows as f64, cols, rows);
        }
        scale *= 0.85;
        if scale < 1e-3 {
            return Err(Error::Infeasible("macros do not fit on the die".into()));
        }
    };
    for d in &mut dims {
        d.0 *= scale;
        d.1 *= scale;
    }

    let mut pos: Vec<(f64, f64)> = dims
        .iter()
        .map(|&(w, h)| {
            (
                rng.random_range(w / 2.0..=die_w - w / 2.0),
                rng.random_range(h / 2.0..=die_h - h / 2.0),
            )
        })
        .collect();
    for _ in 0..200 {
        let mut push = vec![(0.0, 0.0); count];
        for i in 0..count {
            for j in (i + 1)..count {
                let ox = (dims[i].0 + dims[j].0) / 2.0 + process.s_min - (pos[i].0 - pos[j].0).abs();
                let oy = (dims[i].1 + dims[j].1) / 2.0 + process.s_min - (pos[i].1 - pos[j].1).abs();
                if ox <= 0.0 || oy <= 0.0 {
                    continue;
                }
                if ox < oy {
                    let s = if pos[i].0 >= pos[j].0 { 1.0 } else { -1.0 };
                    push[i].0 += s * ox / 2.0;
                    push[j].0 -= s * ox / 2.0;
                } else {
                    let s = if pos[i].1 >= pos[j].1 { 1.0 } else { -1.0 };
                    push[i].1 += s * oy / 2.0;
                    push[j].1 -= s * oy / 2.0;
                }
            }
        }
        for (k, p) in pos.iter_mut().enumerate() {
            let (w, h) = dims[k];
            p.0 = (p.0 + 0.5 * push[k].0).clamp(w / 2.0, die_w - w / 2.0);
            p.1 = (p.1 + 0.5 * push[k].1).clamp(h / 2.0, die_h - h / 2.0);
        }
    }

    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| (dims[b].0 * dims[b].1).total_cmp(&(dims[a].0 * dims[a].1)));
    let mut taken = vec![false; cols * rows];
    let mut out = vec![
        Body {
            x: 0.0,
            y: 0.0,
            w: 0.0,
            h: 0.0,
            kind: ModuleKind::Macro
        };
        count
    ];
    for k in order {
        let site = (0..cols * rows)
            .filter(|&s| !taken[s])
            .min_by(|&a, &b| {
                let centre = |s: usize| ((s % cols) as f64 + 0.5) * pitch_x;
                let middle = |s: usize| ((s / cols) as f64 + 0.5) * pitch_y;
                let da = (centre(a) - pos[k].0).hypot(middle(a) - pos[k].1);
                let db = (centre(b) - pos[k].0).hypot(middle(b) - pos[k].1);
                da.total_cmp(&db)
            })
            .expect("enough sites by construction");
        taken[site] = true;
        out[k] = Body {
            x: ((site % cols) as f64 + 0.5) * pitch_x,
            y: ((site / cols) as f64 + 0.5) * pitch_y,
            w: dims[k].0,
            h: dims[k].1,
            kind: ModuleKind::Macro,
        };
    }
    Ok((out, scale))
}

/// Standard cells on `h_sc` rows around the macros, spread with random gaps.
fn fill_cells(
    rng: &mut ChaCha8Rng,
    count: usize,
    macros: &[Body],
    die_w: f64,
    die_h: f64,
    process: &ProcessSpec,
) -> Result<Vec<Body>> {
    let sites = (process.w_min / process.p_grid).ceil().max(2.0) as usize;
    let widths: Vec<f64> = (0..count)
        .map(|_| rng.random_range(sites..=5 * sites) as f64 * process.p_grid)
        .collect();
    let row_pitch = process.h_sc + process.s_min;
    let rows = ((die_h - process.s_min) / row_pitch).floor().max(0.0) as usize;
    let mut intervals: Vec<(f64, f64, f64)> = Vec::new();
    for r in 0..rows {
        let y0 = process.s_min + r as f64 * row_pitch;
        let y1 = y0 + process.h_sc;
        let mut blocked: Vec<(f64, f64)> = macros
            .iter()
            .filter(|m| m.y - m.h / 2.0 - process.s_min < y1 && m.y + m.h / 2.0 + process.s_min > y0)
            .map(|m| (m.x - m.w / 2.0 - process.s_min, m.x + m.w / 2.0 + process.s_min))
            .collect();
        blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cursor = 0.0;
        for (a, b) in blocked {
            if a > cursor {
                intervals.push((y0, cursor, a));
            }
            cursor = cursor.max(b);
        }
        if cursor < die_w {
            intervals.push((y0, cursor, die_w));
        }
    }
    let free: f64 = intervals.iter().map(|i| i.2 - i.1).sum();
    let needed: f64 = widths.iter().map(|w| w + process.s_min).sum();
    if needed > free {
        return Err(Error::Infeasible(format!(
            "{count} cells need {needed:.2} µm of row length but only {free:.2} µm is free"
        )));
    }
    let raw: Vec<f64> = (0..=count).map(|_| Exp1.sample(rng)).collect();
    let raw_sum: f64 = raw.iter().sum();
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    for share in [0.8, 0.4, 0.1, 0.0] {
        let slack = share * (free - needed);
        let mut placed = vec![None; count];
        let mut slot = 0;
        let mut cursor = intervals.first().map_or(0.0, |i| i.1);
        let mut ok = true;
        for (k, &c) in order.iter().enumerate() {
            cursor += slack * raw[k] / raw_sum;
            let w = widths[c];
            loop {
                let Some(&(y0, _, end)) = intervals.get(slot) else {
                    ok = false;
                    break;
                };
                if cursor + w + process.s_min <= end {
                    placed[c] = Some(Body {
                        x: cursor + process.s_min / 2.0 + w / 2.0,
                        y: y0 + process.h_sc / 2.0,
                        w,
                        h: process.h_sc,
                        kind: ModuleKind::StandardCell,
                    });
                    cursor += w + process.s_min;
                    break;
                }
                slot += 1;
                cursor = intervals.get(slot).map_or(0.0, |i| i.1);
            }
            if !ok {
                break;
            }
        }
        if ok {
            return Ok(placed
                .into_iter()
                .map(|b| b.expect("every cell placed"))
                .collect());
        }
    }
    Err(Error::Infeasible(format!(
        "{count} cells do not fit the free rows around the macros"
    )))
}

/// I/O pads spread evenly around the die boundary.
fn place_pads(
    rng: &mut ChaCha8Rng,
    count: usize,
    die_w: f64,
    die_h: f64,
    process: &ProcessSpec,
) -> Vec<Body> {
    let perimeter = 2.0 * (die_w + die_h);
    let offset: f64 = rng.random();
    (0..count)
        .map(|k| {
            let s = ((k as f64 + offset) / count as f64) * perimeter;
            let (x, y) = if s < die_w {
                (s, 0.0)
            } else if s < die_w + die_h {
                (die_w, s - die_w)
            } else if s < 2.0 * die_w + die_h {
                (2.0 * die_w + die_h - s, die_h)
            } else {
                (0.0, perimeter - s)
            };
            Body {
                x,
                y,
                w: process.p_grid,
                h: process.p_grid,
                kind: ModuleKind::IoPad,
            }
        })
        .collect()
}

fn degrees(stars: &[Star], n: usize) -> Vec<usize> {
    let mut deg = vec![0; n];
    for s in stars {
        deg[s.driver] += 1;
        for &k in &s.sinks {
            deg[k] += 1;
        }
    }
    deg
}

/// Connects every isolated module to its nearest neighbour.
fn repair_degrees(stars: &mut Vec<Star>, bodies: &[Body], max_fanout: usize) {
    let n = bodies.len();
    let mut deg = degrees(stars, n);
    for v in 0..n {
        if deg[v] > 0 {
            continue;
        }
        let u = (0..n)
            .filter(|&u| u != v)
            .min_by(|&a, &b| manhattan(&bodies[v], &bodies[a]).total_cmp(&manhattan(&bodies[v], &bodies[b])))
            .expect("at least two modules");
        match stars.iter_mut().find(|s| s.driver == u) {
            Some(s) if s.sinks.len() + 1 < max_fanout => {
                s.sinks.push(v);
                s.sinks.sort_unstable();
            }
            _ => stars.push(Star {
                driver: v,
                sinks: vec![u],
            }),
        }
        deg[u] += 1;
        deg[v] += 1;
    }
    stars.sort_by_key(|s| s.driver);
}

/// Adds `budget` random sink connections, raising the cut of every partition.
fn add_long_edges(rng: &mut ChaCha8Rng, stars: &mut Vec<Star>, n: usize, budget: usize, max_fanout: usize) {
    for _ in 0..budget {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        match stars.iter_mut().find(|s| s.driver == i) {
            Some(s) => {
                if s.sinks.len() + 1 < max_fanout && !s.sinks.contains(&j) {
                    s.sinks.push(j);
                    s.sinks.sort_unstable();
                }
            }
            None => stars.push(Star {
                driver: i,
                sinks: vec![j],
            }),
        }
    }
    stars.sort_by_key(|s| s.driver);
}

/// Removes up to `budget` of the longest driver-sink connections without
/// isolating any module.
fn prune_long_edges(stars: &mut Vec<Star>, bodies: &[Body], n: usize, budget: usize) {
    let mut deg = degrees(stars, n);
    let mut links: Vec<(f64, usize, usize)> = stars
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.sinks.iter().map(move |&j| (k, j)))
        .map(|(k, j)| (manhattan(&bodies[stars[k].driver], &bodies[j]), k, j))
        .collect();
    links.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut removed = 0;
    for (_, k, j) in links {
        if removed == budget {
            break;
        }
        let driver = stars[k].driver;
        let last = stars[k].sinks.len() == 1;
        if deg[j] < 2 || (last && deg[driver] < 2) {
            continue;
        }
        stars[k].sinks.retain(|&s| s != j);
        deg[j] -= 1;
        if last {
            deg[driver] -= 1;
        }
        removed += 1;
    }
    stars.retain(|s| !s.sinks.is_empty());
}

/// Clock H-tree and power mesh as `(kind, members)` lists.
fn global_nets(bodies: &[Body], die_w: f64, die_h: f64) -> Vec<(NetKind, Vec<usize>)> {
    let n = bodies.len();
    let cells: Vec<usize> = (0..n).filter(|&i| bodies[i].kind != ModuleKind::IoPad).collect();
    let depth = ((n as f64).ln() / 4f64.ln()).ceil().max(1.0) as u32;
    let nearest = |x: f64, y: f64| -> usize {
        *cells
            .iter()
            .min_by(|&&a, &&b| {
                let da = (bodies[a].x - x).abs() + (bodies[a].y - y).abs();
                let db = (bodies[b].x - x).abs() + (bodies[b].y - y).abs();
                da.total_cmp(&db)
            })
            .expect("at least one placeable module")
    };
    let mut out = Vec::new();
    for level in 0..depth {
        let parts = 1usize << level;
        for r in 0..parts {
            for c in 0..parts {
                let (w, h) = (die_w / parts as f64, die_h / parts as f64);
                let mut members: Vec<usize> = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
                    .iter()
                    .map(|&(fx, fy)| nearest((c as f64 + fx) * w, (r as f64 + fy) * h))
                    .collect();
                members.push(nearest((c as f64 + 0.5) * w, (r as f64 + 0.5) * h));
                members.sort_unstable();
                members.dedup();
                if members.len() > 1 {
                    out.push((NetKind::Clock, members));
                }
            }
        }
    }
    let bands = 4;
    for axis in 0..2 {
        for b in 0..bands {
            let span = if axis == 0 { die_w } else { die_h } / bands as f64;
            let members: Vec<usize> = cells
                .iter()
                .copied()
                .filter(|&i| {
                    let v = if axis == 0 { bodies[i].x } else { bodies[i].y };
                    ((v / span) as usize).min(bands - 1) == b
                })
                .collect();
            if members.len() > 1 {
                out.push((NetKind::Power, members));
            }
        }
    }
    out
}

/// Builds the normalized netlist, drawing one pin per endpoint.
fn assemble(
    rng: &mut ChaCha8Rng,
    bodies: &[Body],
    stars: &[Star],
    die_w: f64,
    die_h: f64,
    globals: &[(NetKind, Vec<usize>)],
) -> Result<Netlist> {
    let (sx, sy) = (2.0 / die_w, 2.0 / die_h);
    let mut counters = [0usize; 3];
    let mut modules: Vec<Module> = bodies
        .iter()
        .enumerate()
        .map(|(id, b)| {
            let (prefix, slot) = match b.kind {
                ModuleKind::Macro => ("macro", 0),
                ModuleKind::StandardCell => ("cell", 1),
                ModuleKind::IoPad => ("pad", 2),
            };
            counters[slot] += 1;
            Module {
                id,
                name: format!("{prefix}_{}", counters[slot] - 1),
                width: b.w * sx,
                height: b.h * sy,
                kind: b.kind,
                pins: Vec::new(),
            }
        })
        .collect();
    let add_pin = |modules: &mut Vec<Module>, m: usize, dir: PinDirection, rng: &mut ChaCha8Rng| {
        let md = &mut modules[m];
        let pin = if md.kind == ModuleKind::IoPad {
            PinOffset::new(0.0, 0.0)
        } else {
            let (hw, hh) = (md.width / 2.0, md.height / 2.0);
            PinOffset::new(rng.random_range(-hw..=hw), rng.random_range(-hh..=hh))
        };
        md.pins.push(pin.with_direction(dir));
        Endpoint {
            module: m,
            pin: md.pins.len() - 1,
        }
    };
    let mut nets = Vec::new();
    for s in stars {
        let mut endpoints = vec![add_pin(&mut modules, s.driver, PinDirection::Output, rng)];
        for &k in &s.sinks {
            endpoints.push(add_pin(&mut modules, k, PinDirection::Input, rng));
        }
        nets.push(Net {
            id: nets.len(),
            name: format!("n{}", nets.len()),
            kind: NetKind::Signal,
            endpoints,
            annotations: None,
        });
    }
    for (k, (kind, members)) in globals.iter().enumerate() {
        let prefix = if *kind == NetKind::Clock { "clk" } else { "pwr" };
        let endpoints = members
            .iter()
            .map(|&m| add_pin(&mut modules, m, PinDirection::Input, rng))
            .collect();
        nets.push(Net {
            id: nets.len(),
            name: format!("{prefix}_{k}"),
            kind: *kind,
            endpoints,
            annotations: None,
        });
    }
    Ok(Netlist {
        name: String::new(),
        canvas: Canvas {
            width: die_w,
            height: die_h,
        },
        units: Units::Normalized,
        modules,
        nets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::overlap_ratio;

    fn generate(n: usize, seed: u64) -> Generated {
        let process = ProcessSpec::nm45();
        let spec = GenSpec::with_size(n, 0.35, &process, seed);
        let params = EdgeModelParams::for_chip(spec.a_target, &process);
        generate_netlist(&spec, &process, &params).unwrap()
    }

    #[test]
    fn generated_designs_are_connected_and_legal() {
        for seed in 0..4 {
            let g = generate(40, seed);
            assert_eq!(g.netlist.num_modules(), 40);
            assert!(g.stats.min_degree >= 1);
            assert_eq!(overlap_ratio(&g.netlist, &g.placement).unwrap(), 0.0);
            assert!(g.netlist.validate().unwrap().isolated.is_empty());
        }
    }

    #[test]
    fn nets_never_repeat_a_module_and_survive_bookshelf() {
        use crate::netlist::bookshelf::{parse_bookshelf, serialize_bookshelf};
        for seed in 0..12 {
            let g = generate(20 + seed as usize, seed);
            for net in &g.netlist.nets {
                let mut members: Vec<usize> = net.endpoints.iter().map(|e| e.module).collect();
                members.sort_unstable();
                members.dedup();
                assert_eq!(
                    members.len(),
                    net.endpoints.len(),
                    "net {} of seed {seed}",
                    net.name
                );
            }
            let bundle = serialize_bookshelf(&g.netlist, Some(&g.placement), None).unwrap();
            let (nl, pl) = parse_bookshelf(&bundle).unwrap();
            assert_eq!(nl.num_nets(), g.netlist.num_nets());
            assert_eq!(pl.unwrap().len(), g.placement.len());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(50, 7);
        let b = generate(50, 7);
        assert_eq!(a.netlist, b.netlist);
        assert_eq!(a.placement, b.placement);
        assert_ne!(generate(50, 8).netlist, a.netlist);
    }

    #[test]
    fn infeasible_area_is_rejected() {
        let process = ProcessSpec::nm45();
        let mut spec = GenSpec::with_size(100, 0.35, &process, 0);
        spec.a_target = 10.0;
        let params = EdgeModelParams::for_chip(spec.a_target, &process);
        assert!(matches!(
            generate_netlist(&spec, &process, &params),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn global_nets_are_flagged() {
        let process = ProcessSpec::nm45();
        let mut spec = GenSpec::with_size(60, 0.35, &process, 1);
        spec.global_nets = true;
        let params = EdgeModelParams::for_chip(spec.a_target, &process);
        let g = generate_netlist(&spec, &process, &params).unwrap();
        assert!(g
            .netlist
            .nets
            .iter()
            .any(|n| n.kind == NetKind::Clock && n.name.starts_with("clk_")));
        assert!(g
            .netlist
            .nets
            .iter()
            .any(|n| n.kind == NetKind::Power && n.name.starts_with("pwr_")));
    }

    #[test]
    fn multiplicity_matches_the_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for rate in [0.0, 0.3, 1.0, 4.5] {
            let mean = (0..20_000)
                .map(|_| multiplicity(&mut rng, rate) as f64)
                .sum::<f64>()
                / 20_000.0;
            assert!(
                (mean - rate).abs() < 0.05 * rate.max(1.0),
                "rate {rate}: mean {mean}"
            );
        }
        assert_eq!(multiplicity(&mut rng, 0.0), 0);
    }
}
