//! Rent exponent measurement by recursive min-cut bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlist::{NetKind, Netlist};

/// Centre of the expected Rent exponent range for logic.
pub const RENT_EXPECTED: f64 = 0.6;

/// FM refinement passes per bisection.
const FM_PASSES: usize = 4;

/// Fit of `T = k · B^p` over bisection levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RentFit {
    pub exponent: f64,
    pub coefficient: f64,
    /// `(mean block size, mean terminal count)` per level used in the fit.
    pub points: Vec<(f64, f64)>,
}

struct Hypergraph {
    /// Distinct modules of each signal net.
    nets: Vec<Vec<usize>>,
    /// Signal nets of each module.
    incident: Vec<Vec<usize>>,
}

impl Hypergraph {
    fn new(netlist: &Netlist) -> Self {
        let n = netlist.num_modules();
        let mut nets = Vec::new();
        let mut incident = vec![Vec::new(); n];
        for net in netlist.nets.iter().filter(|e| e.kind == NetKind::Signal) {
            let mut members: Vec<usize> = net.endpoints.iter().map(|e| e.module).collect();
            members.sort_unstable();
            members.dedup();
            if members.len() < 2 {
                continue;
            }
            for &m in &members {
                incident[m].push(nets.len());
            }
            nets.push(members);
        }
        Self { nets, incident }
    }

    /// Nets with pins both inside and outside `block`.
    fn terminals(&self, block: &[usize], inside: &mut [bool]) -> usize {
        for &m in block {
            inside[m] = true;
        }
        let mut seen = std::collections::BTreeSet::new();
        for &m in block {
            seen.extend(self.incident[m].iter().copied());
        }
        let count = seen
            .into_iter()
            .filter(|&e| self.nets[e].iter().any(|&m| !inside[m]))
            .count();
        for &m in block {
            inside[m] = false;
        }
        count
    }

    /// Balanced bisection of `block`: BFS seeding from a pseudo-peripheral
    /// module, then Fiduccia-Mattheyses refinement of the cut.
    fn bisect(&self, block: &[usize], side: &mut [u8]) -> (Vec<usize>, Vec<usize>) {
        const OUT: u8 = u8::MAX;
        for &m in block {
            side[m] = 2;
        }
        let order = {
            let far = self.bfs(block[0], side).last().copied().unwrap_or(block[0]);
            let mut order = self.bfs(far, side);
            let mut reached = vec![false; side.len()];
            for &m in &order {
                reached[m] = true;
            }
            order.extend(block.iter().copied().filter(|&m| !reached[m]));
            order
        };
        let half = block.len() / 2;
        for (k, &m) in order.iter().enumerate() {
            side[m] = u8::from(k >= half);
        }

        let local_nets: Vec<usize> = {
            let mut v: Vec<usize> = block
                .iter()
                .flat_map(|&m| self.incident[m].iter().copied())
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut count = vec![[0usize; 2]; self.nets.len()];
        let recount = |count: &mut Vec<[usize; 2]>, side: &[u8]| {
            for &e in &local_nets {
                count[e] = [0, 0];
                for &m in &self.nets[e] {
                    if side[m] < 2 {
                        count[e][side[m] as usize] += 1;
                    }
                }
            }
        };
        recount(&mut count, side);
        let gain = |m: usize, count: &[[usize; 2]], side: &[u8]| -> i64 {
            let from = side[m] as usize;
            let mut g = 0i64;
            for &e in &self.incident[m] {
                let (f, t) = (count[e][from], count[e][1 - from]);
                if f > 0 && t > 0 {
                    g += 1;
                }
                if f > 1 {
                    g -= 1;
                }
            }
            g
        };

        let n = block.len();
        for _ in 0..FM_PASSES {
            let mut locked = vec![false; n];
            let zeros = block.iter().filter(|&&m| side[m] == 0).count();
            let mut sizes = [zeros, n - zeros];
            let mut moves: Vec<usize> = Vec::with_capacity(n);
            let mut running = 0i64;
            let mut best = (0i64, 0usize);
            for _ in 0..n {
                let mut pick: Option<(i64, usize)> = None;
                for (k, &m) in block.iter().enumerate() {
                    if locked[k] {
                        continue;
                    }
                    let from = side[m] as usize;
                    if sizes[from] < sizes[1 - from] {
                        continue;
                    }
                    let g = gain(m, &count, side);
                    if pick.is_none_or(|(bg, _)| g > bg) {
                        pick = Some((g, k));
                    }
                }
                let Some((g, k)) = pick else { break };
                let m = block[k];
                let from = side[m] as usize;
                for &e in &self.incident[m] {
                    count[e][from] -= 1;
                    count[e][1 - from] += 1;
                }
                side[m] = (1 - from) as u8;
                sizes[from] -= 1;
                sizes[1 - from] += 1;
                locked[k] = true;
                moves.push(m);
                running += g;
                if running > best.0 && sizes[0].abs_diff(sizes[1]) <= 1 {
                    best = (running, moves.len());
                }
            }
            for &m in moves[best.1..].iter().rev() {
                side[m] = 1 - side[m];
            }
            recount(&mut count, side);
            if best.0 == 0 {
                break;
            }
        }

        let (mut a, mut b) = (Vec::new(), Vec::new());
        for &m in block {
            if side[m] == 0 {
                a.push(m);
            } else {
                b.push(m);
            }
            side[m] = OUT;
        }
        (a, b)
    }

    fn bfs(&self, start: usize, side: &[u8]) -> Vec<usize> {
        let mut seen = vec![false; side.len()];
        let mut order = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < order.len() {
            let m = order[head];
            head += 1;
            for &e in &self.incident[m] {
                for &v in &self.nets[e] {
                    if !seen[v] && side[v] == 2 {
                        seen[v] = true;
                        order.push(v);
                    }
                }
            }
        }
        order
    }
}

/// Measures the Rent exponent of the signal nets of `netlist`.
///
/// Modules are split recursively into balanced halves. For every level the
/// mean block size and mean terminal count are recorded, and `p` is the
/// least-squares slope of `log T` against `log B` over the levels whose
/// blocks hold at least two modules, excluding the whole design.
pub fn rent_exponent(netlist: &Netlist) -> Result<RentFit> {
    let n = netlist.num_modules();
    if n < 8 {
        return Err(Error::InvalidNetlist(format!(
            "Rent analysis needs at least 8 modules, got {n}"
        )));
    }
    let graph = Hypergraph::new(netlist);
    let mut side = vec![u8::MAX; n];
    let mut inside = vec![false; n];
    let mut level: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut points = Vec::new();
    loop {
        let mut next = Vec::with_capacity(level.len() * 2);
        for block in &level {
            if block.len() < 2 {
                continue;
            }
            let (a, b) = graph.bisect(block, &mut side);
            next.push(a);
            next.push(b);
        }
        if next.is_empty() {
            break;
        }
        let size = next.iter().map(|b| b.len()).sum::<usize>() as f64 / next.len() as f64;
        if size < 2.0 {
            break;
        }
        let terminals = next
            .iter()
            .map(|b| graph.terminals(b, &mut inside))
            .sum::<usize>() as f64
            / next.len() as f64;
        points.push((size, terminals));
        level = next;
    }
    let usable: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, t)| t > 0.0).collect();
    if usable.len() < 2 {
        return Err(Error::InvalidNetlist(
            "too few connected bisection levels to fit a Rent exponent".into(),
        ));
    }
    let xs: Vec<f64> = usable.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(RentFit {
        exponent: slope,
        coefficient: intercept.exp(),
        points,
    })
}

/// Slope and intercept of the least-squares line through `(xs, ys)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// `exp(-|p_measured - p_expected| / 0.1)`.
pub fn rent_score(p_measured: f64, p_expected: f64) -> f64 {
    (-(p_measured - p_expected).abs() / 0.1).exp()
}
