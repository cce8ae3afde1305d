//! Shared fixtures for the benchmarks in `benches/`.

use macroplace_core::model::{GraphContext, ScoreModel, ScoreNetConfig};
use macroplace_core::syngen::{generate_netlist, EdgeModelParams, GenSpec, ProcessSpec};
use macroplace_core::{Netlist, Placement};

/// A generated design of `n` modules with its legal base placement.
pub fn design(n: usize, seed: u64) -> (Netlist, Placement) {
    let process = ProcessSpec::nm45();
    let spec = GenSpec::with_size(n, 0.35, &process, seed);
    let params = EdgeModelParams::for_chip(spec.a_target, &process);
    let g = generate_netlist(&spec, &process, &params).expect("benchmark design generates");
    (g.netlist, g.placement)
}

/// The base placement pulled towards the centre by `factor`, so modules overlap.
pub fn squeezed(placement: &Placement, factor: f64) -> Vec<[f64; 2]> {
    placement
        .coords()
        .iter()
        .map(|c| [c[0] * factor, c[1] * factor])
        .collect()
}

/// An untrained score model and the graph context of `netlist`.
pub fn model(netlist: &Netlist, width: usize) -> (ScoreModel, GraphContext) {
    let config = ScoreNetConfig {
        width,
        gnn_layers: 2,
        attn_layers: 1,
        heads: 4,
    };
    let model = ScoreModel::new(config, 0).expect("valid config");
    (model, GraphContext::new(netlist))
}
