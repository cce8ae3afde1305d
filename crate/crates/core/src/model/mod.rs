//! Noise-prediction network: a message-passing netlist encoder feeding an
//! attention stack conditioned on timestep and relative energy.

pub mod train;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Csr, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::netlist::{ModuleKind, Netlist};

pub use train::{
    ema_update, train, AdamState, ConditioningSource, ScoreModel, TrainConfig, TrainData, TrainExample,
    TrainReport,
};

/// Number of per-module input features: `w, h`, kind one-hot, mean pin offset.
pub const NODE_FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreNetConfig {
    pub width: usize,
    pub gnn_layers: usize,
    pub attn_layers: usize,
    pub heads: usize,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self {
            width: 64,
            gnn_layers: 3,
            attn_layers: 2,
            heads: 4,
        }
    }
}

impl ScoreNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || !self.width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "network width must be even and at least 2, got {}",
                self.width
            )));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "width {} is not divisible into {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

/// Energy conditioning input. `Null` is the learned unconditional token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conditioning {
    Energy(f64),
    Null,
}

impl Conditioning {
    pub fn energy(e_rel: f64) -> Result<Self> {
        if !(e_rel > 0.0 && e_rel <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "relative energy must lie in (0, 1], got {e_rel}"
            )));
        }
        Ok(Self::Energy(e_rel))
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn all_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| *v == 0.0))
    }

    pub fn same_shapes(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }
}

#[derive(Debug, Clone)]
struct GnnLayer {
    msg: usize,
    pin: usize,
    self_w: usize,
    agg: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct AttnBlock {
    cond: usize,
    net_in: usize,
    net_out: usize,
    q: Vec<usize>,
    k: Vec<usize>,
    v: Vec<usize>,
    o: Vec<usize>,
    ff1: usize,
    ff1_b: usize,
    ff2: usize,
    ff2_b: usize,
}

/// Parameter indices for every layer, derived from the config.
#[derive(Debug, Clone)]
struct Layout {
    input: usize,
    input_b: usize,
    gnn: Vec<GnnLayer>,
    gnn_out: usize,
    tok_h: usize,
    tok_x: usize,
    tok_b: usize,
    time1: usize,
    time1_b: usize,
    time2: usize,
    time2_b: usize,
    energy1: usize,
    energy1_b: usize,
    energy2: usize,
    energy2_b: usize,
    null: usize,
    blocks: Vec<AttnBlock>,
    out: usize,
    out_b: usize,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize, f64)>,
}

impl Builder {
    /// Registers a tensor with uniform init of half-width `scale`.
    fn add(&mut self, name: String, rows: usize, cols: usize, scale: f64) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols, scale));
        self.names.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let scale = (6.0 / (rows + cols) as f64).sqrt();
        self.add(name, rows, cols, scale)
    }

    fn bias(&mut self, name: String, cols: usize) -> usize {
        self.add(name, 1, cols, 0.0)
    }
}

fn build_layout(cfg: &ScoreNetConfig) -> (Layout, Builder) {
    let d = cfg.width;
    let dh = d / cfg.heads;
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let input = b.weight("gnn.input".into(), NODE_FEATURES, d);
    let input_b = b.bias("gnn.input_b".into(), d);
    let gnn = (0..cfg.gnn_layers)
        .map(|l| GnnLayer {
            msg: b.weight(format!("gnn.{l}.msg"), d, d),
            pin: b.weight(format!("gnn.{l}.pin"), 2, d),
            self_w: b.weight(format!("gnn.{l}.self"), d, d),
            agg: b.weight(format!("gnn.{l}.agg"), d, d),
            bias: b.bias(format!("gnn.{l}.bias"), d),
        })
        .collect();
    let gnn_out = b.weight("gnn.out".into(), d, d);
    let tok_h = b.weight("tok.h".into(), d, d);
    let tok_x = b.weight("tok.x".into(), 4, d);
    let tok_b = b.bias("tok.b".into(), d);
    let time1 = b.weight("time.1".into(), d, d);
    let time1_b = b.bias("time.1b".into(), d);
    let time2 = b.weight("time.2".into(), d, d);
    let time2_b = b.bias("time.2b".into(), d);
    let energy1 = b.weight("energy.1".into(), 2, d);
    let energy1_b = b.bias("energy.1b".into(), d);
    let energy2 = b.weight("energy.2".into(), d, d);
    let energy2_b = b.bias("energy.2b".into(), d);
    let null = b.add("energy.null".into(), 1, d, 1.0);
    let blocks = (0..cfg.attn_layers)
        .map(|l| AttnBlock {
            cond: b.weight(format!("blk.{l}.cond"), d, d),
            net_in: b.weight(format!("blk.{l}.net_in"), d, d),
            net_out: b.weight(format!("blk.{l}.net_out"), d, d),
            q: (0..cfg.heads)
                .map(|h| b.weight(format!("blk.{l}.q{h}"), d, dh))
                .collect(),
            k: (0..cfg.heads)
                .map(|h| b.weight(format!("blk.{l}.k{h}"), d, dh))
                .collect(),
            v: (0..cfg.heads)
                .map(|h| b.weight(format!("blk.{l}.v{h}"), d, dh))
                .collect(),
            o: (0..cfg.heads)
                .map(|h| b.weight(format!("blk.{l}.o{h}"), dh, d))
                .collect(),
            ff1: b.weight(format!("blk.{l}.ff1"), d, 2 * d),
            ff1_b: b.bias(format!("blk.{l}.ff1b"), 2 * d),
            ff2: b.weight(format!("blk.{l}.ff2"), 2 * d, d),
            ff2_b: b.bias(format!("blk.{l}.ff2b"), d),
        })
        .collect();
    let out = b.add("out.w".into(), d, 2, 0.1 * (6.0 / (d + 2) as f64).sqrt());
    let out_b = b.bias("out.b".into(), 2);
    let layout = Layout {
        input,
        input_b,
        gnn,
        gnn_out,
        tok_h,
        tok_x,
        tok_b,
        time1,
        time1_b,
        time2,
        time2_b,
        energy1,
        energy1_b,
        energy2,
        energy2_b,
        null,
        blocks,
        out,
        out_b,
    };
    (layout, b)
}

/// Per-netlist constant structure shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub num_modules: usize,
    features: Matrix,
    /// pin x module one-hot
    gather: Rc<Csr>,
    offsets: Matrix,
    /// net x pin mean
    net_mean: Rc<Csr>,
    /// module x net, averaging over the module's pins
    back: Rc<Csr>,
    /// net x module mean of module rows
    module_to_net: Rc<Csr>,
    /// mean over incident nets of (net centroid - own position)
    pull: Csr,
}

impl GraphContext {
    pub fn new(netlist: &Netlist) -> Self {
        let n = netlist.num_modules();
        let mut pin_base = Vec::with_capacity(n);
        let mut total_pins = 0;
        for m in &netlist.modules {
            pin_base.push(total_pins);
            total_pins += m.pins.len();
        }
        let mut features = Matrix::zeros(n, NODE_FEATURES);
        let mut offsets = Matrix::zeros(total_pins, 2);
        let mut gather = Vec::with_capacity(total_pins);
        for m in &netlist.modules {
            let mean = m.mean_pin_offset();
            let kind = match m.kind {
                ModuleKind::Macro => 2,
                ModuleKind::StandardCell => 3,
                ModuleKind::IoPad => 4,
            };
            let row = features.row_mut(m.id);
            row[0] = m.width;
            row[1] = m.height;
            row[kind] = 1.0;
            row[5] = mean[0];
            row[6] = mean[1];
            for (k, p) in m.pins.iter().enumerate() {
                let pid = pin_base[m.id] + k;
                offsets.row_mut(pid).copy_from_slice(&[p.dx, p.dy]);
                gather.push((pid, m.id, 1.0));
            }
        }
        let e = netlist.num_nets();
        let mut net_mean = Vec::new();
        let mut module_to_net = Vec::new();
        let mut back = Vec::new();
        for net in &netlist.nets {
            let w = 1.0 / net.endpoints.len() as f64;
            for ep in &net.endpoints {
                net_mean.push((net.id, pin_base[ep.module] + ep.pin, w));
                module_to_net.push((net.id, ep.module, w));
                let pins = netlist.modules[ep.module].pins.len() as f64;
                back.push((ep.module, net.id, 1.0 / pins));
            }
        }
        let back = Csr::from_triplets(n, e, back);
        let module_to_net = Csr::from_triplets(e, n, module_to_net);
        let mut pull = Vec::new();
        for v in 0..n {
            if back.indptr[v] == back.indptr[v + 1] {
                continue;
            }
            for k in back.indptr[v]..back.indptr[v + 1] {
                let (net, wb) = (back.indices[k], back.values[k]);
                for j in module_to_net.indptr[net]..module_to_net.indptr[net + 1] {
                    pull.push((v, module_to_net.indices[j], wb * module_to_net.values[j]));
                }
            }
            pull.push((v, v, -1.0));
        }
        Self {
            num_modules: n,
            features,
            gather: Rc::new(Csr::from_triplets(total_pins, n, gather)),
            offsets,
            net_mean: Rc::new(Csr::from_triplets(e, total_pins, net_mean)),
            back: Rc::new(back),
            module_to_net: Rc::new(module_to_net),
            pull: Csr::from_triplets(n, n, pull),
        }
    }

    /// `[x, y, pull_x, pull_y]` per module for flat coordinates `x_t`.
    fn position_features(&self, x_t: &[f64]) -> Matrix {
        let xm = Matrix::from_vec(self.num_modules, 2, x_t.to_vec());
        let pull = self.pull.mul(&xm);
        let mut out = Matrix::zeros(self.num_modules, 4);
        for i in 0..self.num_modules {
            let r = out.row_mut(i);
            r[..2].copy_from_slice(xm.row(i));
            r[2..].copy_from_slice(pull.row(i));
        }
        out
    }
}

/// Sinusoidal features of `t / T`, `width` values.
pub fn sinusoidal(t: usize, total: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let pos = 200.0 * t as f64 / total.max(1) as f64;
    let mut out = Vec::with_capacity(width);
    for k in 0..half {
        let freq = (-(10000f64).ln() * k as f64 / half as f64).exp();
        out.push((pos * freq).sin());
    }
    for k in 0..half {
        let freq = (-(10000f64).ln() * k as f64 / half as f64).exp();
        out.push((pos * freq).cos());
    }
    out
}

/// Architecture plus parameter layout.
#[derive(Debug, Clone)]
pub struct ScoreNet {
    pub config: ScoreNetConfig,
    layout: Layout,
}

impl ScoreNet {
    pub fn new(config: ScoreNetConfig) -> Result<Self> {
        config.validate()?;
        let (layout, _) = build_layout(&config);
        Ok(Self { config, layout })
    }

    /// Fresh parameters with Xavier-uniform weights and zero biases.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let (_, b) = build_layout(&self.config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = b
            .shapes
            .iter()
            .map(|&(r, c, scale)| {
                let data = (0..r * c)
                    .map(|_| {
                        if scale == 0.0 {
                            0.0
                        } else {
                            rng.random_range(-scale..scale)
                        }
                    })
                    .collect();
                Matrix::from_vec(r, c, data)
            })
            .collect();
        ParamSet {
            names: b.names,
            tensors,
        }
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let (_, b) = build_layout(&self.config);
        let ok = params.names == b.names
            && params
                .tensors
                .iter()
                .zip(&b.shapes)
                .all(|(t, &(r, c, _))| t.rows == r && t.cols == c && t.data.len() == r * c);
        if !ok {
            return Err(Error::Checkpoint(
                "parameter names or shapes do not match the network config".into(),
            ));
        }
        Ok(())
    }

    /// Puts every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> Vec<Var> {
        params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p))
            .collect()
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = tape.matmul(x, w);
        match b {
            Some(b) => tape.add_row(y, b),
            None => y,
        }
    }

    /// Message-passing encoder; returns an `N x width` embedding.
    pub fn encode_tape(&self, tape: &mut Tape, p: &[Var], ctx: &GraphContext) -> Var {
        let l = &self.layout;
        let feats = tape.constant(ctx.features.clone());
        let offsets = tape.constant(ctx.offsets.clone());
        let mut h = self.linear(tape, feats, p[l.input], Some(p[l.input_b]));
        for layer in &l.gnn {
            let hm = tape.matmul(h, p[layer.msg]);
            let pin_msg = tape.spmm(&ctx.gather, hm);
            let off = tape.matmul(offsets, p[layer.pin]);
            let pin_msg = tape.add(pin_msg, off);
            let net = tape.spmm(&ctx.net_mean, pin_msg);
            let net = tape.silu(net);
            let agg = tape.spmm(&ctx.back, net);
            let hn = tape.layer_norm(h);
            let s = tape.matmul(hn, p[layer.self_w]);
            let a = tape.matmul(agg, p[layer.agg]);
            let u = tape.add(s, a);
            let u = tape.add_row(u, p[layer.bias]);
            let u = tape.silu(u);
            h = tape.add(h, u);
        }
        let hn = tape.layer_norm(h);
        tape.matmul(hn, p[l.gnn_out])
    }

    /// `1 x width` time embedding.
    pub fn time_embed_tape(&self, tape: &mut Tape, p: &[Var], t: usize, total: usize) -> Var {
        let l = &self.layout;
        let s = sinusoidal(t, total, self.config.width);
        let s = tape.constant(Matrix::from_vec(1, self.config.width, s));
        let h = self.linear(tape, s, p[l.time1], Some(p[l.time1_b]));
        let h = tape.silu(h);
        self.linear(tape, h, p[l.time2], Some(p[l.time2_b]))
    }

    /// `1 x width` energy embedding, or the null token.
    pub fn energy_embed_tape(&self, tape: &mut Tape, p: &[Var], cond: Conditioning) -> Var {
        let l = &self.layout;
        match cond {
            Conditioning::Null => p[l.null],
            Conditioning::Energy(e) => {
                let x = tape.constant(Matrix::from_vec(1, 2, vec![e, e.ln()]));
                let h = self.linear(tape, x, p[l.energy1], Some(p[l.energy1_b]));
                let h = tape.silu(h);
                self.linear(tape, h, p[l.energy2], Some(p[l.energy2_b]))
            }
        }
    }

    /// Noise prediction (`N x 2`) given an encoder output `h` on the tape.
    #[allow(clippy::too_many_arguments)]
    pub fn score_tape(
        &self,
        tape: &mut Tape,
        p: &[Var],
        ctx: &GraphContext,
        h: Var,
        x_t: &[f64],
        t: usize,
        total: usize,
        cond: Conditioning,
    ) -> Result<Var> {
        if x_t.len() != 2 * ctx.num_modules {
            return Err(Error::ShapeMismatch {
                expected: 2 * ctx.num_modules,
                actual: x_t.len(),
            });
        }
        let l = &self.layout;
        let dh = self.config.width / self.config.heads;
        let temb = self.time_embed_tape(tape, p, t, total);
        let eemb = self.energy_embed_tape(tape, p, cond);
        let c = tape.add(temb, eemb);
        let c = tape.silu(c);

        let pos = tape.constant(ctx.position_features(x_t));
        let zh = tape.matmul(h, p[l.tok_h]);
        let zx = tape.matmul(pos, p[l.tok_x]);
        let z = tape.add(zh, zx);
        let z = tape.add_row(z, p[l.tok_b]);
        let mut z = tape.add_row(z, c);

        for blk in &l.blocks {
            let cb = tape.matmul(c, p[blk.cond]);
            z = tape.add_row(z, cb);

            let u = tape.layer_norm(z);
            let un = tape.matmul(u, p[blk.net_in]);
            let nets = tape.spmm(&ctx.module_to_net, un);
            let nets = tape.silu(nets);
            let back = tape.spmm(&ctx.back, nets);
            let back = tape.matmul(back, p[blk.net_out]);
            z = tape.add(z, back);

            let u = tape.layer_norm(z);
            for head in 0..self.config.heads {
                let q = tape.matmul(u, p[blk.q[head]]);
                let k = tape.matmul(u, p[blk.k[head]]);
                let v = tape.matmul(u, p[blk.v[head]]);
                let s = tape.matmul_bt(q, k);
                let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
                let a = tape.softmax_rows(s);
                let o = tape.matmul(a, v);
                let o = tape.matmul(o, p[blk.o[head]]);
                z = tape.add(z, o);
            }

            let u = tape.layer_norm(z);
            let f = self.linear(tape, u, p[blk.ff1], Some(p[blk.ff1_b]));
            let f = tape.silu(f);
            let f = self.linear(tape, f, p[blk.ff2], Some(p[blk.ff2_b]));
            z = tape.add(z, f);
        }
        let u = tape.layer_norm(z);
        Ok(self.linear(tape, u, p[l.out], Some(p[l.out_b])))
    }

    /// Encoder output as a plain matrix, for reuse across sampling steps.
    pub fn encode_netlist(&self, params: &ParamSet, ctx: &GraphContext) -> Matrix {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, params);
        let h = self.encode_tape(&mut tape, &p, ctx);
        tape.value(h).clone()
    }

    pub fn time_embed(&self, params: &ParamSet, t: usize, total: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, params);
        let v = self.time_embed_tape(&mut tape, &p, t, total);
        tape.value(v).data.clone()
    }

    pub fn energy_embed(&self, params: &ParamSet, cond: Conditioning) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, params);
        let v = self.energy_embed_tape(&mut tape, &p, cond);
        tape.value(v).data.clone()
    }

    /// Flat noise prediction from a cached encoder output.
    #[allow(clippy::too_many_arguments)]
    pub fn score_forward(
        &self,
        params: &ParamSet,
        ctx: &GraphContext,
        embedding: &Matrix,
        x_t: &[f64],
        t: usize,
        total: usize,
        cond: Conditioning,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, params);
        let h = tape.constant(embedding.clone());
        let out = self.score_tape(&mut tape, &p, ctx, h, x_t, t, total, cond)?;
        Ok(tape.value(out).data.clone())
    }

    /// Full forward pass including the encoder.
    pub fn predict(
        &self,
        params: &ParamSet,
        ctx: &GraphContext,
        x_t: &[f64],
        t: usize,
        total: usize,
        cond: Conditioning,
    ) -> Result<Vec<f64>> {
        let emb = self.encode_netlist(params, ctx);
        self.score_forward(params, ctx, &emb, x_t, t, total, cond)
    }
}

/// Permutes module order: module `perm[i]` of the input becomes module `i`.
pub fn permute_netlist(netlist: &Netlist, perm: &[usize]) -> Netlist {
    let mut inverse = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let mut out = netlist.clone();
    out.modules = perm
        .iter()
        .enumerate()
        .map(|(new, &old)| {
            let mut m = netlist.modules[old].clone();
            m.id = new;
            m
        })
        .collect();
    for net in &mut out.nets {
        for ep in &mut net.endpoints {
            ep.module = inverse[ep.module];
        }
    }
    out
}

/// Uniform random permutation of `0..n`.
pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

/// Cosine similarity, 0 for zero vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
