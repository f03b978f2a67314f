//! GCN, GAT and GIN message-passing layers.
//!
//! Graph structure is precomputed once into [`GraphOperators`] and enters the
//! tape as constants. GCN uses the clamped cosine weights `max(A, 0)` plus
//! self-loops with symmetric normalization; GAT and GIN see structure only.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    Gcn,
    Gat,
    Gin,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [BackboneKind::Gcn, BackboneKind::Gat, BackboneKind::Gin];
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::Gcn => "gcn",
            BackboneKind::Gat => "gat",
            BackboneKind::Gin => "gin",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Self::Gcn),
            "gat" => Ok(Self::Gat),
            "gin" => Ok(Self::Gin),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub input_dim: usize,
    /// Width of every layer output, including the final embedding `d_h`.
    pub hidden_dim: usize,
    pub layers: usize,
    /// Attention heads per GAT layer; head outputs are averaged.
    pub heads: usize,
    /// Initial GIN ε (learnable).
    pub gin_eps: f64,
    /// Extra columns concatenated onto the input of every layer after the
    /// first (layerwise explanation injection); 0 disables it.
    pub inject_dim: usize,
}

impl BackboneConfig {
    pub fn new(kind: BackboneKind, input_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            hidden_dim: 64,
            layers: 2,
            heads: 1,
            gin_eps: 0.0,
            inject_dim: 0,
        }
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden_dim + self.inject_dim
        }
    }
}

/// Constant sparse operators derived from a graph.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    pub n: usize,
    /// `D̃^{-1/2} (max(A,0) + I) D̃^{-1/2}`.
    pub gcn: Arc<SparseMatrix>,
    /// Binary adjacency without self-loops.
    pub sum: Arc<SparseMatrix>,
    /// Edge list over `{i} ∪ N(i)`: message from `src[e]` to `dst[e]`.
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl GraphOperators {
    pub fn new(g: &Graph) -> Self {
        let g = g.symmetrized();
        let n = g.n_nodes();
        let deg: Vec<f64> = (0..n)
            .map(|i| 1.0 + g.neighbors(i).iter().map(|&(_, w)| w.max(0.0)).sum::<f64>())
            .collect();
        let mut gcn = Vec::new();
        let mut sum = Vec::new();
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for i in 0..n {
            gcn.push((i, i, 1.0 / deg[i]));
            src.push(i);
            dst.push(i);
            for &(j, w) in g.neighbors(i) {
                let w = w.max(0.0);
                if w > 0.0 {
                    gcn.push((i, j, w / (deg[i].sqrt() * deg[j].sqrt())));
                }
                sum.push((i, j, 1.0));
                src.push(j);
                dst.push(i);
            }
        }
        Self {
            n,
            gcn: Arc::new(SparseMatrix::from_triplets(n, n, &gcn)),
            sum: Arc::new(SparseMatrix::from_triplets(n, n, &sum)),
            src: src.into(),
            dst: dst.into(),
        }
    }
}

/// A dense layer `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), fan_in, fan_out, fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), 1, fan_out, fan_in, rng);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub weight: ParamId,
    pub attn_src: ParamId,
    pub attn_dst: ParamId,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Gcn(Linear),
    Gat { heads: Vec<GatHead>, bias: ParamId },
    Gin { eps: ParamId, first: Linear, second: Linear },
}

/// `Â H W + b`.
pub fn gcn_layer(tape: &mut Tape, store: &ParamStore, ops: &GraphOperators, h: Var, lin: &Linear) -> Result<Var> {
    let w = tape.param(store, lin.weight);
    let b = tape.param(store, lin.bias);
    let hw = tape.matmul(h, w)?;
    let agg = tape.sparse_matmul(ops.gcn.clone(), hw)?;
    tape.add(agg, b)
}

/// Attention-weighted neighbor sum. Returns the layer output and, per head,
/// the `E × 1` attention coefficients aligned with `ops.src`/`ops.dst`.
pub fn gat_layer(
    tape: &mut Tape,
    store: &ParamStore,
    ops: &GraphOperators,
    h: Var,
    heads: &[GatHead],
    bias: ParamId,
) -> Result<(Var, Vec<Var>)> {
    let mut outs = Vec::with_capacity(heads.len());
    let mut alphas = Vec::with_capacity(heads.len());
    for head in heads {
        let w = tape.param(store, head.weight);
        let a_src = tape.param(store, head.attn_src);
        let a_dst = tape.param(store, head.attn_dst);
        let z = tape.matmul(h, w)?;
        let s_src = tape.matmul(z, a_src)?;
        let s_dst = tape.matmul(z, a_dst)?;
        let e_src = tape.gather_rows(s_src, ops.src.clone())?;
        let e_dst = tape.gather_rows(s_dst, ops.dst.clone())?;
        let scores = tape.add(e_dst, e_src)?;
        let scores = tape.leaky_relu(scores, GAT_NEGATIVE_SLOPE);
        let alpha = tape.segment_softmax(scores, ops.dst.clone(), ops.n)?;
        let msgs = tape.gather_rows(z, ops.src.clone())?;
        let msgs = tape.mul_column(msgs, alpha)?;
        outs.push(tape.scatter_add_rows(msgs, ops.dst.clone(), ops.n)?);
        alphas.push(alpha);
    }
    let mut out = outs[0];
    for &o in &outs[1..] {
        out = tape.add(out, o)?;
    }
    if outs.len() > 1 {
        out = tape.scale(out, 1.0 / outs.len() as f64);
    }
    let b = tape.param(store, bias);
    Ok((tape.add(out, b)?, alphas))
}

/// `MLP((1 + ε) h_i + Σ_{j ∈ N(i)} h_j)` with a two-layer ReLU MLP.
pub fn gin_layer(
    tape: &mut Tape,
    store: &ParamStore,
    ops: &GraphOperators,
    h: Var,
    eps: ParamId,
    first: &Linear,
    second: &Linear,
) -> Result<Var> {
    let e = tape.param(store, eps);
    let scaled = tape.mul_scalar(h, e)?;
    let self_term = tape.add(h, scaled)?;
    let nbr = tape.sparse_matmul(ops.sum.clone(), h)?;
    let agg = tape.add(self_term, nbr)?;
    let hidden = first.forward(tape, store, agg)?;
    let hidden = tape.relu(hidden);
    second.forward(tape, store, hidden)
}

/// Stacked message-passing layers producing node embeddings `H`.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub layers: Vec<Layer>,
}

impl Backbone {
    pub fn init(config: BackboneConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.layers == 0 || config.hidden_dim == 0 || config.input_dim == 0 {
            return Err(Error::Config("backbone needs at least one layer and non-zero widths".into()));
        }
        if config.kind == BackboneKind::Gat && config.heads == 0 {
            return Err(Error::Config("GAT needs at least one head".into()));
        }
        let d = config.hidden_dim;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let fan_in = config.layer_input(l);
            let name = format!("backbone.{l}");
            let layer = match config.kind {
                BackboneKind::Gcn => Layer::Gcn(Linear::init(store, &name, fan_in, d, rng)),
                BackboneKind::Gat => {
                    let heads = (0..config.heads)
                        .map(|h| GatHead {
                            weight: store.add_uniform(format!("{name}.head{h}.weight"), fan_in, d, fan_in, rng),
                            attn_src: store.add_uniform(format!("{name}.head{h}.attn_src"), d, 1, d, rng),
                            attn_dst: store.add_uniform(format!("{name}.head{h}.attn_dst"), d, 1, d, rng),
                        })
                        .collect();
                    let bias = store.add_uniform(format!("{name}.bias"), 1, d, fan_in, rng);
                    Layer::Gat { heads, bias }
                }
                BackboneKind::Gin => Layer::Gin {
                    eps: store.add(format!("{name}.eps"), Tensor::scalar(config.gin_eps)),
                    first: Linear::init(store, &format!("{name}.mlp0"), fan_in, d, rng),
                    second: Linear::init(store, &format!("{name}.mlp1"), d, d, rng),
                },
            };
            layers.push(layer);
        }
        Ok(Self { config, layers })
    }

    /// ReLU between layers, final layer linear. `inject` (N × inject_dim)
    /// is concatenated onto the input of every layer after the first.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ops: &GraphOperators,
        x: Var,
        inject: Option<Var>,
    ) -> Result<Var> {
        let [n, d] = tape.shape(x);
        if d != self.config.input_dim || n != ops.n {
            return Err(Error::shape("backbone_forward", &[ops.n, self.config.input_dim], &[n, d]));
        }
        if self.config.inject_dim > 0 && inject.is_none() {
            return Err(Error::Config("layerwise injection configured but no explanation given".into()));
        }
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                h = tape.relu(h);
                if let (true, Some(e)) = (self.config.inject_dim > 0, inject) {
                    h = tape.concat_cols(h, e)?;
                }
            }
            h = match layer {
                Layer::Gcn(lin) => gcn_layer(tape, store, ops, h, lin)?,
                Layer::Gat { heads, bias } => gat_layer(tape, store, ops, h, heads, *bias)?.0,
                Layer::Gin { eps, first, second } => gin_layer(tape, store, ops, h, *eps, first, second)?,
            };
        }
        Ok(h)
    }
}
