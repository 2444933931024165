//! Extractor + attention-weighted GIN classifier.
//!
//! The classifier embeds nodes with stacked GIN layers; the extractor maps
//! the endpoint embeddings of each directed edge to an attention logit.
//! Predictions use the attention either as continuous edge weights (LIN) or
//! as the keep-probabilities of sampled hard masks (SAM).

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch};
use crate::nn::{self, dropout, init_bias, init_weight, EdgeIndex, Mlp, NodeGroups, ParameterStore, Params};

pub type SeededRng = ChaCha8Rng;

/// Clamp applied to attention probabilities inside the information loss.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lin,
    Sam,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Lin => "lin",
            Variant::Sam => "sam",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin" => Ok(Variant::Lin),
            "sam" => Ok(Variant::Sam),
            _ => Err(Error::config(format!("unknown variant '{s}' (lin|sam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub dropout: f64,
    pub extractor_dropout: f64,
    pub variant: Variant,
    pub sam_samples: usize,
    pub use_edge_attention: bool,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub gin_eps: f64,
    /// Per-graph instance normalization inside each GIN MLP.
    pub instance_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            gnn_layers: 2,
            dropout: 0.3,
            extractor_dropout: 0.5,
            variant: Variant::Lin,
            sam_samples: 10,
            use_edge_attention: true,
            num_classes: 2,
            feature_dim: 10,
            gin_eps: 0.0,
            instance_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.gnn_layers == 0 {
            return Err(Error::config("hidden_dim and gnn_layers must be positive"));
        }
        if self.sam_samples == 0 {
            return Err(Error::config("sam_samples must be at least 1"));
        }
        if self.num_classes < 2 || self.feature_dim == 0 {
            return Err(Error::config("need >= 2 classes and a positive feature dim"));
        }
        for (name, p) in [("dropout", self.dropout), ("extractor_dropout", self.extractor_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Annealed sparsity target `r(epoch) = max(r_final, r_initial − decay·⌊epoch/interval⌋)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsitySchedule {
    pub r_initial: f64,
    pub r_final: f64,
    pub decay: f64,
    pub interval: usize,
}

impl Default for SparsitySchedule {
    fn default() -> Self {
        SparsitySchedule {
            r_initial: 1.0,
            r_final: 0.5,
            decay: 0.1,
            interval: 10,
        }
    }
}

impl SparsitySchedule {
    pub fn r(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.interval) as f64;
        // Round away accumulated decimal noise so r hits r_final exactly.
        let raw = ((self.r_initial - self.decay * steps) * 1e12).round() / 1e12;
        raw.max(self.r_final)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_final > 0.0 && self.r_final <= self.r_initial && self.r_initial <= 1.0) {
            return Err(Error::config(format!(
                "sparsity schedule needs 0 < r_final <= r_initial <= 1, got {} / {}",
                self.r_final, self.r_initial
            )));
        }
        if self.interval == 0 || self.decay < 0.0 {
            return Err(Error::config("sparsity decay interval must be positive"));
        }
        Ok(())
    }
}

/// Graph (or batch) structure prepared for the tape.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub x: Rc<Mat>,
    pub edges: EdgeIndex,
    pub graph_of_node: Rc<Vec<usize>>,
    pub num_graphs: usize,
    /// `1 / node_count` per graph (`G × 1`), zero for empty graphs.
    pub inv_counts: Rc<Mat>,
    pub labels: Vec<usize>,
    /// Opposite orientation of each directed edge.
    pub reverse: Rc<Vec<usize>>,
    /// Start of each graph's edges, with a trailing total.
    pub edge_offsets: Vec<usize>,
}

impl GraphInput {
    pub fn from_graph(g: &Graph) -> Self {
        let n = g.node_count();
        GraphInput {
            x: Rc::new(g.node_features().clone()),
            edges: EdgeIndex::new(g.edges(), n),
            graph_of_node: Rc::new(vec![0; n]),
            num_graphs: 1,
            inv_counts: Rc::new(Mat::from_elem((1, 1), if n > 0 { 1.0 / n as f64 } else { 0.0 })),
            labels: vec![g.label()],
            reverse: Rc::new(g.reverse_index().to_vec()),
            edge_offsets: vec![0, g.edge_count()],
        }
    }

    pub fn from_batch(b: &GraphBatch) -> Self {
        let offs = b.node_offsets();
        let inv = Mat::from_shape_fn((b.num_graphs(), 1), |(g, _)| {
            let n = offs[g + 1] - offs[g];
            if n > 0 {
                1.0 / n as f64
            } else {
                0.0
            }
        });
        let mut reverse = vec![0; b.edge_count()];
        let mut pos = std::collections::HashMap::with_capacity(b.edge_count());
        for (i, &e) in b.edges().iter().enumerate() {
            pos.insert(e, i);
        }
        for (i, &(u, v)) in b.edges().iter().enumerate() {
            reverse[i] = pos[&(v, u)];
        }
        GraphInput {
            x: Rc::new(b.node_features().clone()),
            edges: EdgeIndex::new(b.edges(), b.node_count()),
            graph_of_node: Rc::new(b.graph_of_node().to_vec()),
            num_graphs: b.num_graphs(),
            inv_counts: Rc::new(inv),
            labels: b.labels().to_vec(),
            reverse: Rc::new(reverse),
            edge_offsets: b.edge_offsets().to_vec(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.edges.num_nodes
    }

    /// Graph membership of each edge, for edge-level normalization.
    pub fn edge_groups(&self) -> NodeGroups {
        let of_edge: Vec<usize> = self.edges.src.iter().map(|&u| self.graph_of_node[u]).collect();
        let mut counts = vec![0usize; self.num_graphs];
        for &g in &of_edge {
            counts[g] += 1;
        }
        NodeGroups {
            graph_of_node: Rc::new(of_edge),
            inv_counts: Rc::new(Mat::from_shape_fn((self.num_graphs, 1), |(g, _)| {
                if counts[g] > 0 {
                    1.0 / counts[g] as f64
                } else {
                    0.0
                }
            })),
            num_graphs: self.num_graphs,
        }
    }

    pub fn groups(&self) -> NodeGroups {
        NodeGroups {
            graph_of_node: Rc::clone(&self.graph_of_node),
            inv_counts: Rc::clone(&self.inv_counts),
            num_graphs: self.num_graphs,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `copies` disjoint replicas, replica-major. Graph `g` of replica `c`
    /// becomes graph `c·G + g`.
    fn tile(&self, copies: usize) -> GraphInput {
        let (n, m, g) = (self.num_nodes(), self.num_edges(), self.num_graphs);
        let mut src = Vec::with_capacity(m * copies);
        let mut dst = Vec::with_capacity(m * copies);
        let mut gon = Vec::with_capacity(n * copies);
        for c in 0..copies {
            src.extend(self.edges.src.iter().map(|&u| u + c * n));
            dst.extend(self.edges.dst.iter().map(|&v| v + c * n));
            gon.extend(self.graph_of_node.iter().map(|&q| q + c * g));
        }
        let rows: Vec<usize> = (0..copies).flat_map(|_| 0..n).collect();
        let inv_rows: Vec<usize> = (0..copies).flat_map(|_| 0..g).collect();
        GraphInput {
            x: Rc::new(self.x.select(ndarray::Axis(0), &rows)),
            edges: EdgeIndex {
                src: Rc::new(src),
                dst: Rc::new(dst),
                num_nodes: n * copies,
            },
            graph_of_node: Rc::new(gon),
            num_graphs: g * copies,
            inv_counts: Rc::new(self.inv_counts.select(ndarray::Axis(0), &inv_rows)),
            labels: (0..copies).flat_map(|_| self.labels.iter().copied()).collect(),
            reverse: Rc::clone(&self.reverse),
            edge_offsets: Vec::new(),
        }
    }
}

/// Classifier and extractor parameters with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GmtModel {
    pub config: ModelConfig,
    pub classifier: ParameterStore,
    pub extractor: ParameterStore,
}

impl GmtModel {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let mut classifier = ParameterStore::new();
        for layer in 0..config.gnn_layers {
            let d_in = if layer == 0 { config.feature_dim } else { h };
            let p = format!("conv{layer}");
            classifier.insert(format!("{p}.w1"), init_weight(rng, d_in, h))?;
            classifier.insert(format!("{p}.b1"), init_bias(rng, d_in, h))?;
            classifier.insert(format!("{p}.w2"), init_weight(rng, h, h))?;
            classifier.insert(format!("{p}.b2"), init_bias(rng, h, h))?;
        }
        classifier.insert("head.w", init_weight(rng, h, config.num_classes))?;
        classifier.insert("head.b", init_bias(rng, h, config.num_classes))?;

        let mut extractor = ParameterStore::new();
        // halves of one linear layer over [h_src ‖ h_dst], so fan-in is 2h
        let half = (0.5f64).sqrt();
        extractor.insert("w_src", init_weight(rng, h, h) * half)?;
        extractor.insert("w_dst", init_weight(rng, h, h) * half)?;
        extractor.insert("b1", init_bias(rng, 2 * h, h))?;
        extractor.insert("w2", init_weight(rng, h, 1))?;
        extractor.insert("b2", init_bias(rng, h, 1))?;
        Ok(GmtModel {
            config,
            classifier,
            extractor,
        })
    }
}

/// Per-directed-edge attention: logits and their sigmoids (`m × 1`).
#[derive(Debug, Clone, Copy)]
pub struct Attention<'t> {
    pub logits: Var<'t>,
    pub probs: Var<'t>,
}

impl Attention<'_> {
    pub fn probs_vec(&self) -> Vec<f64> {
        self.probs.value().iter().copied().collect()
    }
}

/// Classifier output: per-graph class scores usable with log-softmax
/// (`G × C`), plus the attention that produced them.
#[derive(Debug, Clone, Copy)]
pub struct Forward<'t> {
    pub logits: Var<'t>,
    pub attention: Attention<'t>,
}

/// Training switch and randomness for dropout and mask sampling.
pub struct Ctx<'a> {
    pub training: bool,
    pub rng: &'a mut SeededRng,
}

/// Stacked GIN layers with ReLU and dropout after each layer.
pub fn embed_nodes<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    clf: &Params<'t>,
    edge_weight: Option<Var<'t>>,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Var<'t>> {
    if input.x.ncols() != cfg.feature_dim {
        return Err(Error::config(format!(
            "input has {} features, model expects {}",
            input.x.ncols(),
            cfg.feature_dim
        )));
    }
    let groups = cfg.instance_norm.then(|| input.groups());
    let mut h = tape.constant((*input.x).clone());
    for layer in 0..cfg.gnn_layers {
        let mlp = Mlp::from_params(clf, &format!("conv{layer}"));
        h = nn::gin_conv(h, &input.edges, edge_weight, &mlp, cfg.gin_eps, groups.as_ref())?.relu();
        h = dropout(h, cfg.dropout, ctx.rng, ctx.training)?;
    }
    Ok(h)
}

/// Edge logits from `MLP(concat(emb_src, emb_dst))`. The first layer is split
/// into source and destination blocks so it can be applied per node.
pub fn extract_attention<'t>(
    input: &GraphInput,
    emb: Var<'t>,
    ext: &Params<'t>,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Attention<'t>> {
    if emb.shape() != (input.num_nodes(), cfg.hidden_dim) {
        return Err(Error::input(format!(
            "embeddings {:?} do not match {} nodes x {}",
            emb.shape(),
            input.num_nodes(),
            cfg.hidden_dim
        )));
    }
    let from_src = emb.matmul(ext.get("w_src"));
    let from_dst = emb.matmul(ext.get("w_dst"));
    let mut hidden = (from_src.gather_rows(Rc::clone(&input.edges.src))
        + from_dst.gather_rows(Rc::clone(&input.edges.dst)))
    .add_row(ext.get("b1"));
    if cfg.instance_norm {
        hidden = nn::instance_norm(hidden, &input.edge_groups())?;
    }
    let hidden = hidden.relu();
    let hidden = dropout(hidden, cfg.extractor_dropout, ctx.rng, ctx.training)?;
    let logits = hidden.matmul(ext.get("w2")).add_row(ext.get("b2"));
    Ok(Attention {
        logits,
        probs: logits.sigmoid(),
    })
}

/// Mean pooling per graph followed by the linear head.
pub fn readout<'t>(input: &GraphInput, emb: Var<'t>, clf: &Params<'t>) -> Result<Var<'t>> {
    let tape = emb.tape();
    let pooled = emb
        .scatter_add_rows(Rc::clone(&input.graph_of_node), input.num_graphs)
        .scale_rows(tape.constant((*input.inv_counts).clone()));
    nn::linear(pooled, clf.get("head.w"), clf.get("head.b"))
}

/// Class logits with the given edge weights (`None` = all ones).
pub fn classify<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    clf: &Params<'t>,
    edge_weight: Option<Var<'t>>,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Var<'t>> {
    let emb = embed_nodes(tape, input, clf, edge_weight, cfg, ctx)?;
    readout(input, emb, clf)
}

/// Pass 1: unweighted embeddings and attention.
pub fn attention<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    clf: &Params<'t>,
    ext: &Params<'t>,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Attention<'t>> {
    let emb = embed_nodes(tape, input, clf, None, cfg, ctx)?;
    extract_attention(input, emb, ext, cfg, ctx)
}

/// LIN forward: attention probabilities used directly as edge weights.
pub fn forward_lin<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    clf: &Params<'t>,
    ext: &Params<'t>,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Forward<'t>> {
    let att = attention(tape, input, clf, ext, cfg, ctx)?;
    let weight = cfg.use_edge_attention.then_some(att.probs);
    let logits = classify(tape, input, clf, weight, cfg, ctx)?;
    Ok(Forward {
        logits,
        attention: att,
    })
}

/// Draws `copies` hard masks, one Bernoulli draw per undirected edge shared
/// by both orientations. The keep probability of a pair is the mean of its
/// two orientations. Replica-major layout.
pub fn sample_masks(probs: &[f64], reverse: &[usize], copies: usize, rng: &mut SeededRng) -> Mat {
    let m = probs.len();
    let mut out = Mat::zeros((m * copies, 1));
    for c in 0..copies {
        for i in 0..m {
            let j = reverse[i];
            if j < i {
                out[[c * m + i, 0]] = out[[c * m + j, 0]];
                continue;
            }
            let p = 0.5 * (probs[i] + probs[j]);
            out[[c * m + i, 0]] = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Average of class-probability vectors over `k` sampled hard masks, returned
/// as log-probabilities. Gradients reach `probs` through a straight-through
/// estimator.
pub fn sam_average<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    clf: &Params<'t>,
    probs: Var<'t>,
    k: usize,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Var<'t>> {
    if k == 0 {
        return Err(Error::config("SAM needs at least one sample"));
    }
    let m = input.num_edges();
    if probs.shape() != (m, 1) {
        return Err(Error::input("attention length does not match edge count"));
    }
    let hard = sample_masks(probs.value().as_slice().expect("standard layout"), &input.reverse, k, ctx.rng);
    let tiled = input.tile(k);
    let tile_idx: Vec<usize> = (0..k).flat_map(|_| 0..m).collect();
    let mask = probs.gather_rows(Rc::new(tile_idx)).straight_through(hard);
    let logits = classify(tape, &tiled, clf, Some(mask), cfg, ctx)?;
    let class_probs = nn::log_softmax(logits).exp();
    let g = input.num_graphs;
    let owner: Vec<usize> = (0..k).flat_map(|_| 0..g).collect();
    let mean = class_probs
        .scatter_add_rows(Rc::new(owner), g)
        .scale(1.0 / k as f64);
    Ok(mean.clamp(1e-300, 1.0).ln())
}

/// SAM forward with `k` masks drawn from the extractor's attention.
pub fn forward_sam<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    clf: &Params<'t>,
    ext: &Params<'t>,
    k: usize,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Forward<'t>> {
    if k == 0 {
        return Err(Error::config("SAM needs at least one sample"));
    }
    let att = attention(tape, input, clf, ext, cfg, ctx)?;
    let logits = if cfg.use_edge_attention {
        sam_average(tape, input, clf, att.probs, k, cfg, ctx)?
    } else {
        classify(tape, input, clf, None, cfg, ctx)?
    };
    Ok(Forward {
        logits,
        attention: att,
    })
}

/// Dispatches on the configured variant.
pub fn forward<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    clf: &Params<'t>,
    ext: &Params<'t>,
    cfg: &ModelConfig,
    ctx: &mut Ctx<'_>,
) -> Result<Forward<'t>> {
    match cfg.variant {
        Variant::Lin => forward_lin(tape, input, clf, ext, cfg, ctx),
        Variant::Sam => forward_sam(tape, input, clf, ext, cfg.sam_samples, cfg, ctx),
    }
}

/// Mean Bernoulli KL divergence `KL(Bern(a) ‖ Bern(r))` over edges, with `a`
/// clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub fn info_loss<'t>(probs: Var<'t>, r: f64) -> Result<Var<'t>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::config(format!("sparsity target r={r} outside (0, 1)")));
    }
    if probs.shape().0 == 0 {
        return Err(Error::input("information loss over zero edges"));
    }
    let a = probs.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let not_a = a.one_minus();
    let kl = a * a.ln().add_scalar(-r.ln()) + not_a * not_a.ln().add_scalar(-(1.0 - r).ln());
    Ok(kl.mean())
}

/// `pred + λ · info`
pub fn gmt_loss<'t>(pred: Var<'t>, info: Var<'t>, lambda: f64) -> Var<'t> {
    if lambda == 0.0 {
        pred
    } else {
        pred + info.scale(lambda)
    }
}

/// Largest-logit class per row.
pub fn argmax_rows(m: &Mat) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
