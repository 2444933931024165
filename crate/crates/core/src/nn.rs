//! Parameter containers and differentiable layers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::rc::Rc;

use indexmap::IndexMap;
use rand::Rng;

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter tensors for one model component.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: IndexMap<String, Mat>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::input(format!("duplicate parameter name '{name}'")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mat)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Mat::len).sum()
    }

    /// Leaf variables for every entry: the functional copy `φ⁽⁰⁾ = θ`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Params<'t> {
        Params {
            names: Rc::new(self.entries.keys().cloned().collect()),
            vars: self.entries.values().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    /// Same entries, but as constants that never receive gradients.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Params<'t> {
        Params {
            names: Rc::new(self.entries.keys().cloned().collect()),
            vars: self
                .entries
                .values()
                .map(|v| tape.constant(v.clone()))
                .collect(),
        }
    }

    /// Flattens all entries into one vector, in insertion order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.values().flat_map(|m| m.iter().copied()).collect()
    }

    /// Inverse of [`ParameterStore::flatten`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut k = 0;
        for m in self.entries.values_mut() {
            for v in m.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }
}

/// Parameters living on a tape; possibly differentiable expressions of
/// earlier parameters (a functional copy).
#[derive(Clone)]
pub struct Params<'t> {
    names: Rc<Vec<String>>,
    vars: Vec<Var<'t>>,
}

impl std::fmt::Debug for Params<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.names.iter().zip(&self.vars))
            .finish()
    }
}

impl<'t> Params<'t> {
    pub fn get(&self, name: &str) -> Var<'t> {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.vars[i],
            None => panic!("unknown parameter '{name}'"),
        }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Current values as a store.
    pub fn to_store(&self) -> ParameterStore {
        let mut store = ParameterStore::new();
        for (n, v) in self.names.iter().zip(&self.vars) {
            store
                .insert(n.clone(), (*v.value()).clone())
                .expect("names are unique");
        }
        store
    }
}

/// Outcome of one differentiable gradient step.
pub struct Adapted<'t> {
    pub params: Params<'t>,
    /// `false` when the loss did not depend on any parameter; the params
    /// are then returned unchanged.
    pub dependent: bool,
}

/// One SGD step `φ ← φ - α ∇φ L` recorded on the tape.
///
/// With `second_order` the gradient is itself a recorded expression, so a
/// later backward pass through the new parameters reaches the originals
/// through the Hessian term. Without it the gradient is treated as a
/// constant (first-order approximation).
pub fn adapt_step<'t>(
    params: &Params<'t>,
    loss: Var<'t>,
    alpha: f64,
    second_order: bool,
) -> Result<Adapted<'t>> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::config(format!("inner learning rate {alpha} must be >= 0")));
    }
    if loss.shape() != (1, 1) {
        return Err(Error::input("adapt_step needs a scalar loss"));
    }
    let tape = loss.tape();
    let grads = tape.grad(loss, &params.vars, second_order);
    let dependent = grads.iter().any(Option::is_some);
    if !dependent {
        log::warn!("adapt_step: loss does not depend on the adapted parameters");
    }
    if alpha == 0.0 || !dependent {
        return Ok(Adapted {
            params: params.clone(),
            dependent,
        });
    }
    let vars = params
        .vars
        .iter()
        .zip(grads)
        .map(|(&p, g)| match g {
            Some(g) => p - g.scale(alpha),
            None => p,
        })
        .collect();
    Ok(Adapted {
        params: Params {
            names: Rc::clone(&params.names),
            vars,
        },
        dependent,
    })
}

/// `x W + b`
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (n, d_in) = x.shape();
    let (wr, d_out) = w.shape();
    if wr != d_in || b.shape() != (1, d_out) {
        return Err(Error::input(format!(
            "linear: x {n}x{d_in}, W {wr}x{d_out}, b {:?}",
            b.shape()
        )));
    }
    Ok(x.matmul(w).add_row(b))
}

/// Uniform `±1/√fan_in` initialisation for a `fan_in × fan_out` weight.
pub fn init_weight<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Mat::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound))
}

pub fn init_bias<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Mat::from_shape_simple_fn((1, fan_out), || rng.gen_range(-bound..bound))
}

/// Source/destination index lists of a directed edge set.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    pub num_nodes: usize,
}

impl EdgeIndex {
    pub fn new(edges: &[(usize, usize)], num_nodes: usize) -> Self {
        EdgeIndex {
            src: Rc::new(edges.iter().map(|e| e.0).collect()),
            dst: Rc::new(edges.iter().map(|e| e.1).collect()),
            num_nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Two-layer perceptron `W2 · relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

impl<'t> Mlp<'t> {
    pub fn from_params(p: &Params<'t>, prefix: &str) -> Self {
        Mlp {
            w1: p.get(&format!("{prefix}.w1")),
            b1: p.get(&format!("{prefix}.b1")),
            w2: p.get(&format!("{prefix}.w2")),
            b2: p.get(&format!("{prefix}.b2")),
        }
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.forward_normed(x, None)
    }

    /// Like [`Mlp::forward`], with per-graph instance normalization of the
    /// hidden layer before the ReLU when `groups` is given.
    pub fn forward_normed(&self, x: Var<'t>, groups: Option<&NodeGroups>) -> Result<Var<'t>> {
        let mut h = linear(x, self.w1, self.b1)?;
        if let Some(g) = groups {
            h = instance_norm(h, g)?;
        }
        linear(h.relu(), self.w2, self.b2)
    }
}

/// Graph membership of the rows of a node matrix.
#[derive(Debug, Clone)]
pub struct NodeGroups {
    pub graph_of_node: Rc<Vec<usize>>,
    /// `1 / node_count` per graph (`G × 1`).
    pub inv_counts: Rc<Mat>,
    pub num_graphs: usize,
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-graph, per-channel standardization over nodes, without affine terms:
/// `(x − mean_g) / sqrt(var_g + NORM_EPS)` with the biased variance.
pub fn instance_norm<'t>(x: Var<'t>, groups: &NodeGroups) -> Result<Var<'t>> {
    if groups.graph_of_node.len() != x.shape().0 || groups.inv_counts.nrows() != groups.num_graphs {
        return Err(Error::input(format!(
            "instance_norm: {} rows, {} group entries",
            x.shape().0,
            groups.graph_of_node.len()
        )));
    }
    let inv = x.tape().constant((*groups.inv_counts).clone());
    let mean = |v: Var<'t>| {
        v.scatter_add_rows(Rc::clone(&groups.graph_of_node), groups.num_graphs)
            .scale_rows(inv)
            .gather_rows(Rc::clone(&groups.graph_of_node))
    };
    let centred = x - mean(x);
    let inv_std = mean(centred * centred).add_scalar(NORM_EPS).ln().scale(-0.5).exp();
    Ok(centred * inv_std)
}

/// Sum of `weight[e] · h[src[e]]` into each destination node.
pub fn aggregate<'t>(h: Var<'t>, edges: &EdgeIndex, edge_weight: Option<Var<'t>>) -> Var<'t> {
    let msgs = h.gather_rows(Rc::clone(&edges.src));
    let msgs = match edge_weight {
        Some(w) => msgs.scale_rows(w),
        None => msgs,
    };
    msgs.scatter_add_rows(Rc::clone(&edges.dst), edges.num_nodes)
}

/// GIN convolution `h'_v = MLP((1+ε) h_v + Σ_{(u,v)} w_uv h_u)`.
pub fn gin_conv<'t>(
    h: Var<'t>,
    edges: &EdgeIndex,
    edge_weight: Option<Var<'t>>,
    mlp: &Mlp<'t>,
    eps: f64,
    groups: Option<&NodeGroups>,
) -> Result<Var<'t>> {
    if h.shape().0 != edges.num_nodes {
        return Err(Error::input(format!(
            "gin_conv: {} feature rows for {} nodes",
            h.shape().0,
            edges.num_nodes
        )));
    }
    if let Some(w) = edge_weight {
        if w.shape() != (edges.len(), 1) {
            return Err(Error::input(format!(
                "gin_conv: edge weight shape {:?} for {} edges",
                w.shape(),
                edges.len()
            )));
        }
    }
    let own = if eps == 0.0 { h } else { h.scale(1.0 + eps) };
    let z = if edges.is_empty() {
        own
    } else {
        own + aggregate(h, edges, edge_weight)
    };
    mlp.forward_normed(z, groups)
}

/// Inverted dropout. In evaluation mode, or with `rate = 0`, it is the
/// identity.
pub fn dropout<'t, R: Rng + ?Sized>(
    x: Var<'t>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<Var<'t>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Mat::from_shape_simple_fn(x.shape(), || {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    Ok(x.diag_mul(Rc::new(mask)))
}

/// Row-wise log-softmax, stabilised by subtracting the (constant) row max.
pub fn log_softmax<'t>(logits: Var<'t>) -> Var<'t> {
    let z = logits.value();
    let (_, c) = z.dim();
    let neg_max = Mat::from_shape_fn(z.dim(), |(i, _)| {
        -z.row(i).fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    });
    let shifted = logits + logits.tape().constant(neg_max);
    let lse = shifted.exp().sum_cols().ln();
    shifted - lse.broadcast_cols(c)
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Mat> {
    let mut m = Mat::zeros((labels.len(), classes));
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::input(format!("label {y} outside [0, {classes})")));
        }
        m[[i, y]] = 1.0;
    }
    Ok(m)
}

/// Mean negative log-likelihood of the true class given row-wise
/// log-probabilities.
pub fn nll_loss<'t>(log_probs: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let (n, c) = log_probs.shape();
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for {n} rows", labels.len())));
    }
    let mask = one_hot(labels, c)?;
    Ok(log_probs.diag_mul(Rc::new(mask)).sum().scale(-1.0 / n as f64))
}

pub fn softmax_cross_entropy<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    nll_loss(log_softmax(logits), labels)
}

const TENSOR_MAGIC: &[u8; 8] = b"MGTENSOR";
const TENSOR_VERSION: u32 = 1;

/// Named tensors plus string metadata, as stored on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: Vec<(String, String)>,
    pub tensors: ParameterStore,
}

/// Writes the checkpoint container. Layout, all integers little-endian:
///
/// ```text
/// b"MGTENSOR"  u32 version=1
/// u32 n_meta   { u32 key_len, key utf8, u32 val_len, val utf8 } * n_meta
/// u32 n_tensor { u32 name_len, name utf8, u64 rows, u64 cols, f64 * rows*cols (row-major) } * n_tensor
/// ```
pub fn write_tensor_file<W: Write>(mut w: W, file: &TensorFile) -> std::io::Result<()> {
    fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        w.write_all(s.as_bytes())
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(file.metadata.len() as u32).to_le_bytes())?;
    for (k, v) in &file.metadata {
        put_str(&mut w, k)?;
        put_str(&mut w, v)?;
    }
    w.write_all(&(file.tensors.len() as u32).to_le_bytes())?;
    for (name, m) in file.tensors.iter() {
        put_str(&mut w, name)?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_tensor_file<R: Read>(mut r: R, path: &Path) -> Result<TensorFile> {
    let bad = |msg: &str| Error::format(path, msg);
    fn take<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)?;
        Ok(b)
    }
    let get_u32 = |r: &mut R| -> Result<u32> { Ok(u32::from_le_bytes(take::<4, R>(r)?)) };
    let get_str = |r: &mut R| -> Result<String> {
        let len = u32::from_le_bytes(take::<4, R>(r)?) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::format(path, "non-utf8 string"))
    };
    if &take::<8, R>(&mut r)? != TENSOR_MAGIC {
        return Err(bad("missing MGTENSOR magic"));
    }
    if get_u32(&mut r)? != TENSOR_VERSION {
        return Err(bad("unsupported version"));
    }
    let n_meta = get_u32(&mut r)?;
    let mut metadata = Vec::with_capacity(n_meta as usize);
    for _ in 0..n_meta {
        let k = get_str(&mut r)?;
        let v = get_str(&mut r)?;
        metadata.push((k, v));
    }
    let n_tensors = get_u32(&mut r)?;
    let mut tensors = ParameterStore::new();
    for _ in 0..n_tensors {
        let name = get_str(&mut r)?;
        let rows = u64::from_le_bytes(take::<8, R>(&mut r)?) as usize;
        let cols = u64::from_le_bytes(take::<8, R>(&mut r)?) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take::<8, R>(&mut r)?));
        }
        let m = Mat::from_shape_vec((rows, cols), data).map_err(|_| bad("bad tensor shape"))?;
        tensors.insert(name, m).map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(TensorFile { metadata, tensors })
}

pub fn save_tensor_file(path: &Path, file: &TensorFile) -> Result<()> {
    let f = File::create(path)?;
    write_tensor_file(BufWriter::new(f), file)?;
    Ok(())
}

pub fn load_tensor_file(path: &Path) -> Result<TensorFile> {
    let f = File::open(path)?;
    read_tensor_file(BufReader::new(f), path)
}
