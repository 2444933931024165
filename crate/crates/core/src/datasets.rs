//! Benchmark datasets: BA-2Motifs and SP-Motif generators, TU-format
//! ingestion for MUTAG, and stratified splits.
//!
//! Generator size constants (base sizes, motif shapes, feature width, graph
//! counts) are configuration defaults, not fixed properties of the
//! benchmarks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Ba2Motifs,
    SpMotif,
    Mutag,
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Ba2Motifs => "ba2motifs",
            DatasetName::SpMotif => "spmotif",
            DatasetName::Mutag => "mutag",
        })
    }
}

impl FromStr for DatasetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ba2motifs" => Ok(DatasetName::Ba2Motifs),
            "spmotif" => Ok(DatasetName::SpMotif),
            "mutag" => Ok(DatasetName::Mutag),
            _ => Err(Error::config(format!(
                "unknown dataset '{s}' (ba2motifs|spmotif|mutag)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: DatasetName,
    /// Probability that a training graph's base type matches its label
    /// (SP-Motif only).
    pub bias: f64,
    pub num_graphs: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    pub feature_dim: usize,
    /// Barabási–Albert base size for BA-2Motifs.
    pub ba_base_nodes: usize,
    /// Directory with TU-format files (MUTAG only).
    pub tu_dir: Option<PathBuf>,
    /// Optional per-edge ground-truth sidecar (MUTAG only).
    pub truth_path: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn ba2motifs(seed: u64) -> Self {
        DatasetSpec {
            name: DatasetName::Ba2Motifs,
            bias: 0.0,
            num_graphs: 1000,
            split: [0.8, 0.1, 0.1],
            seed,
            feature_dim: 10,
            ba_base_nodes: 20,
            tu_dir: None,
            truth_path: None,
        }
    }

    pub fn spmotif(bias: f64, seed: u64) -> Self {
        DatasetSpec {
            name: DatasetName::SpMotif,
            bias,
            num_graphs: 9000,
            ..Self::ba2motifs(seed)
        }
    }

    pub fn mutag(dir: impl Into<PathBuf>, seed: u64) -> Self {
        DatasetSpec {
            name: DatasetName::Mutag,
            num_graphs: 188,
            tu_dir: Some(dir.into()),
            ..Self::ba2motifs(seed)
        }
    }

    /// True for the bias levels used in published SP-Motif comparisons.
    pub fn is_reference_bias(&self) -> bool {
        [0.5, 0.7, 0.9].iter().any(|b| (b - self.bias).abs() < 1e-12)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f < 0.0) {
            return Err(Error::config(format!(
                "split fractions {:?} must be non-negative and sum to 1",
                self.split
            )));
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::config(format!("bias {} outside [0, 1]", self.bias)));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        match self.name {
            DatasetName::Ba2Motifs => {
                if self.num_graphs == 0 || self.num_graphs % 2 != 0 {
                    return Err(Error::config("BA-2Motifs needs a positive even graph count"));
                }
                if self.ba_base_nodes < 2 {
                    return Err(Error::config("BA base needs at least two nodes"));
                }
            }
            DatasetName::SpMotif => {
                if self.num_graphs < 3 {
                    return Err(Error::config("SP-Motif needs at least three graphs"));
                }
            }
            DatasetName::Mutag => {
                if self.tu_dir.is_none() {
                    return Err(Error::config("MUTAG needs a TU directory"));
                }
            }
        }
        Ok(())
    }
}

fn constant_features(n: usize, dim: usize) -> Mat {
    Mat::ones((n, dim))
}

/// Preferential-attachment tree (`m = 1`) on `n` nodes.
pub fn barabasi_albert_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return pairs;
    }
    pairs.push((0, 1));
    // every endpoint occurrence, so a uniform pick is degree-proportional
    let mut ends = vec![0, 1];
    for v in 2..n {
        let t = ends[rng.gen_range(0..ends.len())];
        pairs.push((t, v));
        ends.push(t);
        ends.push(v);
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motif {
    Cycle,
    House,
    Crane,
}

impl Motif {
    pub const ALL: [Motif; 3] = [Motif::Cycle, Motif::House, Motif::Crane];

    /// Five nodes; edges over local indices.
    pub fn edges(self) -> &'static [(usize, usize)] {
        match self {
            Motif::Cycle => &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)],
            // square 0-1-2-3 with roof node 4 over edge 0-1
            Motif::House => &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 0), (4, 1)],
            // square with one diagonal and a tail
            Motif::Crane => &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (2, 4)],
        }
    }

    pub const NODES: usize = 5;
}

/// Appends a motif to a base graph via one bridge edge between random nodes
/// of each part. Returns all undirected pairs and their truth bits.
fn attach_motif<R: Rng + ?Sized>(
    base_nodes: usize,
    base_pairs: Vec<(usize, usize)>,
    motif: Motif,
    rng: &mut R,
) -> (usize, Vec<(usize, usize)>, Vec<bool>) {
    let mut pairs = base_pairs;
    let mut truth = vec![false; pairs.len()];
    for &(u, v) in motif.edges() {
        pairs.push((base_nodes + u, base_nodes + v));
        truth.push(true);
    }
    let anchor = rng.gen_range(0..base_nodes);
    let entry = base_nodes + rng.gen_range(0..Motif::NODES);
    pairs.push((anchor, entry));
    truth.push(false);
    (base_nodes + Motif::NODES, pairs, truth)
}

/// BA-2Motifs: a BA tree with a 5-cycle (label 0) or a house (label 1).
/// Labels alternate, so any even count is exactly balanced.
pub fn gen_ba2motifs(spec: &DatasetSpec, rng: &mut SeededRng) -> Result<Vec<Graph>> {
    spec.validate()?;
    (0..spec.num_graphs)
        .map(|i| {
            let label = i % 2;
            let motif = if label == 0 { Motif::Cycle } else { Motif::House };
            let base = barabasi_albert_tree(spec.ba_base_nodes, rng);
            let (n, pairs, truth) = attach_motif(spec.ba_base_nodes, base, motif, rng);
            Graph::from_undirected(
                n,
                &pairs,
                constant_features(n, spec.feature_dim),
                label,
                Some(&truth),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Base {
    Tree,
    Ladder,
    Wheel,
}

impl Base {
    pub const ALL: [Base; 3] = [Base::Tree, Base::Ladder, Base::Wheel];

    pub fn index(self) -> usize {
        match self {
            Base::Tree => 0,
            Base::Ladder => 1,
            Base::Wheel => 2,
        }
    }

    /// Random instance: tree with 9–15 nodes, ladder with 4–7 rungs, wheel
    /// with a 6–11 node rim.
    pub fn build<R: Rng + ?Sized>(self, rng: &mut R) -> (usize, Vec<(usize, usize)>) {
        match self {
            Base::Tree => {
                let n = rng.gen_range(9..=15);
                let pairs = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
                (n, pairs)
            }
            Base::Ladder => {
                let rungs = rng.gen_range(4..=7);
                let mut pairs = Vec::new();
                for i in 0..rungs {
                    pairs.push((i, rungs + i));
                    if i + 1 < rungs {
                        pairs.push((i, i + 1));
                        pairs.push((rungs + i, rungs + i + 1));
                    }
                }
                (2 * rungs, pairs)
            }
            Base::Wheel => {
                let rim = rng.gen_range(6..=11);
                let mut pairs = Vec::new();
                for i in 1..=rim {
                    pairs.push((0, i));
                    pairs.push((i, if i == rim { 1 } else { i + 1 }));
                }
                (rim + 1, pairs)
            }
        }
    }
}

/// An SP-Motif graph with the base type it was built on.
#[derive(Debug, Clone)]
pub struct SpMotifGraph {
    pub graph: Graph,
    pub base: Base,
}

/// SP-Motif: label = motif type (cycle, house, crane). With `biased`, the
/// base index equals the label with probability `spec.bias` and is otherwise
/// drawn uniformly from the two other bases; without it the base is uniform.
/// Labels cycle through 0, 1, 2 so classes stay balanced.
pub fn gen_spmotif(
    spec: &DatasetSpec,
    count: usize,
    biased: bool,
    rng: &mut SeededRng,
) -> Result<Vec<SpMotifGraph>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let label = i % 3;
            let base = if !biased {
                Base::ALL[rng.gen_range(0..3)]
            } else if rng.gen::<f64>() < spec.bias {
                Base::ALL[label]
            } else {
                let others: Vec<Base> = Base::ALL.into_iter().filter(|b| b.index() != label).collect();
                others[rng.gen_range(0..2)]
            };
            let (bn, bpairs) = base.build(rng);
            let (n, pairs, truth) = attach_motif(bn, bpairs, Motif::ALL[label], rng);
            let graph = Graph::from_undirected(
                n,
                &pairs,
                constant_features(n, spec.feature_dim),
                label,
                Some(&truth),
            )?;
            Ok(SpMotifGraph { graph, base })
        })
        .collect()
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
}

impl Splits {
    pub fn num_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|g| g.label() + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.train.first().map_or(0, Graph::feature_dim)
    }

    pub fn all(&self) -> impl Iterator<Item = &Graph> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Deterministic class-stratified shuffle split.
pub fn split(graphs: Vec<Graph>, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::config(format!("invalid split fractions {fractions:?}")));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in graphs.iter().enumerate() {
        by_class.entry(g.label()).or_default().push(i);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * fractions[0]).round() as usize;
        let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
        parts[0].extend(&idx[..n_train]);
        parts[1].extend(&idx[n_train..n_train + n_val]);
        parts[2].extend(&idx[n_train + n_val..]);
    }
    for (name, p) in ["train", "validation", "test"].iter().zip(&parts) {
        if p.is_empty() {
            return Err(Error::config(format!(
                "split {fractions:?} leaves the {name} part empty"
            )));
        }
    }
    for p in &mut parts {
        p.shuffle(&mut rng);
    }
    let mut slots: Vec<Option<Graph>> = graphs.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Graph> {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    Ok(Splits {
        train: take(&parts[0]),
        val: take(&parts[1]),
        test: take(&parts[2]),
    })
}

/// Builds the dataset described by `spec`.
///
/// SP-Motif produces disjoint sets sized by the split fractions: train and
/// validation follow the bias, test uses uniform base assignment.
pub fn generate(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    match spec.name {
        DatasetName::Ba2Motifs => split(gen_ba2motifs(spec, &mut rng)?, spec.split, spec.seed),
        DatasetName::SpMotif => {
            let n = spec.num_graphs as f64;
            let n_train = (n * spec.split[0]).round() as usize;
            let n_val = (n * spec.split[1]).round() as usize;
            let n_test = spec.num_graphs.saturating_sub(n_train + n_val);
            if n_train == 0 || n_val == 0 || n_test == 0 {
                return Err(Error::config("SP-Motif split leaves a part empty"));
            }
            let strip = |v: Vec<SpMotifGraph>| v.into_iter().map(|s| s.graph).collect::<Vec<_>>();
            let mut train = strip(gen_spmotif(spec, n_train, true, &mut rng)?);
            let mut val = strip(gen_spmotif(spec, n_val, true, &mut rng)?);
            let mut test = strip(gen_spmotif(spec, n_test, false, &mut rng)?);
            train.shuffle(&mut rng);
            val.shuffle(&mut rng);
            test.shuffle(&mut rng);
            Ok(Splits { train, val, test })
        }
        DatasetName::Mutag => {
            let dir = spec.tu_dir.as_deref().expect("validated");
            let graphs = load_mutag(dir, spec.truth_path.as_deref())?;
            split(graphs, spec.split, spec.seed)
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::ingestion(path, 0, e.to_string()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn parse_int(path: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse()
        .map_err(|_| Error::ingestion(path, line, format!("expected an integer, got '{s}'")))
}

/// Locates `<prefix>_A.txt` in a TU dataset directory.
fn tu_prefix(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|e| Error::ingestion(dir, 0, e.to_string()))?;
    let mut found = BTreeSet::new();
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(prefix) = name.strip_suffix("_A.txt") {
            found.insert(prefix.to_string());
        }
    }
    match found.len() {
        1 => Ok(found.into_iter().next().unwrap()),
        0 => Err(Error::ingestion(dir, 0, "no <name>_A.txt adjacency file")),
        _ => Err(Error::ingestion(dir, 0, "several <name>_A.txt files")),
    }
}

/// Loads a TU-format graph classification dataset (MUTAG layout):
///
/// * `<P>_A.txt`: one `u, v` per line, 1-based global node ids;
/// * `<P>_graph_indicator.txt`: graph id (1-based) of node `i` on line `i`;
/// * `<P>_graph_labels.txt`: one label per graph; distinct values are mapped
///   to `0..C` in ascending order (MUTAG's `-1, 1` become `0, 1`);
/// * `<P>_node_labels.txt`: integer node label, one-hot encoded as features;
/// * `<P>_edge_labels.txt` (optional): integer per adjacency line, one-hot
///   encoded as edge features.
///
/// `truth_path`, when given, holds one `0`/`1` per adjacency line marking
/// ground-truth explanation edges. Missing reverse orientations are added
/// with the same bits; an undirected edge is marked if either orientation is.
pub fn load_mutag(dir: &Path, truth_path: Option<&Path>) -> Result<Vec<Graph>> {
    let prefix = tu_prefix(dir)?;
    let file = |suffix: &str| dir.join(format!("{prefix}_{suffix}.txt"));
    let (a_path, ind_path, gl_path, nl_path, el_path) = (
        file("A"),
        file("graph_indicator"),
        file("graph_labels"),
        file("node_labels"),
        file("edge_labels"),
    );

    let indicator: Vec<usize> = read_lines(&ind_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let g = parse_int(&ind_path, i + 1, l)?;
            if g < 1 {
                return Err(Error::ingestion(&ind_path, i + 1, "graph ids are 1-based"));
            }
            Ok(g as usize - 1)
        })
        .collect::<Result<_>>()?;
    let num_nodes = indicator.len();
    if indicator.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::ingestion(&ind_path, 0, "nodes must be grouped by graph"));
    }

    let raw_labels: Vec<i64> = read_lines(&gl_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(&gl_path, i + 1, l))
        .collect::<Result<_>>()?;
    let num_graphs = raw_labels.len();
    if indicator.iter().any(|&g| g >= num_graphs) {
        return Err(Error::ingestion(
            &ind_path,
            0,
            format!("graph id beyond the {num_graphs} labels"),
        ));
    }
    let label_values: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let label_index: HashMap<i64, usize> =
        label_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    let node_labels: Vec<usize> = read_lines(&nl_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let v = parse_int(&nl_path, i + 1, l)?;
            if v < 0 {
                return Err(Error::ingestion(&nl_path, i + 1, "negative node label"));
            }
            Ok(v as usize)
        })
        .collect::<Result<_>>()?;
    if node_labels.len() != num_nodes {
        return Err(Error::ingestion(
            &nl_path,
            node_labels.len(),
            format!("{} node labels for {num_nodes} nodes", node_labels.len()),
        ));
    }
    let feat_dim = node_labels.iter().max().map_or(1, |&m| m + 1);

    let a_lines = read_lines(&a_path)?;
    let mut adjacency = Vec::with_capacity(a_lines.len());
    for (i, l) in a_lines.iter().enumerate() {
        let mut it = l.split(',');
        let (Some(u), Some(v), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::ingestion(&a_path, i + 1, "expected 'u, v'"));
        };
        let (u, v) = (parse_int(&a_path, i + 1, u)?, parse_int(&a_path, i + 1, v)?);
        if u < 1 || v < 1 || u as usize > num_nodes || v as usize > num_nodes {
            return Err(Error::ingestion(&a_path, i + 1, "node id out of range"));
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if indicator[u] != indicator[v] {
            return Err(Error::ingestion(&a_path, i + 1, "edge crosses graphs"));
        }
        adjacency.push((u, v));
    }

    let edge_labels: Option<Vec<usize>> = if el_path.exists() {
        let v: Vec<usize> = read_lines(&el_path)?
            .iter()
            .enumerate()
            .map(|(i, l)| Ok(parse_int(&el_path, i + 1, l)?.max(0) as usize))
            .collect::<Result<_>>()?;
        if v.len() != adjacency.len() {
            return Err(Error::ingestion(
                &el_path,
                v.len(),
                "edge label count differs from adjacency lines",
            ));
        }
        Some(v)
    } else {
        None
    };
    let edge_dim = edge_labels
        .as_ref()
        .map(|v| v.iter().max().map_or(1, |&m| m + 1));

    let truth: Option<Vec<bool>> = match truth_path {
        Some(p) => {
            let v: Vec<bool> = read_lines(p)?
                .iter()
                .enumerate()
                .map(|(i, l)| match l.as_str() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::ingestion(p, i + 1, format!("expected 0 or 1, got '{other}'"))),
                })
                .collect::<Result<_>>()?;
            if v.len() != adjacency.len() {
                return Err(Error::ingestion(
                    p,
                    v.len(),
                    "truth bit count differs from adjacency lines",
                ));
            }
            Some(v)
        }
        None => None,
    };

    let mut first_node = vec![usize::MAX; num_graphs];
    let mut node_count = vec![0usize; num_graphs];
    for (i, &g) in indicator.iter().enumerate() {
        first_node[g] = first_node[g].min(i);
        node_count[g] += 1;
    }

    // Per graph: local (u, v) -> (truth bit, edge label), merged over orientations.
    let mut per_graph: Vec<BTreeMap<(usize, usize), (bool, Option<usize>)>> =
        vec![BTreeMap::new(); num_graphs];
    let mut order: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (i, &(u, v)) in adjacency.iter().enumerate() {
        let g = indicator[u];
        let (lu, lv) = (u - first_node[g], v - first_node[g]);
        let bit = truth.as_ref().is_some_and(|t| t[i]);
        let el = edge_labels.as_ref().map(|e| e[i]);
        for key in [(lu, lv), (lv, lu)] {
            match per_graph[g].get_mut(&key) {
                Some(entry) => entry.0 |= bit,
                None => {
                    per_graph[g].insert(key, (bit, el));
                    order[g].push(key);
                }
            }
        }
    }

    (0..num_graphs)
        .map(|g| {
            let n = node_count[g];
            let mut x = Mat::zeros((n, feat_dim));
            for i in 0..n {
                x[[i, node_labels[first_node[g] + i]]] = 1.0;
            }
            let edges = order[g].clone();
            let mask = truth.as_ref().map(|_| {
                edges
                    .iter()
                    .map(|k| per_graph[g][k].0 || per_graph[g][&(k.1, k.0)].0)
                    .collect::<Vec<bool>>()
            });
            let ef = edge_dim.map(|d| {
                let mut m = Mat::zeros((edges.len(), d));
                for (i, k) in edges.iter().enumerate() {
                    if let Some(l) = per_graph[g][k].1 {
                        m[[i, l]] = 1.0;
                    }
                }
                m
            });
            let label = label_index[&raw_labels[g]];
            Graph::new(n, edges, x, ef, label, mask)
                .map_err(|e| Error::ingestion(&a_path, 0, format!("graph {}: {e}", g + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ba(n: usize, seed: u64) -> Vec<Graph> {
        let spec = DatasetSpec {
            num_graphs: n,
            ..DatasetSpec::ba2motifs(seed)
        };
        gen_ba2motifs(&spec, &mut SeededRng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn ba2motifs_shape() {
        let graphs = small_ba(200, 1);
        let ones = graphs.iter().filter(|g| g.label() == 1).count();
        assert_eq!(ones, 100);
        for g in &graphs {
            assert_eq!(g.node_count(), 25);
            let truth_pairs = g.truth_mask().unwrap().iter().filter(|&&b| b).count() / 2;
            assert_eq!(truth_pairs, if g.label() == 1 { 6 } else { 5 });
            // BA tree (19) + motif + bridge
            assert_eq!(g.edge_count() / 2, 19 + truth_pairs + 1);
            assert!(g.node_features().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn ba2motifs_rejects_odd_count() {
        let spec = DatasetSpec {
            num_graphs: 11,
            ..DatasetSpec::ba2motifs(0)
        };
        assert!(gen_ba2motifs(&spec, &mut SeededRng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn ba_tree_is_a_tree() {
        let mut rng = SeededRng::seed_from_u64(3);
        let pairs = barabasi_albert_tree(20, &mut rng);
        assert_eq!(pairs.len(), 19);
        let g = Graph::from_undirected(20, &pairs, Mat::ones((20, 1)), 0, None).unwrap();
        let sub = crate::graph::k_hop_subgraph(&g, 0, 20).unwrap();
        assert_eq!(sub.graph.node_count(), 20);
    }

    #[test]
    fn split_sizes_and_stratification() {
        let graphs = small_ba(1000, 2);
        let s = split(graphs, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (800, 100, 100));
        for c in 0..2 {
            let n = s.all().filter(|g| g.label() == c).count() as f64;
            let t = s.train.iter().filter(|g| g.label() == c).count() as f64;
            assert!((t - 0.8 * n).abs() <= 1.0);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let a = split(small_ba(100, 3), [0.8, 0.1, 0.1], 9).unwrap();
        let b = split(small_ba(100, 3), [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_empty_parts() {
        assert!(split(small_ba(4, 0), [0.8, 0.1, 0.1], 0).is_err());
        assert!(split(small_ba(100, 0), [0.8, 0.3, 0.1], 0).is_err());
    }

    fn spec_sp(bias: f64) -> DatasetSpec {
        DatasetSpec::spmotif(bias, 0)
    }

    #[test]
    fn spmotif_full_bias_aligns_every_base() {
        let mut rng = SeededRng::seed_from_u64(4);
        let g = gen_spmotif(&spec_sp(1.0), 300, true, &mut rng).unwrap();
        assert!(g.iter().all(|s| s.base.index() == s.graph.label()));
    }

    #[test]
    fn spmotif_third_bias_is_independent() {
        let mut rng = SeededRng::seed_from_u64(5);
        let g = gen_spmotif(&spec_sp(1.0 / 3.0), 10_000, true, &mut rng).unwrap();
        let mut table = [[0f64; 3]; 3];
        for s in &g {
            table[s.graph.label()][s.base.index()] += 1.0;
        }
        let n = g.len() as f64;
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..3).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let mut chi2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let e = rows[i] * cols[j] / n;
                chi2 += (table[i][j] - e).powi(2) / e;
            }
        }
        // chi-square, 4 degrees of freedom, alpha = 0.01
        assert!(chi2 < 13.277, "chi2 = {chi2}");
    }

    #[test]
    fn spmotif_bias_rate_within_three_sigma() {
        for &b in &[0.5, 0.7, 0.9] {
            let mut rng = SeededRng::seed_from_u64(6);
            let n = 3000;
            let g = gen_spmotif(&spec_sp(b), n, true, &mut rng).unwrap();
            let hits = g.iter().filter(|s| s.base.index() == s.graph.label()).count() as f64;
            let sigma = (n as f64 * b * (1.0 - b)).sqrt();
            assert!((hits - b * n as f64).abs() <= 3.0 * sigma, "b={b} hits={hits}");
        }
    }

    #[test]
    fn spmotif_truth_is_motif_only() {
        let mut rng = SeededRng::seed_from_u64(8);
        for s in gen_spmotif(&spec_sp(0.7), 1000, true, &mut rng).unwrap() {
            let g = &s.graph;
            let motif_start = g.node_count() - Motif::NODES;
            let label = g.label();
            let mut truth_pairs = 0;
            for (i, &(u, v)) in g.edges().iter().enumerate() {
                let inside = u >= motif_start && v >= motif_start;
                assert_eq!(g.truth_mask().unwrap()[i], inside);
                truth_pairs += usize::from(inside);
            }
            assert_eq!(truth_pairs / 2, Motif::ALL[label].edges().len());
        }
    }

    #[test]
    fn spmotif_generate_uses_unbiased_test() {
        let spec = DatasetSpec {
            num_graphs: 600,
            ..DatasetSpec::spmotif(0.9, 1)
        };
        let s = generate(&spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (480, 60, 60));
        assert_eq!(s.num_classes(), 3);
    }

    fn write_tu(dir: &Path) {
        // graph 1: triangle 1-2-3 ; graph 2: edge 4-5 (only one orientation listed)
        fs::write(dir.join("T_A.txt"), "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n").unwrap();
        fs::write(dir.join("T_graph_indicator.txt"), "1\n1\n1\n2\n2\n").unwrap();
        fs::write(dir.join("T_graph_labels.txt"), "1\n-1\n").unwrap();
        fs::write(dir.join("T_node_labels.txt"), "0\n2\n1\n0\n0\n").unwrap();
    }

    #[test]
    fn tu_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        write_tu(dir.path());
        fs::write(dir.path().join("truth.txt"), "1\n1\n0\n0\n0\n0\n1\n").unwrap();
        let graphs = load_mutag(dir.path(), Some(&dir.path().join("truth.txt"))).unwrap();
        assert_eq!(graphs.len(), 2);
        assert_eq!(graphs[0].label(), 1);
        assert_eq!(graphs[1].label(), 0);
        assert_eq!(graphs[0].feature_dim(), 3);
        for g in &graphs {
            for row in g.node_features().rows() {
                assert_eq!(row.sum(), 1.0);
            }
            // Graph::new already enforces symmetric edges; check counts
            assert_eq!(g.edge_count() % 2, 0);
        }
        assert_eq!(graphs[1].edge_count(), 2);
        assert_eq!(graphs[1].truth_mask().unwrap(), &[true, true]);
        assert_eq!(
            graphs[0].truth_mask().unwrap().iter().filter(|&&b| b).count(),
            2
        );
    }

    #[test]
    fn tu_errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        write_tu(dir.path());
        fs::write(dir.path().join("T_A.txt"), "1, 2\n2, x\n").unwrap();
        let err = load_mutag(dir.path(), None).unwrap_err();
        match err {
            Error::Ingestion { file, line, .. } => {
                assert!(file.ends_with("T_A.txt"));
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
        fs::remove_file(dir.path().join("T_node_labels.txt")).unwrap();
        fs::write(dir.path().join("T_A.txt"), "1, 2\n").unwrap();
        let err = load_mutag(dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("T_node_labels.txt"), "{err}");
    }

    /// Set `METAGMT_MUTAG_DIR` to a directory holding the original MUTAG TU
    /// files to run this check.
    #[test]
    fn mutag_has_188_graphs_when_available() {
        let Ok(dir) = std::env::var("METAGMT_MUTAG_DIR") else {
            eprintln!("METAGMT_MUTAG_DIR not set; skipping");
            return;
        };
        let graphs = load_mutag(Path::new(&dir), None).unwrap();
        assert_eq!(graphs.len(), 188);
    }
}
