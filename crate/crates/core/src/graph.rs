//! Graphs, batches and k-hop neighbourhoods.
//!
//! Undirected graphs are stored with both orientations of every edge. All
//! per-edge quantities (attention, masks, scores) are indexed by directed
//! edge position.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    node_features: Mat,
    edge_features: Option<Mat>,
    label: usize,
    truth_mask: Option<Vec<bool>>,
    reverse: Vec<usize>,
}

impl Graph {
    /// Builds a graph from directed edges, checking every structural
    /// invariant (index bounds, paired orientations, mask alignment).
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        node_features: Mat,
        edge_features: Option<Mat>,
        label: usize,
        truth_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if node_features.nrows() != node_count {
            return Err(Error::input(format!(
                "feature rows {} != node count {node_count}",
                node_features.nrows()
            )));
        }
        let mut position = HashMap::with_capacity(edges.len());
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= node_count || v >= node_count {
                return Err(Error::input(format!(
                    "edge {i} ({u},{v}) out of range for {node_count} nodes"
                )));
            }
            if position.insert((u, v), i).is_some() {
                return Err(Error::input(format!("duplicate edge ({u},{v})")));
            }
        }
        let mut reverse = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            match position.get(&(v, u)) {
                Some(&j) => reverse.push(j),
                None => {
                    return Err(Error::input(format!(
                        "edge ({u},{v}) has no reverse orientation"
                    )))
                }
            }
        }
        if let Some(mask) = &truth_mask {
            if mask.len() != edges.len() {
                return Err(Error::input(format!(
                    "truth mask length {} != edge count {}",
                    mask.len(),
                    edges.len()
                )));
            }
            for (i, &j) in reverse.iter().enumerate() {
                if mask[i] != mask[j] {
                    return Err(Error::input(format!(
                        "truth mask differs between orientations of edge {:?}",
                        edges[i]
                    )));
                }
            }
        }
        if let Some(ef) = &edge_features {
            if ef.nrows() != edges.len() {
                return Err(Error::input(format!(
                    "edge feature rows {} != edge count {}",
                    ef.nrows(),
                    edges.len()
                )));
            }
        }
        Ok(Graph {
            node_count,
            edges,
            node_features,
            edge_features,
            label,
            truth_mask,
            reverse,
        })
    }

    /// Builds a graph from undirected pairs; each pair `(u, v)` becomes the
    /// directed edges `(u, v)` then `(v, u)`.
    pub fn from_undirected(
        node_count: usize,
        pairs: &[(usize, usize)],
        node_features: Mat,
        label: usize,
        truth: Option<&[bool]>,
    ) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        for &(u, v) in pairs {
            edges.push((u, v));
            edges.push((v, u));
        }
        let mask = truth.map(|t| t.iter().flat_map(|&b| [b, b]).collect());
        Graph::new(node_count, edges, node_features, None, label, mask)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Mat {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn edge_features(&self) -> Option<&Mat> {
        self.edge_features.as_ref()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn truth_mask(&self) -> Option<&[bool]> {
        self.truth_mask.as_deref()
    }

    /// Index of the opposite orientation of each directed edge.
    pub fn reverse_index(&self) -> &[usize] {
        &self.reverse
    }

    /// One directed edge index per undirected edge: the orientation with
    /// `u <= v`, in edge order.
    pub fn canonical_edges(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(u, v))| u <= v)
            .map(|(i, _)| i)
            .collect()
    }

    /// Undirected adjacency lists (edge directions ignored).
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            if u != v {
                adj[v].push(u);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Several graphs merged into one disjoint union.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    node_features: Mat,
    edges: Vec<(usize, usize)>,
    edge_features: Option<Mat>,
    labels: Vec<usize>,
    truth_masks: Vec<Option<Vec<bool>>>,
    graph_of_node: Vec<usize>,
    node_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn from_graphs<G: std::borrow::Borrow<Graph>>(graphs: &[G]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::input("cannot batch zero graphs"));
        }
        let first = graphs[0].borrow();
        let dim = first.feature_dim();
        let edge_dim = first.edge_features().map(|e| e.ncols());
        let total_nodes: usize = graphs.iter().map(|g| g.borrow().node_count()).sum();
        let total_edges: usize = graphs.iter().map(|g| g.borrow().edge_count()).sum();

        let mut node_features = Mat::zeros((total_nodes, dim));
        let mut edge_features = edge_dim.map(|d| Mat::zeros((total_edges, d)));
        let mut edges = Vec::with_capacity(total_edges);
        let mut graph_of_node = Vec::with_capacity(total_nodes);
        let mut node_offsets = vec![0];
        let mut edge_offsets = vec![0];
        let mut labels = Vec::with_capacity(graphs.len());
        let mut truth_masks = Vec::with_capacity(graphs.len());

        for (gi, g) in graphs.iter().enumerate() {
            let g = g.borrow();
            if g.feature_dim() != dim {
                return Err(Error::input(format!(
                    "graph {gi} has feature dim {} but batch uses {dim}",
                    g.feature_dim()
                )));
            }
            if g.edge_features().map(|e| e.ncols()) != edge_dim {
                return Err(Error::input(format!(
                    "graph {gi} edge features disagree with the batch"
                )));
            }
            let n0 = *node_offsets.last().unwrap();
            let e0 = *edge_offsets.last().unwrap();
            node_features
                .slice_mut(ndarray::s![n0..n0 + g.node_count(), ..])
                .assign(g.node_features());
            if let (Some(dst), Some(src)) = (&mut edge_features, g.edge_features()) {
                dst.slice_mut(ndarray::s![e0..e0 + g.edge_count(), ..])
                    .assign(src);
            }
            edges.extend(g.edges().iter().map(|&(u, v)| (u + n0, v + n0)));
            graph_of_node.extend(std::iter::repeat(gi).take(g.node_count()));
            node_offsets.push(n0 + g.node_count());
            edge_offsets.push(e0 + g.edge_count());
            labels.push(g.label());
            truth_masks.push(g.truth_mask().map(<[bool]>::to_vec));
        }
        Ok(GraphBatch {
            node_features,
            edges,
            edge_features,
            labels,
            truth_masks,
            graph_of_node,
            node_offsets,
            edge_offsets,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn node_count(&self) -> usize {
        self.graph_of_node.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Mat {
        &self.node_features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn graph_of_node(&self) -> &[usize] {
        &self.graph_of_node
    }

    /// Start offsets of each graph's nodes, with a trailing total.
    pub fn node_offsets(&self) -> &[usize] {
        &self.node_offsets
    }

    /// Start offsets of each graph's edges, with a trailing total.
    pub fn edge_offsets(&self) -> &[usize] {
        &self.edge_offsets
    }

    pub fn edge_range(&self, graph: usize) -> std::ops::Range<usize> {
        self.edge_offsets[graph]..self.edge_offsets[graph + 1]
    }

    /// Recovers the member graphs.
    pub fn split(&self) -> Vec<Graph> {
        (0..self.num_graphs())
            .map(|gi| {
                let (n0, n1) = (self.node_offsets[gi], self.node_offsets[gi + 1]);
                let (e0, e1) = (self.edge_offsets[gi], self.edge_offsets[gi + 1]);
                let edges = self.edges[e0..e1]
                    .iter()
                    .map(|&(u, v)| (u - n0, v - n0))
                    .collect();
                let x = self
                    .node_features
                    .slice(ndarray::s![n0..n1, ..])
                    .to_owned();
                let ef = self
                    .edge_features
                    .as_ref()
                    .map(|e| e.slice(ndarray::s![e0..e1, ..]).to_owned());
                Graph::new(
                    n1 - n0,
                    edges,
                    x,
                    ef,
                    self.labels[gi],
                    self.truth_masks[gi].clone(),
                )
                .expect("batch members were valid graphs")
            })
            .collect()
    }
}

/// Induced neighbourhood of a centre node.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: Graph,
    /// Subgraph node → parent node.
    pub node_map: Vec<usize>,
    /// Subgraph edge → parent edge.
    pub edge_map: Vec<usize>,
    pub center: usize,
    pub hops: usize,
}

/// Induced subgraph on every node within `k` undirected hops of `center`.
pub fn k_hop_subgraph(graph: &Graph, center: usize, k: usize) -> Result<Subgraph> {
    if center >= graph.node_count() {
        return Err(Error::input(format!(
            "centre {center} out of range for {} nodes",
            graph.node_count()
        )));
    }
    if k == 0 {
        return Err(Error::input("hop count must be at least 1"));
    }
    let adj = graph.neighbours();
    let mut dist = vec![usize::MAX; graph.node_count()];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }

    let node_map: Vec<usize> = (0..graph.node_count())
        .filter(|&v| dist[v] != usize::MAX)
        .collect();
    let mut local = vec![usize::MAX; graph.node_count()];
    for (i, &v) in node_map.iter().enumerate() {
        local[v] = i;
    }
    let mut edges = Vec::new();
    let mut edge_map = Vec::new();
    for (i, &(u, v)) in graph.edges().iter().enumerate() {
        if local[u] != usize::MAX && local[v] != usize::MAX {
            edges.push((local[u], local[v]));
            edge_map.push(i);
        }
    }
    let x = graph.node_features().select(ndarray::Axis(0), &node_map);
    let ef = graph
        .edge_features()
        .map(|e| e.select(ndarray::Axis(0), &edge_map));
    let mask = graph
        .truth_mask()
        .map(|m| edge_map.iter().map(|&i| m[i]).collect());
    let sub = Graph::new(node_map.len(), edges, x, ef, graph.label(), mask)?;
    Ok(Subgraph {
        graph: sub,
        node_map,
        edge_map,
        center,
        hops: k,
    })
}

/// Uniformly random node index.
pub fn sample_node<R: Rng + ?Sized>(graph: &Graph, rng: &mut R) -> Result<usize> {
    if graph.node_count() == 0 {
        return Err(Error::input("cannot sample a node from an empty graph"));
    }
    Ok(rng.gen_range(0..graph.node_count()))
}

/// Replaces the score of each orientation by the mean over both orientations.
pub fn symmetrize_scores(graph: &Graph, scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != graph.edge_count() {
        return Err(Error::input(format!(
            "{} scores for {} edges",
            scores.len(),
            graph.edge_count()
        )));
    }
    Ok(graph
        .reverse_index()
        .iter()
        .enumerate()
        .map(|(i, &j)| 0.5 * (scores[i] + scores[j]))
        .collect())
}

const GRAPHS_MAGIC: &str = "metagmt-graphs 1";

/// Writes graphs in the line-oriented container format:
///
/// ```text
/// metagmt-graphs 1
/// graphs <count>
/// graph <nodes> <edges> <label> <feature_dim> <edge_feature_dim> <has_mask>
/// x <f64> ...            one line per node
/// e <u> <v> [<0|1>]      one line per directed edge, mask bit iff has_mask
/// a <f64> ...            one line per edge, only if edge_feature_dim > 0
/// end
/// ```
///
/// Floats use Rust's shortest round-trip formatting, so reading back is
/// bit-exact.
pub fn write_graphs<W: Write>(mut w: W, graphs: &[Graph]) -> std::io::Result<()> {
    writeln!(w, "{GRAPHS_MAGIC}")?;
    writeln!(w, "graphs {}", graphs.len())?;
    for g in graphs {
        let ed = g.edge_features().map_or(0, |e| e.ncols());
        writeln!(
            w,
            "graph {} {} {} {} {} {}",
            g.node_count(),
            g.edge_count(),
            g.label(),
            g.feature_dim(),
            ed,
            u8::from(g.truth_mask().is_some())
        )?;
        for row in g.node_features().rows() {
            write!(w, "x")?;
            for v in row {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        for (i, &(u, v)) in g.edges().iter().enumerate() {
            match g.truth_mask() {
                Some(m) => writeln!(w, "e {u} {v} {}", u8::from(m[i]))?,
                None => writeln!(w, "e {u} {v}")?,
            }
        }
        if let Some(ef) = g.edge_features() {
            for row in ef.rows() {
                write!(w, "a")?;
                for v in row {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
        }
        writeln!(w, "end")?;
    }
    Ok(())
}

struct LineReader<'a, R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    path: &'a Path,
}

impl<R: BufRead> LineReader<'_, R> {
    fn next(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.lines.next() {
            Some(line) => Ok(line?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::ingestion(self.path, self.line_no, msg)
    }

    fn fields<'l>(&self, line: &'l str, tag: &str, count: usize) -> Result<Vec<&'l str>> {
        let mut it = line.split_whitespace();
        if it.next() != Some(tag) {
            return Err(self.err(format!("expected '{tag}' record")));
        }
        let rest: Vec<&str> = it.collect();
        if rest.len() != count {
            return Err(self.err(format!(
                "'{tag}' record has {} fields, expected {count}",
                rest.len()
            )));
        }
        Ok(rest)
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse '{s}'")))
    }
}

/// Reads the container written by [`write_graphs`]. `path` is only used to
/// label errors.
pub fn read_graphs<R: BufRead>(r: R, path: &Path) -> Result<Vec<Graph>> {
    let mut lr = LineReader {
        lines: r.lines(),
        line_no: 0,
        path,
    };
    if lr.next()? != GRAPHS_MAGIC {
        return Err(lr.err("missing 'metagmt-graphs 1' header"));
    }
    let line = lr.next()?;
    let count: usize = lr.parse(lr.fields(&line, "graphs", 1)?[0])?;
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lr.next()?;
        let h = lr.fields(&line, "graph", 6)?;
        let n: usize = lr.parse(h[0])?;
        let m: usize = lr.parse(h[1])?;
        let label: usize = lr.parse(h[2])?;
        let dim: usize = lr.parse(h[3])?;
        let edim: usize = lr.parse(h[4])?;
        let has_mask = match h[5] {
            "0" => false,
            "1" => true,
            other => return Err(lr.err(format!("bad mask flag '{other}'"))),
        };
        let mut x = Mat::zeros((n, dim));
        for i in 0..n {
            let line = lr.next()?;
            let f = lr.fields(&line, "x", dim)?;
            for (j, s) in f.iter().enumerate() {
                x[[i, j]] = lr.parse(s)?;
            }
        }
        let mut edges = Vec::with_capacity(m);
        let mut mask = Vec::with_capacity(if has_mask { m } else { 0 });
        for _ in 0..m {
            let line = lr.next()?;
            let f = lr.fields(&line, "e", if has_mask { 3 } else { 2 })?;
            edges.push((lr.parse(f[0])?, lr.parse(f[1])?));
            if has_mask {
                mask.push(match f[2] {
                    "0" => false,
                    "1" => true,
                    other => return Err(lr.err(format!("bad mask bit '{other}'"))),
                });
            }
        }
        let ef = if edim > 0 {
            let mut ef = Mat::zeros((m, edim));
            for i in 0..m {
                let line = lr.next()?;
                let f = lr.fields(&line, "a", edim)?;
                for (j, s) in f.iter().enumerate() {
                    ef[[i, j]] = lr.parse(s)?;
                }
            }
            Some(ef)
        } else {
            None
        };
        let line = lr.next()?;
        lr.fields(&line, "end", 0)?;
        let g = Graph::new(n, edges, x, ef, label, has_mask.then_some(mask))
            .map_err(|e| lr.err(e.to_string()))?;
        graphs.push(g);
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path4() -> Graph {
        // a-b-c-d
        Graph::from_undirected(4, &[(0, 1), (1, 2), (2, 3)], Mat::ones((4, 2)), 0, None).unwrap()
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(p) {
                    pairs.push((u, v));
                }
            }
        }
        let x = Mat::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
        let truth: Vec<bool> = (0..pairs.len()).map(|i| i % 3 == 0).collect();
        Graph::from_undirected(n, &pairs, x, 1, Some(&truth)).unwrap()
    }

    #[test]
    fn rejects_missing_reverse_edge() {
        let err = Graph::new(2, vec![(0, 1)], Mat::ones((2, 1)), None, 0, None);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_out_of_range_endpoint() {
        let err = Graph::new(2, vec![(0, 2), (2, 0)], Mat::ones((2, 1)), None, 0, None);
        assert!(err.is_err());
    }

    #[test]
    fn khop_on_path() {
        let sub = k_hop_subgraph(&path4(), 1, 1).unwrap();
        assert_eq!(sub.node_map, vec![0, 1, 2]);
        let parent: Vec<_> = sub
            .edge_map
            .iter()
            .map(|&e| path4().edges()[e])
            .collect();
        assert_eq!(parent, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn khop_isolated_node() {
        let g = Graph::from_undirected(3, &[(0, 1)], Mat::ones((3, 1)), 0, None).unwrap();
        let sub = k_hop_subgraph(&g, 2, 1).unwrap();
        assert_eq!(sub.graph.node_count(), 1);
        assert_eq!(sub.graph.edge_count(), 0);
    }

    #[test]
    fn khop_rejects_bad_centre() {
        assert!(matches!(k_hop_subgraph(&path4(), 4, 1), Err(Error::Input(_))));
    }

    fn floyd_warshall(g: &Graph) -> Vec<Vec<usize>> {
        let n = g.node_count();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for &(u, v) in g.edges() {
            d[u][v] = 1;
            d[v][u] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn khop_matches_all_pairs_distances() {
        for seed in 0..20 {
            let g = random_graph(12, 0.18, seed);
            let d = floyd_warshall(&g);
            for center in 0..12 {
                let sub = k_hop_subgraph(&g, center, 2).unwrap();
                let expected: Vec<usize> = (0..12).filter(|&v| d[center][v] <= 2).collect();
                assert_eq!(sub.node_map, expected, "seed {seed} centre {center}");
                let expected_edges: Vec<usize> = g
                    .edges()
                    .iter()
                    .enumerate()
                    .filter(|(_, &(u, v))| d[center][u] <= 2 && d[center][v] <= 2)
                    .map(|(i, _)| i)
                    .collect();
                assert_eq!(sub.edge_map, expected_edges);
            }
        }
    }

    #[test]
    fn subgraph_maps_reproduce_parent_data() {
        let g = random_graph(10, 0.3, 7);
        let sub = k_hop_subgraph(&g, 3, 1).unwrap();
        for (i, &p) in sub.node_map.iter().enumerate() {
            assert_eq!(sub.graph.node_features().row(i), g.node_features().row(p));
        }
        let mask = g.truth_mask().unwrap();
        for (i, &p) in sub.edge_map.iter().enumerate() {
            let (u, v) = sub.graph.edges()[i];
            assert_eq!((sub.node_map[u], sub.node_map[v]), g.edges()[p]);
            assert_eq!(sub.graph.truth_mask().unwrap()[i], mask[p]);
        }
    }

    #[test]
    fn sample_single_node() {
        let g = Graph::new(1, vec![], Mat::ones((1, 1)), None, 0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_node(&g, &mut rng).unwrap(), 0);
    }

    #[test]
    fn sample_empty_graph_fails() {
        let g = Graph::new(0, vec![], Mat::zeros((0, 1)), None, 0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_node(&g, &mut rng).is_err());
    }

    #[test]
    fn sample_is_deterministic() {
        let g = path4();
        let a = sample_node(&g, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_node(&g, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_is_uniform() {
        let g = Graph::new(10, vec![], Mat::ones((10, 1)), None, 0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[sample_node(&g, &mut rng).unwrap()] += 1;
        }
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * 0.1).abs() <= 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn symmetrize_mean_and_fixed_point() {
        let g = Graph::from_undirected(2, &[(0, 1)], Mat::ones((2, 1)), 0, None).unwrap();
        assert_eq!(symmetrize_scores(&g, &[0.8, 0.2]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(symmetrize_scores(&g, &[0.3, 0.3]).unwrap(), vec![0.3, 0.3]);
        assert!(symmetrize_scores(&g, &[0.3]).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let mut graphs: Vec<Graph> = (0..5).map(|s| random_graph(8, 0.3, s)).collect();
        graphs.push(
            Graph::new(
                2,
                vec![(0, 1), (1, 0)],
                Mat::from_elem((2, 2), 0.1),
                Some(Mat::from_shape_vec((2, 1), vec![1.0 / 3.0, -2.5e-7]).unwrap()),
                3,
                None,
            )
            .unwrap(),
        );
        let mut buf = Vec::new();
        write_graphs(&mut buf, &graphs).unwrap();
        let back = read_graphs(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, graphs);
    }

    #[test]
    fn truncated_file_names_line() {
        let text = "metagmt-graphs 1\ngraphs 1\ngraph 2 2 0 1 0 0\nx 1\n";
        let err = read_graphs(text.as_bytes(), Path::new("d.graphs")).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: 5, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn khop_monotone_in_k(seed in 0u64..500, center in 0usize..9, k in 1usize..4) {
            let g = random_graph(9, 0.25, seed);
            let a = k_hop_subgraph(&g, center, k).unwrap();
            let b = k_hop_subgraph(&g, center, k + 1).unwrap();
            prop_assert!(a.node_map.iter().all(|v| b.node_map.contains(v)));
            prop_assert!(a.node_map.contains(&center));
        }

        #[test]
        fn symmetrize_idempotent(seed in 0u64..500, raw in proptest::collection::vec(0.0f64..1.0, 64)) {
            let g = random_graph(9, 0.4, seed);
            let scores: Vec<f64> = (0..g.edge_count()).map(|i| raw[i % raw.len()] + i as f64 * 1e-3).collect();
            let once = symmetrize_scores(&g, &scores).unwrap();
            let twice = symmetrize_scores(&g, &once).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn batch_round_trip(seeds in proptest::collection::vec(0u64..1000, 1..6)) {
            let graphs: Vec<Graph> = seeds.iter().map(|&s| random_graph(3 + (s % 7) as usize, 0.35, s)).collect();
            let batch = GraphBatch::from_graphs(&graphs).unwrap();
            for gi in 0..graphs.len() {
                let (a, b) = (batch.node_offsets()[gi], batch.node_offsets()[gi + 1]);
                prop_assert!(batch.graph_of_node()[a..b].iter().all(|&g| g == gi));
            }
            prop_assert_eq!(batch.split(), graphs);
        }
    }
}
