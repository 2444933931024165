//! Explanation and classification metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::{symmetrize_scores, Graph};

/// Rank-based area under the ROC curve (Mann–Whitney U / (P·N)), with tied
/// scores sharing their average rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of the `k` highest-scoring entries that are in `truth`. Ties are
/// broken towards the lower index. With fewer than `k` entries the precision
/// is taken over all of them.
pub fn precision_at_k(scores: &[f64], truth: &[bool], k: usize) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::input(format!(
            "{} scores for {} truth bits",
            scores.len(),
            truth.len()
        )));
    }
    if k == 0 {
        return Err(Error::input("precision@k needs k >= 1"));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let take = if scores.len() < k {
        log::warn!(
            "precision@{k}: only {} edges, using all of them",
            scores.len()
        );
        scores.len()
    } else {
        k
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let hits = order[..take].iter().filter(|&&i| truth[i]).count();
    Ok(hits as f64 / take as f64)
}

/// Symmetrised scores and truth bits for each undirected edge of `graph`, in
/// canonical edge order.
pub fn undirected_scores(graph: &Graph, directed_scores: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    let truth = graph
        .truth_mask()
        .ok_or_else(|| Error::input("graph has no ground-truth mask"))?;
    let sym = symmetrize_scores(graph, directed_scores)?;
    let canon = graph.canonical_edges();
    Ok((
        canon.iter().map(|&i| sym[i]).collect(),
        canon.iter().map(|&i| truth[i]).collect(),
    ))
}

/// Explanation ROC pooled over every undirected edge of every graph.
pub fn dataset_x_roc<G: AsRef<Graph>>(graphs: &[G], attention: &[Vec<f64>]) -> Result<f64> {
    if graphs.len() != attention.len() {
        return Err(Error::input("one attention vector per graph required"));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (g, a) in graphs.iter().zip(attention) {
        let g = g.as_ref();
        if g.truth_mask().is_none() {
            continue;
        }
        let (s, t) = undirected_scores(g, a)?;
        scores.extend(s);
        labels.extend(t);
    }
    roc_auc(&scores, &labels)
}

/// Mean precision@k over the graphs that carry a truth mask.
pub fn dataset_x_prec<G: AsRef<Graph>>(
    graphs: &[G],
    attention: &[Vec<f64>],
    k: usize,
) -> Result<f64> {
    if graphs.len() != attention.len() {
        return Err(Error::input("one attention vector per graph required"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (g, a) in graphs.iter().zip(attention) {
        let g = g.as_ref();
        if g.truth_mask().is_none() {
            continue;
        }
        let (s, t) = undirected_scores(g, a)?;
        total += precision_at_k(&s, &t, k)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no graph has a truth mask".into()));
    }
    Ok(total / count as f64)
}

impl AsRef<Graph> for Graph {
    fn as_ref(&self) -> &Graph {
        self
    }
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Final metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub x_roc: f64,
    pub x_prec_at_k: f64,
    pub k: usize,
    pub clf_acc: f64,
    pub n_graphs: usize,
    pub seed: u64,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: 0.0,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            log::warn!("standard deviation over fewer than two values reported as 0");
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std, n }
    }

    /// `"mean ± std"` in percent with two decimals, as in results tables.
    pub fn percent_cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub x_roc: MeanStd,
    pub x_prec: MeanStd,
    pub clf_acc: MeanStd,
}

pub fn aggregate_seeds(reports: &[MetricsReport]) -> Aggregate {
    let col = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    Aggregate {
        x_roc: MeanStd::of(&col(|r| r.x_roc)),
        x_prec: MeanStd::of(&col(|r| r.x_prec_at_k)),
        clf_acc: MeanStd::of(&col(|r| r.clf_acc)),
    }
}
