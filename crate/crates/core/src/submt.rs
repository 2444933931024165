//! Subgraph multilinear extension: the expected score of a set function over
//! edge subsets drawn independently with per-edge keep probabilities.

use rand::Rng;

use crate::autodiff::{Mat, Tape};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{self, Ctx, GmtModel, GraphInput, SeededRng};
use crate::nn;

/// Largest edge count accepted by [`exact_submt`].
pub const ENUMERATION_CAP: usize = 20;

/// Edge subsets are bitmasks: bit `e` set means edge `e` is kept.
pub trait SetFunction {
    fn eval(&self, subset: u64) -> f64;
}

impl<F: Fn(u64) -> f64> SetFunction for F {
    fn eval(&self, subset: u64) -> f64 {
        self(subset)
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::input("edge probabilities must lie in [0, 1]"));
    }
    Ok(())
}

/// `Σ_S f(S) Π_{e∈S} p_e Π_{e∉S} (1 − p_e)` by full enumeration.
pub fn exact_submt<F: SetFunction + ?Sized>(f: &F, p: &[f64]) -> Result<f64> {
    let m = p.len();
    if m > ENUMERATION_CAP {
        return Err(Error::Capacity(format!(
            "{m} edges exceed the enumeration cap of {ENUMERATION_CAP}; use mc_submt"
        )));
    }
    check_probs(p)?;
    let mut total = 0.0;
    for s in 0u64..(1u64 << m) {
        let mut w = 1.0;
        for (e, &pe) in p.iter().enumerate() {
            w *= if s >> e & 1 == 1 { pe } else { 1.0 - pe };
        }
        if w != 0.0 {
            total += w * f.eval(s);
        }
    }
    Ok(total)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

pub fn draw_subset<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> u64 {
    let mut s = 0u64;
    for (e, &pe) in p.iter().enumerate() {
        if rng.gen::<f64>() < pe {
            s |= 1 << e;
        }
    }
    s
}

/// Sample mean of `f` over `samples` independent Bernoulli(p) subsets.
pub fn mc_submt<F: SetFunction + ?Sized, R: Rng + ?Sized>(
    f: &F,
    p: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if samples < 2 {
        return Err(Error::input("mc_submt needs at least two samples"));
    }
    if p.len() > 64 {
        return Err(Error::Capacity("subsets are limited to 64 edges".into()));
    }
    check_probs(p)?;
    let values: Vec<f64> = (0..samples).map(|_| f.eval(draw_subset(p, rng))).collect();
    let n = samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Exact multilinear value against the two model approximations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamComparison {
    pub exact: f64,
    pub sam: f64,
    pub lin: f64,
}

impl SamComparison {
    pub fn sam_gap(&self) -> f64 {
        (self.sam - self.exact).abs()
    }

    pub fn lin_gap(&self) -> f64 {
        (self.lin - self.exact).abs()
    }
}

/// Probability of the graph's own label when only the undirected edges in
/// `subset` are kept (evaluation mode).
pub struct MaskedClassProb<'a> {
    pub model: &'a GmtModel,
    pub graph: &'a Graph,
    input: GraphInput,
    /// Undirected edge index of each directed edge.
    pair_of_edge: Vec<usize>,
}

impl<'a> MaskedClassProb<'a> {
    pub fn new(model: &'a GmtModel, graph: &'a Graph) -> Self {
        let canon = graph.canonical_edges();
        let mut pair_of_edge = vec![0; graph.edge_count()];
        for (k, &e) in canon.iter().enumerate() {
            pair_of_edge[e] = k;
            pair_of_edge[graph.reverse_index()[e]] = k;
        }
        MaskedClassProb {
            model,
            graph,
            input: GraphInput::from_graph(graph),
            pair_of_edge,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.graph.canonical_edges().len()
    }

    /// Per-pair probabilities (mean of both orientations).
    pub fn pair_probs(&self, directed: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_pairs()];
        let rev = self.graph.reverse_index();
        for (e, &k) in self.pair_of_edge.iter().enumerate() {
            out[k] += if rev[e] == e { directed[e] } else { 0.5 * directed[e] };
        }
        out
    }

    fn class_prob_with_weights(&self, weights: Mat) -> f64 {
        let tape = Tape::new();
        let clf = self.model.classifier.bind_frozen(&tape);
        let w = tape.constant(weights);
        let mut rng = <SeededRng as rand::SeedableRng>::seed_from_u64(0);
        let mut ctx = Ctx {
            training: false,
            rng: &mut rng,
        };
        let logits = model::classify(&tape, &self.input, &clf, Some(w), &self.model.config, &mut ctx)
            .expect("input built from the graph");
        nn::log_softmax(logits).value()[[0, self.graph.label()]].exp()
    }
}

impl SetFunction for MaskedClassProb<'_> {
    fn eval(&self, subset: u64) -> f64 {
        let w = Mat::from_shape_fn((self.graph.edge_count(), 1), |(e, _)| {
            f64::from(u8::from(subset >> self.pair_of_edge[e] & 1 == 1))
        });
        self.class_prob_with_weights(w)
    }
}

/// Exact multilinear extension of the masked true-class probability, the
/// SAM estimate with `k` samples and the LIN (soft-weight) value, all at the
/// given directed attention probabilities.
pub fn compare_sam_to_submt(
    model: &GmtModel,
    graph: &Graph,
    attention: &[f64],
    k: usize,
    rng: &mut SeededRng,
) -> Result<SamComparison> {
    if attention.len() != graph.edge_count() {
        return Err(Error::input("attention length does not match edge count"));
    }
    let f = MaskedClassProb::new(model, graph);
    if f.num_pairs() > 10 {
        return Err(Error::Capacity(format!(
            "{} undirected edges exceed the comparison cap of 10",
            f.num_pairs()
        )));
    }
    let exact = exact_submt(&f, &f.pair_probs(attention))?;

    let tape = Tape::new();
    let clf = model.classifier.bind_frozen(&tape);
    let probs = tape.constant(Mat::from_shape_vec((attention.len(), 1), attention.to_vec()).expect("column"));
    let mut ctx = Ctx {
        training: false,
        rng,
    };
    let sam = model::sam_average(&tape, &f.input, &clf, probs, k, &model.config, &mut ctx)?;
    let sam = sam.value()[[0, graph.label()]].exp();

    let lin = f.class_prob_with_weights(Mat::from_shape_vec((attention.len(), 1), attention.to_vec()).expect("column"));
    Ok(SamComparison { exact, sam, lin })
}

/// Root-mean-square gap between the SAM estimate and the exact multilinear
/// value at one sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub k: usize,
    pub exact: f64,
    pub mean_sam: f64,
    pub rms_gap: f64,
}

/// SAM error at each sample count in `ks`, over `reps` independent draws.
pub fn sam_gap_scaling(
    model: &GmtModel,
    graph: &Graph,
    attention: &[f64],
    ks: &[usize],
    reps: usize,
    rng: &mut SeededRng,
) -> Result<Vec<ScalingPoint>> {
    if reps == 0 {
        return Err(Error::input("sam_gap_scaling needs at least one repetition"));
    }
    ks.iter()
        .map(|&k| {
            let mut exact = 0.0;
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..reps {
                let c = compare_sam_to_submt(model, graph, attention, k, rng)?;
                exact = c.exact;
                sum += c.sam;
                sq += c.sam_gap().powi(2);
            }
            Ok(ScalingPoint {
                k,
                exact,
                mean_sam: sum / reps as f64,
                rms_gap: (sq / reps as f64).sqrt(),
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::input("slope fit needs two or more positive points"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::input("slope fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 4.0, 16.0, 64.0].iter().map(|&k: &f64| (k, 3.0 * k.powf(-0.5))).collect();
        assert!((loglog_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_err());
        assert!(loglog_slope(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn cardinality_at_half() {
        let f = |s: u64| s.count_ones() as f64;
        assert!((exact_submt(&f, &[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_at_full_set() {
        let f = |s: u64| (s * 7 % 5) as f64;
        assert_eq!(exact_submt(&f, &[1.0; 4]).unwrap(), f(0b1111));
    }

    #[test]
    fn parity_by_hand() {
        let f = |s: u64| (s.count_ones() % 2) as f64;
        let (p0, p1) = (0.3, 0.7);
        // subsets {0} and {1} have odd size
        let expected = p0 * (1.0 - p1) + (1.0 - p0) * p1;
        assert!((exact_submt(&f, &[p0, p1]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn cap_is_enforced() {
        let f = |_: u64| 0.0;
        assert!(matches!(exact_submt(&f, &[0.5; 21]), Err(Error::Capacity(_))));
    }

    #[test]
    fn mc_with_empty_draws() {
        let f = |s: u64| if s == 0 { 2.5 } else { 0.0 };
        let mut rng = SeededRng::seed_from_u64(0);
        let est = mc_submt(&f, &[0.0; 5], 100, &mut rng).unwrap();
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn multilinear_in_each_coordinate() {
        let table: Vec<f64> = (0..64).map(|s| ((s * 37 + 11) % 17) as f64 / 17.0).collect();
        let f = |s: u64| table[s as usize];
        let mut p = vec![0.2, 0.9, 0.4, 0.6, 0.1, 0.5];
        for e in 0..p.len() {
            let vals: Vec<f64> = [0.0, 0.35, 1.0]
                .iter()
                .map(|&x| {
                    p[e] = x;
                    exact_submt(&f, &p).unwrap()
                })
                .collect();
            let interp = vals[0] + 0.35 * (vals[2] - vals[0]);
            assert!((vals[1] - interp).abs() < 1e-12);
            p[e] = 0.5;
        }
    }

    #[test]
    fn linear_functions_have_closed_form() {
        let c = [0.3, -1.2, 2.0, 0.7, 5.5];
        let f = |s: u64| (0..5).filter(|e| s >> e & 1 == 1).map(|e| c[e]).sum::<f64>();
        let p = [0.1, 0.25, 0.9, 0.5, 0.33];
        let closed: f64 = c.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!((exact_submt(&f, &p).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn mc_permutation_paired() {
        // Relabelling edges together with their probabilities leaves the
        // estimator's distribution unchanged; with a shared seed and a
        // reversed order the sample means agree statistically.
        let table: Vec<f64> = (0..256).map(|s| ((s * 13 + 5) % 23) as f64).collect();
        let f = |s: u64| table[s as usize];
        let p = [0.1, 0.8, 0.3, 0.6, 0.5, 0.9, 0.2, 0.4];
        let rev_p: Vec<f64> = p.iter().rev().copied().collect();
        let g = |s: u64| {
            let mut t = 0u64;
            for e in 0..8 {
                if s >> e & 1 == 1 {
                    t |= 1 << (7 - e);
                }
            }
            f(t)
        };
        let a = mc_submt(&f, &p, 4096, &mut SeededRng::seed_from_u64(3)).unwrap();
        let b = mc_submt(&g, &rev_p, 4096, &mut SeededRng::seed_from_u64(3)).unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() <= 4.0 * se);
        let exact = exact_submt(&f, &p).unwrap();
        assert!((exact_submt(&g, &rev_p).unwrap() - exact).abs() < 1e-9);
    }
}
