//! Central finite-difference verification of analytic gradients: every tape
//! primitive, the nn layers, the GIN classifier composite and the unrolled
//! meta-gradient.

use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{k_hop_subgraph, Graph};
use crate::model::{self, Ctx, GmtModel, GraphInput, ModelConfig, SeededRng};
use crate::nn::{self, Mlp, NodeGroups, ParameterStore, Params};
use crate::trainer::{self, MetaConfig};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-6;
/// Step divisor for coordinates whose estimate is step-dependent.
pub const REFINE: f64 = 10.0;
/// Coarse and fine estimates further apart than this (relative) mark a kink.
pub const KINK_TOL: f64 = 1e-6;
/// Tolerance for layer and composite checks.
pub const LAYER_TOL: f64 = 1e-4;
/// Tolerance for the unrolled meta-gradient.
pub const META_TOL: f64 = 1e-3;
/// Gradient norms below this are compared in absolute terms.
pub const NORM_FLOOR: f64 = 1e-4;
/// A tensor's error is measured against at least this fraction of the
/// whole gradient's norm, so structurally zero blocks compare to scale.
pub const BLOCK_FLOOR: f64 = 1e-2;
/// Parameter budget of the meta-gradient model.
pub const META_PARAM_CAP: usize = 200;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Largest per-tensor relative error.
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub scalars: usize,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, NORM_FLOOR, BLOCK_FLOOR·total)` in the
/// Euclidean norm, where `total` is the norm of the whole numeric gradient.
pub fn relative_error(analytic: &Mat, numeric: &Mat, total: f64) -> f64 {
    assert_eq!(analytic.dim(), numeric.dim(), "gradient shapes differ");
    let norm = |m: &Mat| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&(analytic - numeric));
    diff / norm(analytic)
        .max(norm(numeric))
        .max(NORM_FLOOR)
        .max(BLOCK_FLOOR * total)
}

/// Compares `tape.grad_values` of the scalar `f` against fourth-order
/// central differences over every entry of every store. Coordinates whose
/// estimate changes with the step are re-estimated at `FD_STEP / REFINE`.
pub fn check<F>(name: &str, stores: &[ParameterStore], tolerance: f64, f: F) -> Result<CheckResult>
where
    F: for<'t> Fn(&'t Tape, &[Params<'t>]) -> Result<Var<'t>>,
{
    let start = Instant::now();
    let eval = |stores: &[ParameterStore]| -> Result<f64> {
        let tape = Tape::new();
        let params: Vec<Params<'_>> = stores.iter().map(|s| s.bind(&tape)).collect();
        let out = f(&tape, &params)?;
        scalar(out)
    };

    let tape = Tape::new();
    let params: Vec<Params<'_>> = stores.iter().map(|s| s.bind(&tape)).collect();
    let out = f(&tape, &params)?;
    scalar(out)?;
    let leaves: Vec<Var<'_>> = params.iter().flat_map(|p| p.vars().iter().copied()).collect();
    let analytic = tape.grad_values(out, &leaves);

    let mut work = stores.to_vec();
    let mut pairs = Vec::new();
    let mut k = 0;
    for s in 0..work.len() {
        let names: Vec<String> = work[s].names().map(str::to_owned).collect();
        for n in names {
            let shape = work[s].get(&n).expect("listed name").dim();
            let mut numeric = Mat::zeros(shape);
            for idx in 0..numeric.len() {
                let (i, j) = (idx / shape.1, idx % shape.1);
                let orig = work[s].get(&n).expect("listed name")[[i, j]];
                let mut stencil = |h: f64| -> Result<f64> {
                    let mut at = |offset: f64| -> Result<f64> {
                        work[s].get_mut(&n).expect("listed name")[[i, j]] = orig + offset;
                        eval(&work)
                    };
                    let (p1, m1) = (at(h)?, at(-h)?);
                    let (p2, m2) = (at(2.0 * h)?, at(-2.0 * h)?);
                    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
                };
                let coarse = stencil(FD_STEP)?;
                let fine = stencil(FD_STEP / REFINE)?;
                work[s].get_mut(&n).expect("listed name")[[i, j]] = orig;
                // A stencil straddling a ReLU kink depends on the step.
                let kinked = (coarse - fine).abs() > KINK_TOL * coarse.abs().max(1.0);
                numeric[[i, j]] = if kinked { fine } else { coarse };
            }
            let a = analytic[k].clone().unwrap_or_else(|| Mat::zeros(shape));
            pairs.push((a, numeric));
            k += 1;
        }
    }
    let total = pairs.iter().map(|(_, n)| n.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    let worst = pairs
        .iter()
        .map(|(a, n)| relative_error(a, n, total))
        .fold(0.0f64, f64::max);
    Ok(CheckResult {
        name: name.to_owned(),
        max_rel_err: worst,
        tolerance,
        scalars: stores.iter().map(ParameterStore::num_scalars).sum(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn scalar(v: Var<'_>) -> Result<f64> {
    if v.shape() != (1, 1) {
        return Err(Error::input(format!("gradcheck needs a scalar output, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Random matrix with entries in `±[margin, margin + 1)`, so kinks at zero
/// are never straddled by a finite-difference step.
fn away_from_zero(rng: &mut SeededRng, shape: (usize, usize), margin: f64) -> Mat {
    Mat::from_shape_fn(shape, |_| {
        let v: f64 = margin + rng.gen::<f64>();
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn uniform(rng: &mut SeededRng, shape: (usize, usize), lo: f64, hi: f64) -> Mat {
    Mat::from_shape_fn(shape, |_| rng.gen_range(lo..hi))
}

fn store(entries: Vec<Mat>) -> ParameterStore {
    let mut s = ParameterStore::new();
    for (i, m) in entries.into_iter().enumerate() {
        s.insert(format!("x{i}"), m).expect("distinct names");
    }
    s
}

/// Contracts a matrix output with fixed random weights, so every output
/// entry gets a distinct adjoint.
fn project<'t>(out: Var<'t>, seed: u64) -> Var<'t> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let w = uniform(&mut rng, out.shape(), -1.0, 1.0);
    (out * out.tape().constant(w)).sum()
}

/// A unary or n-ary case: input matrices and the map producing an output.
struct Case {
    name: &'static str,
    inputs: Vec<Mat>,
    op: Box<dyn for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>>,
}

fn case(
    name: &'static str,
    inputs: Vec<Mat>,
    op: impl for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>> + 'static,
) -> Case {
    Case {
        name,
        inputs,
        op: Box::new(op),
    }
}

fn vars<'t>(p: &Params<'t>) -> Vec<Var<'t>> {
    p.vars().to_vec()
}

/// Ring with two chords and random features.
pub fn toy_graph(n: usize, feature_dim: usize, seed: u64) -> Result<Graph> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    if n >= 5 {
        pairs.push((0, n / 2));
        pairs.push((1, n - 2));
    }
    let x = uniform(&mut rng, (n, feature_dim), -1.0, 1.0);
    let truth: Vec<bool> = (0..pairs.len()).map(|i| i % 3 == 0).collect();
    Graph::from_undirected(n, &pairs, x, 0, Some(&truth))
}

fn primitive_cases(rng: &mut SeededRng) -> Vec<Case> {
    let (n, d, c) = (rng.gen_range(3..6), rng.gen_range(2..5), rng.gen_range(2..4));
    let a = away_from_zero(rng, (n, d), 0.1);
    let b = away_from_zero(rng, (n, d), 0.1);
    let w = away_from_zero(rng, (d, c), 0.1);
    let row = away_from_zero(rng, (1, d), 0.1);
    let col = away_from_zero(rng, (n, 1), 0.1);
    let pos = uniform(rng, (n, d), 0.5, 2.0);
    let one = uniform(rng, (1, 1), 0.5, 1.5);
    let mask = Rc::new(uniform(rng, (n, d), -2.0, 2.0));
    let idx: Rc<Vec<usize>> = Rc::new((0..n + 2).map(|_| rng.gen_range(0..n)).collect());
    let dest: Rc<Vec<usize>> = Rc::new((0..n).map(|_| rng.gen_range(0..3)).collect());
    let wide = away_from_zero(rng, (c, d), 0.1);
    let tall = away_from_zero(rng, (n, c), 0.1);
    vec![
        case("matmul", vec![a.clone(), w.clone()], |x| Ok(x[0].matmul(x[1]))),
        case("matmul_nt", vec![a.clone(), wide], |x| Ok(x[0].matmul_nt(x[1]))),
        case("matmul_tn", vec![a.clone(), tall], |x| Ok(x[0].matmul_tn(x[1]))),
        case("add", vec![a.clone(), b.clone()], |x| Ok(x[0] + x[1])),
        case("sub", vec![a.clone(), b.clone()], |x| Ok(x[0] - x[1])),
        case("mul", vec![a.clone(), b.clone()], |x| Ok(x[0] * x[1])),
        case("div", vec![a.clone(), pos.clone()], |x| Ok(x[0] / x[1])),
        case("neg", vec![a.clone()], |x| Ok(-x[0])),
        case("scale", vec![a.clone()], |x| Ok(x[0].scale(-1.7))),
        case("add_scalar", vec![a.clone()], |x| Ok(x[0].add_scalar(0.3))),
        case("one_minus", vec![a.clone()], |x| Ok(x[0].one_minus())),
        case("exp", vec![a.clone()], |x| Ok(x[0].exp())),
        case("ln", vec![pos.clone()], |x| Ok(x[0].ln())),
        case("sigmoid", vec![a.clone()], |x| Ok(x[0].sigmoid())),
        case("relu", vec![a.clone()], |x| Ok(x[0].relu())),
        case("clamp", vec![a.clone()], |x| Ok(x[0].clamp(-0.05, 0.05) + x[0].clamp(-0.7, 0.9))),
        case("diag_mul", vec![a.clone()], move |x| Ok(x[0].diag_mul(Rc::clone(&mask)))),
        case("scale_rows", vec![a.clone(), col.clone()], |x| Ok(x[0].scale_rows(x[1]))),
        case("sum", vec![a.clone()], |x| Ok(x[0].sum().scale(0.7))),
        case("mean", vec![a.clone()], |x| Ok(x[0].mean().scale(0.7))),
        case("broadcast_scalar", vec![one], move |x| Ok(x[0].broadcast_scalar((n, d)))),
        case("sum_rows", vec![a.clone()], |x| Ok(x[0].sum_rows())),
        case("broadcast_rows", vec![row.clone()], move |x| Ok(x[0].broadcast_rows(n))),
        case("sum_cols", vec![a.clone()], |x| Ok(x[0].sum_cols())),
        case("broadcast_cols", vec![col], move |x| Ok(x[0].broadcast_cols(d))),
        case("add_row", vec![a.clone(), row], |x| Ok(x[0].add_row(x[1]))),
        case("gather_rows", vec![a.clone()], move |x| Ok(x[0].gather_rows(Rc::clone(&idx)))),
        case("scatter_add_rows", vec![a], move |x| Ok(x[0].scatter_add_rows(Rc::clone(&dest), 3))),
    ]
}

/// Inputs 1..=4 as the weights of a two-layer perceptron.
fn mlp<'t>(x: &[Var<'t>]) -> Mlp<'t> {
    Mlp {
        w1: x[1],
        b1: x[2],
        w2: x[3],
        b2: x[4],
    }
}

fn layer_cases(rng: &mut SeededRng) -> Result<Vec<Case>> {
    let g = toy_graph(6, 3, rng.gen())?;
    let input = GraphInput::from_graph(&g);
    let edges = Rc::new(input.edges.clone());
    let n = g.node_count();
    let m = g.edge_count();
    let h = 4;
    let x = away_from_zero(rng, (n, 3), 0.1);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let mlp_inputs = vec![
        x.clone(),
        uniform(rng, (3, h), -1.0, 1.0),
        uniform(rng, (1, h), -0.5, 0.5),
        uniform(rng, (h, h), -1.0, 1.0),
        uniform(rng, (1, h), -0.5, 0.5),
    ];
    let groups = NodeGroups {
        graph_of_node: Rc::new(vec![0, 0, 0, 1, 1, 1]),
        inv_counts: Rc::new(Mat::from_elem((2, 1), 1.0 / 3.0)),
        num_graphs: 2,
    };
    // Two-node groups standardize to ±1, keeping the ReLU away from its kink.
    let groups2 = NodeGroups {
        graph_of_node: Rc::new(vec![0, 0, 1, 1, 2, 2]),
        inv_counts: Rc::new(Mat::from_elem((3, 1), 0.5)),
        num_graphs: 3,
    };
    let e2 = Rc::clone(&edges);
    let e3 = Rc::clone(&edges);
    let mut gin_inputs = mlp_inputs.clone();
    gin_inputs.push(uniform(rng, (m, 1), 0.1, 0.9));
    let mut gin_norm_inputs = gin_inputs.clone();
    gin_norm_inputs[1] = uniform(rng, (3, h), -1.0, 1.0);
    let probs = uniform(rng, (m, 1), 0.05, 0.95);
    Ok(vec![
        case(
            "linear",
            vec![x.clone(), uniform(rng, (3, 2), -1.0, 1.0), uniform(rng, (1, 2), -1.0, 1.0)],
            |x| nn::linear(x[0], x[1], x[2]),
        ),
        case("log_softmax", vec![x.clone()], |x| Ok(nn::log_softmax(x[0]))),
        case("softmax_cross_entropy", vec![x.clone()], move |x| {
            nn::softmax_cross_entropy(x[0], &labels)
        }),
        case("instance_norm", vec![x.clone()], move |x| nn::instance_norm(x[0], &groups)),
        case("info_loss", vec![probs], |x| model::info_loss(x[0], 0.3)),
        case("mlp", mlp_inputs.clone(), move |x| mlp(x).forward(x[0])),
        case("aggregate", vec![x, uniform(rng, (m, 1), 0.1, 0.9)], move |x| {
            Ok(nn::aggregate(x[0], &e2, Some(x[1])))
        }),
        case("gin_conv", gin_inputs, move |x| {
            nn::gin_conv(x[0], &edges, Some(x[5]), &mlp(x), 0.1, None)
        }),
        case("gin_conv_instance_norm", gin_norm_inputs, move |x| {
            nn::gin_conv(x[0], &e3, Some(x[5]), &mlp(x), 0.0, Some(&groups2))
        }),
    ])
}

fn run_case(case: &Case, seed: u64, second_order: bool) -> Result<CheckResult> {
    let s = store(case.inputs.clone());
    if second_order {
        // d/dx of <∇f(x), v>: a Hessian-vector product through the recorded
        // backward pass.
        let name = format!("{} (second order)", case.name);
        return check(&name, &[s], LAYER_TOL, |tape, p| {
            let xs = vars(&p[0]);
            let out = project((case.op)(&xs)?, seed);
            let grads = tape.grad(out, &xs, true);
            let mut total = tape.scalar(0.0);
            for (i, g) in grads.into_iter().enumerate() {
                if let Some(g) = g {
                    total = total + project(g, seed + 1 + i as u64);
                }
            }
            Ok(total)
        });
    }
    check(case.name, &[s], LAYER_TOL, |_, p| Ok(project((case.op)(&vars(&p[0]))?, seed)))
}

/// First- and second-order checks of every primitive and nn layer.
pub fn layer_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut cases = primitive_cases(&mut rng);
    cases.extend(layer_cases(&mut rng)?);
    let mut out = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        out.push(run_case(c, seed + i as u64, false)?);
        out.push(run_case(c, seed + i as u64, true)?);
    }
    Ok(out)
}

/// Small two-layer GIN configuration used by the composite checks.
pub fn composite_config(hidden_dim: usize, feature_dim: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim,
        feature_dim,
        num_classes: 2,
        dropout: 0.0,
        extractor_dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// Cross-entropy of the two-layer GIN+MLP classifier (plain and
/// attention-weighted) and the extractor's mean probability.
pub fn composite_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let g = toy_graph(7, 3, seed)?;
    let input = GraphInput::from_graph(&g);
    let mut out = Vec::new();
    for instance_norm in [false, true] {
        let cfg = ModelConfig {
            instance_norm,
            ..composite_config(5, 3)
        };
        let model = GmtModel::new(cfg.clone(), &mut SeededRng::seed_from_u64(seed))?;
        let tag = if instance_norm { " with instance norm" } else { "" };
        out.push(check(
            &format!("GIN+MLP classifier{tag}"),
            &[model.classifier.clone()],
            LAYER_TOL,
            |tape, p| {
                let mut rng = SeededRng::seed_from_u64(0);
                let mut ctx = Ctx { training: false, rng: &mut rng };
                let logits = model::classify(tape, &input, &p[0], None, &cfg, &mut ctx)?;
                nn::softmax_cross_entropy(logits, &[1])
            },
        )?);
        out.push(check(
            &format!("forward_lin loss{tag}"),
            &[model.classifier.clone(), model.extractor.clone()],
            LAYER_TOL,
            |tape, p| {
                let mut rng = SeededRng::seed_from_u64(0);
                let mut ctx = Ctx { training: false, rng: &mut rng };
                let fwd = model::forward_lin(tape, &input, &p[0], &p[1], &cfg, &mut ctx)?;
                let pred = nn::softmax_cross_entropy(fwd.logits, &[1])?;
                Ok(model::gmt_loss(pred, model::info_loss(fwd.attention.probs, 0.6)?, 1.0))
            },
        )?);
        out.push(check(
            &format!("extractor mean probability{tag}"),
            &[model.extractor.clone()],
            LAYER_TOL,
            |tape, p| {
                let mut rng = SeededRng::seed_from_u64(0);
                let mut ctx = Ctx { training: false, rng: &mut rng };
                let frozen = model.classifier.bind_frozen(tape);
                Ok(model::attention(tape, &input, &frozen, &p[0], &cfg, &mut ctx)?.probs.mean())
            },
        )?);
    }
    Ok(out)
}

/// Tiny model, graph and subgraph for the meta-gradient check.
pub struct MetaFixture {
    pub model: GmtModel,
    pub batch: GraphInput,
    pub sub: GraphInput,
}

pub fn meta_fixture(seed: u64) -> Result<MetaFixture> {
    let g = toy_graph(8, 3, seed)?;
    let sub = k_hop_subgraph(&g, 0, 1)?;
    let model = GmtModel::new(composite_config(4, 3), &mut SeededRng::seed_from_u64(seed))?;
    let params = model.classifier.num_scalars() + model.extractor.num_scalars();
    if params > META_PARAM_CAP {
        return Err(Error::Capacity(format!("{params} parameters exceed {META_PARAM_CAP}")));
    }
    Ok(MetaFixture {
        model,
        batch: GraphInput::from_graph(&g),
        sub: GraphInput::from_graph(&sub.graph),
    })
}

/// The unrolled objective `L_pred(φ*(θ_clf, θ_ext), θ_ext)` with three inner
/// steps, for both outer-loss settings.
pub fn meta_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let fx = meta_fixture(seed)?;
    let mut out = Vec::new();
    for include_info in [false, true] {
        let meta = MetaConfig {
            inner_steps: 3,
            inner_lr: 0.5,
            outer_include_info: include_info,
            ..MetaConfig::default()
        };
        let name = if include_info {
            "meta-gradient, 3 inner steps, outer loss with info"
        } else {
            "meta-gradient, 3 inner steps"
        };
        out.push(check(
            name,
            &[fx.model.classifier.clone(), fx.model.extractor.clone()],
            META_TOL,
            |tape, p| {
                let mut rng = SeededRng::seed_from_u64(0);
                let mut ctx = Ctx { training: false, rng: &mut rng };
                let obj = trainer::meta_objective(
                    tape,
                    &fx.batch,
                    &fx.sub,
                    &p[0],
                    &p[1],
                    &fx.model.config,
                    &meta,
                    0.6,
                    &mut ctx,
                )?;
                Ok(obj.loss)
            },
        )?);
    }
    Ok(out)
}

/// A sigmoid whose backward rule is replaced by the identity; must fail.
pub fn corrupted_rule_check(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let s = store(vec![away_from_zero(&mut rng, (3, 3), 0.1)]);
    check("corrupted sigmoid rule", &[s], LAYER_TOL, |_, p| {
        let x = p[0].get("x0");
        let value = x.value().mapv(crate::autodiff::sigmoid);
        Ok(project(x.straight_through(value), seed))
    })
}

/// Every suite; the negative control is reported inverted (it passes when
/// the corrupted rule is caught).
pub fn full_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = layer_suite(seed)?;
    out.extend(composite_suite(seed)?);
    out.extend(meta_suite(seed)?);
    let bad = corrupted_rule_check(seed)?;
    out.push(CheckResult {
        name: format!("negative control: {} is caught", bad.name),
        max_rel_err: if bad.passed() { f64::INFINITY } else { 0.0 },
        tolerance: LAYER_TOL,
        scalars: bad.scalars,
        seconds: bad.seconds,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        let z = Mat::zeros((2, 2));
        assert_eq!(relative_error(&z, &z, 0.0), 0.0);
        let a = Mat::from_elem((1, 1), 2.0);
        let b = Mat::from_elem((1, 1), 1.0);
        assert!((relative_error(&a, &b, 1.0) - 0.5).abs() < 1e-15);
        let tiny = Mat::from_elem((1, 1), 1e-9);
        let got = relative_error(&tiny, &Mat::zeros((1, 1)), 10.0);
        assert!((got - 1e-8).abs() < 1e-20, "{got:e}");
    }

    #[test]
    fn every_layer_passes() {
        for r in layer_suite(7).unwrap() {
            assert!(r.passed(), "{}: {:.3e}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn composites_pass() {
        for r in composite_suite(3).unwrap() {
            assert!(r.passed(), "{}: {:.3e}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn meta_gradient_passes() {
        let fx = meta_fixture(1).unwrap();
        assert!(fx.model.classifier.num_scalars() + fx.model.extractor.num_scalars() <= META_PARAM_CAP);
        assert!(fx.batch.num_nodes() <= 10);
        for r in meta_suite(1).unwrap() {
            assert!(r.passed(), "{}: {:.3e}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn corrupted_rule_is_caught() {
        let r = corrupted_rule_check(0).unwrap();
        assert!(!r.passed(), "relative error {:.3e}", r.max_rel_err);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let s = store(vec![Mat::zeros((2, 2))]);
        assert!(check("matrix", &[s], LAYER_TOL, |_, p| Ok(p[0].get("x0"))).is_err());
    }
}
