//! Numeric self-checks: per-op and whole-model gradient checks, attention
//! invariants and a brute-force metric cross-check.

use std::fmt::Write as _;

use crate::metrics::{average_accuracy, kappa, overall_accuracy, ConfusionMatrix};
use crate::model::layers::{attention_core, self_attention, swiglu_hidden, LayerVars};
use crate::model::{positional_encoding, AttentionKind, DiffFormer, ModelConfig, ParamStore};
use crate::tensor::{finite_diff_grad, grad_error, GradError, Graph, Rng64, Tensor, Var, DIFFERENTIABLE_OPS};
use crate::train::{cross_entropy_loss, l2_targets};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

/// Outcome of one group of checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest error observed, in the unit the suite describes.
    pub max_error: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let status = if s.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{status} {:<20} max error {:.3e}  {}",
                s.name, s.max_error, s.detail
            );
        }
        out
    }
}

/// Runs every suite. `fault` names an op whose backward rule is deliberately
/// corrupted, to show that the checks catch it.
pub fn run(fault: Option<&str>) -> SelftestReport {
    SelftestReport {
        suites: vec![
            gradient_suite(fault),
            model_gradient_suite(fault),
            attention_suite(),
            encoding_suite(),
            metrics_suite(),
        ],
    }
}

fn random(rng: &mut Rng64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).expect("shape")
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

fn op_case(name: &str, rng: &mut Rng64) -> Option<(Vec<Tensor>, OpFn)> {
    let mut r = |s: &[usize]| random(rng, s);
    let case: (Vec<Tensor>, OpFn) = match name {
        "matmul" => (
            vec![r(&[3, 4]), r(&[4, 2])],
            Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
        ),
        "batch_matmul" => (
            vec![r(&[2, 3, 4]), r(&[2, 5, 4]), r(&[2, 4, 2])],
            Box::new(|g, v| {
                let a = g.batch_matmul(v[0], v[1], true).unwrap();
                let b = g.batch_matmul(v[0], v[2], false).unwrap();
                let a = g.reshape(a, &[30]).unwrap();
                let b = g.reshape(b, &[12]).unwrap();
                let a = g.reshape(a, &[10, 3]).unwrap();
                let b = g.reshape(b, &[4, 3]).unwrap();
                g.concat_rows(&[a, b]).unwrap()
            }),
        ),
        "transpose" => (vec![r(&[3, 4])], Box::new(|g, v| g.transpose(v[0]).unwrap())),
        "add" => (
            vec![r(&[2, 3]), r(&[2, 3])],
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
        ),
        "add_bias" => (
            vec![r(&[4, 3]), r(&[3])],
            Box::new(|g, v| g.add_bias(v[0], v[1]).unwrap()),
        ),
        "add_tiled" => (
            vec![r(&[6, 3]), r(&[3, 3])],
            Box::new(|g, v| g.add_tiled(v[0], v[1]).unwrap()),
        ),
        "mul" => (
            vec![r(&[2, 3]), r(&[2, 3])],
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
        ),
        "scale" => (vec![r(&[2, 3])], Box::new(|g, v| g.scale(v[0], -1.7).unwrap())),
        "sigmoid" => (vec![r(&[2, 3])], Box::new(|g, v| g.sigmoid(v[0]).unwrap())),
        "softmax_rows" => (vec![r(&[3, 4])], Box::new(|g, v| g.softmax_rows(v[0]).unwrap())),
        "layer_norm" => (
            vec![r(&[3, 4]), r(&[4]), r(&[4])],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-3).unwrap()),
        ),
        "dropout" => (
            vec![r(&[4, 5])],
            Box::new(|g, v| {
                let mut mask_rng = Rng64::seed(11);
                g.dropout(v[0], 0.3, Some(&mut mask_rng)).unwrap()
            }),
        ),
        "unfold_patches_3d" => (
            vec![r(&[2, 4, 4, 2])],
            Box::new(|g, v| g.unfold_patches_3d(v[0], 2).unwrap()),
        ),
        "diff_cols" => (vec![r(&[2, 3, 4])], Box::new(|g, v| g.diff_cols(v[0]).unwrap())),
        "split_heads" => (vec![r(&[6, 4])], Box::new(|g, v| g.split_heads(v[0], 2, 2).unwrap())),
        "merge_heads" => (vec![r(&[4, 3, 2])], Box::new(|g, v| g.merge_heads(v[0], 2, 2).unwrap())),
        "append_token" => (
            vec![r(&[4, 3]), r(&[3])],
            Box::new(|g, v| g.append_token(v[0], v[1], 2).unwrap()),
        ),
        "last_rows" => (vec![r(&[6, 3])], Box::new(|g, v| g.last_rows(v[0], 2).unwrap())),
        "concat_rows" => (
            vec![r(&[2, 3]), r(&[1, 3])],
            Box::new(|g, v| g.concat_rows(&[v[0], v[1]]).unwrap()),
        ),
        "slice_rows" => (vec![r(&[5, 3])], Box::new(|g, v| g.slice_rows(v[0], 1, 4).unwrap())),
        "reshape" => (vec![r(&[2, 6])], Box::new(|g, v| g.reshape(v[0], &[3, 4]).unwrap())),
        "sum" => (vec![r(&[2, 3])], Box::new(|g, v| g.sum(v[0]).unwrap())),
        "mean" => (vec![r(&[2, 3])], Box::new(|g, v| g.mean(v[0]).unwrap())),
        "softmax_cross_entropy" => (
            vec![r(&[3, 4])],
            Box::new(|g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1]).unwrap()),
        ),
        _ => return None,
    };
    Some(case)
}

/// Compares the backward rule of `op` to central differences of
/// `sum(op(inputs) ⊙ R)` for a random `R`.
pub fn op_gradient_error(op: &str, seed: u64, fault: Option<&str>) -> Option<GradError> {
    let mut rng = Rng64::seed(seed);
    let (inputs, f) = op_case(op, &mut rng)?;
    let probe_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.constant(t)).collect();
        let out = f(&mut g, &vars);
        g.shape(out).to_vec()
    };
    let probe = random(&mut rng, &probe_shape);
    let eval = |values: &[Tensor], grads: bool| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        if let Some(op) = fault {
            g.inject_backward_fault(op);
        }
        let vars: Vec<Var> = values.iter().cloned().map(|t| g.leaf(t, grads)).collect();
        let out = f(&mut g, &vars);
        let loss = if g.shape(out) == [1] {
            out
        } else {
            let r = g.constant(probe.clone());
            let prod = g.mul(out, r).unwrap();
            g.sum(prod).unwrap()
        };
        let value = g.value(loss).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        let gs = vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        (value, gs)
    };
    let (_, analytic) = eval(&inputs, true);
    let mut total = GradError::default();
    for (slot, input) in inputs.iter().enumerate() {
        let numeric = finite_diff_grad(
            |theta| {
                let mut vals = inputs.clone();
                vals[slot] = Tensor::new(input.shape(), theta.to_vec()).unwrap();
                eval(&vals, false).0
            },
            input.data(),
            STEP,
        );
        total = total.merge(grad_error(analytic[slot].data(), &numeric, REL_TOL, ABS_TOL));
    }
    Some(total)
}

fn gradient_suite(fault: Option<&str>) -> SuiteResult {
    let mut failed = Vec::new();
    let mut worst = 0.0f64;
    for (i, op) in DIFFERENTIABLE_OPS.iter().enumerate() {
        match op_gradient_error(op, 100 + i as u64, fault) {
            Some(e) => {
                worst = worst.max(e.max_rel);
                if !e.passed() {
                    failed.push(*op);
                }
            }
            None => failed.push(*op),
        }
    }
    SuiteResult {
        name: "op-gradients",
        passed: failed.is_empty(),
        max_error: worst,
        detail: if failed.is_empty() {
            format!("{} ops, max relative error", DIFFERENTIABLE_OPS.len())
        } else {
            format!("failing ops: {}", failed.join(", "))
        },
    }
}

/// The smallest configuration that exercises every layer type.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        patch_size: 4,
        pca_bands: 2,
        token_spatial: 2,
        d_embed: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        dropout_rate: 0.1,
        ln_eps: 1e-3,
        attention: AttentionKind::Dmhsa,
        n_classes: 3,
        seed: 3,
    }
}

/// Analytic vs numeric gradient of the training loss (cross-entropy plus
/// head L2, dropout masks replayed from a fixed seed) with respect to every
/// parameter of `cfg`, on a random batch.
pub fn model_gradient_error(cfg: &ModelConfig, batch: usize, seed: u64, fault: Option<&str>) -> GradError {
    let model = DiffFormer::new(cfg.clone()).expect("valid config");
    let init = ParamStore::init(cfg).expect("init");
    let mut rng = Rng64::seed(seed);
    let p = cfg.patch_size;
    let input = random(&mut rng, &[batch, p, p, cfg.pca_bands]);
    let labels: Vec<u16> = (0..batch).map(|i| (i % cfg.n_classes) as u16 + 1).collect();
    let penalized = l2_targets(&init, false);

    let eval = |params: &ParamStore, grads: bool| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        if let Some(op) = fault {
            g.inject_backward_fault(op);
        }
        let bound = params.bind(&mut g, grads);
        let x = g.constant(input.clone());
        let mut mask_rng = Rng64::seed(seed ^ 0xD0);
        let out = model.forward(&mut g, &bound, x, Some(&mut mask_rng)).unwrap();
        let loss = cross_entropy_loss(&mut g, out.logits, &labels, &bound, &penalized, 0.01).unwrap();
        let value = g.value(loss).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        let flat = bound.grads(&g).iter().flat_map(|t| t.data().to_vec()).collect();
        (value, flat)
    };
    let (_, analytic) = eval(&init, true);
    let mut probe = init.clone();
    let numeric = finite_diff_grad(
        |theta| {
            probe.assign_flat(theta);
            eval(&probe, false).0
        },
        &init.flatten(),
        STEP,
    );
    grad_error(&analytic, &numeric, REL_TOL, ABS_TOL)
}

fn model_gradient_suite(fault: Option<&str>) -> SuiteResult {
    let mut worst = GradError::default();
    let mut detail = Vec::new();
    for kind in [AttentionKind::Dmhsa, AttentionKind::Mhsa] {
        let cfg = ModelConfig {
            attention: kind,
            ..tiny_config()
        };
        let e = model_gradient_error(&cfg, 2, 17, fault);
        if !e.passed() {
            detail.push(format!("{} failed on {} coordinates", kind.as_str(), e.failures));
        }
        worst = worst.merge(e);
    }
    SuiteResult {
        name: "model-gradient",
        passed: worst.passed(),
        max_error: worst.max_rel,
        detail: if detail.is_empty() {
            "all parameters, max relative error".into()
        } else {
            detail.join("; ")
        },
    }
}

/// Measured deviations for the attention invariants.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AttentionChecks {
    /// Worst `|Σ_j A_ij − 1|` over both attention kinds.
    pub row_sum: f64,
    /// Worst `|cumsum(D) − S|`.
    pub cumsum: f64,
    /// Worst `|ΔD[:,0] − c|` after adding `c` to every score.
    pub shift_first: f64,
    /// Worst `|ΔD[:,j]|`, `j ≥ 1`, after the same shift.
    pub shift_rest: f64,
    /// Worst `|f(Πx) − Π f(x)|` for plain attention.
    pub mhsa_equivariance: f64,
    /// The same quantity for differential attention.
    pub dmhsa_equivariance: f64,
}

impl AttentionChecks {
    pub fn passed(&self) -> bool {
        self.row_sum < 1e-6
            && self.cumsum < 1e-9
            && self.shift_first < 1e-9
            && self.shift_rest < 1e-9
            && self.mhsa_equivariance < 1e-9
            && self.dmhsa_equivariance > 1e-6
    }
}

/// Evaluates the invariants on a random 6-token instance.
pub fn attention_checks(seed: u64) -> AttentionChecks {
    let mut rng = Rng64::seed(seed);
    let (t, heads, dh) = (6, 2, 4);
    let q = random(&mut rng, &[heads, t, dh]);
    let k = random(&mut rng, &[heads, t, dh]);
    let v = random(&mut rng, &[heads, t, dh]);
    let mut out = AttentionChecks::default();

    let core = |kind, shift: f64| {
        let mut g = Graph::new();
        let qv = g.constant(q.clone());
        let kv = g.constant(k.clone());
        let vv = g.constant(v.clone());
        let (scores, _, weights, _) = attention_core(&mut g, qv, kv, vv, kind, 0.0, None).unwrap();
        let shifted = {
            let c = g.constant(Tensor::full(g.shape(scores), shift));
            g.add(scores, c).unwrap()
        };
        let d = g.diff_cols(scores).unwrap();
        let d_shift = g.diff_cols(shifted).unwrap();
        (
            g.value(scores).clone(),
            g.value(d).clone(),
            g.value(d_shift).clone(),
            g.value(weights).clone(),
        )
    };
    for kind in [AttentionKind::Dmhsa, AttentionKind::Mhsa] {
        let (s, d, d_shift, a) = core(kind, 0.75);
        for row in a.data().chunks(t) {
            out.row_sum = out.row_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        for ((srow, drow), dsrow) in s.data().chunks(t).zip(d.data().chunks(t)).zip(d_shift.data().chunks(t)) {
            let mut acc = 0.0;
            for j in 0..t {
                acc += drow[j];
                out.cumsum = out.cumsum.max((acc - srow[j]).abs());
            }
            out.shift_first = out.shift_first.max((dsrow[0] - drow[0] - 0.75).abs());
            for j in 1..t {
                out.shift_rest = out.shift_rest.max((dsrow[j] - drow[j]).abs());
            }
        }
    }

    let d = heads * dh;
    let x = random(&mut rng, &[t, d]);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let permuted = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>());
    for kind in [AttentionKind::Mhsa, AttentionKind::Dmhsa] {
        let cfg = ModelConfig {
            d_embed: d,
            n_heads: heads,
            attention: kind,
            dropout_rate: 0.0,
            ..tiny_config()
        };
        let params = ParamStore::init(&cfg).unwrap();
        let apply = |input: &Tensor| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let layer = LayerVars::bind(&bound, 0);
            let xv = g.constant(input.clone());
            let trace = self_attention(&mut g, xv, &layer, &cfg, 1, None).unwrap();
            g.value(trace.output).clone()
        };
        let base = apply(&x);
        let moved = apply(&permuted);
        let mut err = 0.0f64;
        for (r, &src) in perm.iter().enumerate() {
            for (a, b) in moved.row(r).iter().zip(base.row(src)) {
                err = err.max((a - b).abs());
            }
        }
        match kind {
            AttentionKind::Mhsa => out.mhsa_equivariance = err,
            AttentionKind::Dmhsa => out.dmhsa_equivariance = err,
        }
    }
    out
}

fn attention_suite() -> SuiteResult {
    let c = attention_checks(29);
    SuiteResult {
        name: "attention",
        passed: c.passed(),
        max_error: c
            .row_sum
            .max(c.cumsum)
            .max(c.shift_first)
            .max(c.shift_rest)
            .max(c.mhsa_equivariance),
        detail: format!(
            "row sum {:.1e}, cumsum {:.1e}, shift {:.1e}/{:.1e}, equivariance mhsa {:.1e} dmhsa {:.1e}",
            c.row_sum, c.cumsum, c.shift_first, c.shift_rest, c.mhsa_equivariance, c.dmhsa_equivariance
        ),
    }
}

fn encoding_suite() -> SuiteResult {
    let pe = positional_encoding(50, 16).unwrap();
    let mut err = 0.0f64;
    for pos in 0..50 {
        let row = pe.row(pos);
        for pair in row.chunks(2) {
            err = err.max((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs());
        }
    }
    err = err.max((pe.at2(1, 0) - 1f64.sin()).abs());

    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![0.4, -1.3, 2.0]]));
    let w = g.constant(Tensor::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ]));
    let zero = g.constant(Tensor::zeros(&[3]));
    let zero_w = g.constant(Tensor::zeros(&[3, 3]));
    let low = g.constant(Tensor::full(&[3], -50.0));
    let saturated = LayerVars {
        wu: w,
        bu: zero,
        wg: zero_w,
        bg: low,
        ..placeholder_layer(zero)
    };
    let neutral = LayerVars { bg: zero, ..saturated };
    let (s_low, u) = swiglu_hidden(&mut g, x, &saturated).unwrap();
    let (s_mid, _) = swiglu_hidden(&mut g, x, &neutral).unwrap();
    let u = g.value(u).clone();
    let low_err = g.value(s_low).max_abs_diff(&u);
    let mid_err = g
        .value(s_mid)
        .data()
        .iter()
        .zip(u.data())
        .map(|(s, u)| (s - 1.5 * u).abs())
        .fold(0.0, f64::max);
    let passed = err < 1e-9 && low_err <= 1e-15 && mid_err <= 1e-12;
    SuiteResult {
        name: "encoding-and-ffn",
        passed,
        max_error: err.max(low_err).max(mid_err),
        detail: format!("positional {err:.1e}, gate saturation {low_err:.1e}, gate zero {mid_err:.1e}"),
    }
}

fn placeholder_layer(v: Var) -> LayerVars {
    LayerVars {
        ln1_gamma: v,
        ln1_beta: v,
        wq: v,
        bq: v,
        wk: v,
        bk: v,
        wv: v,
        bv: v,
        wo: v,
        bo: v,
        ln2_gamma: v,
        ln2_beta: v,
        wu: v,
        bu: v,
        wg: v,
        bg: v,
        wdown: v,
        bdown: v,
    }
}

/// Scores recomputed from the expanded list of `(truth, prediction)` pairs.
fn brute_force(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let n = cm.n_classes();
    let mut pairs = Vec::new();
    for t in 1..=n {
        for p in 1..=n {
            pairs.extend(std::iter::repeat_n((t, p), cm.count(t, p) as usize));
        }
    }
    let total = pairs.len() as f64;
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let mut recalls = Vec::new();
    let mut chance = 0.0;
    for c in 1..=n {
        let truth = pairs.iter().filter(|(t, _)| *t == c).count();
        let predicted = pairs.iter().filter(|(_, p)| *p == c).count();
        if truth > 0 {
            let hit = pairs.iter().filter(|&&(t, p)| t == c && p == c).count();
            recalls.push(hit as f64 / truth as f64);
        }
        chance += (truth as f64 / total) * (predicted as f64 / total);
    }
    let oa = correct / total;
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let k = if chance == 1.0 {
        if oa == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (oa - chance) / (1.0 - chance)
    };
    (oa, aa, k)
}

/// Largest disagreement between the metric functions and the brute-force
/// recomputation over `count` random matrices.
pub fn metrics_oracle_error(count: usize, seed: u64) -> f64 {
    let mut rng = Rng64::seed(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < count {
        let n = 1 + (rng.uniform() * 8.0) as usize;
        let n = n.min(8);
        let rows: Vec<Vec<u64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| (rng.uniform() * 51.0) as u64)
                    .map(|v| v.min(50))
                    .collect()
            })
            .collect();
        let cm = ConfusionMatrix::from_rows(&rows);
        if cm.total() == 0 {
            continue;
        }
        let (oa, aa, k) = brute_force(&cm);
        worst = worst
            .max((overall_accuracy(&cm).unwrap() - oa).abs())
            .max((average_accuracy(&cm).unwrap() - aa).abs())
            .max((kappa(&cm).unwrap() - k).abs());
        done += 1;
    }
    worst
}

fn metrics_suite() -> SuiteResult {
    let err = metrics_oracle_error(1000, 41);
    let hand = [
        (vec![vec![50, 0], vec![0, 50]], 1.0),
        (vec![vec![25, 25], vec![25, 25]], 0.0),
        (vec![vec![20, 5], vec![10, 15]], 0.4),
    ];
    let hand_err = hand
        .iter()
        .map(|(rows, want)| (kappa(&ConfusionMatrix::from_rows(rows)).unwrap() - want).abs())
        .fold(0.0, f64::max);
    SuiteResult {
        name: "metrics",
        passed: err <= 1e-12 && hand_err <= 1e-12,
        max_error: err.max(hand_err),
        detail: "1000 random matrices against brute force".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_has_a_case() {
        let mut rng = Rng64::seed(0);
        for op in DIFFERENTIABLE_OPS {
            assert!(op_case(op, &mut rng).is_some(), "{op}");
        }
    }

    #[test]
    fn clean_build_passes() {
        let report = run(None);
        assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn injected_fault_is_named() {
        let report = run(Some("layer_norm"));
        assert!(!report.passed());
        let ops = &report.suites[0];
        assert!(!ops.passed);
        assert!(ops.detail.contains("layer_norm"), "{}", ops.detail);
    }
}
