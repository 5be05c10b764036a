//! Exact gradients of a node prediction and of a sample loss.
//!
//! With `u = row x of g`, `s = u X^(K) w` and `R^(k) = sigma'(g X^(k-1) W^(k))`:
//!
//! ```text
//! grad_w f        = sigma'(s) (u X^(K))^T
//! df/dX^(K)       = sigma'(s) u^T w^T
//! grad_W^(k) f    = (g X^(k-1))^T (df/dX^(k) . R^(k))
//! df/dX^(k-1)     = g^T (df/dX^(k) . R^(k)) W^(k)^T
//! ```
//!
//! Loss gradients are the prediction gradients times `dl/dy_hat`.

use serde::{Deserialize, Serialize};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{build_filter, FilterKind, FilterMatrix, Graph};
use crate::loss::Loss;
use crate::model::{forward, Activation, ForwardTape, ModelParams};
use crate::numerics::{hadamard, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientTarget {
    Prediction,
    Loss,
}

/// Gradients shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grad_w: Vec<f64>,
    /// `grad_W^(1), ..., grad_W^(K)`
    pub grad_weights: Vec<Matrix>,
    /// `df/dX^(0), ..., df/dX^(K)` (scaled like the rest for loss targets).
    /// Empty for finite-difference results.
    pub grad_x: Vec<Matrix>,
    pub with_respect_to: GradientTarget,
}

impl GradientSet {
    /// Multiplies every block by `s`.
    pub fn scaled(&self, s: f64, target: GradientTarget) -> GradientSet {
        GradientSet {
            grad_w: self.grad_w.iter().map(|x| x * s).collect(),
            grad_weights: self.grad_weights.iter().map(|m| m.scale(s)).collect(),
            grad_x: self.grad_x.iter().map(|m| m.scale(s)).collect(),
            with_respect_to: target,
        }
    }

    /// Same layout as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.grad_weights.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        v.extend_from_slice(&self.grad_w);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.grad_w.iter().all(|x| x.is_finite()) && self.grad_weights.iter().all(Matrix::is_finite)
    }
}

fn check_node(filter: &FilterMatrix, node: usize) -> Result<()> {
    if node >= filter.num_nodes() {
        return Err(Error::NodeOutOfRange {
            node,
            num_nodes: filter.num_nodes(),
        });
    }
    Ok(())
}

/// Gradients of `f(x | theta)`, recomputing the forward pass.
pub fn prediction_gradients(
    params: &ModelParams,
    filter: &FilterMatrix,
    features: &Matrix,
    node: usize,
) -> Result<GradientSet> {
    check_node(filter, node)?;
    let tape = forward(params, filter, features)?;
    prediction_gradients_from_tape(params, filter, &tape, node)
}

/// Gradients of `f(x | theta)` from an existing tape of the same parameters.
pub fn prediction_gradients_from_tape(
    params: &ModelParams,
    filter: &FilterMatrix,
    tape: &ForwardTape,
    node: usize,
) -> Result<GradientSet> {
    check_node(filter, node)?;
    let k = params.depth();
    if tape.layer_outputs.len() != k + 1 || tape.pre_activations.len() != k {
        return Err(Error::Architecture("tape depth does not match parameters".into()));
    }
    let act = params.activation();
    let sp = act.derivative(tape.output_pre[node]);
    let grad_w: Vec<f64> = tape.propagated[k].row(node).iter().map(|v| sp * v).collect();

    let n = filter.num_nodes();
    let w = params.w();
    let mut g_cur = Matrix::zeros(n, w.len());
    let (idx, vals) = filter.csr().row(node);
    for (&j, &u) in idx.iter().zip(vals) {
        for (dst, &wv) in g_cur.row_mut(j).iter_mut().zip(w) {
            *dst = sp * u * wv;
        }
    }
    let mut grad_x = vec![g_cur.clone()];
    let mut grad_weights = Vec::with_capacity(k);
    for layer in (1..=k).rev() {
        let r = tape.pre_activations[layer - 1].map(|x| act.derivative(x));
        let p = hadamard(&g_cur, &r)?;
        grad_weights.push(tape.propagated[layer - 1].t_matmul(&p)?);
        let pw = p.matmul_t(&params.weights()[layer - 1])?;
        g_cur = filter.apply_transpose(&pw)?;
        grad_x.push(g_cur.clone());
    }
    grad_weights.reverse();
    grad_x.reverse();
    Ok(GradientSet {
        grad_w,
        grad_weights,
        grad_x,
        with_respect_to: GradientTarget::Prediction,
    })
}

/// Gradients of `l(f(x | theta), y)` for a supplied `dl/dy_hat`.
pub fn loss_gradients_with(
    params: &ModelParams,
    filter: &FilterMatrix,
    tape: &ForwardTape,
    node: usize,
    dloss: impl Fn(f64) -> f64,
) -> Result<GradientSet> {
    let pred = prediction_gradients_from_tape(params, filter, tape, node)?;
    Ok(pred.scaled(dloss(tape.predictions[node]), GradientTarget::Loss))
}

/// Gradients of the registered loss at sample `(node, label)`.
pub fn loss_gradients(
    params: &ModelParams,
    filter: &FilterMatrix,
    features: &Matrix,
    sample: (usize, f64),
    loss: &Loss,
) -> Result<GradientSet> {
    loss.check_label(sample.1)?;
    check_node(filter, sample.0)?;
    let tape = forward(params, filter, features)?;
    loss_gradients_with(params, filter, &tape, sample.0, |y_hat| loss.derivative(y_hat, sample.1))
}

/// What a finite-difference gradient differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiniteDiffTarget {
    Prediction { node: usize },
    Loss { node: usize, label: f64, loss: Loss },
}

/// Central differences `(F(theta + h e_i) - F(theta - h e_i)) / 2h` for every
/// scalar parameter. Accuracy depends on the scale of the parameters; the
/// default step of `1e-5` suits entries of order one.
pub fn finite_diff_gradients(
    params: &ModelParams,
    filter: &FilterMatrix,
    features: &Matrix,
    target: FiniteDiffTarget,
    h: f64,
) -> Result<GradientSet> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", format!("{h} is not positive")));
    }
    let (node, with_respect_to) = match target {
        FiniteDiffTarget::Prediction { node } => (node, GradientTarget::Prediction),
        FiniteDiffTarget::Loss { node, label, loss } => {
            loss.check_label(label)?;
            (node, GradientTarget::Loss)
        }
    };
    check_node(filter, node)?;
    let eval = |p: &ModelParams| -> Result<f64> {
        let y_hat = forward(p, filter, features)?.predictions[node];
        Ok(match target {
            FiniteDiffTarget::Prediction { .. } => y_hat,
            FiniteDiffTarget::Loss { label, loss, .. } => loss.value(y_hat, label),
        })
    };
    let base = params.to_flat();
    let mut flat = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        let plus = eval(&params.with_flat(&flat)?)?;
        flat[i] = base[i] - h;
        let minus = eval(&params.with_flat(&flat)?)?;
        flat[i] = base[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    let shaped = params.with_flat(&grad)?;
    Ok(GradientSet {
        grad_w: shaped.w().to_vec(),
        grad_weights: shaped.weights().to_vec(),
        grad_x: Vec::new(),
        with_respect_to,
    })
}

/// Entrywise agreement between two gradient sets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradientAgreement {
    pub entries: usize,
    /// Largest `|a - b| / max(|a|, |b|)` among entries above the absolute floor.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Entries failing both the absolute floor and the relative tolerance.
    pub failures: usize,
}

impl GradientAgreement {
    pub fn merge(self, other: GradientAgreement) -> GradientAgreement {
        GradientAgreement {
            entries: self.entries + other.entries,
            max_relative_error: self.max_relative_error.max(other.max_relative_error),
            max_absolute_error: self.max_absolute_error.max(other.max_absolute_error),
            failures: self.failures + other.failures,
        }
    }
}

/// An entry passes when `|a - b| <= abs_floor` or its relative error is at
/// most `rel_tol`.
pub fn compare_gradients(a: &GradientSet, b: &GradientSet, rel_tol: f64, abs_floor: f64) -> Result<GradientAgreement> {
    let (fa, fb) = (a.to_flat(), b.to_flat());
    if fa.len() != fb.len() {
        return Err(Error::Architecture("gradient sets differ in size".into()));
    }
    let mut out = GradientAgreement {
        entries: fa.len(),
        ..GradientAgreement::default()
    };
    for (x, y) in fa.iter().zip(&fb) {
        let abs = (x - y).abs();
        out.max_absolute_error = out.max_absolute_error.max(abs);
        if abs <= abs_floor {
            continue;
        }
        let rel = abs / x.abs().max(y.abs());
        out.max_relative_error = out.max_relative_error.max(rel);
        if !(rel <= rel_tol) {
            out.failures += 1;
        }
    }
    Ok(out)
}

/// Settings for a batch of randomized gradient checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub max_nodes: usize,
    /// Largest `K`; depths are drawn from `0..=max_depth`.
    pub max_depth: usize,
    pub max_width: usize,
    pub filters: Vec<FilterKind>,
    pub activations: Vec<Activation>,
    pub h: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 100,
            seed: 0,
            max_nodes: 10,
            max_depth: 3,
            max_width: 4,
            filters: vec![FilterKind::SymSelfloop, FilterKind::RwPlusId],
            activations: vec![Activation::Tanh, Activation::Elu],
            h: 1e-5,
            rel_tol: 1e-6,
            abs_floor: 1e-9,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.max_nodes < 2 {
            return Err(Error::invalid("max_nodes", "must be at least 2"));
        }
        if self.max_width == 0 {
            return Err(Error::invalid("max_width", "must be at least 1"));
        }
        if self.filters.is_empty() || self.activations.is_empty() {
            return Err(Error::invalid("gradcheck", "filters and activations must be non-empty"));
        }
        if !(self.h > 0.0 && self.rel_tol > 0.0 && self.abs_floor >= 0.0) {
            return Err(Error::invalid("gradcheck", "h and rel_tol must be positive, abs_floor non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub agreement: GradientAgreement,
    /// Trials with at least one failing entry.
    pub failed_trials: Vec<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failed_trials.is_empty()
    }

    pub fn to_key_value(&self) -> String {
        let a = &self.agreement;
        format!(
            "trials={}\nentries={}\nworst_relative_error={:e}\nworst_absolute_error={:e}\nfailed_entries={}\nfailed_trials={}\npassed={}\n",
            self.trials,
            a.entries,
            a.max_relative_error,
            a.max_absolute_error,
            a.failures,
            self.failed_trials.len(),
            self.passed()
        )
    }
}

/// Connected-enough random graph: a path plus `n` random chords.
fn check_graph(rng: &mut impl rand::Rng, n: usize) -> Result<Graph> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for _ in 0..n {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    Graph::new(n, edges)
}

/// Compares analytic and central-difference gradients on `trials` random
/// instances. Even trials differentiate the prediction, odd trials the
/// squared loss. `tamper` is applied to each analytic gradient before the
/// comparison, for fault injection.
pub fn gradient_check_suite(cfg: &GradCheckConfig, tamper: impl Fn(&mut GradientSet)) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut total = GradientAgreement::default();
    let mut failed_trials = Vec::new();
    for trial in 0..cfg.trials {
        let mut r = rng::indexed_stream(cfg.seed, "gradcheck", trial as u64);
        let n = r.random_range(2..=cfg.max_nodes);
        let k = r.random_range(0..=cfg.max_depth);
        let widths: Vec<usize> = (0..=k).map(|_| r.random_range(1..=cfg.max_width)).collect();
        let kind = cfg.filters[r.random_range(0..cfg.filters.len())];
        let act = cfg.activations[r.random_range(0..cfg.activations.len())];
        let filter = build_filter(&check_graph(&mut r, n)?, kind)?;
        let data = (0..n * widths[0]).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = Matrix::new(n, widths[0], data)?;
        let params = ModelParams::random_init(&widths, act, &mut r)?;
        let node = r.random_range(0..n);
        let (mut analytic, target) = if trial % 2 == 0 {
            (
                prediction_gradients(&params, &filter, &x, node)?,
                FiniteDiffTarget::Prediction { node },
            )
        } else {
            let label = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            let loss = Loss::default();
            (
                loss_gradients(&params, &filter, &x, (node, label), &loss)?,
                FiniteDiffTarget::Loss { node, label, loss },
            )
        };
        tamper(&mut analytic);
        let numeric = finite_diff_gradients(&params, &filter, &x, target, cfg.h)?;
        let a = compare_gradients(&analytic, &numeric, cfg.rel_tol, cfg.abs_floor)?;
        if a.failures > 0 {
            failed_trials.push(trial);
        }
        total = total.merge(a);
    }
    Ok(GradCheckReport {
        trials: cfg.trials,
        agreement: total,
        failed_trials,
    })
}
