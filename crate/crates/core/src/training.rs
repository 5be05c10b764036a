//! Single-sample SGD, its projected variant, and the coupled twin-run
//! harness used to audit the stability lemmas on concrete trajectories.
//!
//! A twin run trains two copies from the same initialization on the same
//! index sequence. The second copy sees a replacement sample whenever the
//! drawn index equals the replaced one.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::backprop::{loss_gradients_with, prediction_gradients_from_tape, GradientSet};
use crate::bounds::{
    kappa1_effective, lemma3_coefficient, per_step_drift_recursion, rho_k, AssumptionConstants,
};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::graph::FilterMatrix;
use crate::model::{forward, ModelParams};
use crate::loss::Loss;
use crate::numerics::{frobenius_norm, norm2, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Spectral-norm ceiling enforced after every step.
    #[serde(default)]
    pub projection_b: Option<f64>,
    /// Snapshot stride; the final parameters are always kept.
    pub record_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.05,
            t: 200,
            loss: Loss::default(),
            seed: 0,
            projection_b: None,
            record_every: 1,
        }
    }
}

impl TrainConfig {
    /// `eta = 0` is accepted and leaves the parameters unchanged.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", format!("{} must be finite and non-negative", self.eta)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        if let Some(b) = self.projection_b {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid("projection_B", format!("{b} must be positive")));
            }
        }
        self.loss.validate()
    }
}

/// Uniform-with-replacement draws from `0..m`, from the `sgd` sub-stream.
pub fn draw_indices(seed: u64, m: usize, t: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut r = rng::stream(seed, "sgd");
    Ok((0..t).map(|_| r.random_range(0..m)).collect())
}

/// `theta_0` from the `init` sub-stream.
pub fn init_params(widths: &[usize], activation: crate::model::Activation, seed: u64) -> Result<ModelParams> {
    ModelParams::random_init(widths, activation, &mut rng::stream(seed, "init"))
}

/// Loss value at the sample and the updated parameters.
fn step_at(
    params: &ModelParams,
    filter: &FilterMatrix,
    features: &Matrix,
    sample: (usize, f64),
    eta: f64,
    loss: &Loss,
    step: usize,
) -> Result<(f64, ModelParams)> {
    let fail = |e: Error| Error::Training {
        step,
        message: e.to_string(),
    };
    loss.check_label(sample.1).map_err(fail)?;
    let tape = forward(params, filter, features).map_err(fail)?;
    let (node, y) = sample;
    let value = loss.value(tape.predictions[node], y);
    let g = loss_gradients_with(params, filter, &tape, node, |y_hat| loss.derivative(y_hat, y)).map_err(fail)?;
    if !g.is_finite() || !value.is_finite() {
        return Err(Error::Training {
            step,
            message: "non-finite loss or gradient".into(),
        });
    }
    let next = params.add_scaled(-eta, &g.grad_weights, &g.grad_w).map_err(fail)?;
    if !next.is_finite() {
        return Err(Error::Training {
            step,
            message: "parameters became non-finite".into(),
        });
    }
    Ok((value, next))
}

/// `theta - eta grad_theta l(f(x | theta), y)`
pub fn sgd_step(
    params: &ModelParams,
    filter: &FilterMatrix,
    features: &Matrix,
    sample: (usize, f64),
    eta: f64,
    loss: &Loss,
) -> Result<ModelParams> {
    step_at(params, filter, features, sample, eta, loss, 1).map(|(_, p)| p)
}

/// Rescales each block whose spectral norm exceeds `b` down to norm `b`.
pub fn project_params(params: &ModelParams, b: f64) -> Result<ModelParams> {
    if !(b > 0.0) {
        return Err(Error::invalid("projection bound", format!("{b} must be positive")));
    }
    let norms = params.block_norms()?;
    let mut out = params.clone();
    let k = params.depth();
    for (i, &nrm) in norms.iter().enumerate() {
        if nrm > b {
            let s = b / nrm;
            if i < k {
                out.set_block(i, params.weights()[i].scale(s));
            } else {
                out.set_w(params.w().iter().map(|x| x * s).collect());
            }
        }
    }
    Ok(out)
}

/// Mean loss over `samples`.
pub fn risk(params: &ModelParams, filter: &FilterMatrix, features: &Matrix, samples: &[(usize, f64)], loss: &Loss) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let tape = forward(params, filter, features)?;
    let total: f64 = samples.iter().map(|&(v, y)| loss.value(tape.predictions[v], y)).sum();
    Ok(total / samples.len() as f64)
}

fn max_norm(p: &ModelParams) -> Result<f64> {
    Ok(p.block_norms()?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Largest block spectral norm over `theta_0..theta_T`.
    pub measured_b: f64,
    /// Loss at the drawn sample before each step.
    pub step_losses: Vec<f64>,
    pub initial_risk: f64,
    pub final_risk: f64,
    pub index_sequence: Vec<usize>,
    /// `(t, theta_t)` every `record_every` steps, plus `t = T`.
    pub snapshots: Vec<(usize, ModelParams)>,
}

fn keep_snapshot(t: usize, total: usize, every: usize) -> bool {
    t % every == 0 || t == total
}

/// Runs `T` SGD steps from `init` over the training split.
pub fn train(
    dataset: &Dataset,
    filter: &FilterMatrix,
    init: &ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainSummary)> {
    config.validate()?;
    let samples = dataset.train_samples();
    let index_sequence = draw_indices(config.seed, samples.len(), config.t)?;
    let features = dataset.features();
    let initial_risk = risk(init, filter, features, &samples, &config.loss)?;
    let mut params = init.clone();
    let mut measured_b = max_norm(&params)?;
    let mut snapshots = vec![(0, params.clone())];
    let mut step_losses = Vec::with_capacity(config.t);
    for (t, &i) in index_sequence.iter().enumerate().map(|(j, i)| (j + 1, i)) {
        let (value, mut next) = step_at(&params, filter, features, samples[i], config.eta, &config.loss, t)?;
        if let Some(b) = config.projection_b {
            next = project_params(&next, b)?;
        }
        measured_b = measured_b.max(max_norm(&next)?);
        step_losses.push(value);
        params = next;
        if keep_snapshot(t, config.t, config.record_every) {
            snapshots.push((t, params.clone()));
        }
    }
    let final_risk = risk(&params, filter, features, &samples, &config.loss)?;
    Ok((
        params,
        TrainSummary {
            measured_b,
            step_losses,
            initial_risk,
            final_risk,
            index_sequence,
            snapshots,
        },
    ))
}

/// One step of a twin run, measured after the update.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinStep {
    pub t: usize,
    pub i_t: usize,
    pub hit: bool,
    /// `||theta_t - theta'_t||_*`
    pub delta_theta_star: f64,
    pub norms_a: Vec<f64>,
    pub norms_b: Vec<f64>,
    /// Largest block norm of either run over steps `0..=t`.
    pub b_running: f64,
    /// Loss at each run's drawn sample, before the update.
    pub loss_a: f64,
    pub loss_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinTrace {
    pub config: TrainConfig,
    /// Training-set position that is replaced in the second run.
    pub replaced_index: usize,
    pub original_sample: (usize, f64),
    pub replacement_sample: (usize, f64),
    /// Training-set size `m`.
    pub m: usize,
    pub index_sequence: Vec<usize>,
    pub steps: Vec<TwinStep>,
    pub snapshots_a: Vec<(usize, ModelParams)>,
    pub snapshots_b: Vec<(usize, ModelParams)>,
    pub measured_b: f64,
}

pub const TWIN_CSV_HEADER: &str = "t,i_t,hit,delta_theta_star,B_running,loss_a,loss_b";

impl TwinTrace {
    pub fn hits(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.hit).collect()
    }

    pub fn final_a(&self) -> &ModelParams {
        &self.snapshots_a.last().expect("trace has theta_0").1
    }

    pub fn final_b(&self) -> &ModelParams {
        &self.snapshots_b.last().expect("trace has theta_0").1
    }

    /// `||Delta theta_T||_*`, zero when `T = 0`.
    pub fn final_delta(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.delta_theta_star)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TWIN_CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{:e}\n",
                s.t, s.i_t, s.hit as u8, s.delta_theta_star, s.b_running, s.loss_a, s.loss_b
            ));
        }
        out
    }
}

/// Trains the coupled pair on `S` and on `S` with training sample
/// `replaced_index` swapped for `replacement`.
pub fn twin_train(
    dataset: &Dataset,
    filter: &FilterMatrix,
    init: &ModelParams,
    config: &TrainConfig,
    replaced_index: usize,
    replacement: (usize, f64),
) -> Result<TwinTrace> {
    config.validate()?;
    let samples = dataset.train_samples();
    let m = samples.len();
    if replaced_index >= m {
        return Err(Error::invalid(
            "replaced_index",
            format!("{replaced_index} out of range for {m} training samples"),
        ));
    }
    if replacement.0 >= dataset.num_nodes() {
        return Err(Error::NodeOutOfRange {
            node: replacement.0,
            num_nodes: dataset.num_nodes(),
        });
    }
    config.loss.check_label(replacement.1)?;
    let index_sequence = draw_indices(config.seed, m, config.t)?;
    let features = dataset.features();
    let (mut a, mut b) = (init.clone(), init.clone());
    let mut b_running = max_norm(init)?;
    let mut snapshots_a = vec![(0, a.clone())];
    let mut snapshots_b = vec![(0, b.clone())];
    let mut steps = Vec::with_capacity(config.t);
    for (t, &i) in index_sequence.iter().enumerate().map(|(j, i)| (j + 1, i)) {
        let hit = i == replaced_index;
        let za = samples[i];
        let zb = if hit { replacement } else { za };
        let (loss_a, mut na) = step_at(&a, filter, features, za, config.eta, &config.loss, t)?;
        let (loss_b, mut nb) = step_at(&b, filter, features, zb, config.eta, &config.loss, t)?;
        if let Some(bound) = config.projection_b {
            na = project_params(&na, bound)?;
            nb = project_params(&nb, bound)?;
        }
        let norms_a = na.block_norms()?;
        let norms_b = nb.block_norms()?;
        b_running = norms_a.iter().chain(&norms_b).fold(b_running, |acc, &x| acc.max(x));
        let delta_theta_star = crate::model::param_norm_star(&na, &nb)?;
        a = na;
        b = nb;
        if keep_snapshot(t, config.t, config.record_every) {
            snapshots_a.push((t, a.clone()));
            snapshots_b.push((t, b.clone()));
        }
        steps.push(TwinStep {
            t,
            i_t: i,
            hit,
            delta_theta_star,
            norms_a,
            norms_b,
            b_running,
            loss_a,
            loss_b,
        });
    }
    Ok(TwinTrace {
        config: *config,
        replaced_index,
        original_sample: samples[replaced_index],
        replacement_sample: replacement,
        m,
        index_sequence,
        steps,
        snapshots_a,
        snapshots_b,
        measured_b: b_running,
    })
}

/// Worst measured/bound ratio of one inequality family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlackRatio {
    pub name: &'static str,
    /// `0/0` counts as 0.
    pub max_ratio: f64,
    pub checks: usize,
    pub violations: usize,
}

impl SlackRatio {
    fn new(name: &'static str) -> Self {
        SlackRatio {
            name,
            max_ratio: 0.0,
            checks: 0,
            violations: 0,
        }
    }

    fn record(&mut self, measured: f64, bound: f64) {
        let r = if measured == 0.0 {
            0.0
        } else if bound > 0.0 {
            measured / bound
        } else {
            f64::INFINITY
        };
        self.checks += 1;
        if !(r <= 1.0) {
            self.violations += 1;
        }
        if r > self.max_ratio || r.is_nan() {
            self.max_ratio = r;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinAudit {
    pub ratios: Vec<SlackRatio>,
    pub measured_b: f64,
    /// `max_z |l(theta_T; z) - l(theta'_T; z)|` over test nodes, and twice it.
    pub loss_gap_max: f64,
    pub loss_gap_max_doubled: f64,
    pub loss_gap_mean: f64,
    pub loss_gap_mean_doubled: f64,
}

impl TwinAudit {
    pub fn passed(&self) -> bool {
        self.ratios.iter().all(SlackRatio::passed)
    }

    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().map(|r| r.max_ratio).fold(0.0, f64::max)
    }

    pub fn ratio(&self, name: &str) -> Option<&SlackRatio> {
        self.ratios.iter().find(|r| r.name == name)
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for r in &self.ratios {
            out.push_str(&format!(
                "{}={:e} checks={} violations={}\n",
                r.name, r.max_ratio, r.checks, r.violations
            ));
        }
        out.push_str(&format!("measured_B={:e}\n", self.measured_b));
        out.push_str(&format!("loss_gap_max={:e}\n", self.loss_gap_max));
        out.push_str(&format!("loss_gap_max_doubled={:e}\n", self.loss_gap_max_doubled));
        out.push_str(&format!("loss_gap_mean={:e}\n", self.loss_gap_mean));
        out.push_str(&format!("loss_gap_mean_doubled={:e}\n", self.loss_gap_mean_doubled));
        out.push_str(&format!("max_ratio={:e}\n", self.max_ratio()));
        out.push_str(&format!("passed={}\n", self.passed()));
        out
    }
}

pub const AUDIT_HIDDEN_OUTPUTS: &str = "hidden_output_variation";
pub const AUDIT_PREDICTION: &str = "prediction_variation";
pub const AUDIT_SAME_SAMPLE_OUTPUT: &str = "same_sample_gradient_w";
pub const AUDIT_SAME_SAMPLE_HIDDEN: &str = "same_sample_gradient_hidden";
pub const AUDIT_ANY_SAMPLE: &str = "any_sample_gradient";
pub const AUDIT_LOSS_GAP: &str = "loss_gap";
pub const AUDIT_DRIFT: &str = "drift_recursion";

fn block_diff_norms(a: &GradientSet, b: &GradientSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(a.grad_weights.len() + 1);
    for (x, y) in a.grad_weights.iter().zip(&b.grad_weights) {
        out.push(frobenius_norm(&x.sub(y)?));
    }
    out.push(norm2(&a.grad_w.iter().zip(&b.grad_w).map(|(x, y)| x - y).collect::<Vec<_>>()));
    Ok(out)
}

/// Constants for one audited pair: measured `B`, the filter's `C_g`, the
/// dataset's `C_X` and the trace's shape; everything else from `base`.
pub fn audit_constants(
    base: &AssumptionConstants,
    b: f64,
    filter: &FilterMatrix,
    dataset: &Dataset,
    trace: &TwinTrace,
) -> AssumptionConstants {
    AssumptionConstants {
        b,
        c_g: filter.c_g(),
        c_x: dataset.c_x(),
        k: trace.snapshots_a[0].1.depth(),
        eta: trace.config.eta,
        t: trace.config.t,
        m: trace.m,
        ..*base
    }
}

/// Checks every recorded snapshot pair of `trace` against the variation
/// lemmas, using for each pair the largest block norm of the two snapshots
/// as `B`, and checks the per-step drift against the derandomized
/// recursion with the trace-wide `B`. Same-sample checks run at every test
/// node; the any-sample check pairs the original sample under the first
/// run with the replacement under the second.
pub fn audit_twin(trace: &TwinTrace, filter: &FilterMatrix, dataset: &Dataset, base: &AssumptionConstants) -> Result<TwinAudit> {
    if trace.steps.len() != trace.config.t || trace.snapshots_a.len() != trace.snapshots_b.len() {
        return Err(Error::invalid("trace", "incomplete twin trace"));
    }
    let loss = &trace.config.loss;
    let features = dataset.features();
    let tests = dataset.test_samples();
    let mut hidden = SlackRatio::new(AUDIT_HIDDEN_OUTPUTS);
    let mut pred = SlackRatio::new(AUDIT_PREDICTION);
    let mut same_w = SlackRatio::new(AUDIT_SAME_SAMPLE_OUTPUT);
    let mut same_hidden = SlackRatio::new(AUDIT_SAME_SAMPLE_HIDDEN);
    let mut any = SlackRatio::new(AUDIT_ANY_SAMPLE);
    let mut gap = SlackRatio::new(AUDIT_LOSS_GAP);
    let mut drift = SlackRatio::new(AUDIT_DRIFT);

    for ((ta, pa), (tb, pb)) in trace.snapshots_a.iter().zip(&trace.snapshots_b) {
        if ta != tb {
            return Err(Error::invalid("trace", "snapshot steps of the two runs differ"));
        }
        let b = max_norm(pa)?.max(max_norm(pb)?);
        let c = audit_constants(base, b, filter, dataset, trace);
        let k = c.k;
        let a_s = c.alpha_sigma;
        let diff_norms = pa.difference(pb)?.block_norms()?;
        let delta: f64 = diff_norms.iter().sum();
        let tape_a = forward(pa, filter, features)?;
        let tape_b = forward(pb, filter, features)?;

        let mut w_sum = 0.0;
        for layer in 1..=k {
            w_sum += diff_norms[layer - 1];
            let measured = frobenius_norm(&tape_a.layer_outputs[layer].sub(&tape_b.layer_outputs[layer])?);
            let bound = b.powi(layer as i32 - 1) * (a_s * c.c_g).powi(layer as i32) * c.c_x * w_sum;
            hidden.record(measured, bound);
        }

        let lip = b.powi(k as i32) * a_s.powi(k as i32 + 1) * c.c_g.powi(k as i32 + 1) * c.c_x;
        let kappa1 = kappa1_effective(&c).value();
        let rho: Vec<f64> = (1..=k).map(|j| rho_k(&c, j).map(|v| v.value())).collect::<Result<_>>()?;
        let lemma3 = lemma3_coefficient(&c).value();
        let grads = |p: &ModelParams, tape, (v, y): (usize, f64)| {
            loss_gradients_with(p, filter, tape, v, |y_hat| loss.derivative(y_hat, y))
        };
        let repl_b = grads(pb, &tape_b, trace.replacement_sample)?;
        let orig_a = grads(pa, &tape_a, trace.original_sample)?;
        for d in block_diff_norms(&orig_a, &repl_b)? {
            any.record(d, 2.0 * lemma3);
        }
        for &(v, y) in &tests {
            pred.record((tape_a.predictions[v] - tape_b.predictions[v]).abs(), lip * delta);
            let ga = grads(pa, &tape_a, (v, y))?;
            let gb = grads(pb, &tape_b, (v, y))?;
            let same = block_diff_norms(&ga, &gb)?;
            same_w.record(same[k], kappa1 * delta);
            for j in 0..k {
                same_hidden.record(same[j], (kappa1 + rho[j]) * delta);
            }
            let la = loss.value(tape_a.predictions[v], y);
            let lb = loss.value(tape_b.predictions[v], y);
            gap.record((la - lb).abs(), lemma3 * delta);
        }
    }

    let c = audit_constants(base, trace.measured_b, filter, dataset, trace);
    let bound = per_step_drift_recursion(&c, &trace.hits())?;
    for (s, &bt) in trace.steps.iter().zip(&bound[1..]) {
        drift.record(s.delta_theta_star, bt);
    }

    let (pa, pb) = (trace.final_a(), trace.final_b());
    let (tape_a, tape_b) = (forward(pa, filter, features)?, forward(pb, filter, features)?);
    let gaps: Vec<f64> = tests
        .iter()
        .map(|&(v, y)| (loss.value(tape_a.predictions[v], y) - loss.value(tape_b.predictions[v], y)).abs())
        .collect();
    let loss_gap_max = gaps.iter().copied().fold(0.0, f64::max);
    let loss_gap_mean = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
    Ok(TwinAudit {
        ratios: vec![hidden, pred, same_w, same_hidden, any, gap, drift],
        measured_b: trace.measured_b,
        loss_gap_max,
        loss_gap_max_doubled: 2.0 * loss_gap_max,
        loss_gap_mean,
        loss_gap_mean_doubled: 2.0 * loss_gap_mean,
    })
}

/// Result of checking the layer-norm bounds on one parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerNormAudit {
    pub b: f64,
    pub checks: usize,
    pub violations: usize,
    pub max_ratio: f64,
}

impl LayerNormAudit {
    pub fn merge(self, o: LayerNormAudit) -> LayerNormAudit {
        LayerNormAudit {
            b: self.b.max(o.b),
            checks: self.checks + o.checks,
            violations: self.violations + o.violations,
            max_ratio: self.max_ratio.max(o.max_ratio),
        }
    }
}

/// With `B` the largest block norm of `params` and `a = B alpha_sigma C_g`:
/// `||X^(k)||_F <= a^k C_X`, `||df/dX^(k)||_F <= a^(K+1-k)` and every
/// block gradient of `f` at most `B^K alpha_sigma^(K+1) C_g^(K+1) C_X` in
/// Frobenius norm, at each of `nodes`.
pub fn audit_layer_norms(
    params: &ModelParams,
    filter: &FilterMatrix,
    features: &Matrix,
    nodes: &[usize],
) -> Result<LayerNormAudit> {
    let b = max_norm(params)?;
    let alpha = params.activation().alpha_sigma();
    let c_g = filter.c_g();
    let c_x = frobenius_norm(features);
    let k = params.depth() as i32;
    let a = b * alpha * c_g;
    let tape = forward(params, filter, features)?;
    let mut r = SlackRatio::new("layer_norms");
    for (layer, x) in tape.layer_outputs.iter().enumerate().skip(1) {
        r.record(frobenius_norm(x), a.powi(layer as i32) * c_x);
    }
    let grad_bound = b.powi(k) * alpha.powi(k + 1) * c_g.powi(k + 1) * c_x;
    for &v in nodes {
        let g = prediction_gradients_from_tape(params, filter, &tape, v)?;
        for (layer, gx) in g.grad_x.iter().enumerate() {
            r.record(frobenius_norm(gx), a.powi(k + 1 - layer as i32));
        }
        for gw in &g.grad_weights {
            r.record(frobenius_norm(gw), grad_bound);
        }
        r.record(norm2(&g.grad_w), grad_bound);
    }
    Ok(LayerNormAudit {
        b,
        checks: r.checks,
        violations: r.violations,
        max_ratio: r.max_ratio,
    })
}
