//! The deep GCN: activations, parameters, forward pass with tape, and the
//! composite parameter norm.
//!
//! Hidden layers follow `X^(k) = sigma(g X^(k-1) W^(k))` for `k = 1..K` and the
//! node outputs are `y_hat = sigma(g X^(K) w)`. With `K = 0` this is the
//! single-layer model `sigma(g X w)`.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FilterMatrix;
use crate::numerics::{norm2, spectral_norm_with, Matrix, PowerOptions};

/// Pointwise activation with its Lipschitz constant `alpha_sigma` and the
/// Lipschitz constant `nu_sigma` of its derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// ELU with scale 1.
    Elu,
    /// Linear stub for verification only; not a valid choice for the bounds.
    Identity,
}

/// `sup |tanh''|`, attained where `tanh^2 = 1/3`: `4 / (3 sqrt 3)`.
pub const TANH_SECOND_DERIVATIVE_SUP: f64 = 0.769_800_358_919_501_2;

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn alpha_sigma(self) -> f64 {
        1.0
    }

    /// Stored with a small ceiling above the exact supremum for tanh.
    pub fn nu_sigma(self) -> f64 {
        match self {
            Activation::Tanh => 0.7699,
            Activation::Elu => 1.0,
            Activation::Identity => 0.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::invalid("activation", format!("`{s}` (expected tanh, elu or identity)"))),
        }
    }
}

/// `theta = {W^(1), ..., W^(K), w}` plus the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    weights: Vec<Matrix>,
    w: Vec<f64>,
    activation: Activation,
}

impl ModelParams {
    /// Checks that `W^(k)` is `d_{k-1} x d_k` along the chain and that `w`
    /// has length `d_K`.
    pub fn new(weights: Vec<Matrix>, w: Vec<f64>, activation: Activation) -> Result<Self> {
        for pair in weights.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::Architecture(format!(
                    "layer widths do not chain: {}x{} then {}x{}",
                    pair[0].rows(),
                    pair[0].cols(),
                    pair[1].rows(),
                    pair[1].cols()
                )));
            }
        }
        if let Some(last) = weights.last() {
            if last.cols() != w.len() {
                return Err(Error::Architecture(format!(
                    "output vector has length {} but the last hidden width is {}",
                    w.len(),
                    last.cols()
                )));
            }
        }
        if w.is_empty() {
            return Err(Error::Architecture("output vector is empty".into()));
        }
        if let Some(x) = w.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid("output vector", format!("non-finite entry {x}")));
        }
        Ok(ModelParams {
            weights,
            w,
            activation,
        })
    }

    /// All-zero parameters for widths `d_0..d_K`.
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        check_widths(widths)?;
        let weights = widths.windows(2).map(|p| Matrix::zeros(p[0], p[1])).collect();
        ModelParams::new(weights, vec![0.0; *widths.last().unwrap()], activation)
    }

    /// Each block uniform on `(-s, s)` with `s = 1 / sqrt(d_in)`.
    pub fn random_init<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        check_widths(widths)?;
        let mut weights = Vec::with_capacity(widths.len() - 1);
        for p in widths.windows(2) {
            let s = 1.0 / (p[0] as f64).sqrt();
            let data = (0..p[0] * p[1]).map(|_| rng.random_range(-s..s)).collect();
            weights.push(Matrix::new(p[0], p[1], data)?);
        }
        let d_k = *widths.last().unwrap();
        let s = 1.0 / (d_k as f64).sqrt();
        let w = (0..d_k).map(|_| rng.random_range(-s..s)).collect();
        ModelParams::new(weights, w, activation)
    }

    /// Number of hidden layers `K`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// `d_0, ..., d_K`
    pub fn widths(&self) -> Vec<usize> {
        match self.weights.first() {
            None => vec![self.w.len()],
            Some(first) => std::iter::once(first.rows())
                .chain(self.weights.iter().map(Matrix::cols))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths()[0]
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|m| m.rows() * m.cols()).sum::<usize>() + self.w.len()
    }

    /// Hidden blocks in order, then `w`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for m in &self.weights {
            v.extend_from_slice(m.as_slice());
        }
        v.extend_from_slice(&self.w);
        v
    }

    /// Inverse of [`to_flat`](Self::to_flat) on the same architecture.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Architecture(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        let mut weights = Vec::with_capacity(self.weights.len());
        for m in &self.weights {
            let n = m.rows() * m.cols();
            weights.push(Matrix::new(m.rows(), m.cols(), flat[off..off + n].to_vec())?);
            off += n;
        }
        ModelParams::new(weights, flat[off..].to_vec(), self.activation)
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.widths() == other.widths()
    }

    fn ensure_same(&self, other: &ModelParams) -> Result<()> {
        if !self.same_architecture(other) {
            return Err(Error::Architecture(format!(
                "widths {:?} vs {:?}",
                self.widths(),
                other.widths()
            )));
        }
        Ok(())
    }

    /// `self - other`, blockwise.
    pub fn difference(&self, other: &ModelParams) -> Result<ModelParams> {
        self.ensure_same(other)?;
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        let w = self.w.iter().zip(&other.w).map(|(a, b)| a - b).collect();
        ModelParams::new(weights, w, self.activation)
    }

    /// `self + alpha * (grad_weights, grad_w)`
    pub fn add_scaled(&self, alpha: f64, grad_weights: &[Matrix], grad_w: &[f64]) -> Result<ModelParams> {
        if grad_weights.len() != self.weights.len() || grad_w.len() != self.w.len() {
            return Err(Error::Architecture("update does not match the parameter blocks".into()));
        }
        let mut next = self.clone();
        for (m, g) in next.weights.iter_mut().zip(grad_weights) {
            m.axpy(alpha, g)?;
        }
        for (a, g) in next.w.iter_mut().zip(grad_w) {
            *a += alpha * g;
        }
        Ok(next)
    }

    /// Rescales every block by `s`.
    pub fn scaled(&self, s: f64) -> ModelParams {
        ModelParams {
            weights: self.weights.iter().map(|m| m.scale(s)).collect(),
            w: self.w.iter().map(|x| x * s).collect(),
            activation: self.activation,
        }
    }

    pub(crate) fn set_block(&mut self, block: usize, m: Matrix) {
        self.weights[block] = m;
    }

    pub(crate) fn set_w(&mut self, w: Vec<f64>) {
        self.w = w;
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.w.iter().all(|x| x.is_finite())
    }

    /// Spectral norms `||W^(1)||_2, ..., ||W^(K)||_2, ||w||_2`.
    pub fn block_norms(&self) -> Result<Vec<f64>> {
        let opts = PowerOptions::default();
        let mut out = Vec::with_capacity(self.weights.len() + 1);
        for m in &self.weights {
            out.push(spectral_norm_with(m, &opts)?);
        }
        out.push(norm2(&self.w));
        Ok(out)
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.is_empty() {
        return Err(Error::Architecture("no layer widths".into()));
    }
    if let Some(i) = widths.iter().position(|&d| d == 0) {
        return Err(Error::Architecture(format!("width d_{i} is zero")));
    }
    Ok(())
}

/// Everything computed by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    /// `X^(0), ..., X^(K)`
    pub layer_outputs: Vec<Matrix>,
    /// `g X^(0), ..., g X^(K)`
    pub propagated: Vec<Matrix>,
    /// `g X^(k-1) W^(k)` for `k = 1..K`
    pub pre_activations: Vec<Matrix>,
    /// `g X^(K) w`
    pub output_pre: Vec<f64>,
    /// `sigma(g X^(K) w)`
    pub predictions: Vec<f64>,
}

pub fn forward(params: &ModelParams, filter: &FilterMatrix, features: &Matrix) -> Result<ForwardTape> {
    let n = filter.num_nodes();
    if features.rows() != n {
        return Err(Error::dim(
            "forward",
            format!("features have {} rows for a filter on {n} nodes", features.rows()),
        ));
    }
    if features.cols() != params.input_dim() {
        return Err(Error::dim(
            "forward",
            format!("features have {} columns, model expects {}", features.cols(), params.input_dim()),
        ));
    }
    let act = params.activation;
    let k = params.depth();
    let mut layer_outputs = Vec::with_capacity(k + 1);
    let mut propagated = Vec::with_capacity(k + 1);
    let mut pre_activations = Vec::with_capacity(k);
    layer_outputs.push(features.clone());
    for wk in &params.weights {
        let gx = filter.apply(layer_outputs.last().unwrap())?;
        let pre = gx.matmul(wk)?;
        layer_outputs.push(pre.map(|x| act.eval(x)));
        propagated.push(gx);
        pre_activations.push(pre);
    }
    let gx = filter.apply(layer_outputs.last().unwrap())?;
    let output_pre = gx.matvec(&params.w)?;
    let predictions = output_pre.iter().map(|&s| act.eval(s)).collect();
    propagated.push(gx);
    Ok(ForwardTape {
        layer_outputs,
        propagated,
        pre_activations,
        output_pre,
        predictions,
    })
}

/// `f(x | theta)` for one node; identical to `forward(..).predictions[node]`.
pub fn predict_node(params: &ModelParams, filter: &FilterMatrix, features: &Matrix, node: usize) -> Result<f64> {
    let n = filter.num_nodes();
    if node >= n {
        return Err(Error::NodeOutOfRange { node, num_nodes: n });
    }
    Ok(forward(params, filter, features)?.predictions[node])
}

/// `||w_a - w_b||_2 + sum_k ||W_a^(k) - W_b^(k)||_2`
pub fn param_norm_star(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    Ok(a.difference(b)?.block_norms()?.iter().sum())
}

/// Largest block spectral norm over every snapshot.
pub fn measured_b(history: &[ModelParams]) -> Result<f64> {
    let first = history.first().ok_or(Error::Empty("parameter history"))?;
    let mut b: f64 = 0.0;
    for p in history {
        first.ensure_same(p)?;
        for v in p.block_norms()? {
            b = b.max(v);
        }
    }
    Ok(b)
}

const SNAPSHOT_MAGIC: &str = "gcn-params v1";

impl ModelParams {
    /// Text snapshot: header lines, then each block as a shape line followed
    /// by one line per row. Floats use the shortest representation that
    /// round-trips exactly.
    pub fn to_snapshot(&self) -> String {
        let mut s = String::new();
        let widths: Vec<String> = self.widths().iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "{SNAPSHOT_MAGIC}");
        let _ = writeln!(s, "activation {}", self.activation);
        let _ = writeln!(s, "K {}", self.depth());
        let _ = writeln!(s, "widths {}", widths.join(" "));
        for (i, m) in self.weights.iter().enumerate() {
            let _ = writeln!(s, "W{} {} {}", i + 1, m.rows(), m.cols());
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        let _ = writeln!(s, "w {}", self.w.len());
        let row: Vec<String> = self.w.iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
        s
    }

    pub fn from_snapshot(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: line + 1,
            message,
        };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of snapshot, expected {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic.trim() != SNAPSHOT_MAGIC {
            return Err(err(ln, format!("expected `{SNAPSHOT_MAGIC}`")));
        }
        let field = |ln: usize, line: &str, key: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(err(ln, format!("expected `{key}`")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let num = |ln: usize, s: &str| -> Result<usize> { s.parse().map_err(|_| err(ln, format!("bad integer `{s}`"))) };
        let real = |ln: usize, s: &str| -> Result<f64> { s.parse().map_err(|_| err(ln, format!("bad number `{s}`"))) };
        let (ln, l) = next("activation")?;
        let act: Activation = field(ln, l, "activation")?
            .first()
            .ok_or_else(|| err(ln, "missing activation".into()))?
            .parse()?;
        let (ln, l) = next("K")?;
        let k = num(ln, field(ln, l, "K")?.first().map_or("", String::as_str))?;
        let (ln, l) = next("widths")?;
        let widths = field(ln, l, "widths")?
            .iter()
            .map(|s| num(ln, s))
            .collect::<Result<Vec<_>>>()?;
        if widths.len() != k + 1 {
            return Err(err(ln, format!("{} widths for K = {k}", widths.len())));
        }
        let mut weights = Vec::with_capacity(k);
        for i in 0..k {
            let (ln, l) = next("weight block")?;
            let f = field(ln, l, &format!("W{}", i + 1))?;
            if f.len() != 2 {
                return Err(err(ln, "expected rows and cols".into()));
            }
            let (r, c) = (num(ln, &f[0])?, num(ln, &f[1])?);
            if (r, c) != (widths[i], widths[i + 1]) {
                return Err(err(ln, format!("block shape {r}x{c} disagrees with widths")));
            }
            let mut data = Vec::with_capacity(r * c);
            for _ in 0..r {
                let (ln, l) = next("matrix row")?;
                let row = l.split_whitespace().map(|s| real(ln, s)).collect::<Result<Vec<_>>>()?;
                if row.len() != c {
                    return Err(err(ln, format!("{} entries, expected {c}", row.len())));
                }
                data.extend(row);
            }
            weights.push(Matrix::new(r, c, data)?);
        }
        let (ln, l) = next("output block")?;
        let f = field(ln, l, "w")?;
        let d = num(ln, f.first().map_or("", String::as_str))?;
        let (ln, l) = next("output row")?;
        let w = l.split_whitespace().map(|s| real(ln, s)).collect::<Result<Vec<_>>>()?;
        if w.len() != d || d != widths[k] {
            return Err(err(ln, format!("output vector has {} entries, expected {}", w.len(), widths[k])));
        }
        ModelParams::new(weights, w, act)
    }
}
