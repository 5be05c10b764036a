//! Closed-form stability and generalization bounds.
//!
//! Every formula is written once, generically over [`BoundScalar`], and first
//! evaluated in plain `f64`. If that overflows, the same formula is evaluated
//! on logarithms so unnormalized filters with large `C_g` still produce a
//! finite, flagged number instead of `inf`.
//!
//! Notation: `a = B alpha_sigma C_g`, `x = (K+1) eta kappa1 + eta kappa2` is the
//! per-step growth excess, and `G_T = sum_{t=1..T} (1 + x)^(t-1)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{Loss, LossConstants};
use crate::model::Activation;

/// Inputs to every bound. Serialized names follow the usual symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub alpha_sigma: f64,
    pub nu_sigma: f64,
    pub alpha_ell: f64,
    pub nu_ell: f64,
    /// Upper bound `M` on the loss.
    #[serde(rename = "M")]
    pub loss_ceiling: f64,
    /// Bound `B` on every block spectral norm.
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C_g")]
    pub c_g: f64,
    #[serde(rename = "C_X")]
    pub c_x: f64,
    /// Hidden layer count.
    #[serde(rename = "K")]
    pub k: usize,
    pub eta: f64,
    /// Iteration count.
    #[serde(rename = "T")]
    pub t: usize,
    /// Training-set size.
    pub m: usize,
}

/// Where a measured constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Measured on a real trajectory, filter or feature matrix.
    Measured,
    /// From the width argument `xi sqrt(d_in d_out)`.
    WidthDerived,
    UserSupplied,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Measured => "measured",
            Source::WidthDerived => "width_derived",
            Source::UserSupplied => "user_supplied",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(rename = "B")]
    pub b: Source,
    #[serde(rename = "C_g")]
    pub c_g: Source,
    #[serde(rename = "C_X")]
    pub c_x: Source,
}

impl Provenance {
    pub fn all(source: Source) -> Self {
        Provenance {
            b: source,
            c_g: source,
            c_x: source,
        }
    }
}

impl AssumptionConstants {
    /// Fills the activation and loss constants from their registries.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        activation: Activation,
        loss: &LossConstants,
        b: f64,
        c_g: f64,
        c_x: f64,
        k: usize,
        eta: f64,
        t: usize,
        m: usize,
    ) -> Self {
        AssumptionConstants {
            alpha_sigma: activation.alpha_sigma(),
            nu_sigma: activation.nu_sigma(),
            alpha_ell: loss.alpha_ell,
            nu_ell: loss.nu_ell,
            loss_ceiling: loss.m,
            b,
            c_g,
            c_x,
            k,
            eta,
            t,
            m,
        }
    }

    /// Unit constants with the given shape, used throughout the tests.
    pub fn unit(k: usize, eta: f64, t: usize, m: usize) -> Self {
        AssumptionConstants {
            alpha_sigma: 1.0,
            nu_sigma: 1.0,
            alpha_ell: 1.0,
            nu_ell: 1.0,
            loss_ceiling: 1.0,
            b: 1.0,
            c_g: 1.0,
            c_x: 1.0,
            k,
            eta,
            t,
            m,
        }
    }

    /// Checks signs and finiteness. `eta`, `B` and the smoothness constants
    /// may be zero; the Lipschitz constants, `M`, `C_g`, `C_X` and `m` must be
    /// positive.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_sigma", self.alpha_sigma),
            ("alpha_ell", self.alpha_ell),
            ("M", self.loss_ceiling),
            ("C_g", self.c_g),
            ("C_X", self.c_x),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("{v} must be positive and finite")));
            }
        }
        let non_negative = [
            ("nu_sigma", self.nu_sigma),
            ("nu_ell", self.nu_ell),
            ("B", self.b),
            ("eta", self.eta),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("{v} must be non-negative and finite")));
            }
        }
        if self.m == 0 {
            return Err(Error::invalid("m", "training-set size must be at least 1"));
        }
        Ok(())
    }
}

/// Grid check that `M` dominates the loss on its box.
pub fn check_loss_ceiling(loss: &Loss, ceiling: f64) -> Result<()> {
    let n = 200;
    let step = (loss.y_max - loss.y_min) / n as f64;
    let mut sup: f64 = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let y_hat = loss.y_min + i as f64 * step;
            let y = loss.y_min + j as f64 * step;
            sup = sup.max(loss.value(y_hat, y));
        }
    }
    if sup > ceiling * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "M",
            format!("{ceiling} is below the loss supremum {sup} on [{}, {}]", loss.y_min, loss.y_max),
        ));
    }
    Ok(())
}

/// Arithmetic on non-negative quantities.
pub trait BoundScalar: Copy {
    fn lift(x: f64) -> Self;
    fn mul(self, o: Self) -> Self;
    fn add(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn powi(self, e: u32) -> Self;
    fn sqrt(self) -> Self;
    /// `sum_{t=1..T} (1 + x)^(t-1)` for the excess `x = self`.
    fn geometric(self, t: usize) -> Self;
}

impl BoundScalar for f64 {
    fn lift(x: f64) -> Self {
        x
    }

    fn mul(self, o: Self) -> Self {
        self * o
    }

    fn add(self, o: Self) -> Self {
        self + o
    }

    fn div(self, o: Self) -> Self {
        self / o
    }

    fn powi(self, e: u32) -> Self {
        f64::powi(self, e as i32)
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn geometric(self, t: usize) -> Self {
        if t == 0 {
            0.0
        } else if t == 1 || self == 0.0 {
            t as f64
        } else {
            (t as f64 * self.ln_1p()).exp_m1() / self
        }
    }
}

/// A non-negative real stored as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogReal(pub f64);

impl BoundScalar for LogReal {
    fn lift(x: f64) -> Self {
        LogReal(x.ln())
    }

    fn mul(self, o: Self) -> Self {
        LogReal(self.0 + o.0)
    }

    fn add(self, o: Self) -> Self {
        let (hi, lo) = if self.0 >= o.0 { (self.0, o.0) } else { (o.0, self.0) };
        if lo == f64::NEG_INFINITY {
            return LogReal(hi);
        }
        LogReal(hi + (lo - hi).exp().ln_1p())
    }

    fn div(self, o: Self) -> Self {
        LogReal(self.0 - o.0)
    }

    fn powi(self, e: u32) -> Self {
        if e == 0 {
            LogReal(0.0)
        } else {
            LogReal(self.0 * e as f64)
        }
    }

    fn sqrt(self) -> Self {
        LogReal(self.0 / 2.0)
    }

    fn geometric(self, t: usize) -> Self {
        if t == 0 {
            return LogReal(f64::NEG_INFINITY);
        }
        let ln_x = self.0;
        if t == 1 || ln_x == f64::NEG_INFINITY {
            return LogReal((t as f64).ln());
        }
        let ln1p_x = if ln_x < 700.0 {
            ln_x.exp().ln_1p()
        } else {
            ln_x + (-ln_x).exp().ln_1p()
        };
        let y = t as f64 * ln1p_x;
        // ln(expm1(y)) = y + ln(1 - e^-y)
        let ln_expm1 = y + (-(-y).exp_m1()).ln();
        LogReal(ln_expm1 - ln_x)
    }
}

/// A bound value that never silently saturates: `ln` is always set and
/// `linear` is `None` when the value exceeds the `f64` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub ln: f64,
    pub linear: Option<f64>,
}

impl BoundValue {
    pub fn from_linear(v: f64) -> Self {
        BoundValue {
            ln: v.ln(),
            linear: Some(v),
        }
    }

    pub fn from_ln(ln: f64) -> Self {
        let v = ln.exp();
        BoundValue {
            ln,
            linear: v.is_finite().then_some(v),
        }
    }

    pub fn overflow(&self) -> bool {
        self.linear.is_none()
    }

    /// Linear value, `+inf` on overflow.
    pub fn value(&self) -> f64 {
        self.linear.unwrap_or(f64::INFINITY)
    }

    /// Shortest round-trip decimal (scientific outside `[1e-6, 1e16)`), or
    /// `<mantissa>e<exponent>` from the logarithm when the value overflows.
    pub fn to_text(&self) -> String {
        match self.linear {
            Some(v) if v != 0.0 && !(1e-6..1e16).contains(&v.abs()) => format!("{v:e}"),
            Some(v) => format!("{v}"),
            None => {
                let log10 = self.ln / std::f64::consts::LN_10;
                let e = log10.floor();
                let mant = 10f64.powf(log10 - e);
                format!("{mant:.12}e{}", e as i64)
            }
        }
    }
}

impl Serialize for BoundValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            value: Option<f64>,
            ln: Option<f64>,
            overflow: bool,
            text: String,
        }
        Repr {
            value: self.linear,
            ln: self.ln.is_finite().then_some(self.ln),
            overflow: self.overflow(),
            text: self.to_text(),
        }
        .serialize(s)
    }
}

#[derive(Debug, Clone, Copy)]
enum Quantity {
    Kappa1,
    Kappa1SingleLayer,
    Kappa1Effective,
    Kappa2,
    Rho(usize),
    StepExcess,
    StabilityC,
    Geometric,
    Mu,
    Lemma3,
    DriftCoefficient,
    Drift,
}

fn eval<S: BoundScalar>(q: Quantity, c: &AssumptionConstants) -> S {
    let l = S::lift;
    let k = c.k as u32;
    let a = l(c.b).mul(l(c.alpha_sigma)).mul(l(c.c_g));
    let cg2cx2 = l(c.c_g).powi(2).mul(l(c.c_x).powi(2));
    let lead = l(c.nu_ell)
        .mul(l(c.alpha_sigma).powi(2))
        .add(l(c.alpha_ell).mul(l(c.nu_sigma)));
    match q {
        Quantity::Kappa1 => lead.mul(a.powi(2 * k)).mul(cg2cx2).add(
            l(c.alpha_ell)
                .mul(a.powi(k.saturating_sub(1)))
                .mul(l(c.alpha_sigma).powi(2))
                .mul(l(c.c_g).powi(2))
                .mul(l(c.c_x)),
        ),
        Quantity::Kappa1SingleLayer => lead.mul(cg2cx2),
        Quantity::Kappa1Effective => {
            if k == 0 {
                eval(Quantity::Kappa1SingleLayer, c)
            } else {
                eval(Quantity::Kappa1, c)
            }
        }
        Quantity::Kappa2 => {
            let mut sum = l(0.0);
            for j in 0..k {
                sum = sum.add(l((j + 1) as f64).mul(a.powi(j)));
            }
            l(c.nu_sigma).mul(a.powi(k)).mul(cg2cx2).mul(sum)
        }
        Quantity::Rho(kk) => {
            let kk = kk as u32;
            let mut sum = l(0.0);
            for j in 0..=(k - kk) {
                sum = sum.add(a.powi(j));
            }
            l(c.nu_sigma).mul(a.powi(k + kk - 1)).mul(cg2cx2).mul(sum)
        }
        Quantity::StepExcess => l((k + 1) as f64)
            .mul(l(c.eta))
            .mul(eval::<S>(Quantity::Kappa1Effective, c))
            .add(l(c.eta).mul(eval::<S>(Quantity::Kappa2, c))),
        Quantity::StabilityC => l((k + 1) as f64)
            .mul(l(c.eta))
            .mul(l(c.alpha_ell).powi(2))
            .mul(a.powi(2 * k))
            .mul(l(c.alpha_sigma).powi(2))
            .mul(cg2cx2),
        Quantity::Geometric => eval::<S>(Quantity::StepExcess, c).geometric(c.t),
        Quantity::Mu => eval::<S>(Quantity::StabilityC, c)
            .div(l(c.m as f64))
            .mul(eval::<S>(Quantity::Geometric, c)),
        Quantity::Lemma3 => l(c.alpha_ell)
            .mul(l(c.b).powi(k))
            .mul(l(c.alpha_sigma).powi(k + 1))
            .mul(l(c.c_g).powi(k + 1))
            .mul(l(c.c_x)),
        Quantity::DriftCoefficient => l(2.0 * (k + 1) as f64)
            .mul(l(c.eta))
            .mul(eval::<S>(Quantity::Lemma3, c))
            .div(l(c.m as f64)),
        Quantity::Drift => eval::<S>(Quantity::DriftCoefficient, c).mul(eval::<S>(Quantity::Geometric, c)),
    }
}

fn evaluate(q: Quantity, c: &AssumptionConstants) -> BoundValue {
    let v: f64 = eval(q, c);
    if v.is_finite() {
        BoundValue::from_linear(v)
    } else {
        BoundValue::from_ln(eval::<LogReal>(q, c).0)
    }
}

/// Gradient-variation constant for `K >= 1`:
/// `(nu_ell alpha_sigma^2 + alpha_ell nu_sigma) a^(2K) C_g^2 C_X^2 + alpha_ell a^(K-1) alpha_sigma^2 C_g^2 C_X`.
pub fn kappa1(c: &AssumptionConstants) -> Result<BoundValue> {
    if c.k == 0 {
        return Err(Error::Unsupported(
            "kappa1 is defined for K >= 1; use kappa1_single_layer for K = 0".into(),
        ));
    }
    Ok(evaluate(Quantity::Kappa1, c))
}

/// Single-layer specialization `(nu_ell alpha_sigma^2 + alpha_ell nu_sigma) C_g^2 C_X^2`.
/// The hidden-layer term drops out because the input features do not vary.
pub fn kappa1_single_layer(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::Kappa1SingleLayer, c)
}

/// [`kappa1`] for `K >= 1`, [`kappa1_single_layer`] for `K = 0`.
pub fn kappa1_effective(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::Kappa1Effective, c)
}

/// `nu_sigma a^K C_g^2 C_X^2 sum_{j<K} (j+1) a^j`; zero for `K = 0`.
pub fn kappa2(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::Kappa2, c)
}

/// `nu_sigma a^(K+k-1) C_g^2 C_X^2 sum_{j=0..K-k} a^j` for `1 <= k <= K`.
pub fn rho_k(c: &AssumptionConstants, k: usize) -> Result<BoundValue> {
    if k == 0 || k > c.k {
        return Err(Error::invalid("k", format!("{k} is outside 1..={}", c.k)));
    }
    Ok(evaluate(Quantity::Rho(k), c))
}

/// Per-step excess `x`; the recursion ratio is `1 + x`.
pub fn step_excess(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::StepExcess, c)
}

/// `C = (K+1) eta alpha_ell^2 a^(2K) alpha_sigma^2 C_g^2 C_X^2`
pub fn stability_constant(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::StabilityC, c)
}

/// `G_T`, summed stably through `expm1(T ln1p(x)) / x`.
pub fn geometric_sum(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::Geometric, c)
}

/// Uniform stability `mu_m = (C / m) G_T`.
pub fn stability_mu(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::Mu, c)
}

/// `alpha_ell B^K alpha_sigma^(K+1) C_g^(K+1) C_X`
pub fn lemma3_coefficient(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::Lemma3, c)
}

/// `2 (K+1) eta lemma3 / m`
pub fn drift_coefficient(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::DriftCoefficient, c)
}

/// Expected parameter drift bound `drift_coefficient * G_T`.
pub fn drift_bound(c: &AssumptionConstants) -> BoundValue {
    evaluate(Quantity::Drift, c)
}

fn gap_generic<S: BoundScalar>(mu: S, loss_ceiling: f64, m: usize, delta: f64) -> S {
    let l = S::lift;
    let root = l(-delta.ln()).div(l(2.0 * m as f64)).sqrt();
    l(2.0)
        .mul(mu)
        .add(l(4.0 * m as f64).mul(mu).add(l(loss_ceiling)).mul(root))
}

fn check_gap_inputs(mu: f64, loss_ceiling: f64, m: usize, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("{delta} is outside (0, 1)")));
    }
    if m == 0 {
        return Err(Error::invalid("m", "training-set size must be at least 1"));
    }
    if !(mu >= 0.0) {
        return Err(Error::invalid("mu_m", format!("{mu} is negative")));
    }
    if !(loss_ceiling > 0.0 && loss_ceiling.is_finite()) {
        return Err(Error::invalid("M", format!("{loss_ceiling} must be positive")));
    }
    Ok(())
}

/// `2 mu + (4 m mu + M) sqrt(ln(1/delta) / (2m))`
pub fn gap_bound(mu: f64, loss_ceiling: f64, m: usize, delta: f64) -> Result<f64> {
    check_gap_inputs(mu, loss_ceiling, m, delta)?;
    Ok(gap_generic(mu, loss_ceiling, m, delta))
}

/// [`gap_bound`] on a possibly overflowed `mu`.
pub fn gap_bound_value(mu: &BoundValue, loss_ceiling: f64, m: usize, delta: f64) -> Result<BoundValue> {
    check_gap_inputs(mu.linear.unwrap_or(0.0), loss_ceiling, m, delta)?;
    if let Some(v) = mu.linear {
        let g = gap_generic(v, loss_ceiling, m, delta);
        if g.is_finite() {
            return Ok(BoundValue::from_linear(g));
        }
    }
    Ok(BoundValue::from_ln(gap_generic(LogReal(mu.ln), loss_ceiling, m, delta).0))
}

/// Derandomized drift recursion for a realized hit schedule:
/// `b_0 = 0`, a miss multiplies by `1 + x`, a hit adds `2 (K+1) eta lemma3`.
/// Returns `b_0..b_T`.
pub fn per_step_drift_recursion(c: &AssumptionConstants, hits: &[bool]) -> Result<Vec<f64>> {
    if hits.len() != c.t {
        return Err(Error::invalid(
            "hit schedule",
            format!("length {} does not match T = {}", hits.len(), c.t),
        ));
    }
    let ratio = 1.0 + step_excess(c).value();
    let jump = 2.0 * (c.k + 1) as f64 * c.eta * lemma3_coefficient(c).value();
    let mut out = Vec::with_capacity(hits.len() + 1);
    let mut b = 0.0;
    out.push(b);
    for &hit in hits {
        b = if hit { b + jump } else { b * ratio };
        out.push(b);
    }
    Ok(out)
}

/// `max_k xi sqrt(d_(k-1) d_k)` over the hidden blocks and the `d_K x 1`
/// output block.
pub fn width_to_b(xi: f64, widths: &[usize]) -> Result<f64> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::invalid("xi", format!("{xi} must be positive")));
    }
    let last = *widths.last().ok_or(Error::Empty("width list"))?;
    let mut b = xi * (last as f64).sqrt();
    for p in widths.windows(2) {
        b = b.max(xi * ((p[0] * p[1]) as f64).sqrt());
    }
    Ok(b)
}

/// All constants and every bound derived from them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub constants: AssumptionConstants,
    pub provenance: Provenance,
    pub delta: f64,
    pub kappa1: BoundValue,
    /// Set when `K = 0` and `kappa1` holds the single-layer specialization.
    pub kappa1_single_layer: bool,
    pub kappa2: BoundValue,
    pub rho: Vec<BoundValue>,
    pub step_excess: BoundValue,
    pub stability_constant: BoundValue,
    pub mu_m: BoundValue,
    pub gap_bound: BoundValue,
    pub lemma3_coefficient: BoundValue,
    pub drift_coefficient: BoundValue,
    pub drift_bound: BoundValue,
}

impl BoundReport {
    pub fn evaluate(c: &AssumptionConstants, delta: f64, provenance: Provenance) -> Result<Self> {
        c.validate()?;
        let mu_m = stability_mu(c);
        let gap = gap_bound_value(&mu_m, c.loss_ceiling, c.m, delta)?;
        Ok(BoundReport {
            constants: *c,
            provenance,
            delta,
            kappa1: kappa1_effective(c),
            kappa1_single_layer: c.k == 0,
            kappa2: kappa2(c),
            rho: (1..=c.k).map(|k| evaluate(Quantity::Rho(k), c)).collect(),
            step_excess: step_excess(c),
            stability_constant: stability_constant(c),
            mu_m,
            gap_bound: gap,
            lemma3_coefficient: lemma3_coefficient(c),
            drift_coefficient: drift_coefficient(c),
            drift_bound: drift_bound(c),
        })
    }

    fn values(&self) -> Vec<(String, &BoundValue)> {
        let mut v = vec![("kappa1".to_string(), &self.kappa1), ("kappa2".to_string(), &self.kappa2)];
        for (i, r) in self.rho.iter().enumerate() {
            v.push((format!("rho_{}", i + 1), r));
        }
        v.extend([
            ("step_excess".to_string(), &self.step_excess),
            ("C".to_string(), &self.stability_constant),
            ("mu_m".to_string(), &self.mu_m),
            ("gap_bound".to_string(), &self.gap_bound),
            ("lemma3_coefficient".to_string(), &self.lemma3_coefficient),
            ("drift_coefficient".to_string(), &self.drift_coefficient),
            ("drift_bound".to_string(), &self.drift_bound),
        ]);
        v
    }

    /// One `key=value` line per field, in a fixed order.
    pub fn to_key_value(&self) -> String {
        let c = &self.constants;
        let mut s = String::new();
        let inputs: [(&str, String); 15] = [
            ("alpha_sigma", c.alpha_sigma.to_string()),
            ("nu_sigma", c.nu_sigma.to_string()),
            ("alpha_ell", c.alpha_ell.to_string()),
            ("nu_ell", c.nu_ell.to_string()),
            ("M", c.loss_ceiling.to_string()),
            ("B", c.b.to_string()),
            ("C_g", c.c_g.to_string()),
            ("C_X", c.c_x.to_string()),
            ("K", c.k.to_string()),
            ("eta", c.eta.to_string()),
            ("T", c.t.to_string()),
            ("m", c.m.to_string()),
            ("delta", self.delta.to_string()),
            ("provenance_B", self.provenance.b.as_str().to_string()),
            ("provenance_C_g", self.provenance.c_g.as_str().to_string()),
        ];
        for (k, v) in inputs {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "provenance_C_X={}", self.provenance.c_x.as_str());
        let _ = writeln!(s, "kappa1_single_layer={}", self.kappa1_single_layer);
        let mut overflowed = Vec::new();
        for (k, v) in self.values() {
            let _ = writeln!(s, "{k}={}", v.to_text());
            if v.overflow() {
                overflowed.push(k);
            }
        }
        let _ = writeln!(
            s,
            "overflow={}",
            if overflowed.is_empty() { "none".to_string() } else { overflowed.join(",") }
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_and_linear_paths_agree() {
        let mut c = AssumptionConstants::unit(3, 0.05, 40, 50);
        c.c_g = 2.5;
        c.b = 1.3;
        c.nu_sigma = 0.7;
        for q in [
            Quantity::Kappa1,
            Quantity::Kappa2,
            Quantity::Rho(2),
            Quantity::Mu,
            Quantity::Drift,
            Quantity::Lemma3,
        ] {
            let lin: f64 = eval(q, &c);
            let lg = eval::<LogReal>(q, &c).0.exp();
            assert!(((lin - lg) / lin).abs() < 1e-12, "{q:?}: {lin} vs {lg}");
        }
    }

    #[test]
    fn overflow_is_flagged_not_saturated() {
        let mut c = AssumptionConstants::unit(6, 0.05, 200, 100);
        c.c_g = 400.0;
        c.b = 10.0;
        c.c_x = 50.0;
        let r = BoundReport::evaluate(&c, 0.1, Provenance::all(Source::UserSupplied)).unwrap();
        assert!(r.mu_m.overflow());
        assert!(r.mu_m.ln.is_finite() && r.mu_m.ln > 709.0);
        let text = r.mu_m.to_text();
        assert!(text.contains('e') && !text.contains("inf"), "{text}");
        assert!(r.to_key_value().contains("overflow=") && !r.to_key_value().contains("overflow=none"));
    }

    #[test]
    fn scientific_text_from_log() {
        let v = BoundValue::from_ln(1000.0 * std::f64::consts::LN_10 + 2f64.ln());
        assert!(v.overflow());
        assert_eq!(v.to_text(), "2.000000000000e1000");
    }
}
