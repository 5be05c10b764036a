//! Scalar losses `l(y_hat, y)` on a bounded label box, with their constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(y_hat - y)^2`
    Squared,
    /// `ln(1 + exp(-y y_hat))`
    Logistic,
    /// Quadratically smoothed hinge on the margin `z = y y_hat`:
    /// `1/2 - z` for `z <= 0`, `(1 - z)^2 / 2` on `(0, 1)`, `0` after.
    SmoothedHinge,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
            LossKind::SmoothedHinge => "smoothed_hinge",
        }
    }

    fn is_margin(self) -> bool {
        !matches!(self, LossKind::Squared)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "logistic" => Ok(LossKind::Logistic),
            "smoothed_hinge" => Ok(LossKind::SmoothedHinge),
            _ => Err(Error::invalid(
                "loss",
                format!("`{s}` is not registered (expected squared, logistic or smoothed_hinge)"),
            )),
        }
    }
}

/// Lipschitz constant of `l` in `y_hat`, Lipschitz constant of `dl/dy_hat`,
/// and the supremum `M` of `l`, all over the box `[y_min, y_max]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub alpha_ell: f64,
    pub nu_ell: f64,
    pub m: f64,
}

/// A loss together with the box its predictions and labels live in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Loss {
    pub kind: LossKind,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Loss {
    fn default() -> Self {
        Loss {
            kind: LossKind::Squared,
            y_min: -1.0,
            y_max: 1.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Loss {
    pub fn new(kind: LossKind, y_min: f64, y_max: f64) -> Result<Self> {
        let l = Loss { kind, y_min, y_max };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.y_min < self.y_max) || !self.y_min.is_finite() || !self.y_max.is_finite() {
            return Err(Error::invalid(
                "label range",
                format!("need finite y_min < y_max, got [{}, {}]", self.y_min, self.y_max),
            ));
        }
        if self.kind.is_margin() && !(self.y_min < 0.0 && self.y_max > 0.0) {
            return Err(Error::invalid(
                "label range",
                format!("margin loss `{}` needs y_min < 0 < y_max", self.kind),
            ));
        }
        Ok(())
    }

    pub fn check_label(&self, y: f64) -> Result<()> {
        if !(self.y_min..=self.y_max).contains(&y) {
            return Err(Error::LabelOutOfRange {
                label: y,
                y_min: self.y_min,
                y_max: self.y_max,
            });
        }
        Ok(())
    }

    pub fn value(&self, y_hat: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::Squared => (y_hat - y) * (y_hat - y),
            LossKind::Logistic => softplus(-y * y_hat),
            LossKind::SmoothedHinge => {
                let z = y * y_hat;
                if z <= 0.0 {
                    0.5 - z
                } else if z < 1.0 {
                    0.5 * (1.0 - z) * (1.0 - z)
                } else {
                    0.0
                }
            }
        }
    }

    /// `dl / dy_hat`
    pub fn derivative(&self, y_hat: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::Squared => 2.0 * (y_hat - y),
            LossKind::Logistic => -y * sigmoid(-y * y_hat),
            LossKind::SmoothedHinge => {
                let z = y * y_hat;
                if z <= 0.0 {
                    -y
                } else if z < 1.0 {
                    -y * (1.0 - z)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn constants(&self) -> Result<LossConstants> {
        loss_constants(self.kind, self.y_min, self.y_max)
    }
}

/// Tight constants for `kind` on `[y_min, y_max]^2`.
pub fn loss_constants(kind: LossKind, y_min: f64, y_max: f64) -> Result<LossConstants> {
    Loss::new(kind, y_min, y_max)?;
    let (a, b) = (y_min, y_max);
    let reach = a.abs().max(b.abs());
    Ok(match kind {
        LossKind::Squared => LossConstants {
            alpha_ell: 2.0 * (b - a),
            nu_ell: 2.0,
            m: (b - a) * (b - a),
        },
        // The smallest margin on the box is a * b < 0.
        LossKind::Logistic => LossConstants {
            alpha_ell: reach * sigmoid(-a * b),
            nu_ell: reach * reach / 4.0,
            m: softplus(-a * b),
        },
        LossKind::SmoothedHinge => LossConstants {
            alpha_ell: reach,
            nu_ell: reach * reach,
            m: 0.5 - a * b,
        },
    })
}
