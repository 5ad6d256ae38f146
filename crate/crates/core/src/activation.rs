//! Activation functions of the analytic, bounded, strictly increasing class
//! (sigmoid and tanh) together with their first two derivatives and inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamping margin applied by [`act_inverse`] at the image boundary.
pub const EPS_ACT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
}

/// Value and first two derivatives of an activation at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl ActivationKind {
    /// Open image interval `(c, d)`.
    pub fn image(self) -> (f64, f64) {
        match self {
            ActivationKind::Sigmoid => (0.0, 1.0),
            ActivationKind::Tanh => (-1.0, 1.0),
        }
    }

    #[inline]
    pub fn value(self, t: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(t),
            ActivationKind::Tanh => t.tanh(),
        }
    }

    #[inline]
    pub fn eval(self, t: f64) -> ActValue {
        match self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(t);
                let d1 = s * (1.0 - s);
                ActValue { value: s, d1, d2: d1 * (1.0 - 2.0 * s) }
            }
            ActivationKind::Tanh => {
                let s = t.tanh();
                let d1 = 1.0 - s * s;
                ActValue { value: s, d1, d2: -2.0 * s * d1 }
            }
        }
    }

    #[inline]
    pub fn d1(self, t: f64) -> f64 {
        self.eval(t).d1
    }

    #[inline]
    pub fn d2(self, t: f64) -> f64 {
        self.eval(t).d2
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            other => Err(Error::Shape(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `(σ(t), σ'(t), σ''(t))`.
pub fn act_eval(kind: ActivationKind, t: f64) -> (f64, f64, f64) {
    let v = kind.eval(t);
    (v.value, v.d1, v.d2)
}

/// Inverse activation.
///
/// Values strictly inside `(c, d)` but within [`EPS_ACT`] of an endpoint are
/// clamped to `[c + EPS_ACT, d - EPS_ACT]`; values on or beyond the boundary
/// (and NaN) are rejected.
pub fn act_inverse(kind: ActivationKind, a: f64) -> Result<f64> {
    let (lo, hi) = kind.image();
    if !(a > lo && a < hi) {
        return Err(Error::Domain { value: a, lo, hi });
    }
    let a = a.clamp(lo + EPS_ACT, hi - EPS_ACT);
    Ok(match kind {
        ActivationKind::Sigmoid => a.ln() - (-a).ln_1p(),
        ActivationKind::Tanh => a.atanh(),
    })
}
