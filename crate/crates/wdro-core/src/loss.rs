//! Loss families: quadratic, Huber, check (pinball), and the logistic
//! margin loss for classification.
//!
//! Regression losses act on the residual `u = f(x) - y`; the margin loss
//! acts on `t = f(x)·y`. Each kind exposes its value, derivative, and
//! Lipschitz metadata, plus the composed gradient `∇_z ℓ(z; f)` that the
//! worst-case oracle and the perturbation steps consume.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Quadratic,
    Huber { tau: f64 },
    Check { rho: f64 },
    Bce,
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Huber { tau } if tau <= 0.0 => Err(Error::InvalidParameter(format!(
                "huber tau must be positive, got {tau}"
            ))),
            LossKind::Check { rho } if !(0.0 < rho && rho < 1.0) => Err(Error::InvalidParameter(
                format!("check rho must be in (0,1), got {rho}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        match *self {
            LossKind::Quadratic => u * u,
            LossKind::Huber { tau } => {
                if u.abs() <= tau {
                    0.5 * u * u
                } else {
                    tau * u.abs() - 0.5 * tau * tau
                }
            }
            LossKind::Check { rho } => {
                let indicator = if u <= 0.0 { 1.0 } else { 0.0 };
                u * (rho - indicator)
            }
            // log(1 + exp(-t)), overflow-safe.
            LossKind::Bce => {
                if u >= 0.0 {
                    (-u).exp().ln_1p()
                } else {
                    -u + u.exp().ln_1p()
                }
            }
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        match *self {
            LossKind::Quadratic => 2.0 * u,
            LossKind::Huber { tau } => u.clamp(-tau, tau),
            // Left convention at the kink: deriv(0) = rho - 1.
            LossKind::Check { rho } => {
                if u <= 0.0 {
                    rho - 1.0
                } else {
                    rho
                }
            }
            LossKind::Bce => {
                if u >= 0.0 {
                    -(-u).exp() / (1.0 + (-u).exp())
                } else {
                    -1.0 / (1.0 + u.exp())
                }
            }
        }
    }

    /// Lipschitz constant of the loss; `None` marks the unbounded
    /// quadratic case.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match *self {
            LossKind::Quadratic => None,
            LossKind::Huber { tau } => Some(tau),
            LossKind::Check { rho } => Some(rho.max(1.0 - rho)),
            LossKind::Bce => Some(1.0),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LossKind::Quadratic => write!(f, "quadratic"),
            LossKind::Huber { tau } => write!(f, "huber:{tau}"),
            LossKind::Check { rho } => write!(f, "check:{rho}"),
            LossKind::Bce => write!(f, "bce"),
        }
    }
}

/// CLI form: `quadratic | huber:TAU | check:RHO | bce`.
impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.split_once(':') {
            None => match s {
                "quadratic" => LossKind::Quadratic,
                "bce" => LossKind::Bce,
                "huber" => LossKind::Huber { tau: 1.0 },
                "check" => LossKind::Check { rho: 0.5 },
                other => {
                    return Err(Error::InvalidParameter(format!("unknown loss `{other}`")));
                }
            },
            Some(("huber", v)) => LossKind::Huber {
                tau: v
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad huber tau `{v}`")))?,
            },
            Some(("check", v)) => LossKind::Check {
                rho: v
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad check rho `{v}`")))?,
            },
            Some((other, _)) => {
                return Err(Error::InvalidParameter(format!("unknown loss `{other}`")));
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Gradient of `z = (x, y) ↦ ℓ(f(x) - y)` as a `(d+1)`-vector:
/// `ℓ'(f(x)-y) · (∇_x f(x), -1)`.
pub fn composed_gradient(net: &Mlp, kind: LossKind, x: &[f64], y: f64) -> Result<Vec<f64>> {
    let grads = net.input_gradients(&[x.to_vec()], &[y], kind)?;
    let bundle_resp = kind.deriv(net.forward(x)? - y);
    let mut z_grad = grads.into_iter().next().unwrap();
    z_grad.push(-bundle_resp);
    Ok(z_grad)
}
