//! Model plug-ins: likelihood-specific projections for the engine.

pub mod cp;
pub mod logistic;
pub mod probit;
pub mod regression;

use crate::error::{Error, Result};

/// Projection family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Moments of the tilted distribution.
    Ep,
    /// Conditional moments evaluated at the posterior means of the other blocks.
    Cep1,
    /// CEP-1 plus the diagonal second-order correction.
    Cep2,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ep" => Ok(Method::Ep),
            "cep1" | "cep-1" => Ok(Method::Cep1),
            "cep2" | "cep-2" => Ok(Method::Cep2),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ep => "ep",
            Method::Cep1 => "cep1",
            Method::Cep2 => "cep2",
        })
    }
}

/// Mean and variance of a scalar Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMoments {
    pub mean: f64,
    pub var: f64,
}

/// `2y - 1` for a binary label.
pub fn label_sign(y: f64) -> Result<f64> {
    if y == 1.0 {
        Ok(1.0)
    } else if y == 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::InvalidArgument(format!("label must be 0 or 1, got {y}")))
    }
}

/// Mean and variance of `wᵀx` under a factorized Gaussian over `w`.
pub fn predictive_linear(means: &[f64], vars: &[f64], x: &[f64]) -> (f64, f64) {
    let mut m = 0.0;
    let mut v = 0.0;
    for ((mu, var), xi) in means.iter().zip(vars).zip(x) {
        m += mu * xi;
        v += var * xi * xi;
    }
    (m, v)
}
