//! Probit likelihood `Φ((2y-1)·wᵀx)`: analytic EP moments, conditional
//! moments with their Hessians, and the predictive probability.

use super::{label_sign, Method, ScalarMoments};
use crate::error::{Error, Result};
use crate::special::{inv_mills, norm_cdf};

/// Tilted moments of every coordinate under a factorized Gaussian cavity.
pub fn probit_ep_project(cav_mean: &[f64], cav_var: &[f64], x: &[f64], y: f64) -> Result<Vec<ScalarMoments>> {
    if cav_mean.len() != x.len() || cav_var.len() != x.len() {
        return Err(Error::DimensionMismatch { left: cav_mean.len(), right: x.len() });
    }
    if let Some(v) = cav_var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Skip(format!("cavity variance {v}")));
    }
    let s = label_sign(y)?;
    let denom = 1.0 + x.iter().zip(cav_var).map(|(xi, v)| xi * xi * v).sum::<f64>();
    let sd = denom.sqrt();
    let z = s * x.iter().zip(cav_mean).map(|(xi, m)| xi * m).sum::<f64>() / sd;
    let r = inv_mills(z);
    let shrink = (r * r + r * z) / denom;
    Ok(x.iter()
        .zip(cav_mean.iter().zip(cav_var))
        .map(|(&xm, (&mu, &v))| ScalarMoments { mean: mu + v * r * s * xm / sd, var: v - v * v * xm * xm * shrink })
        .collect())
}

/// Scalars describing `E(w_m | w_{\m})` and `var(w_m | w_{\m})` at one point.
///
/// The conditional moments depend on `w_{\m}` only through
/// `offset = x_{\m}ᵀ w_{\m}`, so both Hessians are `scalar · x_{\m} x_{\m}ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitConditional {
    pub mean: f64,
    pub var: f64,
    /// Coefficient of `x_{\m} x_{\m}ᵀ` in the Hessian of the conditional mean.
    pub mean_hessian: f64,
    /// Coefficient of `x_{\m} x_{\m}ᵀ` in the Hessian of the conditional variance.
    pub var_hessian: f64,
}

/// Conditional tilted moments of `w_m` given the rest of the weights.
pub fn probit_conditional(cav_mean: f64, cav_var: f64, x_m: f64, offset: f64, y: f64) -> Result<ProbitConditional> {
    if !(cav_var > 0.0) {
        return Err(Error::Skip(format!("cavity variance {cav_var}")));
    }
    let s = label_sign(y)?;
    let c1 = s / (1.0 + x_m * x_m * cav_var).sqrt();
    let c2 = x_m * cav_mean + offset;
    let z = c1 * c2;
    let r = inv_mills(z);
    let (r2, r3, r4) = (r * r, r * r * r, r * r * r * r);
    let t1 = (z * z - 1.0) * r + 3.0 * z * r2 + 2.0 * r3;
    let t2 = z * (3.0 - z * z) * r + (4.0 - 7.0 * z * z) * r2 - 12.0 * z * r3 - 6.0 * r4;
    let v = cav_var;
    Ok(ProbitConditional {
        mean: cav_mean + v * r * c1 * x_m,
        var: v - v * v * x_m * x_m * c1 * c1 * (r2 + r * z),
        mean_hessian: t1 * c1.powi(3) * v * x_m,
        var_hessian: t2 * c1.powi(4) * v * v * x_m * x_m,
    })
}

/// New posterior moments of `w_m` by conditional moment matching.
///
/// `offset` is `x_{\m}ᵀ E_q(w_{\m})` and `spread` is `Σ_{l≠m} x_l² var_q(w_l)`,
/// the trace term of the second-order expansion with diagonal covariance.
pub fn probit_cep_project(
    method: Method,
    cav_mean: f64,
    cav_var: f64,
    x_m: f64,
    offset: f64,
    spread: f64,
    y: f64,
) -> Result<ScalarMoments> {
    let c = probit_conditional(cav_mean, cav_var, x_m, offset, y)?;
    let (mean, var) = match method {
        Method::Cep1 => (c.mean, c.var),
        Method::Cep2 => (c.mean + 0.5 * c.mean_hessian * spread, c.var + 0.5 * c.var_hessian * spread),
        Method::Ep => return Err(Error::Unsupported("probit_cep_project needs a CEP method".into())),
    };
    if !(var > 0.0) || !mean.is_finite() {
        return Err(Error::Skip(format!("conditional variance {var}")));
    }
    Ok(ScalarMoments { mean, var })
}

/// `Φ(m*/√(1+v*))` for the predictive mean and variance of `wᵀx*`.
pub fn probit_predict(means: &[f64], vars: &[f64], x: &[f64]) -> f64 {
    let (m, v) = super::predictive_linear(means, vars, x);
    norm_cdf(m / (1.0 + v).sqrt())
}
