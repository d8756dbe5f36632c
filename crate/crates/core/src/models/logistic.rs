//! Logistic likelihood `σ((2y-1)·wᵀx)` with Gauss-Hermite moments.
//!
//! EP projects the cavity onto the plane `(x_m w_m, Σ_{l≠m} x_l w_l)` and
//! integrates with a tensorized rule. CEP integrates only over `w_m`, with the
//! rest of the weights entering through a scalar offset.
//!
//! All quadrature sums are normalized in the log domain.

use super::{label_sign, Method, ScalarMoments};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::special::{log_sigmoid, log_sum_exp, sigmoid};

/// Normalized quadrature weights `αⱼ gⱼ / Σ αₖ gₖ` from log-likelihood values.
fn normalized_weights(rule: &QuadratureRule, log_lik: impl Fn(usize) -> f64) -> Vec<f64> {
    let logs: Vec<f64> = rule.weights().iter().enumerate().map(|(j, w)| w.ln() + log_lik(j)).collect();
    let lse = log_sum_exp(&logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

/// Tilted marginal of `w_m` for the factorized EP baseline.
///
/// Returns `Ok(None)` when `x_m = 0`: the likelihood does not depend on `w_m`.
/// The second axis is treated as independent of the first; when it carries no
/// variance the integral collapses to one dimension.
pub fn logistic_ep_project_2d(
    rule: &QuadratureRule,
    cav_mean: &[f64],
    cav_var: &[f64],
    x: &[f64],
    m: usize,
    y: f64,
) -> Result<Option<ScalarMoments>> {
    ep_project_2d_with(rule, cav_mean, cav_var, x, m, y, log_sigmoid)
}

/// [`logistic_ep_project_2d`] with an arbitrary log-likelihood of the signed margin.
pub fn ep_project_2d_with(
    rule: &QuadratureRule,
    cav_mean: &[f64],
    cav_var: &[f64],
    x: &[f64],
    m: usize,
    y: f64,
    log_lik: impl Fn(f64) -> f64,
) -> Result<Option<ScalarMoments>> {
    if cav_mean.len() != x.len() || cav_var.len() != x.len() || m >= x.len() {
        return Err(Error::DimensionMismatch { left: cav_mean.len(), right: x.len() });
    }
    if let Some(v) = cav_var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Skip(format!("cavity variance {v}")));
    }
    let s = label_sign(y)?;
    let x_m = x[m];
    if x_m == 0.0 {
        return Ok(None);
    }
    let mean1 = x_m * cav_mean[m];
    let sd1 = (x_m * x_m * cav_var[m]).sqrt();
    let (mut mean2, mut var2) = (0.0, 0.0);
    for l in (0..x.len()).filter(|&l| l != m) {
        mean2 += x[l] * cav_mean[l];
        var2 += x[l] * x[l] * cav_var[l];
    }
    let n = rule.order();
    let nodes = rule.nodes();
    let a: Vec<f64> = nodes.iter().map(|g| mean1 + sd1 * g).collect();

    let (m1, e2) = if var2 > 0.0 {
        let sd2 = var2.sqrt();
        let b: Vec<f64> = nodes.iter().map(|g| mean2 + sd2 * g).collect();
        let lw = rule.weights();
        let mut logs = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                logs.push(lw[i].ln() + lw[j].ln() + log_lik(s * (a[i] + b[j])));
            }
        }
        let lse = log_sum_exp(&logs);
        let (mut m1, mut e2) = (0.0, 0.0);
        for i in 0..n {
            let pi: f64 = (0..n).map(|j| (logs[i * n + j] - lse).exp()).sum();
            m1 += pi * a[i];
            e2 += pi * a[i] * a[i];
        }
        (m1, e2)
    } else {
        let p = normalized_weights(rule, |i| log_lik(s * (a[i] + mean2)));
        let m1: f64 = p.iter().zip(&a).map(|(p, a)| p * a).sum();
        let e2: f64 = p.iter().zip(&a).map(|(p, a)| p * a * a).sum();
        (m1, e2)
    };
    let var1 = e2 - m1 * m1;
    if !(var1 > 0.0) {
        return Err(Error::Skip(format!("degenerate projected variance {var1}")));
    }
    Ok(Some(ScalarMoments { mean: m1 / x_m, var: var1 / (x_m * x_m) }))
}

/// Conditional moments `(E(w_m|·), E(w_m²|·))` by ratio-of-quadratures, with
/// nodes placed by the cavity of `w_m`.
pub fn logistic_cep_moments(
    rule: &QuadratureRule,
    cav_mean: f64,
    cav_var: f64,
    x_m: f64,
    offset: f64,
    y: f64,
) -> Result<(f64, f64)> {
    let c = logistic_conditional(rule, cav_mean, cav_var, x_m, offset, y)?;
    Ok((c.mean, c.var + c.mean * c.mean))
}

/// Conditional moments and the coefficients of `x_{\m} x_{\m}ᵀ` in their Hessians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConditional {
    pub mean: f64,
    pub var: f64,
    /// Derivative of the conditional mean with respect to `(2y-1)·offset`.
    pub mean_slope: f64,
    pub mean_hessian: f64,
    pub second_moment_hessian: f64,
    pub var_hessian: f64,
}

/// Conditional moments of `w_m` together with their Hessians with respect to `w_{\m}`.
///
/// With `gⱼ` the likelihood at node `j`, `tⱼ = αⱼ gⱼ²` and
/// `cⱼ = E₀(1 - 2gⱼ) + 2Σₖ tₖ`:
///
/// ```text
/// ∇∇E(w_m)  = (E₁ Σ tⱼcⱼ - E₀ Σ tⱼγⱼcⱼ) / E₀³ · x x ᵀ
/// ∇∇E(w_m²) = (E₂ Σ tⱼcⱼ - E₀ Σ tⱼγⱼ²cⱼ) / E₀³ · x xᵀ
/// ∇∇var     = ∇∇E(w_m²) - 2∇E∇Eᵀ - 2E ∇∇E
/// ```
///
/// Every sum is divided through by `E₀` before evaluation so that only the
/// normalized weights `αⱼgⱼ/E₀` appear; this is algebraically identical and
/// never forms `E₀` itself.
pub fn logistic_conditional(
    rule: &QuadratureRule,
    cav_mean: f64,
    cav_var: f64,
    x_m: f64,
    offset: f64,
    y: f64,
) -> Result<LogisticConditional> {
    if !(cav_var > 0.0) {
        return Err(Error::Skip(format!("cavity variance {cav_var}")));
    }
    let s = label_sign(y)?;
    let sd = cav_var.sqrt();
    let w: Vec<f64> = rule.nodes().iter().map(|g| cav_mean + sd * g).collect();
    let margins: Vec<f64> = w.iter().map(|wj| s * (x_m * wj + offset)).collect();
    let p = normalized_weights(rule, |j| log_sigmoid(margins[j]));
    let g: Vec<f64> = margins.iter().map(|&u| sigmoid(u)).collect();

    let mut mean = 0.0;
    let mut e2 = 0.0;
    // Σ tⱼ / E₀ and Σ tⱼ γⱼ / E₀
    let mut a = 0.0;
    let mut b1 = 0.0;
    for j in 0..w.len() {
        mean += p[j] * w[j];
        e2 += p[j] * w[j] * w[j];
        a += p[j] * g[j];
        b1 += p[j] * g[j] * w[j];
    }
    // cⱼ / E₀
    let c: Vec<f64> = g.iter().map(|gj| 1.0 - 2.0 * gj + 2.0 * a).collect();
    let (mut tc, mut tcw, mut tcw2) = (0.0, 0.0, 0.0);
    for j in 0..w.len() {
        let t = p[j] * g[j] * c[j];
        tc += t;
        tcw += t * w[j];
        tcw2 += t * w[j] * w[j];
    }
    let slope = mean * a - b1;
    let mean_hessian = mean * tc - tcw;
    let second_moment_hessian = e2 * tc - tcw2;
    let var_hessian = second_moment_hessian - 2.0 * slope * slope - 2.0 * mean * mean_hessian;
    let var = (e2 - mean * mean).max(0.0);
    Ok(LogisticConditional { mean, var, mean_slope: slope, mean_hessian, second_moment_hessian, var_hessian })
}

/// New posterior moments of `w_m` by conditional moment matching.
pub fn logistic_cep_project(
    method: Method,
    rule: &QuadratureRule,
    cav_mean: f64,
    cav_var: f64,
    x_m: f64,
    offset: f64,
    spread: f64,
    y: f64,
) -> Result<ScalarMoments> {
    let c = logistic_conditional(rule, cav_mean, cav_var, x_m, offset, y)?;
    let (mean, var) = match method {
        Method::Cep1 => (c.mean, c.var),
        Method::Cep2 => (c.mean + 0.5 * c.mean_hessian * spread, c.var + 0.5 * c.var_hessian * spread),
        Method::Ep => return Err(Error::Unsupported("logistic_cep_project needs a CEP method".into())),
    };
    if !(var > 0.0) || !mean.is_finite() {
        return Err(Error::Skip(format!("conditional variance {var}")));
    }
    Ok(ScalarMoments { mean, var })
}

/// `E[σ(wᵀx*)]` under the factorized posterior, by Gauss-Hermite quadrature.
pub fn logistic_predict(rule: &QuadratureRule, means: &[f64], vars: &[f64], x: &[f64]) -> f64 {
    let (m, v) = super::predictive_linear(means, vars, x);
    if v > 0.0 {
        rule.expect_1d(m, v, sigmoid).unwrap_or_else(|_| sigmoid(m))
    } else {
        sigmoid(m)
    }
}
