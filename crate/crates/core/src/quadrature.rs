//! Gauss-Hermite rules for expectations under a Gaussian.
//!
//! Weights are normalized against the standard normal density, so
//! `Σ αⱼ g(γⱼ) ≈ E_{N(0,1)}[g]`.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

pub const MAX_ORDER: usize = 64;
pub const DEFAULT_ORDER: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Normalized probabilists' Hermite polynomials `He_k/√k!` at `x`, returning
/// `(p_n, p_{n-1})`.
fn normalized_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Gauss-Hermite rule of the given order (1 ≤ order ≤ 64).
///
/// Nodes come from the eigenvalues of the symmetric tridiagonal Jacobi matrix,
/// polished with two Newton steps on the three-term recurrence; weights are
/// then `1 / (n·p_{n-1}(x)²)`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!("quadrature order {order} outside 1..={MAX_ORDER}")));
    }
    let n = order;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().cloned().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for x in nodes.iter_mut() {
        for _ in 0..2 {
            let (p, q) = normalized_hermite(n, *x);
            let dp = (n as f64).sqrt() * q;
            if dp != 0.0 {
                *x -= p / dp;
            }
        }
    }
    // exact symmetry about zero
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (_, q) = normalized_hermite(n, x);
            1.0 / (n as f64 * q * q)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    for i in 0..n / 2 {
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(QuadratureRule { nodes, weights })
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().cloned().zip(self.weights.iter().cloned())
    }

    /// `E[g(x)]` for `x ~ N(mean, var)`.
    pub fn expect_1d<F: Fn(f64) -> f64>(&self, mean: f64, var: f64, g: F) -> Result<f64> {
        if !(var > 0.0) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {var}")));
        }
        let sd = var.sqrt();
        // pair mirrored nodes so odd parts cancel exactly
        let n = self.order();
        let mut total = 0.0;
        for i in 0..n / 2 {
            let x = self.nodes[n - 1 - i];
            total += self.weights[i] * (g(mean - sd * x) + g(mean + sd * x));
        }
        if n % 2 == 1 {
            total += self.weights[n / 2] * g(mean);
        }
        Ok(total)
    }

    /// `E[g(a, b)]` for independent `a ~ N(mean[0], var[0])`, `b ~ N(mean[1], var[1])`.
    pub fn expect_2d<F: Fn(f64, f64) -> f64>(&self, mean: [f64; 2], var: [f64; 2], g: F) -> Result<f64> {
        if !(var[0] > 0.0 && var[1] > 0.0) {
            return Err(Error::InvalidArgument(format!("variances must be positive, got {var:?}")));
        }
        let (s0, s1) = (var[0].sqrt(), var[1].sqrt());
        let mut total = 0.0;
        for (x0, w0) in self.iter() {
            let a = mean[0] + s0 * x0;
            for (x1, w1) in self.iter() {
                total += w0 * w1 * g(a, mean[1] + s1 * x1);
            }
        }
        Ok(total)
    }
}
