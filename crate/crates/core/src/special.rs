//! Scalar special functions shared by the likelihood models.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the normal CDF ratios switch to the continued fraction.
const TAIL_SWITCH: f64 = -6.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 - Φ(t)) / φ(t)` for `t > 0` via Lentz's continued fraction.
fn mills_ratio(t: f64) -> f64 {
    // M(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...))))
    let tiny = 1e-300;
    let mut f = t;
    let mut c = t;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = t + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = t + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio(-x).ln()
    } else {
        norm_cdf(x).ln()
    }
}

/// Inverse Mills ratio `φ(z) / Φ(z)`.
///
/// The naive quotient underflows to `0/0` for large negative `z`; there the
/// continued fraction for the Mills ratio is used instead.
pub fn inv_mills(z: f64) -> f64 {
    if z < TAIL_SWITCH {
        1.0 / mills_ratio(-z)
    } else {
        norm_pdf(z) / norm_cdf(z)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x) = -ln(1 + e^{-x})`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Cubic Hermite interpolant of a smooth function on a uniform grid.
struct HermiteTable {
    lo: f64,
    inv_step: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    fn new(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Self {
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let xs = (0..n).map(|i| lo + step * i as f64);
        HermiteTable {
            lo,
            inv_step: 1.0 / step,
            step,
            values: xs.clone().map(&f).collect(),
            slopes: xs.map(df).collect(),
        }
    }

    /// `None` outside the tabulated range.
    #[inline]
    fn eval(&self, x: f64) -> Option<f64> {
        let t = (x - self.lo) * self.inv_step;
        if !(t >= 0.0) {
            return None;
        }
        let i = t as usize;
        if i + 1 >= self.values.len() {
            return None;
        }
        let u = t - i as f64;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        Some(
            h00 * self.values[i]
                + h01 * self.values[i + 1]
                + self.step * (h10 * self.slopes[i] + h11 * self.slopes[i + 1]),
        )
    }
}

const TABLE_STEP: f64 = 1.0 / 128.0;

/// Tabulated [`log_norm_cdf`], absolute error below 1e-10. For bulk
/// evaluation where a few ulps do not matter, such as importance weights.
pub fn log_norm_cdf_fast(x: f64) -> f64 {
    static TABLE: OnceLock<HermiteTable> = OnceLock::new();
    let table = TABLE.get_or_init(|| HermiteTable::new(-40.0, 10.0, TABLE_STEP, log_norm_cdf, inv_mills));
    match table.eval(x) {
        Some(v) => v,
        None if x > 0.0 => -norm_cdf(-x),
        None => log_norm_cdf(x),
    }
}

/// Tabulated [`log_sigmoid`], absolute error below 1e-10.
pub fn log_sigmoid_fast(x: f64) -> f64 {
    static TABLE: OnceLock<HermiteTable> = OnceLock::new();
    let table = TABLE.get_or_init(|| HermiteTable::new(-40.0, 40.0, TABLE_STEP, log_sigmoid, |x| sigmoid(-x)));
    table.eval(x).unwrap_or_else(|| log_sigmoid(x))
}

/// Log-sum-exp of a slice; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_table_values() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(norm_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-14);
        assert_relative_eq!(norm_cdf(-2.0), 0.022_750_131_948_179_2, epsilon = 1e-15);
    }

    #[test]
    fn inverse_mills_is_continuous_across_switch() {
        let below = inv_mills(TAIL_SWITCH - 1e-9);
        let above = inv_mills(TAIL_SWITCH + 1e-9);
        assert_relative_eq!(below, above, max_relative = 1e-8);
        // asymptote: φ(z)/Φ(z) ≈ -z for z → -∞
        let z = -40.0;
        let r = inv_mills(z);
        assert!(r.is_finite());
        assert_relative_eq!(r, -z, max_relative = 1e-3);
    }

    #[test]
    fn log_cdf_in_tail() {
        // ln Φ(-10) = -53.23128515051247
        assert_relative_eq!(log_norm_cdf(-10.0), -53.231_285_150_512_47, max_relative = 1e-12);
        assert!(log_norm_cdf(-200.0).is_finite());
        assert_relative_eq!(log_norm_cdf(-5.0), norm_cdf(-5.0).ln(), max_relative = 1e-12);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_relative_eq!(log_sigmoid(0.0), -std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(log_sigmoid(-800.0), -800.0, max_relative = 1e-12);
        assert!(log_sigmoid(800.0) <= 0.0);
        assert_relative_eq!(sigmoid(2.0), 0.880_797_077_977_882_3, epsilon = 1e-15);
    }

    #[test]
    fn tables_match_exact_functions() {
        let mut worst: f64 = 0.0;
        let mut x = -45.0;
        while x < 45.0 {
            worst = worst.max((log_norm_cdf_fast(x) - log_norm_cdf(x)).abs());
            worst = worst.max((log_sigmoid_fast(x) - log_sigmoid(x)).abs());
            x += 0.000_731;
        }
        assert!(worst < 1e-10, "{worst}");
    }
}
