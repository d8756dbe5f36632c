//! Brute-force reference estimators: dense grid integration for up to three
//! dimensions and self-normalized importance sampling above that.

use crate::error::{Error, Result};
use crate::expfam::GaussianFactor;
use crate::special::log_sum_exp;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub const MAX_GRID_DIM: usize = 3;

/// Effective sample sizes below this mark an estimate as unreliable.
pub const MIN_RELIABLE_ESS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Log of the integral of the (unnormalized) density over the box.
    pub log_normalizer: f64,
    /// Largest change in any mean between `resolution` and `2·resolution` points.
    pub refinement_change: f64,
}

fn grid_once<F: Fn(&[f64]) -> f64 + Sync>(
    log_density: &F,
    lower: &[f64],
    upper: &[f64],
    points: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let d = lower.len();
    let steps: Vec<f64> = (0..d).map(|k| (upper[k] - lower[k]) / (points - 1) as f64).collect();
    let total = points.pow(d as u32);
    let cells: Vec<(f64, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut x = vec![0.0; d];
            let mut rem = flat;
            let mut log_w = 0.0;
            for k in (0..d).rev() {
                let i = rem % points;
                rem /= points;
                x[k] = lower[k] + steps[k] * i as f64;
                let edge = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
                log_w += (edge * steps[k]).ln();
            }
            (log_w + log_density(&x), x)
        })
        .collect();
    let logs: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let lse = log_sum_exp(&logs);
    if !lse.is_finite() {
        return Err(Error::InvalidArgument("density is zero or non-finite on the whole box".into()));
    }
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    for (l, x) in &cells {
        let p = (l - lse).exp();
        for k in 0..d {
            mean[k] += p * x[k];
            second[k] += p * x[k] * x[k];
        }
    }
    let var = (0..d).map(|k| second[k] - mean[k] * mean[k]).collect();
    Ok((mean, var, lse))
}

/// Trapezoid-rule moments of `exp(log_density)` on the box `[lower, upper]`
/// with `resolution` points per axis, reported from a grid twice as fine.
pub fn grid_posterior<F: Fn(&[f64]) -> f64 + Sync>(
    log_density: F,
    lower: &[f64],
    upper: &[f64],
    resolution: usize,
) -> Result<GridMoments> {
    let d = lower.len();
    if d == 0 || d > MAX_GRID_DIM {
        return Err(Error::InvalidArgument(format!("grid oracle supports 1..={MAX_GRID_DIM} dimensions, got {d}")));
    }
    if upper.len() != d {
        return Err(Error::DimensionMismatch { left: d, right: upper.len() });
    }
    if resolution < 2 || (0..d).any(|k| !(upper[k] > lower[k])) {
        return Err(Error::InvalidArgument("need at least 2 points and a non-empty box".into()));
    }
    let (coarse, _, _) = grid_once(&log_density, lower, upper, resolution)?;
    let (mean, var, log_normalizer) = grid_once(&log_density, lower, upper, 2 * resolution)?;
    let refinement_change = coarse.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(GridMoments { mean, var, log_normalizer, refinement_change })
}

/// Box of `mean ± width` standard deviations per coordinate.
pub fn grid_box(mean: &[f64], var: &[f64], width: f64) -> (Vec<f64>, Vec<f64>) {
    let lower = mean.iter().zip(var).map(|(m, v)| m - width * v.sqrt()).collect();
    let upper = mean.iter().zip(var).map(|(m, v)| m + width * v.sqrt()).collect();
    (lower, upper)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Standard errors of the mean estimates.
    pub mean_std_err: Vec<f64>,
    pub ess: f64,
    /// False when the effective sample size is below [`MIN_RELIABLE_ESS`].
    pub reliable: bool,
}

const CHUNK: usize = 4096;

/// Weighted sums of one chunk, scaled by `exp(-max_log_weight)`.
#[derive(Clone)]
struct ChunkSums {
    max: f64,
    w: f64,
    w2: f64,
    wx: Vec<f64>,
    wxx: Vec<f64>,
    w2x: Vec<f64>,
    w2xx: Vec<f64>,
}

impl ChunkSums {
    fn rescale(&self, to: f64) -> ChunkSums {
        let s = (self.max - to).exp();
        let s2 = s * s;
        ChunkSums {
            max: to,
            w: self.w * s,
            w2: self.w2 * s2,
            wx: self.wx.iter().map(|v| v * s).collect(),
            wxx: self.wxx.iter().map(|v| v * s).collect(),
            w2x: self.w2x.iter().map(|v| v * s2).collect(),
            w2xx: self.w2xx.iter().map(|v| v * s2).collect(),
        }
    }

    fn add(&mut self, o: &ChunkSums) {
        self.w += o.w;
        self.w2 += o.w2;
        for k in 0..self.wx.len() {
            self.wx[k] += o.wx[k];
            self.wxx[k] += o.wxx[k];
            self.w2x[k] += o.w2x[k];
            self.w2xx[k] += o.w2xx[k];
        }
    }
}

/// Self-normalized importance sampling of the marginal moments of
/// `exp(log_target)` with a Gaussian proposal.
///
/// `log_target_batch` receives a `d × m` matrix of samples (one per column)
/// and returns the `m` unnormalized log densities, so likelihoods can be
/// evaluated as one matrix product. Samples are drawn in fixed-size chunks,
/// chunk `c` from a generator on stream `c` of `seed`, so results do not depend
/// on the number of worker threads.
pub fn is_moments<F>(log_target_batch: F, proposal: &GaussianFactor, n_samples: usize, seed: u64) -> Result<IsMoments>
where
    F: Fn(&DMatrix<f64>) -> Vec<f64> + Sync,
{
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let moments = proposal.moments()?;
    let d = proposal.dim();
    let cov = moments.cov.to_full();
    let chol = cov.clone().cholesky().ok_or(Error::NonNormalizable { coordinate: 0, precision: 0.0 })?;
    let l = chol.l();
    let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    let mean = moments.mean;
    let n_chunks = n_samples.div_ceil(CHUNK);

    let chunk_sums = |c: usize| -> ChunkSums {
        let m = CHUNK.min(n_samples - c * CHUNK);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let z = DMatrix::<f64>::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng));
        let mut x = &l * &z;
        for j in 0..m {
            let mut col = x.column_mut(j);
            col += &mean;
        }
        let target = log_target_batch(&x);
        // log proposal density up to the constant shared by every sample
        let logw: Vec<f64> = (0..m).map(|j| target[j] + 0.5 * z.column(j).norm_squared() + log_det_half).collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = ChunkSums {
            max,
            w: 0.0,
            w2: 0.0,
            wx: vec![0.0; d],
            wxx: vec![0.0; d],
            w2x: vec![0.0; d],
            w2xx: vec![0.0; d],
        };
        for j in 0..m {
            let w = (logw[j] - max).exp();
            if !w.is_finite() {
                continue;
            }
            let w2 = w * w;
            s.w += w;
            s.w2 += w2;
            for k in 0..d {
                let v = x[(k, j)];
                s.wx[k] += w * v;
                s.wxx[k] += w * v * v;
                s.w2x[k] += w2 * v;
                s.w2xx[k] += w2 * v * v;
            }
        }
        s
    };
    let parts: Vec<ChunkSums> = (0..n_chunks).into_par_iter().map(chunk_sums).collect();
    let max = parts.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::InvalidArgument("every importance weight is zero".into()));
    }
    let mut total = parts[0].rescale(max);
    for p in &parts[1..] {
        if p.max.is_finite() {
            total.add(&p.rescale(max));
        }
    }
    let ess = total.w * total.w / total.w2;
    let mean: Vec<f64> = total.wx.iter().map(|v| v / total.w).collect();
    let var: Vec<f64> = (0..d).map(|k| total.wxx[k] / total.w - mean[k] * mean[k]).collect();
    // Σ w̄²(x - μ)² with w̄ the normalized weights
    let norm2 = total.w * total.w;
    let mean_std_err = (0..d)
        .map(|k| {
            let s = (total.w2xx[k] - 2.0 * mean[k] * total.w2x[k] + mean[k] * mean[k] * total.w2) / norm2;
            s.max(0.0).sqrt()
        })
        .collect();
    Ok(IsMoments { mean, var, mean_std_err, ess, reliable: ess >= MIN_RELIABLE_ESS })
}

/// Gaussian centered at the mode of a smooth log density, with covariance the
/// inverse negative Hessian there, found by damped Newton iterations.
///
/// `grad_hess` returns the gradient and Hessian of the log density.
pub fn laplace_approximation<F>(grad_hess: F, start: &[f64], max_iters: usize) -> Result<GaussianFactor>
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut x = DVector::from_column_slice(start);
    let mut hess = DMatrix::identity(x.len(), x.len());
    for _ in 0..max_iters {
        let (g, h) = grad_hess(&x);
        hess = h;
        let neg = -&hess;
        let chol = neg.cholesky().ok_or(Error::NonNormalizable { coordinate: 0, precision: 0.0 })?;
        let step = chol.solve(&g);
        x += &step;
        if step.amax() < 1e-12 {
            break;
        }
    }
    let precision = -hess;
    GaussianFactor::from_natural_full(&precision * &x, precision * -0.5)
}
