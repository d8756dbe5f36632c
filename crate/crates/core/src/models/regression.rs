//! Bayesian linear classifiers with a fully factorized Gaussian posterior.
//!
//! Every weight is its own one-dimensional block with prior `N(0, λ)`, and
//! every data point is a factor touching all weights.

use super::logistic::{logistic_cep_project, logistic_ep_project_2d, logistic_predict};
use super::probit::{probit_cep_project, probit_ep_project, probit_predict};
use super::{label_sign, Method, ScalarMoments};
use crate::engine::{
    run_to_convergence, BlockId, BlockMoments, FactorGraphState, FactorId, GraphView, MessageInit, ProjectionProvider,
    ProjectionRequest, RunReport, SweepOptions,
};
use crate::error::{Error, Result};
use crate::expfam::{Covariance, Eta2, Factor, GaussianFactor};
use crate::quadrature::{gauss_hermite, QuadratureRule, DEFAULT_ORDER};
use crate::special::{inv_mills, log_norm_cdf, log_norm_cdf_fast, log_sigmoid, log_sigmoid_fast, sigmoid};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Probit,
    Logistic,
    /// `y ~ N(wᵀx, noise_var)`; conjugate, used to check fixed points.
    Gaussian {
        noise_var: f64,
    },
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Probit => "probit",
            Link::Logistic => "logistic",
            Link::Gaussian { .. } => "gaussian",
        }
    }
}

/// Row-major design matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
}

impl RegressionData {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("need at least one feature".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch { left: features.len(), right: labels.len() * dim });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite feature in row {}", i / dim)));
        }
        Ok(RegressionData { features, labels, dim })
    }

    /// Labels must be 0 or 1 for the classification links.
    pub fn check_binary(&self) -> Result<()> {
        for y in &self.labels {
            label_sign(*y)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Features as an `n × d` matrix.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.features)
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> RegressionData {
        RegressionData {
            features: self.features[start * self.dim..end * self.dim].to_vec(),
            labels: self.labels[start..end].to_vec(),
            dim: self.dim,
        }
    }
}

/// Projection provider for one link and one method.
pub struct RegressionModel {
    data: RegressionData,
    link: Link,
    method: Method,
    rule: QuadratureRule,
}

impl RegressionModel {
    pub fn new(data: RegressionData, link: Link, method: Method) -> Result<Self> {
        Self::with_quadrature(data, link, method, DEFAULT_ORDER)
    }

    pub fn with_quadrature(data: RegressionData, link: Link, method: Method, order: usize) -> Result<Self> {
        match link {
            Link::Gaussian { noise_var } if !(noise_var > 0.0) => {
                return Err(Error::InvalidArgument(format!("noise variance must be positive, got {noise_var}")))
            }
            Link::Gaussian { .. } => {}
            _ => data.check_binary()?,
        }
        Ok(RegressionModel { data, link, method, rule: gauss_hermite(order)? })
    }

    pub fn data(&self) -> &RegressionData {
        &self.data
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Independent `N(0, prior_var)` priors, one block per weight.
    pub fn priors(&self, prior_var: f64) -> Result<Vec<Factor>> {
        if !(prior_var > 0.0) {
            return Err(Error::InvalidArgument(format!("prior variance must be positive, got {prior_var}")));
        }
        (0..self.data.dim()).map(|_| GaussianFactor::scalar(0.0, prior_var).map(Factor::Gaussian)).collect()
    }

    /// Posterior probability of `y = 1` at `x`; the Gaussian link returns the predictive mean.
    pub fn predict(&self, summary: &PosteriorSummary, x: &[f64]) -> f64 {
        match self.link {
            Link::Probit => probit_predict(&summary.means, &summary.vars, x),
            Link::Logistic => logistic_predict(&self.rule, &summary.means, &summary.vars, x),
            Link::Gaussian { .. } => super::predictive_linear(&summary.means, &summary.vars, x).0,
        }
    }

    /// Log-likelihood of one point and its first two derivatives in the margin `wᵀx`.
    fn point_terms(&self, margin: f64, y: f64) -> (f64, f64, f64) {
        match self.link {
            Link::Probit => {
                let s = if y == 1.0 { 1.0 } else { -1.0 };
                let z = s * margin;
                let r = inv_mills(z);
                (log_norm_cdf(z), s * r, -r * (z + r))
            }
            Link::Logistic => {
                let s = if y == 1.0 { 1.0 } else { -1.0 };
                let p = sigmoid(margin);
                (log_sigmoid(s * margin), s * sigmoid(-s * margin), -p * (1.0 - p))
            }
            Link::Gaussian { noise_var } => {
                let r = y - margin;
                let log_norm = -0.5 * (2.0 * std::f64::consts::PI * noise_var).ln();
                (log_norm - 0.5 * r * r / noise_var, r / noise_var, -1.0 / noise_var)
            }
        }
    }

    /// Unnormalized log posterior under independent `N(0, prior_var)` priors,
    /// for each column of `samples` (`d × m`).
    ///
    /// Uses tabulated link functions (absolute error below 1e-10 per point);
    /// [`Self::log_joint`] evaluates them exactly.
    pub fn log_joint_batch(&self, samples: &DMatrix<f64>, prior_var: f64) -> Vec<f64> {
        const BLOCK: usize = 64;
        let features = self.data.feature_matrix();
        let signs: Vec<f64> = self.data.labels().iter().map(|&y| if y == 1.0 { 1.0 } else { -1.0 }).collect();
        let mut out = Vec::with_capacity(samples.ncols());
        for start in (0..samples.ncols()).step_by(BLOCK) {
            let block = samples.columns(start, BLOCK.min(samples.ncols() - start));
            let margins = &features * block;
            for (j, w) in block.column_iter().enumerate() {
                let prior = -0.5 * w.norm_squared() / prior_var;
                let column = margins.column(j);
                let lik: f64 = match self.link {
                    Link::Probit => column.iter().zip(&signs).map(|(m, s)| log_norm_cdf_fast(s * m)).sum(),
                    Link::Logistic => column.iter().zip(&signs).map(|(m, s)| log_sigmoid_fast(s * m)).sum(),
                    Link::Gaussian { .. } => {
                        column.iter().zip(self.data.labels()).map(|(&m, &y)| self.point_terms(m, y).0).sum()
                    }
                };
                out.push(prior + lik);
            }
        }
        out
    }

    pub fn log_joint(&self, w: &[f64], prior_var: f64) -> f64 {
        let prior = -0.5 * w.iter().map(|v| v * v).sum::<f64>() / prior_var;
        prior
            + (0..self.data.len())
                .map(|i| {
                    let m: f64 = self.data.row(i).iter().zip(w).map(|(x, w)| x * w).sum();
                    self.point_terms(m, self.data.label(i)).0
                })
                .sum::<f64>()
    }

    /// Gradient and Hessian of [`Self::log_joint`].
    pub fn log_joint_grad_hess(&self, w: &DVector<f64>, prior_var: f64) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.data.dim();
        let mut grad = -w / prior_var;
        let mut hess = DMatrix::identity(d, d) * (-1.0 / prior_var);
        for i in 0..self.data.len() {
            let x = DVector::from_column_slice(self.data.row(i));
            let (_, g, h) = self.point_terms(x.dot(w), self.data.label(i));
            grad.axpy(g, &x, 1.0);
            hess.ger(h, &x, &x, 1.0);
        }
        (grad, hess)
    }

    fn ep(&self, req: &ProjectionRequest<'_>, x: &[f64], y: f64, m: usize) -> Result<ScalarMoments> {
        let d = x.len();
        let mut cav_mean = vec![0.0; d];
        let mut cav_var = vec![0.0; d];
        for l in 0..d {
            let c = if l == m { scalar_of(req.cavity)? } else { scalar_of(&req.view.cavity(req.factor, l)?)? };
            cav_mean[l] = c.mean;
            cav_var[l] = c.var;
        }
        match self.link {
            Link::Probit => Ok(probit_ep_project(&cav_mean, &cav_var, x, y)?[m]),
            Link::Logistic => match logistic_ep_project_2d(&self.rule, &cav_mean, &cav_var, x, m, y)? {
                Some(t) => Ok(t),
                None => scalar_of(req.view.posterior(m)),
            },
            Link::Gaussian { noise_var } => {
                if let Some(v) = cav_var.iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::Skip(format!("cavity variance {v}")));
                }
                let (pm, pv) = super::predictive_linear(&cav_mean, &cav_var, x);
                let total = noise_var + pv;
                Ok(ScalarMoments {
                    mean: cav_mean[m] + cav_var[m] * x[m] * (y - pm) / total,
                    var: cav_var[m] - cav_var[m] * cav_var[m] * x[m] * x[m] / total,
                })
            }
        }
    }

    fn cep(&self, req: &ProjectionRequest<'_>, x: &[f64], y: f64, m: usize) -> Result<ScalarMoments> {
        let cav = scalar_of(req.cavity)?;
        let (offset, spread) = rest_summary(&req.view, x, m)?;
        match self.link {
            Link::Probit => probit_cep_project(self.method, cav.mean, cav.var, x[m], offset, spread, y),
            Link::Logistic => logistic_cep_project(self.method, &self.rule, cav.mean, cav.var, x[m], offset, spread, y),
            Link::Gaussian { noise_var } => gaussian_cep_project(cav, x[m], offset, spread, y, noise_var),
        }
    }
}

/// Conditional update for the Gaussian link.
///
/// The conditional mean is `a + b·offset` and the conditional second moment is
/// `c + (a + b·offset)²`, both linear in the sufficient statistics `(w_l, w_l²)`
/// of the other weights once cross terms are replaced by products of means.
/// Evaluating them at the expected statistics adds `b²·spread` to the variance.
fn gaussian_cep_project(
    cav: ScalarMoments,
    x_m: f64,
    offset: f64,
    spread: f64,
    y: f64,
    noise_var: f64,
) -> Result<ScalarMoments> {
    if !(cav.var > 0.0) {
        return Err(Error::Skip(format!("cavity variance {}", cav.var)));
    }
    let precision = 1.0 / cav.var + x_m * x_m / noise_var;
    let var = 1.0 / precision;
    let slope = -var * x_m / noise_var;
    Ok(ScalarMoments {
        mean: var * (cav.mean / cav.var + x_m * (y - offset) / noise_var),
        var: var + slope * slope * spread,
    })
}

/// `(Σ_{l≠m} x_l E w_l, Σ_{l≠m} x_l² var w_l)` under the current posterior.
fn rest_summary(view: &GraphView<'_>, x: &[f64], m: usize) -> Result<(f64, f64)> {
    let mut offset = 0.0;
    let mut spread = 0.0;
    for (l, &xl) in x.iter().enumerate() {
        if l == m || xl == 0.0 {
            continue;
        }
        let s = scalar_moments(view.moments(l)?)?;
        offset += xl * s.mean;
        spread += xl * xl * s.var;
    }
    Ok((offset, spread))
}

fn scalar_moments(m: &BlockMoments) -> Result<ScalarMoments> {
    let g = m.gaussian().ok_or(Error::KindMismatch("expected a Gaussian block"))?;
    let var = match &g.cov {
        Covariance::Diagonal(v) => v[0],
        Covariance::Full(c) => c[(0, 0)],
    };
    Ok(ScalarMoments { mean: g.mean[0], var })
}

fn scalar_of(f: &Factor) -> Result<ScalarMoments> {
    let g = f.as_gaussian().ok_or(Error::KindMismatch("expected a Gaussian block"))?;
    let precision = match g.eta2() {
        Eta2::Diagonal(d) => -2.0 * d[0],
        Eta2::Full(m) => -2.0 * m[(0, 0)],
    };
    if !(precision > 0.0) {
        return Err(Error::NonNormalizable { coordinate: 0, precision });
    }
    let var = 1.0 / precision;
    Ok(ScalarMoments { mean: g.eta1()[0] * var, var })
}

impl ProjectionProvider for RegressionModel {
    fn num_factors(&self) -> usize {
        self.data.len()
    }

    fn factor_blocks(&self, _factor: FactorId) -> Vec<BlockId> {
        (0..self.data.dim()).collect()
    }

    fn project(&self, req: &ProjectionRequest<'_>) -> Result<Factor> {
        let x = self.data.row(req.factor);
        let y = self.data.label(req.factor);
        let m = req.block;
        let t = match self.method {
            Method::Ep => self.ep(req, x, y, m)?,
            Method::Cep1 | Method::Cep2 => self.cep(req, x, y, m)?,
        };
        Ok(Factor::Gaussian(GaussianFactor::scalar(t.mean, t.var)?))
    }
}

/// Per-weight posterior means and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl PosteriorSummary {
    pub fn from_state(state: &FactorGraphState) -> Result<Self> {
        let mut means = Vec::with_capacity(state.num_blocks());
        let mut vars = Vec::with_capacity(state.num_blocks());
        for b in 0..state.num_blocks() {
            let s = scalar_moments(state.moments(b)?)?;
            means.push(s.mean);
            vars.push(s.var);
        }
        Ok(PosteriorSummary { means, vars })
    }

    /// The summary as a diagonal Gaussian factor.
    pub fn to_factor(&self) -> Result<GaussianFactor> {
        GaussianFactor::from_moments_diagonal(&self.means, &self.vars)
    }
}

/// Settings for [`fit_regression`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub prior_var: f64,
    pub init: MessageInit,
    pub sweep: SweepOptions,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            prior_var: 1.0,
            init: MessageInit::default(),
            sweep: SweepOptions::default(),
            tol: 1e-6,
            max_sweeps: 100,
        }
    }
}

pub struct RegressionFit {
    pub state: FactorGraphState,
    pub report: RunReport,
    pub summary: PosteriorSummary,
}

/// Build the factor graph for `model` and iterate to convergence.
pub fn fit_regression(model: &RegressionModel, options: &FitOptions) -> Result<RegressionFit> {
    let mut state = FactorGraphState::new(model.priors(options.prior_var)?, model, options.init)?;
    let report = run_to_convergence(&mut state, model, &options.sweep, options.tol, options.max_sweeps)?;
    let summary = PosteriorSummary::from_state(&state)?;
    Ok(RegressionFit { state, report, summary })
}
