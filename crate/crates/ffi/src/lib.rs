//! C ABI over `cep-core`.
//!
//! Every function returns a [`CepStatus`]; on failure a message is stored for
//! the calling thread and can be read with [`cep_last_error_message`]. Objects
//! cross the boundary as opaque handles that must be released with the
//! matching `*_free` function. Arrays are caller-owned and row-major.

use cep_core::engine::{Schedule, SweepOptions, VisitOrder};
use cep_core::models::cp::{cp_predict, CpModel, CpOptions, EmbeddingPosterior, SparseTensor, ValueKind};
use cep_core::models::regression::{
    fit_regression, FitOptions, Link, PosteriorSummary, RegressionData, RegressionModel,
};
use cep_core::models::Method;
use cep_core::quadrature::{gauss_hermite, QuadratureRule};
use cep_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A factor or posterior could not be normalized.
    Numerical = 3,
    Unsupported = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CepLink {
    Probit = 0,
    Logistic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CepMethod {
    Ep = 0,
    Cep1 = 1,
    Cep2 = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CepValueKind {
    Continuous = 0,
    Binary = 1,
}

/// Options for [`cep_regression_fit`] and [`cep_tensor_fit`]; start from
/// [`cep_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CepFitOptions {
    pub prior_var: f64,
    pub damping: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Gauss-Hermite order for the logistic link.
    pub quad_order: usize,
    /// Nonzero selects the parallel schedule.
    pub parallel: u8,
    /// Worker cap for the parallel schedule; 0 computes projections serially.
    pub threads: usize,
    pub seed: u64,
}

pub struct CepQuadrature(QuadratureRule);

pub struct CepRegressionFit {
    model: RegressionModel,
    summary: PosteriorSummary,
    sweeps: usize,
    converged: bool,
}

pub struct CepTensorFit {
    posterior: EmbeddingPosterior,
    kind: ValueKind,
    sweeps: usize,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> CepStatus {
    match e {
        Error::NonNormalizable { .. } | Error::GammaNonNormalizable { .. } | Error::Skip(_) => CepStatus::Numerical,
        Error::Unsupported(_) => CepStatus::Unsupported,
        _ => CepStatus::InvalidArgument,
    }
}

/// Run `body`, translating errors and panics into a status and the thread's last error.
fn guard<F: FnOnce() -> Result<(), (CepStatus, String)>>(body: F) -> CepStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CepStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {message}"));
            CepStatus::Internal
        }
    }
}

fn core<T>(r: cep_core::Result<T>) -> Result<T, (CepStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CepStatus, String) {
    (CepStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> (CepStatus, String) {
    (CepStatus::InvalidArgument, message.into())
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (CepStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (CepStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the full message length excluding the terminator, 0 when
/// there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cep_last_error_copy(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

#[no_mangle]
pub extern "C" fn cep_fit_options_default() -> CepFitOptions {
    let f = FitOptions::default();
    CepFitOptions {
        prior_var: f.prior_var,
        damping: f.sweep.damping,
        tol: f.tol,
        max_sweeps: f.max_sweeps,
        quad_order: cep_core::quadrature::DEFAULT_ORDER,
        parallel: 0,
        threads: 0,
        seed: 0,
    }
}

fn sweep_options(o: &CepFitOptions, order: VisitOrder) -> SweepOptions {
    SweepOptions {
        schedule: if o.parallel != 0 { Schedule::Parallel } else { Schedule::Sequential },
        order,
        damping: o.damping,
        threads: Some(o.threads),
    }
}

/// Gauss-Hermite rule of `order` points against the standard normal weight.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn cep_gauss_hermite_new(order: usize, out: *mut *mut CepQuadrature) -> CepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let rule = core(gauss_hermite(order))?;
        *out = Box::into_raw(Box::new(CepQuadrature(rule)));
        Ok(())
    })
}

/// # Safety
/// `rule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cep_gauss_hermite_order(rule: *const CepQuadrature) -> usize {
    rule.as_ref().map_or(0, |r| r.0.order())
}

/// Copy nodes and weights (each `len` = order entries).
///
/// # Safety
/// `rule` must be a live handle; `nodes` and `weights` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cep_gauss_hermite_copy(
    rule: *const CepQuadrature,
    nodes: *mut f64,
    weights: *mut f64,
    len: usize,
) -> CepStatus {
    guard(|| {
        let rule = &rule.as_ref().ok_or_else(|| null("rule"))?.0;
        if len != rule.order() {
            return Err(invalid(format!("buffers hold {len} values, rule has {}", rule.order())));
        }
        slice_mut(nodes, len, "nodes")?.copy_from_slice(rule.nodes());
        slice_mut(weights, len, "weights")?.copy_from_slice(rule.weights());
        Ok(())
    })
}

/// `E[g(x)]` for `x ~ N(mean, var)` where `g` is the polynomial with
/// coefficients `coeffs[0] + coeffs[1] x + …`.
///
/// # Safety
/// `rule` must be a live handle, `coeffs` valid for `n_coeffs` reads, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn cep_gauss_hermite_expect_poly(
    rule: *const CepQuadrature,
    mean: f64,
    var: f64,
    coeffs: *const f64,
    n_coeffs: usize,
    out: *mut f64,
) -> CepStatus {
    guard(|| {
        let rule = &rule.as_ref().ok_or_else(|| null("rule"))?.0;
        let coeffs = slice(coeffs, n_coeffs, "coeffs")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let poly = |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
        *out = core(rule.expect_1d(mean, var, poly))?;
        Ok(())
    })
}

/// # Safety
/// `rule` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cep_gauss_hermite_free(rule: *mut CepQuadrature) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// Fit a Bayesian classifier with a factorized Gaussian posterior.
///
/// `features` is `n × d` row-major, `labels` holds `n` values in {0, 1}.
/// `options` may be null for the defaults.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn cep_regression_fit(
    features: *const f64,
    labels: *const f64,
    n: usize,
    d: usize,
    link: CepLink,
    method: CepMethod,
    options: *const CepFitOptions,
    out: *mut *mut CepRegressionFit,
) -> CepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(d).ok_or_else(|| invalid("n × d overflows"))?;
        let x = slice(features, len, "features")?.to_vec();
        let y = slice(labels, n, "labels")?.to_vec();
        let o = options.as_ref().copied().unwrap_or_else(|| cep_fit_options_default());
        let data = core(RegressionData::new(x, y, d))?;
        let link = match link {
            CepLink::Probit => Link::Probit,
            CepLink::Logistic => Link::Logistic,
        };
        let method = match method {
            CepMethod::Ep => Method::Ep,
            CepMethod::Cep1 => Method::Cep1,
            CepMethod::Cep2 => Method::Cep2,
        };
        let model = core(RegressionModel::with_quadrature(data, link, method, o.quad_order))?;
        let fit_opts = FitOptions {
            prior_var: o.prior_var,
            sweep: sweep_options(&o, VisitOrder::ByFactor),
            tol: o.tol,
            max_sweeps: o.max_sweeps,
            ..Default::default()
        };
        let fit = core(fit_regression(&model, &fit_opts))?;
        let handle = CepRegressionFit {
            summary: fit.summary,
            sweeps: fit.report.sweeps.len(),
            converged: fit.report.converged,
            model,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cep_regression_dim(fit: *const CepRegressionFit) -> usize {
    fit.as_ref().map_or(0, |f| f.summary.means.len())
}

/// Sweeps run and whether the tolerance was reached (1) or not (0).
///
/// # Safety
/// `fit` must be a live handle; outputs valid for one write each or null.
#[no_mangle]
pub unsafe extern "C" fn cep_regression_report(
    fit: *const CepRegressionFit,
    sweeps: *mut usize,
    converged: *mut u8,
) -> CepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if let Some(s) = sweeps.as_mut() {
            *s = fit.sweeps;
        }
        if let Some(c) = converged.as_mut() {
            *c = fit.converged as u8;
        }
        Ok(())
    })
}

/// Copy the posterior means and variances (`d` values each).
///
/// # Safety
/// `fit` must be a live handle; `means` and `vars` valid for `d` writes.
#[no_mangle]
pub unsafe extern "C" fn cep_regression_posterior(
    fit: *const CepRegressionFit,
    means: *mut f64,
    vars: *mut f64,
    d: usize,
) -> CepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if d != fit.summary.means.len() {
            return Err(invalid(format!("buffers hold {d} values, model has {}", fit.summary.means.len())));
        }
        slice_mut(means, d, "means")?.copy_from_slice(&fit.summary.means);
        slice_mut(vars, d, "vars")?.copy_from_slice(&fit.summary.vars);
        Ok(())
    })
}

/// Posterior predictive probability of `y = 1` at `x` (`d` values).
///
/// # Safety
/// `fit` must be a live handle; `x` valid for `d` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn cep_regression_predict(
    fit: *const CepRegressionFit,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> CepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if d != fit.summary.means.len() {
            return Err(invalid(format!("x has {d} values, model has {}", fit.summary.means.len())));
        }
        let x = slice(x, d, "x")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = fit.model.predict(&fit.summary, x);
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cep_regression_free(fit: *mut CepRegressionFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Fit a CP decomposition of rank `rank` with the first-order conditional projection.
///
/// `indices` is `n × order` row-major (0-based), `values` holds `n` entries.
/// `options` may be null for the defaults.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn cep_tensor_fit(
    dims: *const usize,
    order: usize,
    indices: *const usize,
    values: *const f64,
    n: usize,
    kind: CepValueKind,
    rank: usize,
    options: *const CepFitOptions,
    out: *mut *mut CepTensorFit,
) -> CepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dims = slice(dims, order, "dims")?.to_vec();
        let len = n.checked_mul(order).ok_or_else(|| invalid("n × order overflows"))?;
        let idx = slice(indices, len, "indices")?;
        let vals = slice(values, n, "values")?;
        let entries = (0..n).map(|i| (idx[i * order..(i + 1) * order].to_vec(), vals[i]));
        let tensor = core(SparseTensor::from_entries(dims, entries))?;
        let o = options.as_ref().copied().unwrap_or_else(|| cep_fit_options_default());
        let kind = match kind {
            CepValueKind::Continuous => ValueKind::Continuous,
            CepValueKind::Binary => ValueKind::Binary,
        };
        let cp = CpOptions { rank, kind, prior_var: o.prior_var, seed: o.seed, ..Default::default() };
        let model = core(CpModel::new(tensor, cp))?;
        let mut state = core(model.initial_state())?;
        let report = core(cep_core::engine::run_to_convergence(
            &mut state,
            &model,
            &sweep_options(&o, VisitOrder::ByBlock),
            o.tol,
            o.max_sweeps,
        ))?;
        let posterior = core(EmbeddingPosterior::from_state(&model, &state))?;
        let handle = CepTensorFit { posterior, kind, sweeps: report.sweeps.len(), converged: report.converged };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Predictive mean (continuous) or probability of 1 (binary) at `index` (`order` values).
///
/// # Safety
/// `fit` must be a live handle; `index` valid for `order` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn cep_tensor_predict(
    fit: *const CepTensorFit,
    index: *const usize,
    order: usize,
    out: *mut f64,
) -> CepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let index = slice(index, order, "index")?;
        let dims = fit.posterior.dims();
        if order != dims.len() || index.iter().zip(dims).any(|(i, d)| i >= d) {
            return Err(invalid(format!("index {index:?} outside dims {dims:?}")));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = core(cp_predict(&fit.posterior, index, fit.kind))?;
        Ok(())
    })
}

/// Posterior mean of the noise precision; `Unsupported` for binary fits.
///
/// # Safety
/// `fit` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn cep_tensor_noise_precision(fit: *const CepTensorFit, out: *mut f64) -> CepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let tau = fit
            .posterior
            .tau()
            .ok_or_else(|| (CepStatus::Unsupported, "binary fits have no noise precision".to_string()))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = core(tau.mean())?;
        Ok(())
    })
}

/// Sweeps run and whether the tolerance was reached (1) or not (0).
///
/// # Safety
/// `fit` must be a live handle; outputs valid for one write each or null.
#[no_mangle]
pub unsafe extern "C" fn cep_tensor_report(
    fit: *const CepTensorFit,
    sweeps: *mut usize,
    converged: *mut u8,
) -> CepStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if let Some(s) = sweeps.as_mut() {
            *s = fit.sweeps;
        }
        if let Some(c) = converged.as_mut() {
            *c = fit.converged as u8;
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cep_tensor_free(fit: *mut CepTensorFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
