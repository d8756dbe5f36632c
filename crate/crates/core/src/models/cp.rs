//! Bayesian CP decomposition of a sparse K-mode tensor.
//!
//! Entry `i` is modeled through `1ᵀ(u¹_{i₁} ∘ … ∘ u^K_{i_K})`, either with
//! Gaussian noise of precision τ or through a probit link. Each embedding row
//! is a Gaussian block with full R×R covariance; τ is a single Gamma block.
//! Updates are conditional moment matching evaluated at the posterior moments
//! of the other rows.

use crate::engine::{BlockId, BlockMoments, FactorGraphState, FactorId, ProjectionProvider, ProjectionRequest};
use crate::error::{Error, Result};
use crate::expfam::{floor_eigenvalues, Covariance, Factor, GammaFactor, GaussianFactor, GaussianMoments};
use crate::models::label_sign;
use crate::special::{inv_mills, norm_cdf};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashSet;
use std::io::{BufRead, Write};

/// Smallest eigenvalue kept in an embedding covariance.
pub const COVARIANCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Continuous,
    Binary,
}

/// Observed entries of a K-mode tensor, indices 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(format!("tensor needs at least 2 modes, got {}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("tensor dimensions must be positive".into()));
        }
        Ok(SparseTensor { dims, indices: Vec::new(), values: Vec::new() })
    }

    /// Build from entries, rejecting out-of-range and duplicate indices.
    pub fn from_entries(dims: Vec<usize>, entries: impl IntoIterator<Item = (Vec<usize>, f64)>) -> Result<Self> {
        let mut t = SparseTensor::new(dims)?;
        let mut seen = HashSet::new();
        for (idx, v) in entries {
            t.check_index(&idx)?;
            if !seen.insert(idx.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate entry {idx:?}")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite value at {idx:?}")));
            }
            t.indices.extend_from_slice(&idx);
            t.values.push(v);
        }
        Ok(t)
    }

    fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.dims.len() {
            return Err(Error::DimensionMismatch { left: idx.len(), right: self.dims.len() });
        }
        if let Some(k) = (0..idx.len()).find(|&k| idx[k] >= self.dims[k]) {
            return Err(Error::InvalidArgument(format!(
                "index {} out of range for mode {k} (size {})",
                idx[k], self.dims[k]
            )));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, i: usize) -> &[usize] {
        let k = self.order();
        &self.indices[i * k..(i + 1) * k]
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.len()).map(move |i| (self.index(i), self.values[i]))
    }

    /// Entries at the given positions, in that order.
    pub fn subset(&self, positions: &[usize]) -> SparseTensor {
        let mut t = SparseTensor { dims: self.dims.clone(), indices: Vec::new(), values: Vec::new() };
        for &p in positions {
            t.indices.extend_from_slice(self.index(p));
            t.values.push(self.values[p]);
        }
        t
    }

    pub fn check_binary(&self) -> Result<()> {
        for v in &self.values {
            label_sign(*v)?;
        }
        Ok(())
    }

    /// Read the COO text format: a `dims: d1,...,dK` header, then one
    /// `i1,...,iK,value` line per entry. Blank lines and `#` comments are ignored.
    pub fn read_coo<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let mut dims = None;
        for (n, line) in lines.by_ref() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rest = trimmed
                .strip_prefix("dims:")
                .ok_or_else(|| Error::Parse { line: n + 1, message: "expected header `dims: d1,...,dK`".into() })?;
            dims = Some(parse_list::<usize>(rest, n + 1)?);
            break;
        }
        let dims = dims.ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let k = dims.len();
        let mut entries = Vec::new();
        for (n, line) in lines {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != k + 1 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {} fields, got {}", k + 1, fields.len()),
                });
            }
            let idx = fields[..k]
                .iter()
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
            let v: f64 = fields[k]
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::Parse { line: n + 1, message: e.to_string() })?;
            entries.push((idx, v));
        }
        SparseTensor::from_entries(dims, entries)
    }

    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(out, "dims: {}", dims.join(","))?;
        for (idx, v) in self.iter() {
            for i in idx {
                write!(out, "{i},")?;
            }
            writeln!(out, "{v}")?;
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, line: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',').map(|f| f.trim().parse::<T>().map_err(|e| Error::Parse { line, message: e.to_string() })).collect()
}

/// Mean and second moment `E[uuᵀ]` of one embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMoments {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl RowMoments {
    pub fn from_moments(m: &GaussianMoments) -> Self {
        let cov = match &m.cov {
            Covariance::Full(c) => floor_eigenvalues(c, COVARIANCE_FLOOR),
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&v.map(|x| x.max(COVARIANCE_FLOOR))),
        };
        RowMoments { second: cov + &m.mean * m.mean.transpose(), mean: m.mean.clone() }
    }

    pub fn from_factor(f: &GaussianFactor) -> Result<Self> {
        Ok(Self::from_moments(&f.moments()?))
    }

    /// Row with zero covariance at `mean`.
    pub fn point(mean: DVector<f64>) -> Self {
        RowMoments { second: &mean * mean.transpose(), mean }
    }

    pub fn rank(&self) -> usize {
        self.mean.len()
    }
}

/// `E[z]` and `E[zzᵀ]` for `z` the Hadamard product of a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerMoments {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl InnerMoments {
    /// `1ᵀE[z]`.
    pub fn reconstruction(&self) -> f64 {
        self.mean.sum()
    }

    /// `E[(1ᵀz)²] = 1ᵀE[zzᵀ]1`.
    pub fn reconstruction_second(&self) -> f64 {
        self.second.sum()
    }
}

/// Elementwise products of the means and second moments of every row except `exclude`.
pub fn cp_inner(rows: &[&RowMoments], exclude: Option<usize>) -> Result<InnerMoments> {
    let rank = rows.first().map(|r| r.rank()).ok_or(Error::InvalidArgument("no rows".into()))?;
    let mut mean = DVector::from_element(rank, 1.0);
    let mut second = DMatrix::from_element(rank, rank, 1.0);
    for (k, r) in rows.iter().enumerate() {
        if r.rank() != rank {
            return Err(Error::DimensionMismatch { left: r.rank(), right: rank });
        }
        if Some(k) == exclude {
            continue;
        }
        mean.component_mul_assign(&r.mean);
        second.component_mul_assign(&r.second);
    }
    Ok(InnerMoments { mean, second })
}

/// Message to an embedding row from a continuous entry: natural parameters
/// `eta1 = y·E[τ]·E[z]`, `eta2 = -½·E[τ]·E[zzᵀ]`.
pub fn cep_update_embedding_continuous(expected_tau: f64, inner: &InnerMoments, y: f64) -> Result<GaussianFactor> {
    if !(expected_tau > 0.0) {
        return Err(Error::Skip(format!("expected noise precision {expected_tau}")));
    }
    GaussianFactor::from_natural_full(&inner.mean * (y * expected_tau), &inner.second * (-0.5 * expected_tau))
}

/// How the rate of the noise-precision message is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauRate {
    /// `½(y - 1ᵀ(∘ means))²`.
    #[default]
    MeanResidual,
    /// `½E[(y - 1ᵀ(∘ u))²]`, including the second-moment trace.
    ExpectedResidual,
}

/// Message to τ from one continuous entry: shape `3/2`, rate from `rate`.
pub fn cep_update_tau(full: &InnerMoments, y: f64, rate: TauRate) -> GammaFactor {
    let b = match rate {
        TauRate::MeanResidual => 0.5 * (y - full.reconstruction()).powi(2),
        TauRate::ExpectedResidual => {
            (0.5 * (y * y - 2.0 * y * full.reconstruction() + full.reconstruction_second())).max(0.0)
        }
    };
    GammaFactor::new(1.5, b)
}

/// Message to an embedding row from a binary entry under the probit link.
///
/// With cavity `N(m, S)`, `z → E[z]` and `zᵀSz → tr(S·E[zzᵀ])`, the
/// conditional tilted moments are those of a probit regression with feature
/// `E[z]`. Returns `(message, projected posterior)`.
pub fn cep_update_embedding_binary(
    cavity: &GaussianFactor,
    inner: &InnerMoments,
    y: f64,
) -> Result<(GaussianFactor, GaussianFactor)> {
    let s = label_sign(y)?;
    let cav = cavity.moments()?;
    let cov = cav.cov.to_full();
    let z = &inner.mean;
    let beta = (&cov * &inner.second).trace();
    let denom = 1.0 + beta;
    let sd = denom.sqrt();
    let a = s * z.dot(&cav.mean) / sd;
    let r = inv_mills(a);
    let sz = &cov * z;
    let mean = &cav.mean + &sz * (s * r / sd);
    let post_cov = &cov - &sz * sz.transpose() * ((r * r + r * a) / denom);
    let proposal = GaussianFactor::from_moments_full(&mean, &post_cov)
        .map_err(|e| Error::Skip(format!("binary update not positive definite: {e}")))?;
    let message = proposal.divide(&cavity.to_full())?;
    Ok((message, proposal))
}

/// Posterior over all embedding rows and, for continuous data, τ.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPosterior {
    dims: Vec<usize>,
    rank: usize,
    offsets: Vec<usize>,
    rows: Vec<GaussianFactor>,
    moments: Vec<RowMoments>,
    tau: Option<GammaFactor>,
}

impl EmbeddingPosterior {
    /// Rows from explicit factors, mode by mode.
    pub fn new(dims: Vec<usize>, rank: usize, rows: Vec<GaussianFactor>, tau: Option<GammaFactor>) -> Result<Self> {
        let offsets = mode_offsets(&dims);
        if rows.len() != *offsets.last().unwrap() {
            return Err(Error::DimensionMismatch { left: rows.len(), right: *offsets.last().unwrap() });
        }
        if let Some(r) = rows.iter().find(|r| r.dim() != rank) {
            return Err(Error::DimensionMismatch { left: r.dim(), right: rank });
        }
        if let Some(t) = tau {
            if !t.is_normalizable() {
                return Err(Error::GammaNonNormalizable { shape: t.shape, rate: t.rate });
            }
        }
        let moments = rows.iter().map(RowMoments::from_factor).collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingPosterior { dims, rank, offsets, rows, moments, tau })
    }

    /// `N(0, prior_var·I)` rows with means drawn from `N(0, init_scale²)`, plus an optional τ prior.
    pub fn random(
        dims: Vec<usize>,
        rank: usize,
        prior_var: f64,
        init_scale: f64,
        tau: Option<GammaFactor>,
        seed: u64,
    ) -> Result<Self> {
        if !(prior_var > 0.0) {
            return Err(Error::InvalidArgument(format!("prior variance must be positive, got {prior_var}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_scale.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let total: usize = dims.iter().sum();
        let cov = DMatrix::identity(rank, rank) * prior_var;
        let rows = (0..total)
            .map(|_| {
                let mean = DVector::from_fn(rank, |_, _| normal.sample(&mut rng));
                GaussianFactor::from_moments_full(&mean, &cov)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, rank, rows, tau)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn block(&self, mode: usize, index: usize) -> BlockId {
        self.offsets[mode] + index
    }

    pub fn row(&self, mode: usize, index: usize) -> &GaussianFactor {
        &self.rows[self.block(mode, index)]
    }

    pub fn row_moments(&self, mode: usize, index: usize) -> &RowMoments {
        &self.moments[self.block(mode, index)]
    }

    pub fn tau(&self) -> Option<&GammaFactor> {
        self.tau.as_ref()
    }

    /// Replace one row; the new factor must be normalizable.
    pub fn set_row(&mut self, mode: usize, index: usize, f: GaussianFactor) -> Result<()> {
        let m = RowMoments::from_factor(&f)?;
        let b = self.block(mode, index);
        self.rows[b] = f;
        self.moments[b] = m;
        Ok(())
    }

    pub fn set_tau(&mut self, t: GammaFactor) -> Result<()> {
        if !t.is_normalizable() {
            return Err(Error::GammaNonNormalizable { shape: t.shape, rate: t.rate });
        }
        self.tau = Some(t);
        Ok(())
    }

    /// Moments of the rows referenced by `index`, one per mode.
    pub fn entry_rows(&self, index: &[usize]) -> Vec<&RowMoments> {
        index.iter().enumerate().map(|(k, &i)| self.row_moments(k, i)).collect()
    }

    /// Read the posterior out of an engine state built by [`CpModel`].
    pub fn from_state(model: &CpModel, state: &FactorGraphState) -> Result<Self> {
        let total = model.num_rows();
        let rows = (0..total)
            .map(|b| state.posterior(b).as_gaussian().cloned().ok_or(Error::KindMismatch("expected a Gaussian row")))
            .collect::<Result<Vec<_>>>()?;
        let tau = match model.tau_block() {
            Some(b) => Some(*state.posterior(b).as_gamma().ok_or(Error::KindMismatch("expected the τ block"))?),
            None => None,
        };
        Self::new(model.dims.clone(), model.rank, rows, tau)
    }
}

fn mode_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for d in dims {
        acc += d;
        offsets.push(acc);
    }
    offsets
}

/// Predictive mean (continuous) or probability of `y = 1` (binary) at `index`.
pub fn cp_predict(posterior: &EmbeddingPosterior, index: &[usize], kind: ValueKind) -> Result<f64> {
    if index.len() != posterior.dims.len() {
        return Err(Error::DimensionMismatch { left: index.len(), right: posterior.dims.len() });
    }
    if let Some(k) = (0..index.len()).find(|&k| index[k] >= posterior.dims[k]) {
        return Err(Error::InvalidArgument(format!("index {} out of range for mode {k}", index[k])));
    }
    let inner = cp_inner(&posterior.entry_rows(index), None)?;
    let mean = inner.reconstruction();
    Ok(match kind {
        ValueKind::Continuous => mean,
        ValueKind::Binary => {
            let var = (inner.reconstruction_second() - mean * mean).max(0.0);
            norm_cdf(mean / (1.0 + var).sqrt())
        }
    })
}

/// How [`CpModel::initial_state`] moves the posterior means off zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CpStart {
    /// Means from the leading eigenvectors of each mode's zero-filled Gram matrix.
    #[default]
    Spectral,
    /// Every row message gets an independent random precision-times-mean of scale `init_scale`.
    RandomMessages,
}

/// Per-mode `dims[k] × rank` starting means.
///
/// Column `r` of mode `k` is the `r`-th leading eigenvector of `M Mᵀ`, where
/// `M` is the mode-`k` unfolding with missing cells set to zero, scaled so the
/// reconstruction has roughly the root-mean-square of the observed values.
/// Binary values are recoded to ±1 first.
pub fn spectral_means(tensor: &SparseTensor, rank: usize, kind: ValueKind) -> Result<Vec<DMatrix<f64>>> {
    if rank == 0 || tensor.is_empty() {
        return Err(Error::InvalidArgument("spectral start needs a positive rank and at least one entry".into()));
    }
    let dims = tensor.dims();
    let value = |y: f64| match kind {
        ValueKind::Continuous => y,
        ValueKind::Binary => 2.0 * y - 1.0,
    };
    let rms = (tensor.values().iter().map(|&y| value(y).powi(2)).sum::<f64>() / tensor.len() as f64).sqrt();
    let scale = (rms / (rank as f64).sqrt()).powf(1.0 / dims.len() as f64);
    let mut out = Vec::with_capacity(dims.len());
    for (k, &d) in dims.iter().enumerate() {
        let mut fibers: std::collections::HashMap<Vec<usize>, Vec<(usize, f64)>> = Default::default();
        for (idx, y) in tensor.iter() {
            let key = idx.iter().enumerate().filter(|&(o, _)| o != k).map(|(_, &i)| i).collect();
            fibers.entry(key).or_default().push((idx[k], value(y)));
        }
        let mut gram = DMatrix::<f64>::zeros(d, d);
        for fiber in fibers.values() {
            for &(i, a) in fiber {
                for &(j, b) in fiber {
                    gram[(i, j)] += a * b;
                }
            }
        }
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let unit = (d as f64).sqrt() * scale;
        out.push(DMatrix::from_fn(d, rank, |i, r| order.get(r).map_or(0.0, |&c| eig.eigenvectors[(i, c)] * unit)));
    }
    Ok(out)
}

/// Settings for the tensor model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpOptions {
    pub rank: usize,
    pub kind: ValueKind,
    /// Variance of the zero-mean Gaussian prior on every embedding entry.
    pub prior_var: f64,
    /// Gamma prior on τ (continuous data only).
    pub tau_prior: GammaFactor,
    pub tau_rate: TauRate,
    pub start: CpStart,
    /// Standard deviation of the random precision-times-mean given to initial messages.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for CpOptions {
    fn default() -> Self {
        CpOptions {
            rank: 3,
            kind: ValueKind::Continuous,
            prior_var: 1.0,
            tau_prior: GammaFactor::new(1.0, 1.0),
            tau_rate: TauRate::MeanResidual,
            start: CpStart::Spectral,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// Projection provider: one factor per observed entry, touching one row per mode and τ.
pub struct CpModel {
    tensor: SparseTensor,
    dims: Vec<usize>,
    rank: usize,
    offsets: Vec<usize>,
    options: CpOptions,
}

impl CpModel {
    pub fn new(tensor: SparseTensor, options: CpOptions) -> Result<Self> {
        if options.rank == 0 {
            return Err(Error::InvalidArgument("rank must be positive".into()));
        }
        if options.kind == ValueKind::Binary {
            tensor.check_binary()?;
        }
        let dims = tensor.dims().to_vec();
        Ok(CpModel { offsets: mode_offsets(&dims), dims, rank: options.rank, tensor, options })
    }

    pub fn tensor(&self) -> &SparseTensor {
        &self.tensor
    }

    pub fn options(&self) -> &CpOptions {
        &self.options
    }

    pub fn num_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn tau_block(&self) -> Option<BlockId> {
        (self.options.kind == ValueKind::Continuous).then(|| self.num_rows())
    }

    /// Priors for every block, rows first, then τ.
    pub fn priors(&self) -> Result<Vec<Factor>> {
        let o = &self.options;
        if !(o.prior_var > 0.0) {
            return Err(Error::InvalidArgument(format!("prior variance must be positive, got {}", o.prior_var)));
        }
        let prior = GaussianFactor::from_moments_full(
            &DVector::zeros(self.rank),
            &(DMatrix::identity(self.rank, self.rank) * o.prior_var),
        )?;
        let mut out = vec![Factor::Gaussian(prior); self.num_rows()];
        if self.tau_block().is_some() {
            out.push(Factor::Gamma(o.tau_prior));
        }
        Ok(out)
    }

    /// Engine state with unit τ messages and row messages of zero precision
    /// whose precision-times-mean moves the posterior means off the all-zero
    /// saddle, where every first-order update vanishes.
    pub fn initial_state(&self) -> Result<FactorGraphState> {
        let priors = self.priors()?;
        let mut edges = Vec::with_capacity(self.tensor.len());
        for f in 0..self.tensor.len() {
            edges.push(self.factor_blocks(f));
        }
        let mut eta1_for: Box<dyn FnMut(BlockId) -> DVector<f64>> = match self.options.start {
            CpStart::RandomMessages => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed);
                let normal = Normal::new(0.0, self.options.init_scale.max(0.0))
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let rank = self.rank;
                Box::new(move |_| DVector::from_fn(rank, |_, _| normal.sample(&mut rng)))
            }
            CpStart::Spectral => {
                let means = spectral_means(&self.tensor, self.rank, self.options.kind)?;
                let mut counts = vec![0usize; self.num_rows()];
                for blocks in &edges {
                    for &b in blocks {
                        if b < counts.len() {
                            counts[b] += 1;
                        }
                    }
                }
                let targets: Vec<DVector<f64>> = (0..self.num_rows())
                    .map(|b| {
                        let k = self.offsets.partition_point(|&o| o <= b) - 1;
                        let row = means[k].row(b - self.offsets[k]).transpose();
                        row / (self.options.prior_var * counts[b].max(1) as f64)
                    })
                    .collect();
                Box::new(move |b| targets[b].clone())
            }
        };
        let mut messages = Vec::new();
        for blocks in &edges {
            for &b in blocks {
                messages.push(match &priors[b] {
                    Factor::Gaussian(_) => Factor::Gaussian(GaussianFactor::from_natural_full(
                        eta1_for(b),
                        DMatrix::zeros(self.rank, self.rank),
                    )?),
                    Factor::Gamma(_) => Factor::Gamma(GammaFactor::unit()),
                });
            }
        }
        FactorGraphState::with_messages(priors, edges, messages)
    }

    fn row_moments(req: &ProjectionRequest<'_>, block: BlockId) -> Result<RowMoments> {
        match req.view.moments(block)? {
            BlockMoments::Gaussian(m) => Ok(RowMoments::from_moments(m)),
            BlockMoments::Gamma { .. } => Err(Error::KindMismatch("expected a Gaussian row")),
        }
    }
}

impl ProjectionProvider for CpModel {
    fn num_factors(&self) -> usize {
        self.tensor.len()
    }

    fn factor_blocks(&self, factor: FactorId) -> Vec<BlockId> {
        let idx = self.tensor.index(factor);
        let mut blocks: Vec<BlockId> = idx.iter().enumerate().map(|(k, &i)| self.offsets[k] + i).collect();
        if let Some(t) = self.tau_block() {
            blocks.push(t);
        }
        blocks
    }

    fn project(&self, req: &ProjectionRequest<'_>) -> Result<Factor> {
        let idx = self.tensor.index(req.factor);
        let y = self.tensor.value(req.factor);
        let row_blocks: Vec<BlockId> = idx.iter().enumerate().map(|(k, &i)| self.offsets[k] + i).collect();
        let rows = row_blocks.iter().map(|&b| Self::row_moments(req, b)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&RowMoments> = rows.iter().collect();

        if Some(req.block) == self.tau_block() {
            let cavity = req.cavity.as_gamma().ok_or(Error::KindMismatch("expected the τ block"))?;
            let full = cp_inner(&refs, None)?;
            return Ok(Factor::Gamma(cavity.multiply(&cep_update_tau(&full, y, self.options.tau_rate))));
        }
        let mode = row_blocks
            .iter()
            .position(|&b| b == req.block)
            .ok_or_else(|| Error::InvalidArgument(format!("block {} not in factor {}", req.block, req.factor)))?;
        let cavity = req.cavity.as_gaussian().ok_or(Error::KindMismatch("expected a Gaussian row"))?;
        let inner = cp_inner(&refs, Some(mode))?;
        match self.options.kind {
            ValueKind::Continuous => {
                let tau_block = self.tau_block().expect("continuous model has τ");
                let e_tau =
                    req.view.moments(tau_block)?.gamma_mean().ok_or(Error::KindMismatch("expected the τ block"))?;
                let message = cep_update_embedding_continuous(e_tau, &inner, y)?;
                Ok(Factor::Gaussian(cavity.multiply(&message)?))
            }
            ValueKind::Binary => Ok(Factor::Gaussian(cep_update_embedding_binary(cavity, &inner, y)?.1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_row(mean: f64, var: f64) -> RowMoments {
        RowMoments { mean: DVector::from_element(1, mean), second: DMatrix::from_element(1, 1, var + mean * mean) }
    }

    #[test]
    fn inner_of_unit_means() {
        let r = RowMoments::point(DVector::from_element(2, 1.0));
        let inner = cp_inner(&[&r, &r, &r], Some(0)).unwrap();
        assert_eq!(inner.mean, DVector::from_element(2, 1.0));
        assert_eq!(inner.second, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn inner_hand_multiplication() {
        let rows = [scalar_row(2.0, 1.0), scalar_row(3.0, 0.0), scalar_row(0.5, 0.25)];
        let inner = cp_inner(&[&rows[0], &rows[1], &rows[2]], Some(0)).unwrap();
        assert_relative_eq!(inner.mean[0], 1.5);
        assert_relative_eq!(inner.second[(0, 0)], 4.5);
        let zero = RowMoments::point(DVector::zeros(1));
        assert_eq!(cp_inner(&[&rows[0], &zero], None).unwrap().reconstruction(), 0.0);
        let r2 = RowMoments::point(DVector::zeros(2));
        assert!(cp_inner(&[&rows[0], &r2], None).is_err());
    }

    #[test]
    fn point_rows_have_rank_one_second_moment() {
        let a = RowMoments::point(DVector::from_vec(vec![0.3, -1.2, 2.0]));
        let b = RowMoments::point(DVector::from_vec(vec![1.5, 0.4, -0.7]));
        let inner = cp_inner(&[&a, &b], None).unwrap();
        let outer = &inner.mean * inner.mean.transpose();
        assert!((inner.second - outer).amax() < 1e-15);
    }

    #[test]
    fn continuous_message_scalar_case() {
        let inner = InnerMoments { mean: DVector::from_element(1, 1.0), second: DMatrix::from_element(1, 1, 1.0) };
        let msg = cep_update_embedding_continuous(1.0, &inner, 2.0).unwrap();
        assert_eq!(msg.precision()[(0, 0)], 1.0);
        assert_eq!(msg.eta1()[0], 2.0);
        let zero = cep_update_embedding_continuous(1.0, &inner, 0.0).unwrap();
        assert_eq!(zero.eta1()[0], 0.0);
    }

    #[test]
    fn tau_message_examples() {
        let one = RowMoments::point(DVector::from_element(1, 1.0));
        let full = cp_inner(&[&one, &one], None).unwrap();
        let m = cep_update_tau(&full, 2.0, TauRate::MeanResidual);
        assert_eq!((m.shape, m.rate), (1.5, 0.5));
        assert_eq!(cep_update_tau(&full, 1.0, TauRate::MeanResidual).rate, 0.0);
        let zero = RowMoments::point(DVector::zeros(3));
        let full = cp_inner(&[&zero, &zero, &zero], None).unwrap();
        assert_eq!(cep_update_tau(&full, 1.0, TauRate::MeanResidual).rate, 0.5);
        // the expected residual adds the variance of the reconstruction
        let r = scalar_row(1.0, 0.5);
        let full = cp_inner(&[&r, &one], None).unwrap();
        assert_relative_eq!(cep_update_tau(&full, 2.0, TauRate::ExpectedResidual).rate, 0.5 * (1.0 + 0.5));
    }

    #[test]
    fn binary_with_zero_feature_is_unit_message() {
        let cav = GaussianFactor::from_moments_full(
            &DVector::from_vec(vec![0.3, -0.2]),
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        )
        .unwrap();
        let inner = InnerMoments { mean: DVector::zeros(2), second: DMatrix::identity(2, 2) * 0.1 };
        let (msg, _) = cep_update_embedding_binary(&cav, &inner, 1.0).unwrap();
        assert!(msg.eta1().amax() < 1e-12 && msg.precision().amax() < 1e-12);
    }

    #[test]
    fn binary_rank_one_matches_probit() {
        let cav = GaussianFactor::scalar(0.4, 0.8).unwrap().to_full();
        let z = 1.3;
        let inner = InnerMoments { mean: DVector::from_element(1, z), second: DMatrix::from_element(1, 1, z * z) };
        let (_, post) = cep_update_embedding_binary(&cav, &inner, 0.0).unwrap();
        let m = post.moments().unwrap();
        let t = crate::models::probit::probit_ep_project(&[0.4], &[0.8], &[z], 0.0).unwrap()[0];
        assert_relative_eq!(m.mean[0], t.mean, epsilon = 1e-12);
        assert_relative_eq!(m.cov.to_full()[(0, 0)], t.var, epsilon = 1e-12);
    }

    #[test]
    fn coo_round_trip_and_validation() {
        let t = SparseTensor::from_entries(vec![2, 3, 2], vec![(vec![0, 2, 1], 1.5), (vec![1, 0, 0], -2.0)]).unwrap();
        let mut buf = Vec::new();
        t.write_coo(&mut buf).unwrap();
        let back = SparseTensor::read_coo(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert!(SparseTensor::from_entries(vec![2, 2], vec![(vec![0, 2], 1.0)]).is_err());
        assert!(SparseTensor::from_entries(vec![2, 2], vec![(vec![0, 1], 1.0), (vec![0, 1], 2.0)]).is_err());
        assert!(SparseTensor::new(vec![3]).is_err());
        assert!(matches!(SparseTensor::read_coo(&b"dims: 2,2\n0,1\n"[..]), Err(Error::Parse { line: 2, .. })));
        assert!(SparseTensor::read_coo(&b"0,1,2\n"[..]).is_err());
    }

    #[test]
    fn predict_examples() {
        let post = EmbeddingPosterior::random(vec![2, 2, 2], 2, 1.0, 0.0, None, 1).unwrap();
        assert_eq!(cp_predict(&post, &[0, 1, 1], ValueKind::Continuous).unwrap(), 0.0);
        assert_eq!(cp_predict(&post, &[0, 1, 1], ValueKind::Binary).unwrap(), 0.5);
        assert!(cp_predict(&post, &[0, 2, 1], ValueKind::Binary).is_err());

        let tiny = 1e-12;
        let rows = [[1.0, 2.0], [0.5, -1.0], [3.0, 1.0], [2.0, 2.0]]
            .iter()
            .map(|m| {
                GaussianFactor::from_moments_full(&DVector::from_row_slice(m), &(DMatrix::identity(2, 2) * tiny))
                    .unwrap()
            })
            .collect();
        let post = EmbeddingPosterior::new(vec![2, 2], 2, rows, None).unwrap();
        // row 0 of mode 0 times row 1 of mode 1: 1·2 + 2·2
        assert_relative_eq!(cp_predict(&post, &[0, 1], ValueKind::Continuous).unwrap(), 6.0, epsilon = 1e-9);
    }

    #[test]
    fn binary_labels_checked() {
        let t = SparseTensor::from_entries(vec![2, 2], vec![(vec![0, 1], 0.5)]).unwrap();
        assert!(CpModel::new(t, CpOptions { kind: ValueKind::Binary, ..Default::default() }).is_err());
    }
}
