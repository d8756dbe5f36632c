//! Generic message-passing loop: message deletion, projection, update.
//!
//! The engine owns the message store and the approximate posterior of every
//! variable block. A [`ProjectionProvider`] supplies the model-specific
//! projection step: given the calibrating (cavity) distribution of one block
//! and read access to the rest of the graph, it proposes a new posterior for
//! that block. EP providers compute tilted moments; CEP providers compute
//! expected conditional moments.

use crate::error::{Error, Result};
use crate::expfam::{Factor, GammaFactor, GaussianFactor, GaussianMoments};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

pub type BlockId = usize;
pub type FactorId = usize;

/// Default variance of the flat Gaussian used to initialize messages.
pub const FLAT_VARIANCE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub enum BlockMoments {
    Gaussian(GaussianMoments),
    Gamma { shape: f64, rate: f64, mean: f64 },
}

impl BlockMoments {
    pub fn gaussian(&self) -> Option<&GaussianMoments> {
        match self {
            BlockMoments::Gaussian(m) => Some(m),
            BlockMoments::Gamma { .. } => None,
        }
    }

    pub fn gamma_mean(&self) -> Option<f64> {
        match self {
            BlockMoments::Gamma { mean, .. } => Some(*mean),
            BlockMoments::Gaussian(_) => None,
        }
    }
}

fn block_moments(f: &Factor) -> Result<BlockMoments> {
    match f {
        Factor::Gaussian(g) => Ok(BlockMoments::Gaussian(g.moments()?)),
        Factor::Gamma(g) => Ok(BlockMoments::Gamma { shape: g.shape, rate: g.rate, mean: g.mean()? }),
    }
}

/// How messages start out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MessageInit {
    /// All natural parameters zero.
    Unit,
    /// Zero-mean Gaussian with the given variance on every coordinate; Gamma messages start at unit.
    Flat { variance: f64 },
}

impl Default for MessageInit {
    fn default() -> Self {
        MessageInit::Flat { variance: FLAT_VARIANCE }
    }
}

fn init_message(prior: &Factor, init: MessageInit) -> Factor {
    match (prior, init) {
        (_, MessageInit::Unit) | (Factor::Gamma(_), _) => prior.unit_like(),
        (Factor::Gaussian(g), MessageInit::Flat { variance }) => {
            let dim = g.dim();
            let eta2 = -0.5 / variance;
            if g.is_diagonal() {
                Factor::Gaussian(
                    GaussianFactor::from_natural_diagonal(DVector::zeros(dim), DVector::from_element(dim, eta2))
                        .expect("matching dims"),
                )
            } else {
                Factor::Gaussian(
                    GaussianFactor::from_natural_full(DVector::zeros(dim), DMatrix::identity(dim, dim) * eta2)
                        .expect("matching dims"),
                )
            }
        }
    }
}

/// Message store plus the approximate posterior `prior × Π messages` per block.
#[derive(Debug)]
pub struct FactorGraphState {
    priors: Vec<Factor>,
    posteriors: Vec<Factor>,
    factor_offsets: Vec<usize>,
    edge_blocks: Vec<BlockId>,
    messages: Vec<Factor>,
    moments: Vec<OnceLock<BlockMoments>>,
    skip_count: usize,
}

impl Clone for FactorGraphState {
    fn clone(&self) -> Self {
        FactorGraphState {
            priors: self.priors.clone(),
            posteriors: self.posteriors.clone(),
            factor_offsets: self.factor_offsets.clone(),
            edge_blocks: self.edge_blocks.clone(),
            messages: self.messages.clone(),
            moments: self.posteriors.iter().map(|_| OnceLock::new()).collect(),
            skip_count: self.skip_count,
        }
    }
}

impl FactorGraphState {
    /// Build a state for `provider`'s factor graph with uniformly initialized messages.
    pub fn new<P: ProjectionProvider + ?Sized>(priors: Vec<Factor>, provider: &P, init: MessageInit) -> Result<Self> {
        let edges: Vec<Vec<BlockId>> = (0..provider.num_factors()).map(|f| provider.factor_blocks(f)).collect();
        let messages = edges
            .iter()
            .flat_map(|blocks| blocks.iter().map(|&b| priors.get(b).map(|p| init_message(p, init))))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidArgument("factor references an unknown block".into()))?;
        Self::with_messages(priors, edges, messages)
    }

    /// Build a state from explicit per-edge messages, listed factor by factor.
    pub fn with_messages(priors: Vec<Factor>, edges: Vec<Vec<BlockId>>, messages: Vec<Factor>) -> Result<Self> {
        let mut factor_offsets = Vec::with_capacity(edges.len() + 1);
        let mut edge_blocks = Vec::new();
        factor_offsets.push(0);
        for blocks in &edges {
            for &b in blocks {
                if b >= priors.len() {
                    return Err(Error::InvalidArgument(format!("block {b} out of range")));
                }
                edge_blocks.push(b);
            }
            factor_offsets.push(edge_blocks.len());
        }
        if messages.len() != edge_blocks.len() {
            return Err(Error::DimensionMismatch { left: messages.len(), right: edge_blocks.len() });
        }
        for (e, &b) in edge_blocks.iter().enumerate() {
            priors[b].divide(&messages[e])?;
            if priors[b].dim() != messages[e].dim() {
                return Err(Error::DimensionMismatch { left: priors[b].dim(), right: messages[e].dim() });
            }
        }
        let mut state = FactorGraphState {
            posteriors: priors.clone(),
            moments: priors.iter().map(|_| OnceLock::new()).collect(),
            priors,
            factor_offsets,
            edge_blocks,
            messages,
            skip_count: 0,
        };
        state.posteriors = state.assemble()?;
        if let Some(b) = state.posteriors.iter().position(|p| !p.is_normalizable()) {
            return Err(Error::InvalidArgument(format!("initial posterior of block {b} is not normalizable")));
        }
        Ok(state)
    }

    pub fn num_blocks(&self) -> usize {
        self.priors.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factor_offsets.len() - 1
    }

    pub fn num_messages(&self) -> usize {
        self.messages.len()
    }

    pub fn prior(&self, block: BlockId) -> &Factor {
        &self.priors[block]
    }

    pub fn posterior(&self, block: BlockId) -> &Factor {
        &self.posteriors[block]
    }

    pub fn posteriors(&self) -> &[Factor] {
        &self.posteriors
    }

    pub fn skip_count(&self) -> usize {
        self.skip_count
    }

    pub fn factor_blocks(&self, factor: FactorId) -> &[BlockId] {
        &self.edge_blocks[self.factor_offsets[factor]..self.factor_offsets[factor + 1]]
    }

    fn edge_index(&self, factor: FactorId, block: BlockId) -> Option<usize> {
        let start = self.factor_offsets[factor];
        self.factor_blocks(factor).iter().position(|&b| b == block).map(|p| start + p)
    }

    pub fn message(&self, factor: FactorId, block: BlockId) -> Option<&Factor> {
        self.edge_index(factor, block).map(|e| &self.messages[e])
    }

    /// Cached moments of the current posterior of `block`.
    pub fn moments(&self, block: BlockId) -> Result<&BlockMoments> {
        if let Some(m) = self.moments[block].get() {
            return Ok(m);
        }
        let m = block_moments(&self.posteriors[block])?;
        Ok(self.moments[block].get_or_init(|| m))
    }

    /// Calibrating distribution of `block` with respect to `factor`.
    pub fn cavity(&self, factor: FactorId, block: BlockId) -> Result<Factor> {
        let e = self
            .edge_index(factor, block)
            .ok_or_else(|| Error::InvalidArgument(format!("factor {factor} has no message to block {block}")))?;
        self.posteriors[block].divide(&self.messages[e])
    }

    /// `prior × Π messages` for every block, recomputed from scratch.
    pub fn assemble(&self) -> Result<Vec<Factor>> {
        let mut out = self.priors.clone();
        for (e, &b) in self.edge_blocks.iter().enumerate() {
            out[b] = out[b].multiply(&self.messages[e])?;
        }
        Ok(out)
    }

    /// Largest relative discrepancy between stored and reassembled posteriors.
    pub fn assembly_residual(&self) -> Result<f64> {
        let assembled = self.assemble()?;
        Ok(assembled
            .iter()
            .zip(&self.posteriors)
            .map(|(a, p)| a.max_abs_diff(p) / factor_scale(p).max(1.0))
            .fold(0.0, f64::max))
    }

    fn set_posterior(&mut self, block: BlockId, f: Factor) {
        self.posteriors[block] = f;
        self.moments[block] = OnceLock::new();
    }

    fn resync(&mut self) -> Result<()> {
        let assembled = self.assemble()?;
        if assembled.iter().all(Factor::is_normalizable) {
            self.posteriors = assembled;
            self.moments = self.posteriors.iter().map(|_| OnceLock::new()).collect();
        }
        Ok(())
    }

    pub fn view(&self) -> GraphView<'_> {
        GraphView { state: self }
    }
}

fn factor_scale(f: &Factor) -> f64 {
    match f {
        Factor::Gaussian(g) => g.eta1().amax().max(g.precision().amax()),
        Factor::Gamma(GammaFactor { shape, rate }) => shape.abs().max(rate.abs()),
    }
}

/// Read-only access to the graph handed to projection providers.
#[derive(Clone, Copy)]
pub struct GraphView<'a> {
    state: &'a FactorGraphState,
}

impl<'a> GraphView<'a> {
    pub fn posterior(&self, block: BlockId) -> &'a Factor {
        self.state.posterior(block)
    }

    pub fn moments(&self, block: BlockId) -> Result<&'a BlockMoments> {
        self.state.moments(block)
    }

    pub fn cavity(&self, factor: FactorId, block: BlockId) -> Result<Factor> {
        self.state.cavity(factor, block)
    }

    pub fn factor_blocks(&self, factor: FactorId) -> &'a [BlockId] {
        self.state.factor_blocks(factor)
    }
}

/// One projection step: everything a model needs to propose a new posterior for `block`.
pub struct ProjectionRequest<'a> {
    pub factor: FactorId,
    pub block: BlockId,
    pub cavity: &'a Factor,
    pub view: GraphView<'a>,
}

/// Model-specific projection. Implementations must be pure functions of the request.
pub trait ProjectionProvider: Sync {
    fn num_factors(&self) -> usize;

    /// Blocks touched by `factor`, in the order their messages are refined.
    fn factor_blocks(&self, factor: FactorId) -> Vec<BlockId>;

    /// Proposed new posterior of `request.block`. An `Err` skips this message for the sweep.
    fn project(&self, request: &ProjectionRequest<'_>) -> Result<Factor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Sequential,
    Parallel,
}

/// Message visiting order of the sequential schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisitOrder {
    /// Factor by factor, each factor's blocks in provider order.
    #[default]
    ByFactor,
    /// Block by block, all of a block's messages in factor order.
    ByBlock,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub schedule: Schedule,
    /// Ignored by the parallel schedule.
    pub order: VisitOrder,
    /// Weight on the proposed message, in (0, 1].
    pub damping: f64,
    /// Cap on projection workers in the parallel schedule; `Some(0)` computes projections serially.
    pub threads: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { schedule: Schedule::Sequential, order: VisitOrder::ByFactor, damping: 1.0, threads: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub max_change: f64,
    pub updated: usize,
    pub skipped: usize,
    pub assembly_residual: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub sweeps: Vec<SweepReport>,
    pub converged: bool,
}

impl RunReport {
    pub fn change_trace(&self) -> Vec<f64> {
        self.sweeps.iter().map(|s| s.max_change).collect()
    }

    pub fn total_skipped(&self) -> usize {
        self.sweeps.iter().map(|s| s.skipped).sum()
    }

    pub fn mean_sweep_time(&self) -> Duration {
        if self.sweeps.is_empty() {
            return Duration::ZERO;
        }
        self.sweeps.iter().map(|s| s.wall_time).sum::<Duration>() / self.sweeps.len() as u32
    }
}

/// Turn a proposed posterior into a damped message and the resulting posterior.
fn apply_proposal(
    proposal: &Factor,
    cavity: &Factor,
    old_message: &Factor,
    current_without_old: &Factor,
    damping: f64,
) -> Option<(Factor, Factor, f64)> {
    if proposal.dim() != cavity.dim() || !proposal.is_normalizable() {
        return None;
    }
    let message = proposal.divide(cavity).ok()?;
    let damped = message.damp_towards(old_message, damping).ok()?;
    let posterior = current_without_old.multiply(&damped).ok()?;
    if !posterior.is_normalizable() {
        return None;
    }
    let change = damped.max_abs_diff(old_message);
    change.is_finite().then_some((damped, posterior, change))
}

fn validate(options: &SweepOptions) -> Result<()> {
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!("damping must be in (0, 1], got {}", options.damping)));
    }
    Ok(())
}

/// Refine every message once.
pub fn sweep<P: ProjectionProvider + ?Sized>(
    state: &mut FactorGraphState,
    provider: &P,
    options: &SweepOptions,
) -> Result<SweepReport> {
    validate(options)?;
    let start = Instant::now();
    let (max_change, updated, skipped) = match options.schedule {
        Schedule::Sequential => sweep_sequential(state, provider, options.order, options.damping),
        Schedule::Parallel => sweep_parallel(state, provider, options)?,
    };
    state.skip_count += skipped;
    let assembly_residual = state.assembly_residual()?;
    state.resync()?;
    Ok(SweepReport { max_change, updated, skipped, assembly_residual, wall_time: start.elapsed() })
}

fn sweep_sequential<P: ProjectionProvider + ?Sized>(
    state: &mut FactorGraphState,
    provider: &P,
    order: VisitOrder,
    damping: f64,
) -> (f64, usize, usize) {
    let mut edges: Vec<(FactorId, usize)> = (0..state.num_factors())
        .flat_map(|f| (state.factor_offsets[f]..state.factor_offsets[f + 1]).map(move |e| (f, e)))
        .collect();
    if order == VisitOrder::ByBlock {
        edges.sort_by_key(|&(_, e)| state.edge_blocks[e]);
    }
    let mut max_change: f64 = 0.0;
    let (mut updated, mut skipped) = (0, 0);
    for (factor, e) in edges {
        let block = state.edge_blocks[e];
        let outcome = {
            let cavity = match state.posteriors[block].divide(&state.messages[e]) {
                Ok(c) if c.is_normalizable() => c,
                _ => {
                    skipped += 1;
                    continue;
                }
            };
            let request = ProjectionRequest { factor, block, cavity: &cavity, view: state.view() };
            match provider.project(&request) {
                Ok(proposal) => apply_proposal(&proposal, &cavity, &state.messages[e], &cavity, damping),
                Err(_) => None,
            }
        };
        match outcome {
            Some((message, posterior, change)) => {
                state.messages[e] = message;
                state.set_posterior(block, posterior);
                max_change = max_change.max(change);
                updated += 1;
            }
            None => skipped += 1,
        }
    }
    (max_change, updated, skipped)
}

fn sweep_parallel<P: ProjectionProvider + ?Sized>(
    state: &mut FactorGraphState,
    provider: &P,
    options: &SweepOptions,
) -> Result<(f64, usize, usize)> {
    // warm the moment cache so workers only read
    for b in 0..state.num_blocks() {
        let _ = state.moments(b);
    }
    let snapshot: &FactorGraphState = state;
    let edge_owner: Vec<FactorId> = (0..snapshot.num_factors())
        .flat_map(|f| std::iter::repeat_n(f, snapshot.factor_offsets[f + 1] - snapshot.factor_offsets[f]))
        .collect();
    let compute = |e: usize| -> Option<(Factor, Factor)> {
        let factor = edge_owner[e];
        let block = snapshot.edge_blocks[e];
        let cavity = snapshot.posteriors[block].divide(&snapshot.messages[e]).ok()?;
        if !cavity.is_normalizable() {
            return None;
        }
        let request = ProjectionRequest { factor, block, cavity: &cavity, view: snapshot.view() };
        let proposal = provider.project(&request).ok()?;
        Some((proposal, cavity))
    };
    let n_edges = snapshot.edge_blocks.len();
    let proposals: Vec<Option<(Factor, Factor)>> = match options.threads {
        Some(0) => (0..n_edges).map(compute).collect(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            pool.install(|| (0..n_edges).into_par_iter().map(compute).collect())
        }
        None => (0..n_edges).into_par_iter().map(compute).collect(),
    };

    let mut max_change: f64 = 0.0;
    let (mut updated, mut skipped) = (0, 0);
    for (e, proposal) in proposals.into_iter().enumerate() {
        let Some((proposal, cavity)) = proposal else {
            skipped += 1;
            continue;
        };
        let block = state.edge_blocks[e];
        let without_old = match state.posteriors[block].divide(&state.messages[e]) {
            Ok(f) => f,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        match apply_proposal(&proposal, &cavity, &state.messages[e], &without_old, options.damping) {
            Some((message, posterior, change)) => {
                state.messages[e] = message;
                state.set_posterior(block, posterior);
                max_change = max_change.max(change);
                updated += 1;
            }
            None => skipped += 1,
        }
    }
    Ok((max_change, updated, skipped))
}

/// Sweep until the largest message change drops below `tol` or `max_sweeps` is reached.
pub fn run_to_convergence<P: ProjectionProvider + ?Sized>(
    state: &mut FactorGraphState,
    provider: &P,
    options: &SweepOptions,
    tol: f64,
    max_sweeps: usize,
) -> Result<RunReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    validate(options)?;
    let mut sweeps = Vec::new();
    let mut converged = false;
    for _ in 0..max_sweeps {
        let report = sweep(state, provider, options)?;
        let change = report.max_change;
        sweeps.push(report);
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(RunReport { sweeps, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y_i ~ N(μ, noise) with a Gaussian prior on μ: every projection is exact.
    struct GaussianMean {
        ys: Vec<f64>,
        noise: f64,
    }

    impl ProjectionProvider for GaussianMean {
        fn num_factors(&self) -> usize {
            self.ys.len()
        }
        fn factor_blocks(&self, _: FactorId) -> Vec<BlockId> {
            vec![0]
        }
        fn project(&self, r: &ProjectionRequest<'_>) -> Result<Factor> {
            let lik = GaussianFactor::scalar(self.ys[r.factor], self.noise)?;
            r.cavity.multiply(&Factor::Gaussian(lik))
        }
    }

    fn conjugate() -> (GaussianMean, Vec<Factor>, f64, f64) {
        let ys = vec![0.3, -1.2, 2.5, 0.8, 1.1];
        let (prior_var, noise) = (4.0, 0.5);
        let prec = 1.0 / prior_var + ys.len() as f64 / noise;
        let mean = ys.iter().sum::<f64>() / noise / prec;
        let prior = vec![Factor::Gaussian(GaussianFactor::scalar(0.0, prior_var).unwrap())];
        (GaussianMean { ys, noise }, prior, mean, 1.0 / prec)
    }

    fn mean_var(f: &Factor) -> (f64, f64) {
        let m = f.as_gaussian().unwrap().moments().unwrap();
        (m.mean[0], m.cov.variances()[0])
    }

    #[test]
    fn one_sweep_reaches_conjugate_posterior() {
        let (model, prior, mean, var) = conjugate();
        let mut state = FactorGraphState::new(prior, &model, MessageInit::Unit).unwrap();
        let first = sweep(&mut state, &model, &SweepOptions::default()).unwrap();
        assert_eq!(first.updated, 5);
        let (m, v) = mean_var(state.posterior(0));
        assert!((m - mean).abs() < 1e-12 && (v - var).abs() < 1e-12);
        let second = sweep(&mut state, &model, &SweepOptions::default()).unwrap();
        assert!(second.max_change < 1e-10);
        assert!(second.assembly_residual < 1e-8);
    }

    #[test]
    fn zero_factors() {
        let model = GaussianMean { ys: vec![], noise: 1.0 };
        let prior = vec![Factor::Gaussian(GaussianFactor::scalar(0.0, 1.0).unwrap())];
        let mut state = FactorGraphState::new(prior, &model, MessageInit::default()).unwrap();
        let r = sweep(&mut state, &model, &SweepOptions::default()).unwrap();
        assert_eq!(r.max_change, 0.0);
    }

    #[test]
    fn max_sweeps_zero_leaves_state_untouched() {
        let (model, prior, ..) = conjugate();
        let mut state = FactorGraphState::new(prior, &model, MessageInit::default()).unwrap();
        let before = state.posteriors().to_vec();
        let r = run_to_convergence(&mut state, &model, &SweepOptions::default(), 1e-8, 0).unwrap();
        assert!(r.sweeps.is_empty());
        assert_eq!(state.posteriors(), &before[..]);
        assert!(run_to_convergence(&mut state, &model, &SweepOptions::default(), 0.0, 3).is_err());
    }

    #[test]
    fn flat_init_converges_within_two_sweeps() {
        let (model, prior, mean, _) = conjugate();
        let mut state = FactorGraphState::new(prior, &model, MessageInit::default()).unwrap();
        let r = run_to_convergence(&mut state, &model, &SweepOptions::default(), 1e-8, 10).unwrap();
        assert!(r.converged && r.sweeps.len() <= 2, "{:?}", r.change_trace());
        assert!((mean_var(state.posterior(0)).0 - mean).abs() < 1e-10);
    }

    #[test]
    fn damping_reaches_same_fixed_point_more_slowly() {
        let (model, prior, mean, var) = conjugate();
        let mut undamped = FactorGraphState::new(prior.clone(), &model, MessageInit::Unit).unwrap();
        let fast = run_to_convergence(&mut undamped, &model, &SweepOptions::default(), 1e-10, 200).unwrap();
        let mut damped = FactorGraphState::new(prior, &model, MessageInit::Unit).unwrap();
        let opts = SweepOptions { damping: 0.5, ..Default::default() };
        let slow = run_to_convergence(&mut damped, &model, &opts, 1e-10, 200).unwrap();
        assert!(slow.converged && slow.sweeps.len() > fast.sweeps.len());
        let (m, v) = mean_var(damped.posterior(0));
        assert!((m - mean).abs() < 1e-8 && (v - var).abs() < 1e-8);
        assert!(run_to_convergence(&mut damped, &model, &SweepOptions { damping: 0.0, ..opts }, 1e-8, 1).is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let (model, prior, mean, _) = conjugate();
        for threads in [None, Some(0), Some(2)] {
            let mut state = FactorGraphState::new(prior.clone(), &model, MessageInit::default()).unwrap();
            let opts = SweepOptions { schedule: Schedule::Parallel, threads, ..Default::default() };
            run_to_convergence(&mut state, &model, &opts, 1e-10, 20).unwrap();
            assert!((mean_var(state.posterior(0)).0 - mean).abs() < 1e-3);
        }
    }

    struct AlwaysFails;
    impl ProjectionProvider for AlwaysFails {
        fn num_factors(&self) -> usize {
            3
        }
        fn factor_blocks(&self, _: FactorId) -> Vec<BlockId> {
            vec![0]
        }
        fn project(&self, _: &ProjectionRequest<'_>) -> Result<Factor> {
            Err(Error::Skip("test".into()))
        }
    }

    #[test]
    fn failing_projection_is_skipped_not_fatal() {
        let prior = vec![Factor::Gaussian(GaussianFactor::scalar(0.0, 1.0).unwrap())];
        let mut state = FactorGraphState::new(prior, &AlwaysFails, MessageInit::default()).unwrap();
        let r = sweep(&mut state, &AlwaysFails, &SweepOptions::default()).unwrap();
        assert_eq!((r.updated, r.skipped), (0, 3));
        assert_eq!(state.skip_count(), 3);
    }

    /// Proposes a posterior with a far larger precision than the cavity could
    /// give back, then a negative-precision one; the latter must be rejected.
    struct Improper;
    impl ProjectionProvider for Improper {
        fn num_factors(&self) -> usize {
            1
        }
        fn factor_blocks(&self, _: FactorId) -> Vec<BlockId> {
            vec![0]
        }
        fn project(&self, _: &ProjectionRequest<'_>) -> Result<Factor> {
            Ok(Factor::Gaussian(GaussianFactor::from_natural_diagonal(
                DVector::from_element(1, 0.0),
                DVector::from_element(1, 0.5),
            )?))
        }
    }

    #[test]
    fn improper_proposal_is_rejected() {
        let prior = vec![Factor::Gaussian(GaussianFactor::scalar(0.0, 1.0).unwrap())];
        let mut state = FactorGraphState::new(prior.clone(), &Improper, MessageInit::Unit).unwrap();
        let r = sweep(&mut state, &Improper, &SweepOptions::default()).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(state.posterior(0), &prior[0]);
    }
}
