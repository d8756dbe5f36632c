//! Single-pass assumed density filtering over batches of tensor entries.
//!
//! Each batch is absorbed by running the CP projections with the current
//! posterior as the calibrating distribution. With one inner pass nothing is
//! ever divided out; extra passes refine the batch's own messages, which are
//! discarded once the batch is done.

use crate::engine::{sweep, FactorGraphState, MessageInit, SweepOptions};
use crate::error::{Error, Result};
use crate::expfam::Factor;
use crate::metrics::{auc, rmse};
use crate::models::cp::{cp_predict, CpModel, CpOptions, EmbeddingPosterior, SparseTensor, ValueKind};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub id: usize,
    pub entries: SparseTensor,
}

/// Split a tensor into consecutive batches of `batch_size` entries.
pub fn batches(tensor: &SparseTensor, batch_size: usize) -> Result<Vec<StreamBatch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let positions: Vec<usize> = (0..tensor.len()).collect();
    Ok(positions
        .chunks(batch_size)
        .enumerate()
        .map(|(id, chunk)| StreamBatch { id, entries: tensor.subset(chunk) })
        .collect())
}

/// Outcome of absorbing one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbReport {
    pub skipped: usize,
    pub wall_time: Duration,
}

/// Absorb `batch` into `posterior` in place.
pub fn adf_absorb(
    posterior: &mut EmbeddingPosterior,
    batch: &StreamBatch,
    options: &CpOptions,
    inner_iters: usize,
) -> Result<AbsorbReport> {
    let start = Instant::now();
    if inner_iters == 0 {
        return Err(Error::InvalidArgument("inner_iters must be at least 1".into()));
    }
    if batch.entries.dims() != posterior.dims() {
        return Err(Error::InvalidArgument(format!(
            "batch {} has dims {:?}, stream has {:?}",
            batch.id,
            batch.entries.dims(),
            posterior.dims()
        )));
    }
    if batch.entries.is_empty() {
        return Ok(AbsorbReport { skipped: 0, wall_time: start.elapsed() });
    }
    let options = CpOptions { rank: posterior.rank(), ..*options };
    let model = CpModel::new(batch.entries.clone(), options)?;
    let mut priors: Vec<Factor> = Vec::with_capacity(model.num_rows() + 1);
    for (k, &d) in posterior.dims().iter().enumerate() {
        for j in 0..d {
            priors.push(Factor::Gaussian(posterior.row(k, j).clone()));
        }
    }
    if model.tau_block().is_some() {
        let tau = posterior.tau().ok_or(Error::InvalidArgument("continuous stream needs a τ posterior".into()))?;
        priors.push(Factor::Gamma(*tau));
    }
    let mut state = FactorGraphState::new(priors, &model, MessageInit::Unit)?;
    let mut skipped = 0;
    for _ in 0..inner_iters {
        skipped += sweep(&mut state, &model, &SweepOptions::default())?.skipped;
    }
    *posterior = EmbeddingPosterior::from_state(&model, &state)?;
    Ok(AbsorbReport { skipped, wall_time: start.elapsed() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub batch_times: Vec<Duration>,
    pub skipped: usize,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub posterior: EmbeddingPosterior,
}

/// AUC (binary) or RMSE (continuous) of the posterior on `test`.
pub fn evaluate(posterior: &EmbeddingPosterior, test: &SparseTensor, kind: ValueKind) -> Result<f64> {
    let preds = test.iter().map(|(idx, _)| cp_predict(posterior, idx, kind)).collect::<Result<Vec<_>>>()?;
    match kind {
        ValueKind::Binary => auc(&preds, test.values()),
        ValueKind::Continuous => rmse(&preds, test.values()),
    }
}

/// Stream every batch once, in order, then score each evaluation set.
///
/// The first malformed batch aborts the run with its position.
pub fn stream_run<I>(
    mut posterior: EmbeddingPosterior,
    source: I,
    options: &CpOptions,
    inner_iters: usize,
    eval_sets: &[SparseTensor],
) -> Result<StreamReport>
where
    I: IntoIterator<Item = Result<StreamBatch>>,
{
    let mut batch_times = Vec::new();
    let mut skipped = 0;
    for (position, batch) in source.into_iter().enumerate() {
        let batch = batch.map_err(|e| Error::InvalidArgument(format!("batch at position {position}: {e}")))?;
        let r = adf_absorb(&mut posterior, &batch, options, inner_iters)
            .map_err(|e| Error::InvalidArgument(format!("batch at position {position}: {e}")))?;
        batch_times.push(r.wall_time);
        skipped += r.skipped;
    }
    let scores = eval_sets.iter().map(|t| evaluate(&posterior, t, options.kind)).collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std_dev = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(StreamReport { batch_times, skipped, scores, mean, std_dev, posterior })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ProjectionProvider;
    use crate::expfam::GammaFactor;

    fn small() -> (SparseTensor, CpOptions, EmbeddingPosterior) {
        let entries = vec![(vec![0, 1], 1.2), (vec![1, 0], -0.4), (vec![1, 1], 0.3), (vec![0, 0], 2.0)];
        let t = SparseTensor::from_entries(vec![2, 2], entries).unwrap();
        let o = CpOptions { rank: 2, ..Default::default() };
        let p = EmbeddingPosterior::random(vec![2, 2], 2, 1.0, 0.3, Some(GammaFactor::new(1.0, 1.0)), 4).unwrap();
        (t, o, p)
    }

    #[test]
    fn empty_batch_leaves_posterior() {
        let (_, o, p) = small();
        let mut q = p.clone();
        let empty = StreamBatch { id: 0, entries: SparseTensor::new(vec![2, 2]).unwrap() };
        adf_absorb(&mut q, &empty, &o, 1).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn single_batch_is_one_sweep_with_unit_messages() {
        let (t, o, p) = small();
        let mut q = p.clone();
        adf_absorb(&mut q, &StreamBatch { id: 0, entries: t.clone() }, &o, 1).unwrap();

        let model = CpModel::new(t, o).unwrap();
        let mut priors: Vec<Factor> = (0..2)
            .flat_map(|k| (0..2).map(move |j| (k, j)))
            .map(|(k, j)| Factor::Gaussian(p.row(k, j).clone()))
            .collect();
        priors.push(Factor::Gamma(*p.tau().unwrap()));
        let mut state = FactorGraphState::new(priors, &model, MessageInit::Unit).unwrap();
        assert_eq!(state.num_factors(), model.num_factors());
        sweep(&mut state, &model, &SweepOptions::default()).unwrap();
        assert_eq!(EmbeddingPosterior::from_state(&model, &state).unwrap(), q);
    }

    #[test]
    fn zero_batches_give_prior_predictions() {
        let (t, o, p) = small();
        let r = stream_run(p.clone(), Vec::new(), &o, 1, std::slice::from_ref(&t)).unwrap();
        assert_eq!(r.posterior, p);
        assert!(r.batch_times.is_empty());
    }

    #[test]
    fn malformed_batch_aborts_with_position() {
        let (t, o, p) = small();
        let bad = StreamBatch { id: 1, entries: SparseTensor::new(vec![3, 2]).unwrap() };
        let src = vec![Ok(StreamBatch { id: 0, entries: t }), Ok(bad)];
        let err = stream_run(p, src, &o, 1, &[]).unwrap_err();
        assert!(err.to_string().contains("position 1"), "{err}");
    }
}
