//! The `cep` command-line tool.
//!
//! Output files, all CSV with a header row:
//!
//! - `posterior.csv`: `kind,mode,index,component,mean,var`. `kind` is
//!   `weight` (regression; `index` is the weight), `embedding` (tensor row
//!   `index` of `mode`) or `tau` (mean and variance of the noise precision).
//! - `covariance.csv` (tensor fits): `mode,index,row,col,value`, the full
//!   covariance of every embedding row.
//! - `trace.csv`: `sweep,max_change,skipped,assembly_residual,wall_time_s`.
//! - `metrics.csv`: `metric,value`.
//! - `stream.csv`: `batch,entries,wall_time_s`; `scores.csv`: `eval_set,metric,value`.

use crate::data::{
    gen_cp_tensor, gen_regression, read_regression_csv, split_holdout, write_regression_csv, FeatureDist,
};
use crate::engine::{run_to_convergence, RunReport, Schedule, SweepOptions, VisitOrder};
use crate::error::{Error, Result};
use crate::expfam::{gaussian_kl, GammaFactor, GaussianFactor};
use crate::metrics::{auc, rmse, test_loglik};
use crate::models::cp::{cp_predict, CpModel, CpOptions, EmbeddingPosterior, SparseTensor, TauRate, ValueKind};
use crate::models::regression::{fit_regression, FitOptions, Link, PosteriorSummary, RegressionData, RegressionModel};
use crate::models::Method;
use crate::oracle::{grid_box, grid_posterior, laplace_approximation, MAX_GRID_DIM};
use crate::quadrature::DEFAULT_ORDER;
use crate::streaming::{batches, stream_run};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Batch sizes accepted by `cep stream`.
pub const BATCH_SIZES: [usize; 5] = [100, 500, 1000, 5000, 10000];

#[derive(Debug, Parser)]
#[command(name = "cep", version, about = "Expectation propagation and conditional expectation propagation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit a model and write the posterior and run trace.
    Fit(FitArgs),
    /// Score a fitted posterior on held-out data.
    Eval(EvalArgs),
    /// One pass of assumed density filtering over a tensor stream.
    Stream(StreamArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Probit,
    Logistic,
    CpContinuous,
    CpBinary,
}

impl ModelKind {
    fn link(self) -> Option<Link> {
        match self {
            ModelKind::Probit => Some(Link::Probit),
            ModelKind::Logistic => Some(Link::Logistic),
            _ => None,
        }
    }

    fn value_kind(self) -> Option<ValueKind> {
        match self {
            ModelKind::CpContinuous => Some(ValueKind::Continuous),
            ModelKind::CpBinary => Some(ValueKind::Binary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ep,
    Cep1,
    Cep2,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Ep => Method::Ep,
            MethodArg::Cep1 => Method::Cep1,
            MethodArg::Cep2 => Method::Cep2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Seq,
    Par,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    /// Factor by factor.
    Factor,
    /// All messages of one block before the next.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TauRateArg {
    /// Squared residual of the mean reconstruction.
    MeanResidual,
    /// Expected squared residual under the embedding posteriors.
    ExpectedResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    StandardNormal,
    Gmm5,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Number of data points (regression).
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Number of features (regression).
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, value_enum, default_value_t = FeatureArg::StandardNormal)]
    pub features: FeatureArg,
    /// Tensor mode sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20,20,20")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Noise precision of tensor values.
    #[arg(long, default_value_t = 100.0)]
    pub noise_precision: f64,
    /// Fraction of tensor cells observed.
    #[arg(long, default_value_t = 0.15)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file: CSV for regression, COO text for tensors.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a held-out split here, drawn from the same generating model.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Fraction of data points or observed entries held out when `--test-out` is given.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value_t = MethodArg::Cep1)]
    pub method: MethodArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long, default_value_t = 100)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub quad_order: usize,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Seq)]
    pub schedule: ScheduleArg,
    /// Visiting order of the sequential schedule; defaults to `block` for tensors and `factor` otherwise.
    #[arg(long, value_enum)]
    pub order: Option<OrderArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_var: f64,
    /// Rate of the noise-precision message (continuous tensors).
    #[arg(long, value_enum, default_value_t = TauRateArg::MeanResidual)]
    pub tau_rate: TauRateArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Directory written by `cep fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Held-out data.
    #[arg(long)]
    pub test: PathBuf,
    /// Training data; enables the KL-to-oracle metric for regression with at most three features.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub prior_var: f64,
    /// Grid points per axis for the oracle.
    #[arg(long, default_value_t = 30)]
    pub grid_resolution: usize,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub quad_order: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Training stream in COO format.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation sets in COO format; repeat the flag for several.
    #[arg(long)]
    pub test: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long, default_value_t = 100, value_parser = parse_batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub inner_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_batch_size(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if BATCH_SIZES.contains(&v) {
        Ok(v)
    } else {
        Err(format!("batch size must be one of {BATCH_SIZES:?}"))
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Stream(a) => stream(a),
    }
}

/// Worker cap from `CEP_THREADS`; `0` means projections run serially.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("CEP_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("CEP_THREADS must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_tensor(path: &Path) -> Result<SparseTensor> {
    SparseTensor::read_coo(open(path)?)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction must lie in [0, 1), got {}", a.test_fraction)));
    }
    if let Some(link) = a.model.link() {
        let dist = match a.features {
            FeatureArg::StandardNormal => FeatureDist::StandardNormal,
            FeatureArg::Gmm5 => FeatureDist::Gmm5,
        };
        let (data, _) = gen_regression(link, a.n, a.d, dist, a.seed)?;
        match &a.test_out {
            Some(test_path) => {
                let n_train = data.len() - (data.len() as f64 * a.test_fraction).round() as usize;
                write_regression_csv(&data.slice(0, n_train), create(&a.out)?)?;
                write_regression_csv(&data.slice(n_train, data.len()), create(test_path)?)
            }
            None => write_regression_csv(&data, create(&a.out)?),
        }
    } else {
        let kind = a.model.value_kind().expect("tensor model");
        let (t, _) = gen_cp_tensor(&a.dims, a.rank, kind, a.noise_precision, a.density, a.seed)?;
        match &a.test_out {
            Some(test_path) => {
                let (train, test) = split_holdout(&t, a.test_fraction, a.seed)?;
                write_tensor(&train, &a.out)?;
                write_tensor(&test, test_path)
            }
            None => write_tensor(&t, &a.out),
        }
    }
}

fn write_tensor(t: &SparseTensor, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    t.write_coo(&mut out)?;
    out.flush()?;
    Ok(())
}

fn sweep_options(a: &FitArgs) -> Result<SweepOptions> {
    let order = match a.order {
        Some(OrderArg::Factor) => VisitOrder::ByFactor,
        Some(OrderArg::Block) => VisitOrder::ByBlock,
        None if a.model.value_kind().is_some() => VisitOrder::ByBlock,
        None => VisitOrder::ByFactor,
    };
    Ok(SweepOptions {
        order,
        schedule: match a.schedule {
            ScheduleArg::Seq => Schedule::Sequential,
            ScheduleArg::Par => Schedule::Parallel,
        },
        damping: a.damping,
        threads: threads_from_env()?,
    })
}

fn fit(a: &FitArgs) -> Result<()> {
    let method = Method::from(a.method);
    let sweep = sweep_options(a)?;
    if let Some(link) = a.model.link() {
        let data = read_regression_csv(open(&a.data)?)?;
        let model = RegressionModel::with_quadrature(data, link, method, a.quad_order)?;
        let opts =
            FitOptions { prior_var: a.prior_var, sweep, tol: a.tol, max_sweeps: a.max_sweeps, ..Default::default() };
        let fit = fit_regression(&model, &opts)?;
        create_dir(&a.out)?;
        write_regression_posterior(&a.out.join("posterior.csv"), &fit.summary)?;
        write_trace(&a.out.join("trace.csv"), &fit.report)?;
        report_convergence(&fit.report);
        return Ok(());
    }
    let kind = a.model.value_kind().expect("tensor model");
    if method == Method::Ep {
        return Err(Error::Unsupported(
            "tensor models have no EP projection: the moment matching over the product of embedding rows is \
             intractable; use --method cep1 or cep2"
                .into(),
        ));
    }
    if method == Method::Cep2 {
        return Err(Error::Unsupported(
            "tensor models implement the first-order projection only; use --method cep1".into(),
        ));
    }
    let tensor = read_tensor(&a.data)?;
    let tau_rate = match a.tau_rate {
        TauRateArg::MeanResidual => TauRate::MeanResidual,
        TauRateArg::ExpectedResidual => TauRate::ExpectedResidual,
    };
    let options =
        CpOptions { rank: a.rank, kind, prior_var: a.prior_var, tau_rate, seed: a.seed, ..Default::default() };
    let model = CpModel::new(tensor, options)?;
    let mut state = model.initial_state()?;
    let report = run_to_convergence(&mut state, &model, &sweep, a.tol, a.max_sweeps)?;
    let posterior = EmbeddingPosterior::from_state(&model, &state)?;
    create_dir(&a.out)?;
    write_tensor_posterior(&a.out, &posterior)?;
    write_trace(&a.out.join("trace.csv"), &report)?;
    report_convergence(&report);
    Ok(())
}

fn report_convergence(report: &RunReport) {
    let status = if report.converged { "converged" } else { "stopped at max sweeps" };
    eprintln!("{status} after {} sweeps ({} skipped updates)", report.sweeps.len(), report.total_skipped());
}

fn write_trace(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["sweep", "max_change", "skipped", "assembly_residual", "wall_time_s"])?;
    for (i, s) in report.sweeps.iter().enumerate() {
        w.write_record(&[
            (i + 1).to_string(),
            s.max_change.to_string(),
            s.skipped.to_string(),
            s.assembly_residual.to_string(),
            s.wall_time.as_secs_f64().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const POSTERIOR_HEADER: [&str; 6] = ["kind", "mode", "index", "component", "mean", "var"];

fn write_regression_posterior(path: &Path, s: &PosteriorSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(POSTERIOR_HEADER)?;
    for (j, (m, v)) in s.means.iter().zip(&s.vars).enumerate() {
        w.write_record(&["weight".into(), "0".into(), j.to_string(), "0".into(), m.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_tensor_posterior(dir: &Path, p: &EmbeddingPosterior) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&dir.join("posterior.csv"))?);
    let mut c = csv::Writer::from_writer(create(&dir.join("covariance.csv"))?);
    w.write_record(POSTERIOR_HEADER)?;
    c.write_record(["mode", "index", "row", "col", "value"])?;
    for (k, &d) in p.dims().iter().enumerate() {
        for i in 0..d {
            let m = p.row(k, i).moments()?;
            let cov = m.cov.to_full();
            for r in 0..p.rank() {
                w.write_record(&[
                    "embedding".into(),
                    k.to_string(),
                    i.to_string(),
                    r.to_string(),
                    m.mean[r].to_string(),
                    cov[(r, r)].to_string(),
                ])?;
                for col in 0..p.rank() {
                    c.write_record(&[
                        k.to_string(),
                        i.to_string(),
                        r.to_string(),
                        col.to_string(),
                        cov[(r, col)].to_string(),
                    ])?;
                }
            }
        }
    }
    if let Some(t) = p.tau() {
        let var = t.shape / (t.rate * t.rate);
        w.write_record(&["tau".into(), "0".into(), "0".into(), "0".into(), t.mean()?.to_string(), var.to_string()])?;
    }
    w.flush()?;
    c.flush()?;
    Ok(())
}

struct PosteriorRow {
    kind: String,
    mode: usize,
    index: usize,
    component: usize,
    mean: f64,
    var: f64,
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|f| f.trim().parse().ok())
        .ok_or_else(|| Error::Parse { line, message: format!("bad or missing field {i}") })
}

fn read_posterior_rows(path: &Path) -> Result<Vec<PosteriorRow>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        rows.push(PosteriorRow {
            kind: parse_field(&rec, 0, line)?,
            mode: parse_field(&rec, 1, line)?,
            index: parse_field(&rec, 2, line)?,
            component: parse_field(&rec, 3, line)?,
            mean: parse_field(&rec, 4, line)?,
            var: parse_field(&rec, 5, line)?,
        });
    }
    Ok(rows)
}

/// Reload a regression posterior written by `cep fit`.
pub fn read_regression_posterior(path: &Path) -> Result<PosteriorSummary> {
    let mut rows: Vec<PosteriorRow> = read_posterior_rows(path)?.into_iter().filter(|r| r.kind == "weight").collect();
    rows.sort_by_key(|r| r.index);
    if rows.is_empty() || rows.iter().enumerate().any(|(j, r)| r.index != j) {
        return Err(Error::InvalidArgument(format!("{}: weights must be numbered 0..d", path.display())));
    }
    Ok(PosteriorSummary { means: rows.iter().map(|r| r.mean).collect(), vars: rows.iter().map(|r| r.var).collect() })
}

/// Reload a tensor posterior written by `cep fit` for a tensor of shape `dims`.
pub fn read_tensor_posterior(dir: &Path, dims: &[usize]) -> Result<EmbeddingPosterior> {
    let rows = read_posterior_rows(&dir.join("posterior.csv"))?;
    let rank = rows.iter().filter(|r| r.kind == "embedding").map(|r| r.component + 1).max().unwrap_or(0);
    if rank == 0 {
        return Err(Error::InvalidArgument("posterior has no embedding rows".into()));
    }
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let total: usize = dims.iter().sum();
    let mut means = vec![DVector::zeros(rank); total];
    let mut covs = vec![DMatrix::zeros(rank, rank); total];
    let mut tau = None;
    let locate = |mode: usize, index: usize| -> Result<usize> {
        if mode >= dims.len() || index >= dims[mode] {
            return Err(Error::InvalidArgument(format!("row ({mode}, {index}) outside dims {dims:?}")));
        }
        Ok(offsets[mode] + index)
    };
    for r in &rows {
        match r.kind.as_str() {
            "embedding" => means[locate(r.mode, r.index)?][r.component] = r.mean,
            "tau" => tau = Some(GammaFactor::new(r.mean * r.mean / r.var, r.mean / r.var)),
            other => return Err(Error::InvalidArgument(format!("unexpected posterior kind {other:?}"))),
        }
    }
    let mut c = csv::Reader::from_reader(open(&dir.join("covariance.csv"))?);
    for (n, rec) in c.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let b = locate(parse_field(&rec, 0, line)?, parse_field(&rec, 1, line)?)?;
        let (row, col): (usize, usize) = (parse_field(&rec, 2, line)?, parse_field(&rec, 3, line)?);
        if row >= rank || col >= rank {
            return Err(Error::Parse { line, message: format!("component ({row}, {col}) exceeds rank {rank}") });
        }
        covs[b][(row, col)] = parse_field(&rec, 4, line)?;
    }
    let factors =
        means.iter().zip(&covs).map(|(m, c)| GaussianFactor::from_moments_full(m, c)).collect::<Result<Vec<_>>>()?;
    EmbeddingPosterior::new(dims.to_vec(), rank, factors, tau)
}

fn write_metrics(path: &Path, metrics: &[(String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["metric", "value"])?;
    for (name, v) in metrics {
        w.write_record(&[name.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sum over weights of `KL(oracle marginal ‖ fitted marginal)`, with the
/// oracle computed on a dense grid around the Laplace approximation.
pub fn kl_to_grid_oracle(
    model: &RegressionModel,
    fitted: &PosteriorSummary,
    prior_var: f64,
    resolution: usize,
) -> Result<f64> {
    let d = model.data().dim();
    if d > MAX_GRID_DIM {
        return Err(Error::InvalidArgument(format!("grid oracle needs at most {MAX_GRID_DIM} weights, got {d}")));
    }
    let laplace = laplace_approximation(|w| model.log_joint_grad_hess(w, prior_var), &vec![0.0; d], 100)?;
    let lm = laplace.moments()?;
    let (lower, upper) = grid_box(lm.mean.as_slice(), lm.cov.variances().as_slice(), 10.0);
    let oracle = grid_posterior(|w| model.log_joint(w, prior_var), &lower, &upper, resolution)?;
    let p = GaussianFactor::from_moments_diagonal(&oracle.mean, &oracle.var)?;
    gaussian_kl(&p, &fitted.to_factor()?)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut metrics = Vec::new();
    if let Some(link) = a.model.link() {
        let summary = read_regression_posterior(&a.fit.join("posterior.csv"))?;
        let test = read_regression_csv(open(&a.test)?)?;
        if test.dim() != summary.means.len() {
            return Err(Error::DimensionMismatch { left: test.dim(), right: summary.means.len() });
        }
        let model = RegressionModel::with_quadrature(test, link, Method::Cep1, a.quad_order)?;
        let probs: Vec<f64> = (0..model.data().len()).map(|i| model.predict(&summary, model.data().row(i))).collect();
        metrics.push(("test_loglik".to_string(), test_loglik(&probs, model.data().labels())?));
        if let Ok(v) = auc(&probs, model.data().labels()) {
            metrics.push(("auc".to_string(), v));
        }
        if let Some(train) = &a.train {
            let data: RegressionData = read_regression_csv(open(train)?)?;
            let train_model = RegressionModel::with_quadrature(data, link, Method::Cep1, a.quad_order)?;
            let kl = kl_to_grid_oracle(&train_model, &summary, a.prior_var, a.grid_resolution)?;
            metrics.push(("kl_to_oracle".to_string(), kl));
        }
    } else {
        let kind = a.model.value_kind().expect("tensor model");
        let test = read_tensor(&a.test)?;
        let posterior = read_tensor_posterior(&a.fit, test.dims())?;
        let preds = test.iter().map(|(idx, _)| cp_predict(&posterior, idx, kind)).collect::<Result<Vec<_>>>()?;
        match kind {
            ValueKind::Binary => {
                metrics.push(("test_loglik".to_string(), test_loglik(&preds, test.values())?));
                metrics.push(("auc".to_string(), auc(&preds, test.values())?));
            }
            ValueKind::Continuous => metrics.push(("rmse".to_string(), rmse(&preds, test.values())?)),
        }
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_metrics(&a.out, &metrics)
}

fn stream(a: &StreamArgs) -> Result<()> {
    let kind = a
        .model
        .value_kind()
        .ok_or_else(|| Error::Unsupported("streaming is implemented for the tensor models only".into()))?;
    let train = read_tensor(&a.data)?;
    let tests = a.test.iter().map(|p| read_tensor(p)).collect::<Result<Vec<_>>>()?;
    let options = CpOptions { rank: a.rank, kind, seed: a.seed, ..Default::default() };
    let tau = (kind == ValueKind::Continuous).then_some(options.tau_prior);
    let initial =
        EmbeddingPosterior::random(train.dims().to_vec(), a.rank, options.prior_var, options.init_scale, tau, a.seed)?;
    let source: Vec<_> = batches(&train, a.batch_size)?;
    let sizes: Vec<usize> = source.iter().map(|b| b.entries.len()).collect();
    let report = stream_run(initial, source.into_iter().map(Ok), &options, a.inner_iters, &tests)?;

    create_dir(&a.out)?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("stream.csv"))?);
    w.write_record(["batch", "entries", "wall_time_s"])?;
    for (i, (t, n)) in report.batch_times.iter().zip(&sizes).enumerate() {
        w.write_record(&[i.to_string(), n.to_string(), t.as_secs_f64().to_string()])?;
    }
    w.flush()?;
    let metric = match kind {
        ValueKind::Binary => "auc",
        ValueKind::Continuous => "rmse",
    };
    let mut s = csv::Writer::from_writer(create(&a.out.join("scores.csv"))?);
    s.write_record(["eval_set", "metric", "value"])?;
    for (i, v) in report.scores.iter().enumerate() {
        s.write_record(&[i.to_string(), metric.into(), v.to_string()])?;
    }
    if !report.scores.is_empty() {
        s.write_record(&["mean".into(), metric.into(), report.mean.to_string()])?;
        s.write_record(&["std_dev".into(), metric.into(), report.std_dev.to_string()])?;
    }
    s.flush()?;
    write_tensor_posterior(&a.out, &report.posterior)?;
    Ok(())
}
