//! Synthetic generators, tensor splits and CSV ingestion.

use crate::error::{Error, Result};
use crate::models::cp::{SparseTensor, ValueKind};
use crate::models::regression::{Link, RegressionData};
use crate::special::{norm_cdf, sigmoid};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureDist {
    StandardNormal,
    /// Equal-weight mixture of `N(μ, ½)` with `μ ∈ {-2, -1, 0, 1, 2}`.
    Gmm5,
}

impl FromStr for FeatureDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard_normal" | "normal" => Ok(FeatureDist::StandardNormal),
            "gmm5" => Ok(FeatureDist::Gmm5),
            other => Err(Error::InvalidArgument(format!("unknown feature distribution {other:?}"))),
        }
    }
}

fn sample_feature(dist: FeatureDist, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    match dist {
        FeatureDist::StandardNormal => z,
        FeatureDist::Gmm5 => {
            let center = rng.random_range(0..5) as f64 - 2.0;
            center + z * 0.5f64.sqrt()
        }
    }
}

/// `n` rows with `d` features, weights from `N(0, 1)`, labels drawn from the link.
pub fn gen_regression(
    link: Link,
    n: usize,
    d: usize,
    dist: FeatureDist,
    seed: u64,
) -> Result<(RegressionData, Vec<f64>)> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| sample_feature(dist, &mut rng)).collect();
        let margin: f64 = row.iter().zip(&weights).map(|(x, w)| x * w).sum();
        let u: f64 = rng.random();
        let y = match link {
            Link::Probit => (u < norm_cdf(margin)) as u8 as f64,
            Link::Logistic => (u < sigmoid(margin)) as u8 as f64,
            Link::Gaussian { noise_var } => {
                let e: f64 = StandardNormal.sample(&mut rng);
                margin + e * noise_var.sqrt()
            }
        };
        features.extend(row);
        labels.push(y);
    }
    Ok((RegressionData::new(features, labels, d)?, weights))
}

/// Random CP tensor: embedding rows from `N(0, I)`, each cell observed with
/// probability `density`. Continuous values carry `N(0, 1/noise_precision)`
/// noise; binary values threshold the noisy product at zero, so a precision of
/// 1 is the probit model. An infinite precision gives noise-free values.
pub fn gen_cp_tensor(
    dims: &[usize],
    rank: usize,
    kind: ValueKind,
    noise_precision: f64,
    density: f64,
    seed: u64,
) -> Result<(SparseTensor, Vec<DMatrix<f64>>)> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidArgument(format!("density must lie in [0, 1], got {density}")));
    }
    if !(noise_precision > 0.0) || rank == 0 {
        return Err(Error::InvalidArgument("noise precision and rank must be positive".into()));
    }
    SparseTensor::new(dims.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<DMatrix<f64>> =
        dims.iter().map(|&d| DMatrix::from_fn(d, rank, |_, _| StandardNormal.sample(&mut rng))).collect();
    let noise_sd = 1.0 / noise_precision.sqrt();
    let mut entries = Vec::new();
    let mut idx = vec![0usize; dims.len()];
    loop {
        if rng.random::<f64>() < density {
            let value = cp_value(&factors, &idx);
            let e: f64 = StandardNormal.sample(&mut rng);
            let noisy = value + noise_sd * e;
            let y = match kind {
                ValueKind::Continuous => noisy,
                ValueKind::Binary => (noisy > 0.0) as u8 as f64,
            };
            entries.push((idx.clone(), y));
        }
        if !advance(&mut idx, dims) {
            break;
        }
    }
    Ok((SparseTensor::from_entries(dims.to_vec(), entries)?, factors))
}

/// `1ᵀ(u¹ ∘ … ∘ u^K)` for the rows at `idx`.
pub fn cp_value(factors: &[DMatrix<f64>], idx: &[usize]) -> f64 {
    let rank = factors[0].ncols();
    (0..rank).map(|r| factors.iter().zip(idx).map(|(f, &i)| f[(i, r)]).product::<f64>()).sum()
}

/// Odometer increment in row-major order; false after the last cell.
fn advance(idx: &mut [usize], dims: &[usize]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Random `(train, test)` partition of the observed entries.
pub fn split_holdout(tensor: &SparseTensor, test_fraction: f64, seed: u64) -> Result<(SparseTensor, SparseTensor)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction must lie in [0, 1], got {test_fraction}")));
    }
    let mut order: Vec<usize> = (0..tensor.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (tensor.len() as f64 * test_fraction).round() as usize;
    let (test, train) = order.split_at(n_test);
    Ok((tensor.subset(train), tensor.subset(test)))
}

/// One fold of [`split_tensor_folds`]; sampled zeros appear as explicit 0 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: SparseTensor,
    pub test: SparseTensor,
}

/// Cross-validation folds over the nonzero entries.
///
/// Nonzeros are shuffled and dealt into `folds` groups. For each fold, the
/// training set is the other groups plus as many zero cells, and the test set
/// is the held-out group plus `zero_rate` of the zero cells not used for
/// training. Zero cells are every cell without a nonzero value and are
/// sampled uniformly by rejection from a generator seeded per fold.
pub fn split_tensor_folds(tensor: &SparseTensor, folds: usize, zero_rate: f64, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if !(0.0..=1.0).contains(&zero_rate) {
        return Err(Error::InvalidArgument(format!("zero rate must lie in [0, 1], got {zero_rate}")));
    }
    let dims = tensor.dims().to_vec();
    let nonzero: Vec<usize> = (0..tensor.len()).filter(|&i| tensor.value(i) != 0.0).collect();
    let occupied: HashSet<Vec<usize>> = nonzero.iter().map(|&i| tensor.index(i).to_vec()).collect();
    let total_cells: f64 = dims.iter().map(|&d| d as f64).product();
    let zero_cells = total_cells - occupied.len() as f64;

    let mut shuffled = nonzero.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let groups: Vec<Vec<usize>> =
        (0..folds).map(|f| shuffled.iter().skip(f).step_by(folds).cloned().collect()).collect();

    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + f as u64));
        let train_nz: Vec<usize> = (0..folds).filter(|&g| g != f).flat_map(|g| groups[g].iter().cloned()).collect();
        let n_train_zero = train_nz.len();
        let n_test_zero = ((zero_cells - n_train_zero as f64).max(0.0) * zero_rate).round() as usize;
        if (n_train_zero + n_test_zero) as f64 > zero_cells {
            return Err(Error::InvalidArgument("not enough zero cells to balance the training set".into()));
        }
        let mut taken: HashSet<Vec<usize>> = HashSet::new();
        let mut draw_zeros = |count: usize, rng: &mut ChaCha8Rng| -> Vec<(Vec<usize>, f64)> {
            let mut v = Vec::with_capacity(count);
            while v.len() < count {
                let idx: Vec<usize> = dims.iter().map(|&d| rng.random_range(0..d)).collect();
                if !occupied.contains(&idx) && taken.insert(idx.clone()) {
                    v.push((idx, 0.0));
                }
            }
            v
        };
        let train_zeros = draw_zeros(n_train_zero, &mut rng);
        let test_zeros = draw_zeros(n_test_zero, &mut rng);
        let to_entries =
            |ids: &[usize]| ids.iter().map(|&i| (tensor.index(i).to_vec(), tensor.value(i))).collect::<Vec<_>>();
        let mut train = to_entries(&train_nz);
        train.extend(train_zeros);
        let mut test = to_entries(&groups[f]);
        test.extend(test_zeros);
        out.push(Fold {
            train: SparseTensor::from_entries(dims.clone(), train)?,
            test: SparseTensor::from_entries(dims.clone(), test)?,
        });
    }
    Ok(out)
}

/// CSV with a header row; every column is a float feature except the last, the label.
pub fn read_regression_csv<R: Read>(reader: R) -> Result<RegressionData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Parse { line: 1, message: "need at least one feature column and a label".into() });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != width {
            return Err(Error::Parse { line, message: format!("expected {width} fields, got {}", record.len()) });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse { line, message: format!("column {c}: {field:?}") })?;
            if c + 1 == width {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    RegressionData::new(features, labels, width - 1)
}

pub fn write_regression_csv<W: Write>(data: &RegressionData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.label(i).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
