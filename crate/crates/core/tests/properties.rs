use cep_core::engine::{sweep, FactorGraphState, MessageInit, SweepOptions};
use cep_core::expfam::{gaussian_kl, GammaFactor, GaussianFactor};
use cep_core::metrics::auc;
use cep_core::models::cp::SparseTensor;
use cep_core::models::regression::{Link, RegressionData, RegressionModel};
use cep_core::models::Method;
use cep_core::quadrature::gauss_hermite;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn diag_gaussian(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-5.0..5.0f64, dim), prop::collection::vec(0.01..10.0f64, dim))
}

/// SPD matrix `AAᵀ + εI` from a random square `A`.
fn spd(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, dim * dim).prop_map(move |v| {
        let a = DMatrix::from_vec(dim, dim, v);
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1
    })
}

/// `E[x^k]` for `x ~ N(mean, var)` from the binomial expansion of central moments.
fn gaussian_raw_moment(mean: f64, var: f64, k: u32) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        if j % 2 == 0 {
            let central: f64 = (1..j).step_by(2).map(f64::from).product::<f64>() * var.powi(j as i32 / 2);
            total += binom * mean.powi((k - j) as i32) * central;
        }
        binom = binom * f64::from(k - j) / f64::from(j + 1);
    }
    total
}

proptest! {
    #[test]
    fn diagonal_round_trip((mean, var) in diag_gaussian(4)) {
        let f = GaussianFactor::from_moments_diagonal(&mean, &var).unwrap();
        let m = f.moments().unwrap();
        let back = m.cov.variances();
        for k in 0..4 {
            prop_assert!((m.mean[k] - mean[k]).abs() <= 1e-9 * (1.0 + mean[k].abs()));
            prop_assert!((back[k] - var[k]).abs() <= 1e-9 * var[k]);
        }
    }

    #[test]
    fn full_round_trip(mean in prop::collection::vec(-3.0..3.0f64, 3), cov in spd(3)) {
        let mean = DVector::from_vec(mean);
        let f = GaussianFactor::from_moments_full(&mean, &cov).unwrap();
        let m = f.moments().unwrap();
        prop_assert!((m.mean - &mean).amax() <= 1e-8 * (1.0 + mean.amax()));
        prop_assert!((m.cov.to_full() - &cov).amax() <= 1e-8 * cov.amax());
    }

    #[test]
    fn multiply_then_divide_restores((m1, v1) in diag_gaussian(3), (m2, v2) in diag_gaussian(3)) {
        let a = GaussianFactor::from_moments_diagonal(&m1, &v1).unwrap();
        let b = GaussianFactor::from_moments_diagonal(&m2, &v2).unwrap();
        let back = a.multiply(&b).unwrap().divide(&b).unwrap();
        prop_assert!(back.max_abs_diff(&a) <= 1e-9 * (1.0 + a.eta1().amax()));
    }

    #[test]
    fn gamma_multiply_then_divide_restores(a in 0.5..20.0f64, b in 0.0..20.0f64, c in 0.5..20.0f64, d in 0.0..20.0f64) {
        let p = GammaFactor::new(a, b);
        let q = GammaFactor::new(c, d);
        let back = p.multiply(&q).divide(&q);
        prop_assert!(back.max_abs_diff(&p) <= 1e-12 * (1.0 + a + b));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self((m1, v1) in diag_gaussian(3), (m2, v2) in diag_gaussian(3)) {
        let p = GaussianFactor::from_moments_diagonal(&m1, &v1).unwrap();
        let q = GaussianFactor::from_moments_diagonal(&m2, &v2).unwrap();
        prop_assert!(gaussian_kl(&p, &q).unwrap() >= -1e-12);
        prop_assert!(gaussian_kl(&p, &p).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn gauss_hermite_exact_to_degree_2n_minus_1(
        order in 2usize..12,
        mean in -1.5..1.5f64,
        var in 0.1..2.0f64,
        frac in 0.0..1.0f64,
    ) {
        let rule = gauss_hermite(order).unwrap();
        let k = ((2 * order - 1) as f64 * frac).round() as u32;
        let exact = gaussian_raw_moment(mean, var, k);
        let got = rule.expect_1d(mean, var, |x| x.powi(k as i32)).unwrap();
        prop_assert!((got - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "order {} k {} {} vs {}", order, k, got, exact);
    }

    #[test]
    fn posterior_equals_prior_times_messages(
        rows in prop::collection::vec((prop::collection::vec(-2.0..2.0f64, 3), any::<bool>()), 5..30),
        method in prop::sample::select(vec![Method::Ep, Method::Cep1, Method::Cep2]),
        link in prop::sample::select(vec![Link::Probit, Link::Logistic]),
        damping in 0.3..1.0f64,
    ) {
        let features: Vec<f64> = rows.iter().flat_map(|(x, _)| x.clone()).collect();
        let labels: Vec<f64> = rows.iter().map(|(_, y)| *y as u8 as f64).collect();
        let model = RegressionModel::new(RegressionData::new(features, labels, 3).unwrap(), link, method).unwrap();
        let mut state = FactorGraphState::new(model.priors(1.0).unwrap(), &model, MessageInit::default()).unwrap();
        let options = SweepOptions { damping, ..Default::default() };
        for _ in 0..3 {
            sweep(&mut state, &model, &options).unwrap();
            prop_assert!(state.assembly_residual().unwrap() <= 1e-8);
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps(
        pairs in prop::collection::vec((-10.0..10.0f64, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<f64> = pairs.iter().map(|p| p.1 as u8 as f64).collect();
        prop_assume!(labels.contains(&1.0) && labels.contains(&0.0));
        let a = auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (0.3 * s).exp()).collect();
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((auc(&mapped, &labels).unwrap() - a).abs() <= 1e-12);
        prop_assert!((auc(&flipped, &labels).unwrap() - (1.0 - a)).abs() <= 1e-12);
    }

    #[test]
    fn coo_round_trip(entries in prop::collection::btree_map((0usize..4, 0usize..5, 0usize..3), -100.0..100.0f64, 1..40)) {
        let t = SparseTensor::from_entries(
            vec![4, 5, 3],
            entries.iter().map(|(&(i, j, k), &v)| (vec![i, j, k], v)),
        ).unwrap();
        let mut buf = Vec::new();
        t.write_coo(&mut buf).unwrap();
        let back = SparseTensor::read_coo(buf.as_slice()).unwrap();
        prop_assert_eq!(back, t);
    }
}
