use cep_ffi::*;
use std::ffi::CStr;
use std::ptr;

fn last_error() -> String {
    let p = cep_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn gauss_hermite_handle_round_trip() {
    let mut rule = ptr::null_mut();
    assert_eq!(unsafe { cep_gauss_hermite_new(5, &mut rule) }, CepStatus::Ok);
    assert_eq!(unsafe { cep_gauss_hermite_order(rule) }, 5);
    let mut nodes = [0.0; 5];
    let mut weights = [0.0; 5];
    let st = unsafe { cep_gauss_hermite_copy(rule, nodes.as_mut_ptr(), weights.as_mut_ptr(), 5) };
    assert_eq!(st, CepStatus::Ok);
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    // probabilists' nodes of order 5: 0, ±sqrt(5 ± sqrt(10))
    let mut sorted = nodes;
    sorted.sort_by(f64::total_cmp);
    let outer = (5.0 + 10f64.sqrt()).sqrt();
    let inner = (5.0 - 10f64.sqrt()).sqrt();
    for (got, want) in sorted.iter().zip([-outer, -inner, 0.0, inner, outer]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    // E[x^4] under N(1, 2) = mu^4 + 6 mu^2 s + 3 s^2 = 1 + 12 + 12
    let coeffs = [0.0, 0.0, 0.0, 0.0, 1.0];
    let mut out = 0.0;
    let st = unsafe { cep_gauss_hermite_expect_poly(rule, 1.0, 2.0, coeffs.as_ptr(), 5, &mut out) };
    assert_eq!(st, CepStatus::Ok);
    assert!((out - 25.0).abs() < 1e-11);
    unsafe { cep_gauss_hermite_free(rule) };
}

#[test]
fn bad_arguments_set_status_and_message() {
    let mut rule = ptr::null_mut();
    assert_eq!(unsafe { cep_gauss_hermite_new(0, &mut rule) }, CepStatus::InvalidArgument);
    assert!(rule.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { cep_gauss_hermite_new(3, ptr::null_mut()) }, CepStatus::NullPointer);
    assert_eq!(last_error(), "out is null");

    let mut buf = [0 as std::ffi::c_char; 4];
    let full = unsafe { cep_last_error_copy(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(full, "out is null".len());
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "out");

    assert_eq!(unsafe { cep_gauss_hermite_new(3, &mut rule) }, CepStatus::Ok);
    assert!(cep_last_error_message().is_null());
    let mut nodes = [0.0; 2];
    let mut weights = [0.0; 2];
    let st = unsafe { cep_gauss_hermite_copy(rule, nodes.as_mut_ptr(), weights.as_mut_ptr(), 2) };
    assert_eq!(st, CepStatus::InvalidArgument);
    unsafe { cep_gauss_hermite_free(rule) };
    unsafe { cep_gauss_hermite_free(ptr::null_mut()) };
}

#[test]
fn errors_are_per_thread() {
    assert_eq!(unsafe { cep_gauss_hermite_new(3, ptr::null_mut()) }, CepStatus::NullPointer);
    let other = std::thread::spawn(|| cep_last_error_message().is_null()).join().unwrap();
    assert!(other);
    assert!(!cep_last_error_message().is_null());
}

fn separable_data(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let a = ((i * 37) % 101) as f64 / 50.0 - 1.0;
        let b = ((i * 59) % 97) as f64 / 48.0 - 1.0;
        x.extend([a, b]);
        y.push(if 2.0 * a - b + 0.3 * ((i % 7) as f64 - 3.0) > 0.0 { 1.0 } else { 0.0 });
    }
    (x, y)
}

#[test]
fn regression_fit_through_the_abi() {
    let (x, y) = separable_data(300);
    for (link, method) in
        [(CepLink::Probit, CepMethod::Ep), (CepLink::Probit, CepMethod::Cep1), (CepLink::Logistic, CepMethod::Cep2)]
    {
        let mut fit = ptr::null_mut();
        let st = unsafe { cep_regression_fit(x.as_ptr(), y.as_ptr(), 300, 2, link, method, ptr::null(), &mut fit) };
        assert_eq!(st, CepStatus::Ok, "{}", last_error());
        assert_eq!(unsafe { cep_regression_dim(fit) }, 2);
        let mut means = [0.0; 2];
        let mut vars = [0.0; 2];
        assert_eq!(unsafe { cep_regression_posterior(fit, means.as_mut_ptr(), vars.as_mut_ptr(), 2) }, CepStatus::Ok);
        assert!(means[0] > 0.5 && means[1] < -0.2, "{means:?}");
        assert!(vars.iter().all(|v| *v > 0.0 && *v < 1.0));

        let mut p_pos = 0.0;
        let mut p_neg = 0.0;
        unsafe {
            assert_eq!(cep_regression_predict(fit, [1.0, -1.0].as_ptr(), 2, &mut p_pos), CepStatus::Ok);
            assert_eq!(cep_regression_predict(fit, [-1.0, 1.0].as_ptr(), 2, &mut p_neg), CepStatus::Ok);
        }
        assert!(p_pos > 0.9 && p_neg < 0.1);
        assert!((p_pos + p_neg - 1.0).abs() < 1e-9, "odd link gives symmetric predictions");

        let mut sweeps = 0;
        let mut converged = 0u8;
        assert_eq!(unsafe { cep_regression_report(fit, &mut sweeps, &mut converged) }, CepStatus::Ok);
        assert!(sweeps >= 1 && converged == 1);
        unsafe { cep_regression_free(fit) };
    }
}

#[test]
fn regression_rejects_bad_input() {
    let (x, mut y) = separable_data(10);
    let mut fit = ptr::null_mut();
    let st = unsafe {
        cep_regression_fit(ptr::null(), y.as_ptr(), 10, 2, CepLink::Probit, CepMethod::Ep, ptr::null(), &mut fit)
    };
    assert_eq!(st, CepStatus::NullPointer);
    y[3] = 0.5;
    let st = unsafe {
        cep_regression_fit(x.as_ptr(), y.as_ptr(), 10, 2, CepLink::Probit, CepMethod::Ep, ptr::null(), &mut fit)
    };
    assert_eq!(st, CepStatus::InvalidArgument);
    assert!(fit.is_null());
}

#[test]
fn options_are_honoured() {
    let (x, y) = separable_data(200);
    let mut opts = cep_fit_options_default();
    opts.max_sweeps = 1;
    opts.tol = 1e-300;
    opts.parallel = 1;
    let mut fit = ptr::null_mut();
    let st = unsafe {
        cep_regression_fit(x.as_ptr(), y.as_ptr(), 200, 2, CepLink::Probit, CepMethod::Cep1, &opts, &mut fit)
    };
    assert_eq!(st, CepStatus::Ok, "{}", last_error());
    let mut sweeps = 0;
    let mut converged = 1u8;
    unsafe { cep_regression_report(fit, &mut sweeps, &mut converged) };
    assert_eq!((sweeps, converged), (1, 0));
    unsafe { cep_regression_free(fit) };
}

fn low_rank_entries(dims: [usize; 3]) -> (Vec<usize>, Vec<f64>) {
    let factor = |k: usize, i: usize| 1.0 + 0.5 * (((i * (k + 3)) % 5) as f64 - 2.0) / 2.0;
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                if (i + 2 * j + 3 * k) % 3 != 1 {
                    idx.extend([i, j, k]);
                    vals.push(factor(0, i) * factor(1, j) * factor(2, k));
                }
            }
        }
    }
    (idx, vals)
}

#[test]
fn tensor_fit_through_the_abi() {
    let dims = [6usize, 5, 4];
    let (idx, vals) = low_rank_entries(dims);
    let n = vals.len();
    let mut opts = cep_fit_options_default();
    opts.max_sweeps = 60;
    let mut fit = ptr::null_mut();
    let st = unsafe {
        cep_tensor_fit(dims.as_ptr(), 3, idx.as_ptr(), vals.as_ptr(), n, CepValueKind::Continuous, 1, &opts, &mut fit)
    };
    assert_eq!(st, CepStatus::Ok, "{}", last_error());
    let mut sq = 0.0;
    for e in 0..n {
        let mut pred = 0.0;
        assert_eq!(unsafe { cep_tensor_predict(fit, idx[3 * e..].as_ptr(), 3, &mut pred) }, CepStatus::Ok);
        sq += (pred - vals[e]).powi(2);
    }
    let rmse = (sq / n as f64).sqrt();
    assert!(rmse < 0.1, "train rmse {rmse}");
    let mut tau = 0.0;
    assert_eq!(unsafe { cep_tensor_noise_precision(fit, &mut tau) }, CepStatus::Ok);
    assert!(tau > 10.0);
    let mut pred = 0.0;
    assert_eq!(unsafe { cep_tensor_predict(fit, [6usize, 0, 0].as_ptr(), 3, &mut pred) }, CepStatus::InvalidArgument);
    unsafe { cep_tensor_free(fit) };
}

#[test]
fn binary_tensor_has_no_noise_precision() {
    let dims = [5usize, 5, 5];
    let (idx, vals) = low_rank_entries(dims);
    let labels: Vec<f64> = vals.iter().map(|v| if *v > 1.0 { 1.0 } else { 0.0 }).collect();
    let mut fit = ptr::null_mut();
    let st = unsafe {
        cep_tensor_fit(
            dims.as_ptr(),
            3,
            idx.as_ptr(),
            labels.as_ptr(),
            labels.len(),
            CepValueKind::Binary,
            2,
            ptr::null(),
            &mut fit,
        )
    };
    assert_eq!(st, CepStatus::Ok, "{}", last_error());
    let mut p = 0.0;
    assert_eq!(unsafe { cep_tensor_predict(fit, idx.as_ptr(), 3, &mut p) }, CepStatus::Ok);
    assert!((0.0..=1.0).contains(&p));
    let mut tau = 0.0;
    assert_eq!(unsafe { cep_tensor_noise_precision(fit, &mut tau) }, CepStatus::Unsupported);
    unsafe { cep_tensor_free(fit) };
}
