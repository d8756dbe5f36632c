use std::path::Path;
use std::process::{Command, Output};

fn cep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cep")).args(args).env("CEP_THREADS", "0").output().expect("spawn cep")
}

fn ok(args: &[&str]) -> Output {
    let out = cep(args);
    assert!(out.status.success(), "cep {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn metrics(path: &Path) -> Vec<(String, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("metric,value"));
    lines
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&["simulate", "--model", "logistic", "--n", "200", "--features", "gmm5", "--seed", "5", "--out", p(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (c, d) = (dir.path().join("c.coo"), dir.path().join("d.coo"));
    for out in [&c, &d] {
        ok(&["simulate", "--model", "cp-binary", "--dims", "6,5,4", "--seed", "2", "--out", p(out)]);
    }
    assert_eq!(std::fs::read(&c).unwrap(), std::fs::read(&d).unwrap());
}

#[test]
fn regression_fit_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, fit, scores) =
        (dir.path().join("train.csv"), dir.path().join("test.csv"), dir.path().join("fit"), dir.path().join("m.csv"));
    ok(&["simulate", "--model", "probit", "--n", "600", "--d", "2", "--out", p(&train), "--test-out", p(&test)]);
    ok(&["fit", "--model", "probit", "--method", "ep", "--data", p(&train), "--out", p(&fit)]);
    let trace = std::fs::read_to_string(fit.join("trace.csv")).unwrap();
    assert!(trace.starts_with("sweep,max_change,skipped,assembly_residual,wall_time_s\n"));
    ok(&["eval", "--model", "probit", "--fit", p(&fit), "--test", p(&test), "--train", p(&train), "--out", p(&scores)]);
    let m = metrics(&scores);
    let get = |k: &str| m.iter().find(|(n, _)| n == k).unwrap().1;
    assert!(get("auc") > 0.7);
    assert!(get("test_loglik") < 0.0);
    assert!((0.0..0.05).contains(&get("kl_to_oracle")));
}

#[test]
fn perfect_predictor_scores_auc_one() {
    let dir = tempfile::tempdir().unwrap();
    let fit = dir.path().join("fit");
    std::fs::create_dir(&fit).unwrap();
    std::fs::write(fit.join("posterior.csv"), "kind,mode,index,component,mean,var\nweight,0,0,0,50,1e-12\n").unwrap();
    let test = dir.path().join("test.csv");
    std::fs::write(&test, "x0,y\n-1,0\n-0.5,0\n0.2,1\n3,1\n-2,0\n").unwrap();
    let out = dir.path().join("m.csv");
    ok(&["eval", "--model", "logistic", "--fit", p(&fit), "--test", p(&test), "--out", p(&out)]);
    let m = metrics(&out);
    assert!(m.contains(&("auc".to_string(), 1.0)), "{m:?}");
}

#[test]
fn tensor_models_reject_ep() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("t.coo");
    ok(&["simulate", "--model", "cp-continuous", "--dims", "5,5,5", "--out", p(&data)]);
    let out = cep(&[
        "fit",
        "--model",
        "cp-continuous",
        "--method",
        "ep",
        "--data",
        p(&data),
        "--out",
        p(&dir.path().join("f")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("intractable"));
}

#[test]
fn missing_input_and_bad_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = cep(&["fit", "--model", "probit", "--data", "/nonexistent/x.csv", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = cep(&["stream", "--model", "cp-binary", "--data", "x", "--batch-size", "7", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tensor_fit_eval_and_stream() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, fit, scores, stream) = (
        dir.path().join("train.coo"),
        dir.path().join("test.coo"),
        dir.path().join("fit"),
        dir.path().join("scores.csv"),
        dir.path().join("stream"),
    );
    let shape = ["--dims", "10,10,10", "--rank", "2"];
    ok(&[
        &["simulate", "--model", "cp-continuous", "--density", "0.5", "--out", p(&train), "--test-out", p(&test)],
        &shape[..],
    ]
    .concat());
    ok(&[
        &["fit", "--model", "cp-continuous", "--data", p(&train), "--max-sweeps", "50", "--out", p(&fit)],
        &shape[2..],
    ]
    .concat());
    assert!(fit.join("covariance.csv").exists());
    ok(&["eval", "--model", "cp-continuous", "--fit", p(&fit), "--test", p(&test), "--out", p(&scores)]);
    let rmse = metrics(&scores)[0].1;
    assert!(rmse < 0.15, "rmse {rmse}");

    // one batch holds the whole stream
    ok(&[
        "stream",
        "--model",
        "cp-continuous",
        "--data",
        p(&train),
        "--test",
        p(&test),
        "--batch-size",
        "10000",
        "--out",
        p(&stream),
    ]);
    let log = std::fs::read_to_string(stream.join("stream.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "{log}");
    let s = std::fs::read_to_string(stream.join("scores.csv")).unwrap();
    assert!(s.starts_with("eval_set,metric,value\n0,rmse,"));
    assert!(s.contains("\nmean,rmse,") && s.contains("\nstd_dev,rmse,"));
}
