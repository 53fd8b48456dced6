use std::path::Path;
use std::process::{Command, Output};

fn flatlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Rows of a CSV as field vectors, header dropped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMALL: [&str; 8] = [
    "--set",
    "n=24",
    "--set",
    "k=24",
    "--set",
    "record_every=100",
    "--set",
    "lambda_every=100",
];

fn small_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--out",
        out.to_str().unwrap(),
        "--iters",
        "300",
        "--threads",
        "1",
    ];
    args.extend(SMALL);
    args.extend(extra);
    flatlab(&args)
}

#[test]
fn train_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = small_train(&out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in [
        "trace.csv",
        "function.csv",
        "params.json",
        "manifest.json",
        "data.csv",
        "data.json",
        "f0.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let function = read(&out.join("function.csv"));
    assert_eq!(function.lines().next(), Some("x,f,f0"));
    assert_eq!(function.lines().count(), 1002);
    assert!(function.lines().nth(1).unwrap().starts_with("-2,"));
    assert!(function.lines().last().unwrap().starts_with("2,"));
    let trace = rows(&out.join("trace.csv"));
    assert_eq!(trace.len(), 4);
    assert!(trace.iter().all(|r| r.len() == 12 && !r[5].is_empty()));

    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["rng"], "chacha8");
    assert_eq!(manifest["config"]["n"], 24);
    assert!(manifest["version"]
        .as_str()
        .unwrap()
        .starts_with(env!("CARGO_PKG_VERSION")));

    let certs = rows(&out.join("certificates.csv"));
    assert!(!certs.is_empty());
    assert!(
        certs.iter().filter(|r| !r[4].is_empty()).all(|r| r[7] == "true"),
        "{certs:?}"
    );
}

#[test]
fn zero_iterations_keep_only_the_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--out", out.to_str().unwrap(), "--iters", "0"];
    args.extend(SMALL);
    assert!(flatlab(&args).status.success());
    let trace = rows(&out.join("trace.csv"));
    assert_eq!(trace.len(), 1);
    assert_eq!(trace[0][0], "0");
}

#[test]
fn huge_step_diverges_and_truncates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = small_train(&out, &["--eta", "1e9"]);
    assert!(res.status.success());
    let trace = rows(&out.join("trace.csv"));
    assert!(trace.len() < 4);
    assert_eq!(trace.last().unwrap()[11], "true");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(small_train(&out, &["--set", "width=3"]).status.code(), Some(2));
    assert_eq!(small_train(&out, &["--set", "eta=fast"]).status.code(), Some(2));
    assert_eq!(
        small_train(&out, &["--set", "k=3", "--set", "init=confident"])
            .status
            .code(),
        Some(2)
    );
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n": 10, "neurons": 5}"#).unwrap();
    assert_eq!(
        flatlab(&["train", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("nothing");
    let res = flatlab(&[
        "verify",
        "--run",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "n = 12\nk = 12\niters = 50\nrecord_every = 25\nlambda_every = 25\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let res = flatlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--iters",
        "25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["iters"], 25);
    assert_eq!(manifest["config"]["n"], 12);
    assert_eq!(rows(&out.join("trace.csv")).len(), 2);
}

#[test]
fn sweep_cells_and_manifest_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--out",
        out.to_str().unwrap(),
        "--iters",
        "200",
        "--set",
        "etas=0.01,0.8",
        "--set",
        "ns=24",
        "--set",
        "seeds=3",
    ];
    args.extend(SMALL);
    let res = flatlab(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|r| r[3] == "true"));

    let cell = out.join("cells").join("eta0.8_n24_seed3");
    let again = dir.path().join("again");
    let res = flatlab(&[
        "train",
        "--config",
        cell.join("manifest.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    for f in ["trace.csv", "function.csv", "data.csv"] {
        assert_eq!(read(&cell.join(f)), read(&again.join(f)), "{f} differs");
    }
}

#[test]
fn verify_trained_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(small_train(&run, &[]).status.success());
    let out = dir.path().join("verify");
    let res = flatlab(&[
        "verify",
        "--run",
        run.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "rho=0",
        "--set",
        "grid_points=101",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let certs = rows(&out.join("certificates.csv"));
    // four bias rows plus two tvb rows per gamma
    assert_eq!(certs.len(), 12);
    assert!(certs.iter().filter(|r| !r[4].is_empty()).all(|r| r[7] == "true"));
    let weights = read(&out.join("weights_gamma1_zeta0.25.csv"));
    assert_eq!(weights.lines().next(), Some("x,h_emp,hbar_emp,hbar_asym,weighted"));
    assert_eq!(weights.lines().count(), 102);
    // rho = 0 keeps the convex hull of the region |hat| <= 0.5
    let restricted = rows(&out.join("restricted.csv"));
    assert_eq!((restricted[0][2].as_str(), restricted[0][3].as_str()), ("-1.5", "1.5"));
}

#[test]
fn verify_marks_empty_uncertain_sets() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat");
    let res = flatlab(&["flat", "--out", flat.to_str().unwrap(), "--set", "gamma_maxes=10"]);
    assert!(res.status.success());
    // a run directory around the interpolant: every margin is 10, far above the gammas
    std::fs::copy(flat.join("interpolant_gamma10.json"), flat.join("params.json")).unwrap();
    std::fs::write(
        flat.join("f0.json"),
        r#"{"domain":[-1.0,1.0],"breakpoints":[-1.0,1.0],"values":[0.0,0.0]}"#,
    )
    .unwrap();
    let out = dir.path().join("verify");
    let res = flatlab(&[
        "verify",
        "--run",
        flat.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "grid_points=11",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let certs = rows(&out.join("certificates.csv"));
    let bias: Vec<_> = certs.iter().filter(|r| r[1].is_empty()).collect();
    assert_eq!(bias.len(), 4);
    assert!(bias.iter().all(|r| r[3] == "0" && r[4].is_empty()));
}

#[test]
fn flat_curvature_decreases_under_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flat");
    assert!(flatlab(&["flat", "--out", out.to_str().unwrap()]).status.success());
    let table = rows(&out.join("flat.csv"));
    let col = |j: usize| table.iter().map(|r| r[j].parse::<f64>().unwrap()).collect::<Vec<_>>();
    let (gammas, lambdas, bounds) = (col(0), col(1), col(4));
    assert_eq!(gammas, vec![10.0, 20.0, 40.0]);
    assert!(lambdas.windows(2).all(|w| w[1] < w[0]));
    assert!(lambdas.iter().zip(&bounds).all(|(l, b)| l <= b));
}
