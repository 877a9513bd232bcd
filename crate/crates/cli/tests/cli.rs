use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

fn drpi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drpi")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)
}

fn golden_args<'a>(outcomes: &'a str, covariates: &'a str) -> Vec<&'a str> {
    vec!["analyze", "--outcomes", outcomes, "--covariates", covariates, "--target", "a", "--quiet"]
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn help_and_version_exit_zero() {
    let out = drpi(&["--version"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    assert_eq!(code(&drpi(&["--help"])), 0);
    assert_eq!(code(&drpi(&["analyze", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let out = drpi(&["analyze", "--covariates", "w.csv", "--target", "a"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--outcomes"));
    assert_eq!(code(&drpi(&[])), 1);
    assert_eq!(code(&drpi(&["analyze", "--no-such-flag"])), 1);
    assert_eq!(code(&drpi(&["simulate", "--model", "5", "--reps", "1"])), 1);
    assert_eq!(code(&drpi(&["toy-power", "--rho", "0:1.5:0.5", "--reps", "2"])), 1);

    let (y, w) = (golden("outcomes.csv"), golden("covariates.csv"));
    let (y, w) = (y.to_str().unwrap(), w.to_str().unwrap());
    let contradictory: [&[&str]; 6] = [
        &["--method", "full"],
        &["--imputer", "external"],
        &["--external-nu", "nu.csv"],
        &["--method", "complete", "--cross-fit", "2"],
        &["--alpha", "1.5"],
        &["--imputer", "bogus"],
    ];
    for extra in contradictory {
        let mut args = golden_args(y, w);
        args.extend_from_slice(extra);
        assert_eq!(code(&drpi(&args)), 1, "{extra:?}");
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let w = golden("covariates.csv");
    let missing = dir.path().join("absent.csv");
    let out = drpi(&golden_args(missing.to_str().unwrap(), w.to_str().unwrap()));
    assert_eq!(code(&out), 2);

    let y = golden("outcomes.csv");
    let mut args = golden_args(y.to_str().unwrap(), w.to_str().unwrap());
    args[6] = "b";
    assert_eq!(code(&drpi(&args)), 2);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "p1,p2\n1,x\n2,3\n").unwrap();
    let w2 = dir.path().join("w.csv");
    std::fs::write(&w2, "a\n0\n1\n").unwrap();
    assert_eq!(code(&drpi(&golden_args(bad.to_str().unwrap(), w2.to_str().unwrap()))), 2);
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    std::fs::write(&cov, "a,b\n1,2\n2,1\n").unwrap();
    let out = drpi(&["simulate", "--p", "2", "--n", "20", "--reps", "1", "--cov-csv", cov.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn golden_output_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("results.csv");
    let (y, w) = (golden("outcomes.csv"), golden("covariates.csv"));
    let mut args = golden_args(y.to_str().unwrap(), w.to_str().unwrap());
    args.extend_from_slice(&["--method", "dr_w", "--imputer", "lowdim", "--out", out_path.to_str().unwrap()]);
    let out = drpi(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let produced = std::fs::read(&out_path).unwrap();
    let shipped = std::fs::read(golden("expected_dr_w_lowdim.csv")).unwrap();
    assert_eq!(produced, shipped);
    let sums = std::fs::read_to_string(golden("SHA256SUMS")).unwrap();
    let recorded = sums.split_whitespace().next().unwrap();
    let digest: String = Sha256::digest(&produced).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, recorded);
    assert_eq!(read_csv(&out_path).1.len(), 10);
}

/// With a single binary covariate and an intercept, the logistic fit is the
/// per-group observed fraction, the low-dimensional imputation is the
/// per-group observed mean, and the HC0 variance of the group difference is
/// `sum_g sum_{i in g} r_i^2 / n_g^2`.
fn longhand_dr_w(y: &[Vec<Option<f64>>], a: &[bool]) -> Vec<(f64, f64, f64)> {
    let p = y[0].len();
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..p)
        .map(|j| {
            let mut mean_tilde = [0.0; 2];
            let mut tilde = vec![0.0; a.len()];
            let mut counts = [0usize; 2];
            for g in 0..2 {
                let rows: Vec<usize> = (0..a.len()).filter(|&i| usize::from(a[i]) == g).collect();
                let obs: Vec<f64> = rows.iter().filter_map(|&i| y[i][j]).collect();
                let delta = obs.len() as f64 / rows.len() as f64;
                let mu = obs.iter().sum::<f64>() / obs.len() as f64;
                for &i in &rows {
                    tilde[i] = match y[i][j] {
                        Some(v) => mu + (v - mu) / delta,
                        None => mu,
                    };
                }
                counts[g] = rows.len();
                mean_tilde[g] = rows.iter().map(|&i| tilde[i]).sum::<f64>() / rows.len() as f64;
            }
            let beta = mean_tilde[1] - mean_tilde[0];
            let var: f64 = (0..a.len())
                .map(|i| {
                    let g = usize::from(a[i]);
                    (tilde[i] - mean_tilde[g]).powi(2) / (counts[g] * counts[g]) as f64
                })
                .sum();
            let se = var.sqrt();
            let pval = 2.0 * (1.0 - normal.cdf((beta / se).abs()));
            (beta, se, pval)
        })
        .collect()
}

#[test]
fn golden_file_matches_longhand_oracle() {
    let (_, y_rows) = read_csv(&golden("outcomes.csv"));
    let (_, w_rows) = read_csv(&golden("covariates.csv"));
    let y: Vec<Vec<Option<f64>>> =
        y_rows.iter().map(|r| r[1..].iter().map(|c| c.parse().ok()).collect()).collect();
    let a: Vec<bool> = w_rows.iter().map(|r| r[1] == "1").collect();
    let oracle = longhand_dr_w(&y, &a);

    // textbook step-up q-values
    let m = oracle.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &k| oracle[i].2.total_cmp(&oracle[k].2));
    let mut q = vec![0.0; m];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = order[rank..]
            .iter()
            .enumerate()
            .map(|(s, &k)| oracle[k].2 * m as f64 / (rank + s + 1) as f64)
            .fold(1.0, f64::min);
    }

    let (header, rows) = read_csv(&golden("expected_dr_w_lowdim.csv"));
    assert_eq!(header, ["peptide_id", "method", "beta", "se", "z", "p_value", "q_value", "selected"]);
    for (j, row) in rows.iter().enumerate() {
        let num = |k: usize| row[k].parse::<f64>().unwrap();
        let (beta, se, pval) = oracle[j];
        assert_eq!(row[0], format!("pep{:02}", j + 1));
        assert!((num(2) - beta).abs() < 1e-9, "beta {j}");
        // the propensity solver stops at a 1e-8 step, which reaches the
        // weights; beta does not depend on them in this design
        assert!((num(3) - se).abs() < 1e-7, "se {j}: {} vs {se}", num(3));
        assert!((num(4) - beta / se).abs() < 1e-7, "z {j}");
        assert!((num(5) - pval).abs() < 1e-7, "p {j}");
        assert!((num(6) - q[j]).abs() < 1e-7, "q {j}");
        assert_eq!(row[7], (q[j] <= 0.05).to_string());
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "outcomes = {:?}\ncovariates = {:?}\ntarget = \"a\"\nmethod = \"complete\"\nalpha = 0.9\nquiet = true\n",
            golden("outcomes.csv"),
            golden("covariates.csv")
        ),
    )
    .unwrap();
    let from_file = dir.path().join("a.csv");
    let out = drpi(&["analyze", "--config", cfg.to_str().unwrap(), "--out", from_file.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&from_file);
    assert!(rows.iter().all(|r| r[1] == "complete"));
    assert!(rows.iter().filter(|r| r[7] == "true").count() > 1);

    let flagged = dir.path().join("b.csv");
    let out = drpi(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--alpha",
        "0.05",
        "--method",
        "dr_w",
        "--imputer",
        "lowdim",
        "--out",
        flagged.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&flagged).unwrap(), std::fs::read(golden("expected_dr_w_lowdim.csv")).unwrap());

    std::fs::write(&cfg, "alpah = 0.1\n").unwrap();
    assert_eq!(code(&drpi(&["analyze", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn results_go_to_stdout_and_volcano_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let volcano = dir.path().join("v.csv");
    let (y, w) = (golden("outcomes.csv"), golden("covariates.csv"));
    let mut args = golden_args(y.to_str().unwrap(), w.to_str().unwrap());
    args.extend_from_slice(&["--imputer", "knn", "--imputer-k", "3", "--volcano", volcano.to_str().unwrap()]);
    let out = drpi(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 11);
    assert!(stdout.lines().nth(1).unwrap().starts_with("pep01,dr_uw,"));
    let (header, rows) = read_csv(&volcano);
    assert_eq!(header, ["peptide_id", "beta", "neg_log10_q", "selected", "capped"]);
    assert_eq!(rows.len(), 10);
}

#[test]
fn external_imputation_and_cross_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (y, w) = (golden("outcomes.csv"), golden("covariates.csv"));
    let nu = dir.path().join("nu.csv");
    let header = std::fs::read_to_string(&y).unwrap().lines().next().unwrap().to_string();
    let body: String = (1..=20).map(|i| format!("s{i:02},{}\n", ["0.5"; 10].join(","))).collect();
    std::fs::write(&nu, format!("{header}\n{body}")).unwrap();
    let mut args = golden_args(y.to_str().unwrap(), w.to_str().unwrap());
    args.extend_from_slice(&["--imputer", "external", "--external-nu", nu.to_str().unwrap()]);
    assert_eq!(code(&drpi(&args)), 0);

    let mut args = golden_args(y.to_str().unwrap(), w.to_str().unwrap());
    args.extend_from_slice(&["--method", "dr_w", "--cross-fit", "2", "--imputer", "lowdim"]);
    let out = drpi(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulation_output_ignores_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let bench = dir.path().join(format!("bench{threads}.csv"));
        let power = dir.path().join(format!("power{threads}.csv"));
        let out = drpi(&[
            "simulate", "--n", "60", "--p", "30", "--reps", "4", "--imputer", "lowdim", "--threads", threads, "--quiet",
            "--out", bench.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let out = drpi(&["toy-power", "--rho", "0:1:0.5", "--reps", "50", "--threads", threads, "--out", power.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        outputs.push((std::fs::read(&bench).unwrap(), std::fs::read(&power).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(text.starts_with("method,rho,metric,value,mc_se\nW,0,power,"));
}
