use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqpide_core::{solve_closed_form, MarketParams, MarketSpec};

const E0: &str = "[market]\nr0 = 0.02\nr = 0.06\nsigma = 0.2\nmu = 1.0\nhorizon = 1.0\nx0 = 1.0\n";

/// Small grids and path counts so each run takes seconds.
const QUICK: &str = "\n[grid]\nnx = 21\nnz = 21\nnt = 40\n\n[ode]\nn_steps = 2000\nquad_steps = 2000\n\n[mc]\nn_paths = 20000\nn_steps = 100\n\n[verify]\ntimes = [0.25]\n";

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn eqpide(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqpide"))
        .args(&args[..1])
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(&args[1..])
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e0.toml", &format!("{E0}{QUICK}"));
    let out = dir.path().join("out");
    let o = eqpide(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["closed_form.csv", "ode.csv", "pide_theta.csv", "pide_theta.bin", "pide_g.csv", "pide_g.bin", "policy_trace.csv"] {
        let path = out.join(f);
        assert!(path.exists(), "{f} missing");
        if f.ends_with(".csv") {
            let text = std::fs::read_to_string(path).unwrap();
            assert!(text.starts_with("# schema_version=1\n# config_sha256="), "{f}");
        }
    }
}

#[test]
fn missing_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &E0.replace("horizon = 1.0\n", ""));
    let o = eqpide(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

#[test]
fn malformed_toml_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[market]\nr0 = 0.02\nr = \n");
    let o = eqpide(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn degenerate_market_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "flat.toml", &E0.replace("sigma = 0.2", "sigma = 0.0"));
    let o = eqpide(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("ellipticity"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e0.toml", E0);
    let o = Command::new(env!("CARGO_BIN_EXE_eqpide"))
        .args(["solve", "--config"])
        .arg(&cfg)
        .env("EQPIDE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_and_is_seed_robust() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e0.toml", &format!("{E0}{QUICK}"));
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("seed{seed}"));
        let o = eqpide(&["verify", "--seed", seed], &cfg, &out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let report = std::fs::read_to_string(out.join("verify_report.csv")).unwrap();
        assert!(report.contains("check,tolerance,measured,pass"));
        assert!(!report.contains(",false"));
    }
}

#[test]
fn scaled_strategy_file_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let p = MarketParams::new(MarketSpec::e0()).unwrap();
    let cf = solve_closed_form(&p, 1000).unwrap();
    let mut csv = String::from("s,alpha\n");
    for k in 0..=1000 {
        let s = k as f64 / 1000.0;
        csv.push_str(&format!("{s},{}\n", 1.5 * cf.alpha_star.eval(s)));
    }
    let strategy = write_config(dir.path(), "scaled.csv", &csv);
    let quick = QUICK.replace("n_paths = 20000", "n_paths = 100000").replace("times = [0.25]", "times = [0.5]");
    let body = format!("{E0}{quick}\n[strategy]\nfile = {:?}\n", strategy.to_string_lossy());
    let cfg = write_config(dir.path(), "scaled.toml", &body);
    let out = dir.path().join("out");
    let o = eqpide(&["verify"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("verify_report.csv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("spike one-sided") && l.ends_with(",false")), "{report}");
}

#[test]
fn compare_prints_caveat_and_exact_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e0.toml", &format!("{E0}{QUICK}"));
    let out = dir.path().join("out");
    let o = eqpide(&["compare"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(text.contains("# equilibrium does NOT dominate all rows (it is an equilibrium, not a pre-commitment optimum)"));
    let zero = text.lines().find(|l| l.starts_with("constant alpha=0,")).unwrap();
    let cols: Vec<f64> = zero.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
    let exact = -(0.02f64).exp();
    assert!((cols[0] - exact).abs() < 1e-12, "{zero}");
    assert_eq!(cols[1], 0.0);
}

#[test]
fn compare_equilibrium_row_matches_objective() {
    let dir = tempfile::tempdir().unwrap();
    let quick = QUICK.replace("n_paths = 20000", "n_paths = 100000").replace("n_steps = 100\n\n[verify]", "n_steps = 500\n\n[verify]");
    let cfg = write_config(dir.path(), "e0.toml", &format!("{E0}{quick}"));
    let out = dir.path().join("out");
    assert_eq!(eqpide(&["compare"], &cfg, &out).status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let row = text.lines().find(|l| l.starts_with("equilibrium,")).unwrap();
    let cols: Vec<f64> = row.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
    let p = MarketParams::new(MarketSpec::e0()).unwrap();
    let exact = solve_closed_form(&p, 2000).unwrap().equilibrium_objective(&p, 0.0, 1.0).unwrap();
    assert!((cols[0] - exact).abs() <= 3.0 * cols[1], "{row} vs {exact}");
}
