//! End-to-end runs of the `rare-sampler` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rare-sampler"));
    c.env("RARE_SAMPLER_THREADS", "1");
    c
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_config(dir: &Path, body: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, body).unwrap();
    bin().arg("run").arg(&cfg).args(extra).output().unwrap()
}

fn small_synthetic(method: &str) -> String {
    format!(
        "[pool]\nkind = \"synthetic\"\nsize = 1500\n\n[fidelity]\ncosts = [1.0, 0.1]\n\n[method]\nname = \"{method}\"\nclusters = 2\ntrain_iters = 40\n\n[budget]\ninitial = 6\nper_batch = 3\nbatches = 2\n\n[is]\ntrials = 50\n"
    )
}

fn rv(report: &str) -> f64 {
    let row = report.lines().nth(1).expect("one data row");
    row.split(',').nth(2).unwrap().parse().unwrap()
}

#[test]
fn splitting_bound_reference_values() {
    let o = bin().args(["splitting-bound", "--p-gamma", "0.01", "--delta", "0.1", "--target-rv", "0.00851"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("levels K = 43") && s.contains("particles N = 561") && s.contains("simulations >= 2973"), "{s}");

    let o = bin().args(["splitting-bound", "--p-gamma", "0.01", "--delta", "0.1", "--budget", "2296"]).output().unwrap();
    assert!(stdout(&o).contains("100 RV >= 1.10"), "{}", stdout(&o));

    let o = bin().args(["splitting-bound", "--p-gamma", "0.01", "--delta", "0.1", "--target-rv", "1.0"]).output().unwrap();
    assert!(stdout(&o).contains("particles N = 4"), "{}", stdout(&o));

    let o = bin().args(["splitting-bound", "--p-gamma", "1.5", "--delta", "0.1", "--budget", "10"]).output().unwrap();
    assert!(!o.status.success());
    let o = bin().args(["splitting-bound", "--p-gamma", "0.01", "--delta", "0.1"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn invalid_config_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[pool]\nkind = \"synthetic\"\n\n[fidelity]\ncosts = [0.9, 0.1]\n\n[method]\nname = \"bams\"\n";
    let o = run_config(dir.path(), body, &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("run.toml:5:") && stderr(&o).contains("exactly 1"), "{}", stderr(&o));

    let o = run_config(dir.path(), "[pool]\nkind = \"synthetic\"\n[method]\nname = \"bams\"\n[fidelity]\ncosts = [1.0, 1.2]\n", &[]);
    assert!(stderr(&o).contains("run.toml:6:"), "{}", stderr(&o));
}

#[test]
fn synthetic_bams_run_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_synthetic("bams");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run_config(dir.path(), &body, &["--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut files: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    for expected in [
        "hyperparams_batch1.txt",
        "hyperparams_batch2.txt",
        "log.csv",
        "rate_report.csv",
        "retention_recall.csv",
        "scores.csv",
        "scores_batch1.csv",
        "scores_batch2.csv",
        "selected_batch1.csv",
        "selected_batch2.csv",
    ] {
        assert!(files.iter().any(|f| f == expected), "missing {expected} in {files:?}");
    }
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between identical runs");
    }
    let report = fs::read_to_string(a.join("rate_report.csv")).unwrap();
    assert!(report.starts_with("method,p_hat_mean,rv,recall,se_rv,se_recall\nbams,"), "{report}");
    assert!(fs::read_to_string(a.join("selected_batch2.csv")).unwrap().starts_with("point_index,level,deltaJ,cost\n"));
}

#[test]
fn mc_variance_exceeds_bams() {
    let dir = tempfile::tempdir().unwrap();
    let mut rvs = Vec::new();
    for method in ["bams", "mc"] {
        let out = dir.path().join(method);
        let o = run_config(dir.path(), &small_synthetic(method), &["--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        rvs.push(rv(&fs::read_to_string(out.join("rate_report.csv")).unwrap()));
    }
    assert!(rvs[1] > rvs[0], "mc rv {} vs bams rv {}", rvs[1], rvs[0]);
}

#[test]
fn baselines_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["bas", "mc-gp", "mcm-gp", "ce"] {
        let out = dir.path().join(method);
        let o = run_config(dir.path(), &small_synthetic(method), &["--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        assert!(out.join("log.csv").exists() && out.join("rate_report.csv").exists(), "{method}");
        let log = fs::read_to_string(out.join("log.csv")).unwrap();
        if method == "bas" || method == "mc-gp" || method == "ce" {
            assert!(log.lines().skip(1).all(|l| l.split(',').nth(1) == Some("0")), "{method} used a cheap level");
        }
    }
}

#[test]
fn csv_pool_with_table_oracle_and_score_report() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    let table = dir.path().join("table.csv");
    let o = bin()
        .args(["gen-synthetic", "--size", "800", "--seed", "3", "--out"])
        .arg(&pool)
        .arg("--table")
        .arg(&table)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&pool).unwrap().starts_with("index,x0,x1,truth_f_level0\n"));
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 1 + 2 * 800);

    let body = "[pool]\nkind = \"csv\"\npath = \"pool.csv\"\nthreshold = 0.56\n\n[fidelity]\ncosts = [1.0, 0.1]\n\n[method]\nname = \"bams\"\nclusters = 2\ntrain_iters = 30\n\n[budget]\ninitial = 5\nper_batch = 3\nbatches = 2\n\n[is]\ntrials = 20\n\n[oracle]\nkind = \"csv\"\npath = \"table.csv\"\n";
    let out = dir.path().join("csvrun");
    let o = run_config(dir.path(), body, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let rep = dir.path().join("rep");
    let o = bin()
        .arg("score-report")
        .arg("--pool")
        .arg(&pool)
        .arg("--scores")
        .arg(out.join("scores.csv"))
        .args(["--threshold", "0.56", "--trials", "20", "--out"])
        .arg(&rep)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(rep.join("rate_report.csv")).unwrap().contains("\nexternal-scores,"));
    assert!(fs::read_to_string(rep.join("retention_recall.csv")).unwrap().starts_with("retention_multiple,recall\n"));

    // the same scores fed back through the external-scores method
    let body = format!(
        "[pool]\nkind = \"csv\"\npath = \"pool.csv\"\nthreshold = 0.56\n[method]\nname = \"external-scores\"\nscores = \"{}\"\n[is]\ntrials = 20\n[oracle]\nkind = \"csv\"\npath = \"table.csv\"\n",
        out.join("scores.csv").display()
    );
    let o = run_config(dir.path(), &body, &["--out", dir.path().join("ext").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[cfg(unix)]
#[test]
fn external_oracle_protocol_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    let o = bin().args(["gen-synthetic", "--size", "1500", "--out"]).arg(&pool).output().unwrap();
    assert!(o.status.success());
    // answers f = point_index / 1500 - 0.5 at every level
    let script = dir.path().join("sim.sh");
    fs::write(&script, "while read cmd i l; do echo \"OK $(awk -v i=$i 'BEGIN{print i/1500-0.5}')\"; done\n").unwrap();
    let base = "[pool]\nkind = \"csv\"\npath = \"pool.csv\"\nthreshold = 0.56\n[fidelity]\ncosts = [1.0, 0.1]\n[method]\nname = \"mcm-gp\"\nclusters = 2\ntrain_iters = 10\n[budget]\ninitial = 4\nper_batch = 2\nbatches = 2\n[is]\ntrials = 10\n[oracle]\nkind = \"external\"\ncommand = \"sh\"\n";
    let body = format!("{base}args = [\"{}\"]\n", script.display());
    let out = dir.path().join("ext");
    let o = run_config(dir.path(), &body, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("rate_report.csv").exists());
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    for line in log.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let i: f64 = f[0].parse().unwrap();
        let v: f64 = f[2].parse().unwrap();
        assert!((v - (i / 1500.0 - 0.5)).abs() < 1e-5, "{line}");
    }

    // a threshold nothing falls below still runs, without the rate files
    let body_none = format!("{}args = [\"{}\"]\n", base.replace("0.56", "-5"), script.display());
    let none = dir.path().join("none");
    let o = run_config(dir.path(), &body_none, &["--out", none.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(none.join("log.csv").exists() && !none.join("rate_report.csv").exists());

    let failing = dir.path().join("fail.sh");
    fs::write(&failing, "read cmd i l; echo \"ERR boom\"\n").unwrap();
    let body = format!("{base}args = [\"{}\"]\n", failing.display());
    let o = run_config(dir.path(), &body, &["--out", dir.path().join("f").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("boom") && err.contains("point"), "{err}");
}
