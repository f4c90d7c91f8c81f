//! The ten acceptance criteria. Each test prints one PASS/FAIL line to the
//! raw stderr handle so the line shows up even when output is captured.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bonlab::checks::{
    check_distributions, check_lambda, check_rl_gradients, check_rlb_gradients, check_sft_gradients,
    check_unbiasedness,
};
use bonlab::coscale::{fit_power_law_points, fit_trend, interior_argmax, TrendForm};
use bonlab::oracle::OracleRecord;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("\ncriterion {n:>2} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn worst(records: &[OracleRecord]) -> (usize, f64) {
    let failed = records.iter().filter(|r| !r.pass).count();
    let worst = records.iter().map(|r| r.value).fold(0.0, f64::max);
    (failed, worst)
}

fn oracle_criterion(n: u32, name: &str, limit: Duration, run: impl FnOnce() -> Vec<OracleRecord>) {
    let start = Instant::now();
    let records = run();
    let elapsed = start.elapsed();
    let (failed, worst) = worst(&records);
    let pass = !records.is_empty() && failed == 0 && elapsed < limit;
    report(
        n,
        name,
        pass,
        &format!("{} records, {failed} failed, worst metric {worst:.3e}, {elapsed:.2?} (limit {limit:?})", records.len()),
    );
    assert!(pass);
}

fn cfg_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(name)
}

fn bonlab(args: &[&str]) -> std::process::ExitStatus {
    Command::new(env!("CARGO_BIN_EXE_bonlab"))
        .args(args)
        .status()
        .expect("bonlab runs")
}

fn summary(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["summary"].clone()
}

#[test]
fn criterion_01_distribution_agreement() {
    oracle_criterion(1, "three-way distribution agreement", Duration::from_secs(10), || {
        check_distributions(1000, 200).unwrap()
    });
}

#[test]
fn criterion_02_rlb_gradients() {
    oracle_criterion(2, "BoN-RLB and BoN-RLB(P) gradients", Duration::from_secs(30), || {
        check_rlb_gradients(2000, 100).unwrap()
    });
}

#[test]
fn criterion_03_sft_gradients() {
    oracle_criterion(3, "BoN-SFT gradient", Duration::from_secs(60), || check_sft_gradients(3000, 100).unwrap());
}

#[test]
fn criterion_04_rl_gradients() {
    oracle_criterion(4, "BoN-RL gradient and baseline shift", Duration::from_secs(60), || {
        check_rl_gradients(4000, 50).unwrap()
    });
}

#[test]
fn criterion_05_lambda() {
    oracle_criterion(5, "lambda solver and calibration", Duration::from_secs(60), || {
        check_lambda(1024, 5000, 20).unwrap()
    });
}

#[test]
fn criterion_06_unbiasedness() {
    oracle_criterion(6, "sampled-mode unbiasedness", Duration::from_secs(300), || {
        check_unbiasedness(6000, 10_000, 4).unwrap()
    });
}

#[test]
fn criterion_07_training_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = cfg_path("default.cfg");
    let cfg = cfg.to_str().unwrap();
    let start = Instant::now();

    let gen = tmp.path().join("gen");
    assert!(bonlab(&["gen", cfg, "--out", gen.to_str().unwrap()]).success());
    let p_fail = summary(&gen)["mean_target_p_fail"].as_f64().unwrap();

    let runs: [(&str, &[&str]); 4] = [
        ("bon-rlb", &[]),
        ("bon-rl-s", &[]),
        ("star", &[]),
        ("rl-s", &["--set", "train.n_prime=1", "--set", "train.eval_n=8"]),
    ];
    let mut finals = BTreeMap::new();
    let mut initial = f64::NAN;
    for (method, extra) in runs {
        let out = tmp.path().join(method);
        let set = format!("train.method={method}");
        let mut args = vec!["train", cfg, "--out", out.to_str().unwrap(), "--set", &set];
        args.extend_from_slice(extra);
        assert!(bonlab(&args).success(), "{method} failed");
        let s = summary(&out);
        initial = s["initial_pass_at_n"].as_f64().unwrap();
        finals.insert(method, s["final_pass_at_n"].as_f64().unwrap());
    }
    let elapsed = start.elapsed();
    let gain = finals["bon-rlb"] - initial;
    let ordered = finals["bon-rl-s"].min(finals["bon-rlb"]) > finals["star"] && finals["star"] > finals["rl-s"];
    let pass = gain >= 0.15 && ordered && (p_fail - 0.8).abs() <= 0.05 && elapsed < Duration::from_secs(120);
    report(
        7,
        "training efficacy and ordering",
        pass,
        &format!(
            "mean target P_fail {p_fail:.3}, pass@8 {initial:.4} -> bon-rlb {:.4} (gain {gain:.4}), bon-rl-s {:.4}, star {:.4}, rl-s {:.4}, {elapsed:.2?}",
            finals["bon-rlb"], finals["bon-rl-s"], finals["star"], finals["rl-s"]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_coscaling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = cfg_path("coscale.cfg");
    let cfg = cfg.to_str().unwrap();
    let start = Instant::now();
    let gen = tmp.path().join("gen");
    let cos = tmp.path().join("coscale");
    assert!(bonlab(&["gen", cfg, "--out", gen.to_str().unwrap()]).success());
    assert!(bonlab(&["coscale", cfg, "--out", cos.to_str().unwrap(), "--set", "eval.majority=none"]).success());
    let elapsed = start.elapsed();

    let type2 = summary(&gen)["mean_type2"].as_f64().unwrap();
    let s = summary(&cos);
    let monotone = s["pass_monotone"].as_bool().unwrap();
    let rho = s["tn_rank_correlation"].as_f64().unwrap_or(f64::NAN);
    let text = std::fs::read_to_string(cos.join("grid_aggregate.csv")).unwrap();
    let bon: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[1].parse::<f64>().unwrap() == 1.5)
        .map(|f| f[3].parse().unwrap())
        .collect();
    let interior = bon.len() == 9 && interior_argmax(&bon);
    let pass = monotone && interior && rho > 0.0 && (0.05..=0.2).contains(&type2) && elapsed < Duration::from_secs(60);
    report(
        8,
        "co-scaling phenomenon",
        pass,
        &format!(
            "mean type2 {type2:.3}, pass@N monotone {monotone}, BoN at T=1.5 {:?} interior argmax {interior}, rank corr(T*, N*) {rho:.3}, {elapsed:.2?}",
            bon.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_fit_round_trips() {
    let pass_vals = [(-2.0f64).exp(), (-1.0f64).exp(), (-0.5f64).exp()];
    let fit = fit_power_law_points(1.0, &[1, 4, 16], &pass_vals).unwrap();
    let law_ok = (fit.a + 2.0).abs() <= 1e-9 && (fit.b + 0.5).abs() <= 1e-9 && fit.r_squared >= 1.0 - 1e-12;

    let (c, d) = (1.7, -0.8);
    let ts = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5];
    let vs: Vec<f64> = ts.iter().map(|t: &f64| c * t.powf(d)).collect();
    let trend = fit_trend(&ts, &vs, TrendForm::PowerLaw).unwrap();
    let held = 2.0f64;
    let truth = c * held.powf(d);
    let extrap = ((trend.predict(held) - truth) / truth).abs();
    let trend_ok = (trend.c - c).abs() <= 1e-6 && (trend.d - d).abs() <= 1e-6 && extrap <= 1e-4;

    let pass = law_ok && trend_ok;
    report(
        9,
        "fit round trips",
        pass,
        &format!(
            "power law a {:.12} b {:.12} R2 {:.15}; trend c {:.9} d {:.9}, held-out rel. err. {extrap:.2e}",
            fit.a, fit.b, fit.r_squared, trend.c, trend.d
        ),
    );
    assert!(pass);
}

fn pipeline(root: &Path, cfg: &str) {
    let gen = root.join("gen");
    let train = root.join("train");
    let eval = root.join("eval");
    assert!(bonlab(&["gen", cfg, "--out", gen.to_str().unwrap()]).success());
    let bench = gen.join("benchmark.txt");
    let init = gen.join("policy.ckpt");
    assert!(bonlab(&[
        "train",
        cfg,
        "--bench",
        bench.to_str().unwrap(),
        "--policy",
        init.to_str().unwrap(),
        "--out",
        train.to_str().unwrap(),
        "--set",
        "train.steps=100",
    ])
    .success());
    let trained = train.join("policy.ckpt");
    assert!(bonlab(&[
        "eval",
        cfg,
        "--bench",
        bench.to_str().unwrap(),
        "--policy",
        trained.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ])
    .success());
}

/// Every file under `dir`, with manifest timestamps blanked.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = std::fs::read(&p).unwrap();
            if p.file_name().unwrap() == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v["started_unix_ms"] = serde_json::Value::Null;
                v["finished_unix_ms"] = serde_json::Value::Null;
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

#[test]
fn criterion_10_determinism_and_gradcheck() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = cfg_path("default.cfg");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a, cfg);
    pipeline(&b, cfg);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<&PathBuf> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    let identical = sa.len() == sb.len() && differing.is_empty();

    let status = bonlab(&["gradcheck", cfg, "--out", tmp.path().join("gc").to_str().unwrap()]);
    let pass = identical && status.code() == Some(0);
    report(
        10,
        "pipeline determinism and gradcheck",
        pass,
        &format!("{} files compared, differing {:?}, gradcheck exit {:?}", sa.len(), differing, status.code()),
    );
    assert!(pass);
}
