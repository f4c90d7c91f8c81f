//! `bonlab`: generate benchmarks, train, evaluate, sweep (N, T) and run the
//! oracle checks.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure, 4 oracle check failure.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bonlab::bon::{bon_exact_dist, bon_sample, Benchmark, BonSpec, MajorityMode, Scorer};
use bonlab::checks::{
    check_distributions, check_lambda, check_rl_gradients, check_rlb_gradients, check_sft_gradients,
    check_unbiasedness,
};
use bonlab::coscale::{
    fit_power_law, fit_trend, fits_csv, optimal_nt, sweep, CoscaleGrid, PowerLawFit, SweepOptions, TrendForm,
};
use bonlab::formats::{benchmark_from_str, benchmark_to_string, to_json_lines};
use bonlab::numeric::fmt17;
use bonlab::oracle::{mc_compare, OracleRecord};
use bonlab::policies::{Policy, Temperature};
use bonlab::rng::stream;
use bonlab::synthbench::{generate_benchmark, verifier_error_rates};
use bonlab::training::train_with;
use bonlab::variational::solve_lambda;
use bonlab::BonError;

use config::{Config, ConfigError, MajorityChoice};
use manifest::OutputDir;

#[derive(Parser)]
#[command(name = "bonlab", version, about = "Best-of-N aware fine-tuning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file.
    config: PathBuf,
    /// Override a config value, e.g. `--set train.n_prime=32`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct Inputs {
    /// Benchmark file; generated from the config when absent.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Policy checkpoint; the generated initial policy when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark and its initial policy.
    Gen(Common),
    /// Train a policy.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Exact pass@N, BoN and majority tables over the eval grid.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Replaces `eval.scorer`.
        #[arg(long, value_parser = ["verifier", "env-reward"])]
        scorer: Option<String>,
    },
    /// (N, T) sweep with power-law fits, trend fits and the (T*, N*) map.
    Coscale {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Finite-difference and unbiasedness checks of every estimator.
    Gradcheck(Common),
    /// Distribution-equivalence checks and the lambda table.
    Oracle(Common),
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bon(#[from] BonError),
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("{0} oracle check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Bon(BonError::Spec(_) | BonError::Format { .. } | BonError::Io(_)) => 2,
            CliError::Bon(_) => 3,
            CliError::ChecksFailed(_) => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |err| CliError::Io {
        path: path.display().to_string(),
        err,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bonlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(c) => cmd_gen(&c),
        Command::Train { common, inputs } => cmd_train(&common, &inputs),
        Command::Eval { common, inputs, scorer } => cmd_eval(&common, &inputs, scorer.as_deref()),
        Command::Coscale { common, inputs } => cmd_coscale(&common, &inputs),
        Command::Gradcheck(c) => cmd_gradcheck(&c),
        Command::Oracle(c) => cmd_oracle(&c),
    }
}

fn load(common: &Common) -> Result<Config, CliError> {
    Ok(Config::load(&common.config, &common.overrides)?)
}

fn open_out(common: &Common, command: &str) -> Result<OutputDir, CliError> {
    OutputDir::create(&common.out, command).map_err(io_err(&common.out))
}

fn write(out: &mut OutputDir, name: &str, contents: &str) -> Result<(), CliError> {
    let path = out.path(name);
    out.write(name, contents).map_err(io_err(&path))
}

fn finish(out: OutputDir, cfg: &Config, dir: &Path) -> Result<(), CliError> {
    out.finish(cfg).map_err(io_err(dir))
}

/// Benchmark and policy from files, or generated from the config.
fn resolve_inputs(cfg: &Config, inputs: &Inputs, out: &mut OutputDir) -> Result<(Benchmark, Policy), CliError> {
    let generated = if inputs.bench.is_none() || inputs.policy.is_none() {
        Some(generate_benchmark(&cfg.bench_spec(), &cfg.verifier_spec())?)
    } else {
        None
    };
    let bench = match &inputs.bench {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            out.record_input("benchmark", text.as_bytes());
            benchmark_from_str(&text)?
        }
        None => generated.as_ref().map(|g| g.benchmark.clone()).expect("generated"),
    };
    let policy = match &inputs.policy {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            out.record_input("policy", text.as_bytes());
            Policy::from_checkpoint_str(&text)?
        }
        None => generated.map(|g| g.policy).expect("generated"),
    };
    bench.check_policy(&policy)?;
    Ok((bench, policy))
}

fn cmd_gen(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let mut out = open_out(common, "gen")?;
    let g = generate_benchmark(&cfg.bench_spec(), &cfg.verifier_spec())?;
    write(&mut out, "benchmark.txt", &benchmark_to_string(&g.benchmark))?;
    write(&mut out, "policy.ckpt", &g.policy.to_checkpoint_string())?;
    let rates = verifier_error_rates(&g.benchmark, &g.policy, Temperature::ONE, 0.5 * cfg.verifier.fidelity)?;
    let k = rates.len() as f64;
    let mean_target = g.targets.iter().sum::<f64>() / g.targets.len() as f64;
    out.set_summary("mean_target_p_fail", json!(mean_target));
    out.set_summary("mean_type1", json!(rates.iter().map(|r| r.type1).sum::<f64>() / k));
    out.set_summary("mean_type2", json!(rates.iter().map(|r| r.type2).sum::<f64>() / k));
    finish(out, &cfg, &common.out)
}

fn cmd_train(common: &Common, inputs: &Inputs) -> Result<(), CliError> {
    let cfg = load(common)?;
    let mut out = open_out(common, "train")?;
    let (bench, init) = resolve_inputs(&cfg, inputs, &mut out)?;
    let tc = cfg.train_config();
    tc.check_benchmark(&bench, &init)?;

    let mut checkpoints: Vec<(usize, String)> = Vec::new();
    let result = train_with(&tc, &bench, &init, &mut |step, policy| {
        checkpoints.push((step, policy.to_checkpoint_string()));
        Ok(())
    });
    for (step, text) in &checkpoints {
        write(&mut out, &format!("checkpoints/step_{step:06}.ckpt"), text)?;
    }
    match result {
        Ok(trained) => {
            write(&mut out, "trainlog.csv", &trained.log.to_csv())?;
            write(&mut out, "grad_diagnostics.jsonl", &to_json_lines(&trained.log.diagnostics)?)?;
            write(&mut out, "policy.ckpt", &trained.policy.to_checkpoint_string())?;
            let last = trained.log.final_record();
            out.set_summary("initial_pass_at_n", json!(trained.log.initial.pass_at_nprime));
            out.set_summary("final_pass_at_n", json!(last.pass_at_nprime));
            out.set_summary("initial_bon_acc", json!(trained.log.initial.bon_acc_at_nprime));
            out.set_summary("final_bon_acc", json!(last.bon_acc_at_nprime));
            finish(out, &cfg, &common.out)
        }
        Err(failure) => {
            if let Some(log) = &failure.log {
                write(&mut out, "trainlog.csv", &log.to_csv())?;
            }
            if let Some(p) = &failure.last_good {
                write(&mut out, "last_good.ckpt", &p.to_checkpoint_string())?;
            }
            out.set_summary("error", json!(failure.error.to_string()));
            finish(out, &cfg, &common.out)?;
            Err(CliError::Bon(failure.error))
        }
    }
}

fn majority_mode(cfg: &Config) -> Option<MajorityMode> {
    match cfg.eval.majority {
        MajorityChoice::None => None,
        MajorityChoice::Exact => Some(MajorityMode::ExactSmall),
        MajorityChoice::MonteCarlo => Some(MajorityMode::MonteCarlo {
            samples: cfg.eval.majority_samples,
        }),
    }
}

fn aggregate_csv(grid: &CoscaleGrid) -> String {
    let mut s = String::from("N,T,pass_at_n,bon_acc,majority_acc\n");
    for (ti, t) in grid.t_grid.iter().enumerate() {
        let (p, b, m) = (grid.aggregate_pass(ti), grid.aggregate_bon(ti), grid.aggregate_majority(ti));
        for (ni, n) in grid.n_grid.iter().enumerate() {
            s.push_str(&format!("{n},{},{},{},{}\n", fmt17(*t), fmt17(p[ni]), fmt17(b[ni]), fmt17(m[ni])));
        }
    }
    s
}

fn cmd_eval(common: &Common, inputs: &Inputs, scorer: Option<&str>) -> Result<(), CliError> {
    let mut cfg = load(common)?;
    if let Some(s) = scorer {
        cfg.eval.scorer = if s == "env-reward" { Scorer::EnvReward } else { Scorer::Verifier };
    }
    let mut out = open_out(common, "eval")?;
    let (bench, policy) = resolve_inputs(&cfg, inputs, &mut out)?;
    let opts = SweepOptions {
        scorer: cfg.eval.scorer,
        majority: majority_mode(&cfg),
        seed: cfg.rng.seed,
    };
    let grid = sweep(&policy, &bench, &cfg.eval.n_grid, &cfg.eval.t_grid, &opts)?;
    write(&mut out, "eval.csv", &grid.to_csv())?;
    write(&mut out, "eval_aggregate.csv", &aggregate_csv(&grid))?;
    out.set_summary("scorer", json!(cfg.eval.scorer.as_str()));
    finish(out, &cfg, &common.out)
}

fn cmd_coscale(common: &Common, inputs: &Inputs) -> Result<(), CliError> {
    let cfg = load(common)?;
    let mut out = open_out(common, "coscale")?;
    let (bench, policy) = resolve_inputs(&cfg, inputs, &mut out)?;
    let opts = SweepOptions {
        scorer: cfg.eval.scorer,
        majority: majority_mode(&cfg),
        seed: cfg.rng.seed,
    };
    let grid = sweep(&policy, &bench, &cfg.coscale.n_grid, &cfg.coscale.t_grid, &opts)?;
    let fits = (0..grid.t_grid.len())
        .map(|ti| fit_power_law(&grid, ti))
        .collect::<Result<Vec<PowerLawFit>, _>>()?;
    let map = optimal_nt(&grid);
    write(&mut out, "grid.csv", &grid.to_csv())?;
    write(&mut out, "grid_aggregate.csv", &aggregate_csv(&grid))?;
    write(&mut out, "fits.csv", &fits_csv(&fits))?;
    write(&mut out, "frequency.csv", &map.frequency_csv())?;

    // Trends over T of the pass@N exponent b(T) and the aggregate BoN argmax N*(T).
    let n_star: Vec<f64> = (0..grid.t_grid.len())
        .map(|ti| {
            let b = grid.aggregate_bon(ti);
            let i = (0..b.len()).fold(0, |best, i| if b[i] > b[best] { i } else { best });
            grid.n_grid[i] as f64
        })
        .collect();
    let exps: Vec<f64> = fits.iter().map(|f| f.b).collect();
    let mut trends = String::from("quantity,form,c,d,e,r2,T,observed,predicted,held_out\n");
    for (name, values, form) in [
        ("pass_exponent_b", &exps, TrendForm::PowerLaw),
        ("bon_optimal_n", &n_star, TrendForm::PowerLawPlusLinear),
    ] {
        let keep: Vec<usize> = (0..grid.t_grid.len())
            .filter(|&i| !cfg.coscale.holdout_t.contains(&grid.t_grid[i]))
            .collect();
        let ts: Vec<f64> = keep.iter().map(|&i| grid.t_grid[i]).collect();
        let vs: Vec<f64> = keep.iter().map(|&i| values[i]).collect();
        let form_name = match form {
            TrendForm::PowerLaw => "power-law",
            TrendForm::PowerLawPlusLinear => "power-law-plus-linear",
        };
        match fit_trend(&ts, &vs, form) {
            Ok(fit) => {
                for (i, t) in grid.t_grid.iter().enumerate() {
                    trends.push_str(&format!(
                        "{name},{form_name},{},{},{},{},{},{},{},{}\n",
                        fmt17(fit.c),
                        fmt17(fit.d),
                        fmt17(fit.e),
                        fmt17(fit.r_squared),
                        fmt17(*t),
                        fmt17(values[i]),
                        fmt17(fit.predict(*t)),
                        !keep.contains(&i)
                    ));
                }
            }
            Err(e) => out.set_summary(&format!("{name}_trend_error"), json!(e.to_string())),
        }
    }
    write(&mut out, "trends.csv", &trends)?;

    out.set_summary("pass_monotone", json!(grid.pass_monotone()));
    out.set_summary("tn_rank_correlation", json!(map.tn_rank_correlation()));
    finish(out, &cfg, &common.out)
}

fn report(out: &mut OutputDir, name: &str, records: &[OracleRecord]) -> Result<usize, CliError> {
    write(out, name, &to_json_lines(records)?)?;
    let failed = records.iter().filter(|r| !r.pass).count();
    out.set_summary("records", json!(records.len()));
    out.set_summary("failed", json!(failed));
    for r in records.iter().filter(|r| !r.pass).take(10) {
        eprintln!("FAIL {} seed {} {} = {:e} > {:e}", r.check, r.instance_seed, r.metric, r.value, r.bound);
    }
    Ok(failed)
}

fn check_seed(cfg: &Config, offset: u64) -> u64 {
    cfg.rng.seed.wrapping_mul(1_000_000).wrapping_add(offset)
}

fn cmd_gradcheck(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let mut out = open_out(common, "gradcheck")?;
    let mut records = check_rlb_gradients(check_seed(&cfg, 200_000), 100)?;
    records.extend(check_sft_gradients(check_seed(&cfg, 300_000), 100)?);
    records.extend(check_rl_gradients(check_seed(&cfg, 400_000), 50)?);
    records.extend(check_unbiasedness(check_seed(&cfg, 600_000), 10_000, 4)?);
    let failed = report(&mut out, "gradcheck.jsonl", &records)?;
    finish(out, &cfg, &common.out)?;
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

fn cmd_oracle(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let mut out = open_out(common, "oracle")?;
    let mut records = check_distributions(check_seed(&cfg, 100_000), 200)?;
    records.extend(check_lambda(1024, check_seed(&cfg, 500_000), 20)?);

    // Sampler against the exact distribution on the first tasks of the
    // configured benchmark.
    let g = generate_benchmark(&cfg.bench_spec(), &cfg.verifier_spec())?;
    for (x, task) in g.benchmark.tasks.iter().enumerate().take(4) {
        for n in [1u64, 4, 16] {
            let spec = BonSpec::new(n, Temperature::ONE, Scorer::Verifier)?;
            let exact = bon_exact_dist(&g.policy, x, task, &spec)?;
            let mut rng = stream(cfg.rng.seed, "oracle-mc", task.id, n);
            let mut err = None;
            let cmp = mc_compare(
                &exact,
                |r| match bon_sample(&g.policy, x, task, &spec, r) {
                    Ok(y) => y,
                    Err(e) => {
                        err.get_or_insert(e);
                        usize::MAX
                    }
                },
                100_000,
                &mut rng,
            )?;
            if let Some(e) = err {
                return Err(e.into());
            }
            records.push(OracleRecord::at_most("bon-sample-vs-exact", task.id, &format!("tv@N={n}"), cmp.tv, cmp.bound));
        }
    }

    let mut table = String::from("N,lambda,residual,source\n");
    let mut n = 1u64;
    while n <= 1024 {
        let l = solve_lambda(n)?;
        table.push_str(&format!("{n},{},{},{}\n", fmt17(l.value), fmt17(l.residual), l.source.as_str()));
        n *= 2;
    }
    write(&mut out, "lambda_table.csv", &table)?;
    let failed = report(&mut out, "oracle.jsonl", &records)?;
    finish(out, &cfg, &common.out)?;
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}
