use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use kprox::checks::{gradient_suite, GradCheckOptions, CHECK_NAMES};
use kprox::data::SplitSpec;
use kprox::demo::{bimodal_target, demo_inits, reference_sample, run_bimodal_demo, BimodalDemoConfig};
use kprox::metrics::{kde_1d, linspace, MetricReport};
use kprox::sampler::write_trajectory_csv;
use kprox::train::{fit, override_field, write_logs_csv, Ablation, FitOutcome, Splits, TrainConfig};
use serde::Serialize;

use crate::run::{load_dataset, resolve, train_config, CommonArgs, RunDir, TrainArgs};

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// `epsilon` (sampler step), `batch_size`, `encoder_lr` or `particles`.
    #[arg(long)]
    pub param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Perturb the analytic gradient of one check; the run must then fail.
    #[arg(long, value_name = "CHECK")]
    pub corrupt: Option<String>,
    #[arg(long, default_value = "runs/gradcheck")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct DemoSummary {
    init: &'static str,
    initial_w2: f64,
    final_w2: f64,
    mass_negative: f64,
    mass_positive: f64,
}

pub fn demo_posterior(args: &DemoArgs) -> Result<bool> {
    let cfg: BimodalDemoConfig = resolve(BimodalDemoConfig::default(), &args.common)?;
    let mut dir = RunDir::create(&args.common.out, "demo-posterior")?;
    let reference = reference_sample(&cfg)?;
    let target = bimodal_target(&cfg)?;
    let grid = linspace(-4.0, 4.0, 401);
    let mut summary = Vec::new();
    for (name, init) in demo_inits() {
        let demo = run_bimodal_demo(&cfg, init, &reference)?;
        dir.write(&format!("trajectory_{name}.csv"), |mut w| write_trajectory_csv(&mut w, &demo.run.trajectory))?;
        dir.write(&format!("w2_{name}.csv"), |w| {
            writeln!(w, "step,w2")?;
            demo.w2_curve.iter().try_for_each(|(s, d)| writeln!(w, "{s},{d}"))
        })?;
        let first = demo.run.trajectory.first().map(|s| s.particles.as_slice());
        let initial = kde_1d(first.unwrap_or_default(), &grid, None)?;
        let last = kde_1d(demo.run.final_ensemble.particles().as_slice(), &grid, None)?;
        dir.write(&format!("kde_{name}.csv"), |w| {
            writeln!(w, "z,initial,final,target")?;
            for (k, z) in grid.iter().enumerate() {
                writeln!(w, "{z},{},{},{}", initial[k], last[k], target.log_pdf(*z).exp())?;
            }
            Ok(())
        })?;
        println!(
            "{name:>8}: W2 {:.4} -> {:.4}, masses {:.3}/{:.3}",
            demo.initial_w2(),
            demo.final_w2(),
            demo.final_masses.0,
            demo.final_masses.1
        );
        summary.push(DemoSummary {
            init: name,
            initial_w2: demo.initial_w2(),
            final_w2: demo.final_w2(),
            mass_negative: demo.final_masses.0,
            mass_positive: demo.final_masses.1,
        });
    }
    dir.write_json("metrics.json", &summary)?;
    dir.finish(cfg.seed, &cfg)?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunMetrics {
    ablation: Ablation,
    test_standardized: MetricReport,
    test_original: MetricReport,
    best_valid_sse: f64,
    best_epoch: usize,
    transport_initial: Option<f64>,
    transport_final: Option<f64>,
}

impl RunMetrics {
    fn of(cfg: &TrainConfig, out: &FitOutcome) -> Self {
        Self {
            ablation: cfg.ablation,
            test_standardized: out.test_standardized.clone(),
            test_original: out.test_original.clone(),
            best_valid_sse: out.best_valid_sse,
            best_epoch: out.best_epoch,
            transport_initial: out.transport_initial,
            transport_final: out.transport_final,
        }
    }
}

fn splits_for(args: &TrainArgs, cfg: &TrainConfig) -> Result<Splits> {
    let ds = load_dataset(&args.dataset, cfg.seed, args.toy_rows)?;
    Ok(Splits::chronological(&ds, &SplitSpec::default())?)
}

fn report_line(label: &str, m: &MetricReport) {
    println!("{label}: R2 {:.4}  RMSE {:.4e}  MAE {:.4e}  (n={})", m.r2, m.rmse, m.mae, m.n);
}

pub fn train(args: &TrainArgs) -> Result<bool> {
    let cfg = train_config(args)?;
    let splits = splits_for(args, &cfg)?;
    let mut dir = RunDir::create(&args.common.out, "train")?;
    let out = fit(&splits, &cfg)?;
    dir.write_json("bundle.json", &out.bundle)?;
    dir.write("logs/train.csv", |mut w| write_logs_csv(&mut w, &out.logs))?;
    dir.write_json("metrics.json", &RunMetrics::of(&cfg, &out))?;
    report_line("test (original units)", &out.test_original);
    dir.finish(cfg.seed, &cfg)?;
    Ok(true)
}

/// Config field behind each sweepable name.
fn sweep_field(param: &str) -> Result<&'static str> {
    Ok(match param {
        "epsilon" => "kprox_epsilon",
        "batch_size" => "batch_size",
        "encoder_lr" => "encoder_lr",
        "particles" => "particles",
        other => bail!("cannot sweep `{other}` (expected epsilon, batch_size, encoder_lr or particles)"),
    })
}

#[derive(Serialize)]
struct SweepEntry {
    param: String,
    value: String,
    error: Option<String>,
    metrics: Option<RunMetrics>,
}

pub fn sweep(args: &SweepArgs) -> Result<bool> {
    let field = sweep_field(&args.param)?;
    let base = train_config(&args.train)?;
    let splits = splits_for(&args.train, &base)?;
    let mut dir = RunDir::create(&args.train.common.out, "sweep")?;
    let mut entries = Vec::with_capacity(args.values.len());
    for (i, value) in args.values.iter().enumerate() {
        let mut cfg = base.clone();
        let run = override_field(&mut cfg, field, value).and_then(|()| fit(&splits, &cfg));
        let entry = match run {
            Ok(out) => {
                dir.write(&format!("logs/sweep_{i}.csv"), |mut w| write_logs_csv(&mut w, &out.logs))?;
                report_line(&format!("{}={value}", args.param), &out.test_original);
                SweepEntry {
                    param: args.param.clone(),
                    value: value.clone(),
                    error: None,
                    metrics: Some(RunMetrics::of(&cfg, &out)),
                }
            }
            Err(e) => {
                eprintln!("{}={value} failed: {e}", args.param);
                SweepEntry {
                    param: args.param.clone(),
                    value: value.clone(),
                    error: Some(e.to_string()),
                    metrics: None,
                }
            }
        };
        entries.push(entry);
    }
    dir.write("sweep.csv", |w| {
        writeln!(w, "param,value,status,r2,rmse,mae,best_epoch")?;
        for e in &entries {
            match &e.metrics {
                Some(m) => {
                    let t = &m.test_original;
                    writeln!(w, "{},{},ok,{},{},{},{}", e.param, e.value, t.r2, t.rmse, t.mae, m.best_epoch)?
                }
                None => writeln!(w, "{},{},error,,,,", e.param, e.value)?,
            }
        }
        Ok(())
    })?;
    dir.write_json("metrics.json", &entries)?;
    dir.finish(base.seed, &base)?;
    Ok(entries.iter().all(|e| e.error.is_none()))
}

pub fn ablate(args: &AblateArgs) -> Result<bool> {
    let base = train_config(&args.train)?;
    let splits = splits_for(&args.train, &base)?;
    let mut dir = RunDir::create(&args.train.common.out, "ablate")?;
    let mut rows = Vec::new();
    for ablation in [Ablation::Full, Ablation::NoKprox, Ablation::NoWass] {
        let cfg = TrainConfig { ablation, ..base.clone() };
        let out = fit(&splits, &cfg)?;
        let name = serde_json::to_value(ablation)?;
        let name = name.as_str().unwrap_or("ablation").to_string();
        dir.write(&format!("logs/{name}.csv"), |mut w| write_logs_csv(&mut w, &out.logs))?;
        report_line(&name, &out.test_original);
        rows.push((name, RunMetrics::of(&cfg, &out)));
    }
    let full = rows[0].1.test_original.clone();
    dir.write("ablation.csv", |w| {
        writeln!(w, "ablation,r2,rmse,mae,r2_drop_pct,rmse_increase_pct")?;
        for (name, m) in &rows {
            let t = &m.test_original;
            let r2_drop = 100.0 * (full.r2 - t.r2) / full.r2.abs();
            let rmse_up = 100.0 * (t.rmse - full.rmse) / full.rmse;
            writeln!(w, "{name},{},{},{},{r2_drop},{rmse_up}", t.r2, t.rmse, t.mae)?;
        }
        Ok(())
    })?;
    let metrics: Vec<&RunMetrics> = rows.iter().map(|r| &r.1).collect();
    dir.write_json("metrics.json", &metrics)?;
    dir.finish(base.seed, &base)?;
    Ok(true)
}

#[derive(Serialize)]
struct GradcheckConfig<'a> {
    seed: u64,
    instances: usize,
    corrupt: Option<&'a str>,
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    if let Some(name) = &args.corrupt {
        if !CHECK_NAMES.contains(&name.as_str()) {
            bail!("unknown check `{name}`; known checks: {}", CHECK_NAMES.join(", "));
        }
    }
    let opts = GradCheckOptions {
        seed: args.seed,
        instances: args.instances,
        corrupt: args.corrupt.clone(),
    };
    let mut dir = RunDir::create(&args.out, "gradcheck")?;
    let checks = gradient_suite(&opts)?;
    println!("{:<24} {:>9} {:>14} {:>10}  result", "check", "instances", "max rel err", "tolerance");
    for c in &checks {
        let verdict = if c.passed { "pass" } else { "FAIL" };
        println!(
            "{:<24} {:>9} {:>14.3e} {:>10.0e}  {verdict}",
            c.name, c.instances, c.max_relative_error, c.tolerance
        );
    }
    dir.write("gradcheck.csv", |w| {
        writeln!(w, "check,instances,max_relative_error,tolerance,passed")?;
        checks.iter().try_for_each(|c| {
            writeln!(w, "{},{},{},{},{}", c.name, c.instances, c.max_relative_error, c.tolerance, c.passed)
        })
    })?;
    dir.write_json("metrics.json", &checks)?;
    let cfg = GradcheckConfig {
        seed: args.seed,
        instances: args.instances,
        corrupt: args.corrupt.as_deref(),
    };
    dir.finish(args.seed, &cfg)?;
    Ok(checks.iter().all(|c| c.passed))
}
