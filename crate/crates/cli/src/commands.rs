use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gas_storage::analysis::{self, PriceSeries, MONTH_NAMES};
use gas_storage::config::ExperimentConfig;
use gas_storage::harness::{
    self, parse_grid, test_seeds, write_atomic, write_evaluation, ConstantPolicy, MetricSummary, MetricsReport, Policy,
    PolicyCheckpoint, SweepPoint, TrainOutcome, UniformPolicy,
};
use gas_storage::plot::{bar_chart, line_chart, Line};
use gas_storage::seasonality::{fit_coefficients, read_monthly_series};
use gas_storage::{EpisodeTrace, Error, Result};
use serde::Serialize;

use crate::report;
use crate::{AnalyzeArgs, EvaluateArgs, FitSeasonalArgs, SweepArgs, TrainArgs};

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Timestamps and the invoking command live only in this sidecar so the
/// other artifacts stay byte-for-byte reproducible.
fn write_meta(dir: &Path, started: u64) -> Result<()> {
    #[derive(Serialize)]
    struct Meta {
        tool_version: &'static str,
        args: Vec<String>,
        started_unix: u64,
        finished_unix: u64,
    }
    let meta = Meta {
        tool_version: env!("CARGO_PKG_VERSION"),
        args: std::env::args().collect(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_atomic(&dir.join("meta.json"), json.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    write_atomic(path, json.as_bytes())
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p, sets),
        None => ExperimentConfig::from_toml_str("", sets),
    }
}

pub fn train(args: TrainArgs, root: &Path) -> Result<()> {
    let started = unix_now();
    if let Some(dir) = args.resume {
        let outcome = harness::resume(&dir)?;
        return finish_training(&dir, &outcome, started);
    }
    let mut sets = args.sets;
    if let Some(s) = args.seed {
        sets.push(format!("run.seed={s}"));
    }
    if let Some(n) = args.steps {
        sets.push(format!("run.training_steps={n}"));
    }
    let cfg = load_config(args.config.as_deref(), &sets)?;
    let spec = cfg.run_spec()?;
    let name = format!("{}-seed{}", spec.run.tag, spec.run.seed);
    let dir = args
        .out
        .or_else(|| cfg.output_dir.as_ref().map(|d| d.join(&name)))
        .unwrap_or_else(|| root.join(&name));

    let mut copy = cfg.clone();
    copy.seasonal_file = Some(PathBuf::from("seasonal.toml"));
    copy.output_dir = None;
    write_atomic(&dir.join("config.toml"), copy.to_toml_string().as_bytes())?;
    write_atomic(
        &dir.join("seasonal.toml"),
        spec.env.seasonal.to_toml_string().as_bytes(),
    )?;

    eprintln!(
        "training `{}` for {} steps into {}",
        spec.run.tag,
        spec.run.training_steps,
        dir.display()
    );
    let outcome = harness::train(spec, Some(&dir))?;
    finish_training(&dir, &outcome, started)
}

fn finish_training(dir: &Path, outcome: &TrainOutcome, started: u64) -> Result<()> {
    let steps: Vec<f64> = outcome.log.iter().map(|r| r.step as f64).collect();
    let reward: Vec<f64> = outcome.log.iter().map(|r| r.eval_reward).collect();
    let band: Vec<f64> = outcome.log.iter().map(|r| analysis::Z95 * r.eval_reward_se).collect();
    let success: Vec<f64> = outcome.log.iter().map(|r| r.market_success).collect();
    write_atomic(
        &dir.join("training_reward.svg"),
        line_chart(
            "Evaluation reward",
            "training step",
            "episode reward",
            &[Line::new("mean, 95% CI", steps.clone(), reward).with_band(band)],
        )
        .as_bytes(),
    )?;
    write_atomic(
        &dir.join("training_success.svg"),
        line_chart(
            "Market success",
            "training step",
            "success rate",
            &[Line::new("success", steps, success)],
        )
        .as_bytes(),
    )?;
    write_meta(dir, started)?;
    let best = outcome.best_checkpoint();
    println!("run directory: {}", dir.display());
    println!(
        "best checkpoint: step {} of {}",
        best.step,
        outcome.log.last().map_or(0, |r| r.step)
    );
    print!("{}", report::metrics_table(&outcome.best_evaluation.report));
    Ok(())
}

enum Chosen {
    Checkpoint(Box<PolicyCheckpoint>),
    Constant(ConstantPolicy),
    Uniform(UniformPolicy),
}

impl Chosen {
    fn policy(&self) -> &dyn Policy {
        match self {
            Chosen::Checkpoint(c) => c.as_ref(),
            Chosen::Constant(c) => c,
            Chosen::Uniform(u) => u,
        }
    }
}

pub fn evaluate(args: EvaluateArgs, root: &Path) -> Result<()> {
    let started = unix_now();
    let (chosen, mut env, label) = match &args.checkpoint {
        Some(path) => {
            let ck = PolicyCheckpoint::load(path)?;
            let label = format!("checkpoint {} (step {})", path.display(), ck.step);
            let env = ck.env.clone();
            (Chosen::Checkpoint(Box::new(ck)), env, label)
        }
        None => {
            let env = load_config(args.config.as_deref(), &args.sets)?.env_config()?;
            let (lo, hi) = env.market.log_action_bounds();
            if args.uniform {
                (
                    Chosen::Uniform(UniformPolicy { lo, hi }),
                    env,
                    "uniform random prices".to_string(),
                )
            } else {
                let p = args.constant_price.expect("clap enforces a policy choice");
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::config("constant-price", "must be positive"));
                }
                (
                    Chosen::Constant(ConstantPolicy { log_price: p.ln() }),
                    env,
                    format!("constant price {p}"),
                )
            }
        }
    };
    if let Some(s) = args.sigma_s {
        env.market.sigma_s = s;
        env.validate()?;
    }
    if args.episodes == 0 {
        return Err(Error::config("episodes", "must be positive"));
    }
    let eval = harness::evaluate(chosen.policy(), &env, &test_seeds(args.seed, args.episodes))?;
    let dir = args.out.unwrap_or_else(|| root.join("evaluate"));
    write_evaluation(&dir, &eval)?;
    write_meta(&dir, started)?;
    println!("policy: {label}");
    println!("output: {}", dir.display());
    print!("{}", report::metrics_table(&eval.report));
    Ok(())
}

type Pick = fn(&MetricsReport) -> MetricSummary;

fn sweep_chart(points: &[SweepPoint], title: &str, pick: Pick) -> String {
    let x: Vec<f64> = points.iter().map(|p| p.sigma_s).collect();
    let line = |name: &str, get: &dyn Fn(&SweepPoint) -> MetricSummary| {
        Line::new(name, x.clone(), points.iter().map(|p| get(p).mean).collect())
            .with_band(points.iter().map(|p| get(p).ci95).collect())
    };
    line_chart(
        title,
        "supply shock volatility",
        title,
        &[
            line("baseline", &|p| pick(&p.baseline)),
            line("regulated", &|p| pick(&p.regulated)),
        ],
    )
}

pub fn sweep(args: SweepArgs, root: &Path) -> Result<()> {
    let started = unix_now();
    let baseline = PolicyCheckpoint::load(&args.baseline)?;
    let regulated = PolicyCheckpoint::load(&args.regulated)?;
    let grid = parse_grid(&args.sigma_s)?;
    let points = harness::sweep_sigma_s(&baseline, &regulated, &grid, args.episodes, args.seed)?;
    let dir = args.out.unwrap_or_else(|| root.join("sweep"));
    write_json(&dir.join("sweep.json"), &points)?;
    write_atomic(&dir.join("sweep.csv"), report::sweep_csv(&points)?.as_bytes())?;
    let charts: [(&str, &str, Pick); 4] = [
        ("market_success.svg", "market success", |r| r.market_success),
        ("terminal_bank.svg", "terminal bank", |r| r.terminal_bank),
        ("volatility.svg", "squared log-price change", |r| r.volatility),
        ("price_level.svg", "mean price", |r| r.price_level),
    ];
    for (file, title, pick) in charts {
        write_atomic(&dir.join(file), sweep_chart(&points, title, pick).as_bytes())?;
    }
    write_meta(&dir, started)?;
    println!("output: {}", dir.display());
    print!("{}", report::sweep_table(&points));
    Ok(())
}

/// Expand directories into the CSV files they contain, in name order.
fn trace_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            if found.is_empty() {
                return Err(Error::Data(format!("{}: no trace CSVs in directory", p.display())));
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn analyze(args: AnalyzeArgs, root: &Path) -> Result<()> {
    let started = unix_now();
    let mut series = Vec::new();
    for path in trace_files(&args.traces)? {
        let path = &path;
        let trace = EpisodeTrace::load_csv(path)?;
        let label = path.display().to_string();
        series.push(PriceSeries::from_trace(label, &trace)?);
    }
    let external = args
        .external
        .as_deref()
        .map(PriceSeries::load_external_csv)
        .transpose()?;
    let rep = analysis::analyze(&series, external.as_ref())?;
    let dir = args.out.unwrap_or_else(|| root.join("analysis"));
    write_json(&dir.join("analysis.json"), &rep)?;

    let months: Vec<String> = MONTH_NAMES.iter().map(|s| s.to_string()).collect();
    let mut bars = vec![("simulated".to_string(), rep.simulated.seasonality.coefficients.clone())];
    let mut lines = vec![Line::new(
        "simulated",
        rep.simulated.density_grid.clone(),
        rep.simulated.density.clone(),
    )];
    for s in rep.averaged.iter().chain(rep.external.iter()) {
        bars.push((s.label.clone(), s.seasonality.coefficients.clone()));
        lines.push(Line::new(s.label.clone(), s.density_grid.clone(), s.density.clone()));
    }
    write_atomic(
        &dir.join("seasonality.svg"),
        bar_chart("Monthly effect on log-price change", "coefficient", &months, &bars).as_bytes(),
    )?;
    write_atomic(
        &dir.join("density.svg"),
        line_chart("Density of log-price changes", "log-price change", "density", &lines).as_bytes(),
    )?;
    write_meta(&dir, started)?;
    println!("output: {}", dir.display());
    print!("{}", report::analysis_table(&rep));
    Ok(())
}

pub fn fit_seasonal(args: FitSeasonalArgs) -> Result<()> {
    let points = read_monthly_series(&args.input)?;
    let coeffs = fit_coefficients(&points, &args.harmonics)?;
    let text = coeffs.to_toml_string();
    match &args.output {
        Some(out) => {
            write_atomic(out, text.as_bytes())?;
            let rmse =
                (points.iter().map(|&(t, v)| (coeffs.value(t) - v).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
            println!(
                "fitted {} harmonics to {} points, rms residual {rmse:.3e}",
                args.harmonics.len(),
                points.len()
            );
            println!("written to {}", out.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
