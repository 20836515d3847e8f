use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use efzo::harness::{run_experiment, ExperimentConfig, Scenario, SweepAxis};
use efzo::Error;

/// Run tracking, coverage or synthetic-quadratic experiments and write
/// per-run and mean CSVs.
#[derive(Debug, Parser)]
#[command(name = "efzo", version)]
struct Cli {
    /// TOML experiment file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// tracking, coverage or synthetic-quadratic
    #[arg(long)]
    scenario: Option<String>,
    /// Method to run (repeatable), e.g. `qsgd:1+ef`, `topk:0.5`, `sgdm`,
    /// `fo:qsgd:1+ef`.
    #[arg(long = "compressor", value_name = "METHOD")]
    compressors: Vec<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "n-agents")]
    n_agents: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// `name=v1,v2,...`; repeat for a cartesian product. Join names with `/`
    /// to move several parameters together (`n/eta=5/0.5,10/0.71`).
    #[arg(long = "sweep", value_name = "SPEC")]
    sweeps: Vec<String>,
    /// Any other parameter as `name=value` (repeatable).
    #[arg(long = "set", value_name = "NAME=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-run position dumps.
    #[arg(long)]
    trajectories: bool,
    /// Run seeds one after another instead of concurrently.
    #[arg(long)]
    serial: bool,
}

fn build_config(cli: &Cli) -> efzo::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &cli.scenario {
        cfg.scenario = s.parse::<Scenario>()?;
        if cli.config.is_none() {
            match cfg.scenario {
                Scenario::Coverage => cfg.runs = 5,
                Scenario::SyntheticQuadratic => {
                    cfg.methods = vec![efzo::sim::Method::FedZo {
                        compressor: cfg.synthetic.compressor,
                        error_feedback: cfg.synthetic.error_feedback,
                    }]
                }
                Scenario::Tracking => {}
            }
        }
    }
    if !cli.compressors.is_empty() {
        cfg.set("method", &cli.compressors.join(";"))?;
    }
    let numeric = [
        ("lambda", cli.lambda.map(|v| v.to_string())),
        ("n", cli.n_agents.map(|v| v.to_string())),
        ("eta", cli.eta.map(|v| v.to_string())),
        ("mu", cli.mu.map(|v| v.to_string())),
        ("steps", cli.steps.map(|v| v.to_string())),
    ];
    for (name, value) in numeric {
        if let Some(v) = value {
            cfg.set(name, &v)?;
        }
    }
    for kv in &cli.sets {
        let (name, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set `{kv}` is not of the form name=value")))?;
        cfg.set(name.trim(), value.trim())?;
    }
    if let Some(r) = cli.runs {
        cfg.runs = r;
    }
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    for s in &cli.sweeps {
        cfg.sweep.push(SweepAxis::parse(s)?);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if cli.trajectories {
        cfg.trajectories = true;
    }
    if cli.serial {
        cfg.parallel = false;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|cfg| {
        let report = run_experiment(&cfg)?;
        Ok((cfg, report))
    });
    match result {
        Ok((cfg, report)) => {
            for p in &report.points {
                let a = &p.aggregate;
                let mut line = format!(
                    "{} {}: runs={} diverged={} collisions={:.2}±{:.2} final_error={:.4}±{:.4} converged={:.2}",
                    p.label,
                    p.method,
                    a.runs,
                    a.diverged,
                    a.total_collisions.0,
                    a.total_collisions.1,
                    a.final_error.0,
                    a.final_error.1,
                    a.converged_fraction
                );
                for (t, m, _) in &p.thresholds {
                    line.push_str(&format!(" within_{t}={m:.2}"));
                }
                if let Some(((m, h), b)) = p.synthetic {
                    line.push_str(&format!(" mean_grad_sq={m:.5}±{h:.5} bound={b:.5}"));
                }
                println!("{line}");
            }
            if let Some(out) = &cfg.out {
                println!("wrote {}", out.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
