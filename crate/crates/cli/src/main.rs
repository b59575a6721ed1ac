use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use persistent_idle::experiment::{run_experiment, ExperimentConfig};

/// Load-balancing sweeps: PI, PI-Split and the JSQ/JIQ baselines.
///
/// Settings come from the defaults (or `--smoke`), then `--config`, then
/// `PISIM_SEED` / `PISIM_OUT`, then the flags below.
#[derive(Debug, Parser)]
#[command(name = "pisim", version)]
struct Args {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Small preset: 10 servers, 10^4 slots, loads 0.5, 0.9, 0.99.
    #[arg(long)]
    smoke: bool,
    /// ratio_10_90, ratio_50_50, ratio_90_10 or custom.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// Slow servers (needed for custom).
    #[arg(long)]
    slow: Option<String>,
    #[arg(long)]
    fast_lo: Option<String>,
    #[arg(long)]
    fast_hi: Option<String>,
    /// Comma-separated families, e.g. `pi,jsq,jsq2,jsq11,jiq`.
    #[arg(long)]
    policies: Option<String>,
    /// off, on or both.
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated loads in (0, 1).
    #[arg(long)]
    loads: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Warmup as a fraction of the horizon.
    #[arg(long)]
    warmup: Option<String>,
    /// Also run the drift lab and write drift_report.json.
    #[arg(long)]
    drift_lab: bool,
    #[arg(long)]
    drift_reps: Option<String>,
    /// Write trace.csv for the first policy at the first load.
    #[arg(long)]
    trace: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None if args.smoke => ExperimentConfig::smoke(),
        None => ExperimentConfig::default(),
    };
    config.apply_env()?;
    let flags = [
        ("scenario", &args.scenario),
        ("n", &args.n),
        ("slow", &args.slow),
        ("fast_lo", &args.fast_lo),
        ("fast_hi", &args.fast_hi),
        ("policies", &args.policies),
        ("split", &args.split),
        ("loads", &args.loads),
        ("horizon", &args.horizon),
        ("seed", &args.seed),
        ("out", &args.out),
        ("warmup", &args.warmup),
        ("drift_reps", &args.drift_reps),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    config.drift_lab |= args.drift_lab;
    config.trace |= args.trace;
    config.validate()?;

    let out = run_experiment(&config)?;
    println!(
        "{:>6}  {:<16} {:>14} {:>10} {:>10}  unstable",
        "load", "policy", "avg queue", "msgs/slot", "mean jct"
    );
    for r in &out.rows {
        println!(
            "{:>6}  {:<16} {:>14.3} {:>10.4} {:>10.3}  {}",
            r.load, r.policy, r.avg_total_queue, r.messages_per_slot, r.jct_mean, r.unstable
        );
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
