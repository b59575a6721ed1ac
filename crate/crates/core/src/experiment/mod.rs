//! Load sweeps over a policy matrix, written out as CSV and JSON.
//!
//! Output files in the configured directory:
//!
//! * `summary.csv`: one row per (load, policy) with the columns of
//!   [`SummaryRow`], in that order.
//! * `jct_<policy>_<load>.csv` for loads 0.5 and 0.99 when swept, with
//!   columns `jct,cdf`.
//! * `trace.csv` when `trace` is set: the per-slot trace of the first
//!   policy at the first load (`slot,batch,q_1..q_n,total_q,messages,is_sampling_event`).
//! * `drift_report.json` when `drift_lab` is set.

mod config;

pub use config::{default_loads, parse_list, split_outside_parens, ConfigError, ExperimentConfig, Scenario, SplitMode};

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{compute_constants, desk_scenarios, run_drift_lab, DriftConstants, DriftLabReport};
use crate::dist::DistSpec;
use crate::engine::{run, RunOptions};
use crate::metrics::SummaryStats;
use crate::model::{ModelError, ModelParams};
use crate::policy::{Policy, PolicySpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Slow servers have capacity 1; fast servers are uniform on
/// `fast_lo..=fast_hi`. Arrivals are Poisson with mean `load · Σμ`,
/// censored at `10 · Σμ`.
pub fn build_scenario(config: &ExperimentConfig, load: f64) -> Result<ModelParams, ExperimentError> {
    config.validate()?;
    let slow = config.slow_count()?;
    let fast = DistSpec::uniform_int(config.fast_lo, config.fast_hi)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut caps = vec![DistSpec::deterministic(1); slow];
    caps.extend(std::iter::repeat_n(fast, config.n - slow));
    let total: f64 = caps.iter().map(|c| c.moments().mean).sum();
    let cap = (10.0 * total).ceil() as u64;
    let arrival = DistSpec::truncated_poisson(load * total, cap)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(ModelParams::new(arrival, caps)?)
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub n: usize,
    pub load: f64,
    pub policy: String,
    pub slug: String,
    pub splittable: bool,
    pub lambda: f64,
    pub avg_total_queue: f64,
    pub messages_per_slot: f64,
    pub jct_mean: f64,
    pub completed: u64,
    pub arrived: u64,
    /// Jobs that arrived over the horizon. Equal across policies of one
    /// load because they share the arrival stream.
    pub arrivals_total: u64,
    pub first_half_avg: f64,
    pub second_half_avg: f64,
    pub final_total_queue: u64,
    pub unstable: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Seed shared by every policy at load index `k`.
pub fn cell_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Constants for the configured model at one load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadConstants {
    pub load: f64,
    pub constants: Option<DriftConstants>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftDocument {
    pub experiment: Vec<LoadConstants>,
    pub lab: DriftLabReport,
}

fn is_jct_load(load: f64) -> bool {
    (load - 0.5).abs() < 1e-9 || (load - 0.99).abs() < 1e-9
}

struct Cell {
    row: SummaryRow,
    summary: SummaryStats,
    trace_csv: Option<Vec<u8>>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let models: Vec<ModelParams> = config
        .loads
        .iter()
        .map(|&l| build_scenario(config, l))
        .collect::<Result<_, _>>()?;
    let specs = config.policy_specs();
    let jobs: Vec<(usize, PolicySpec)> = (0..config.loads.len())
        .flat_map(|k| specs.iter().map(move |&s| (k, s)))
        .collect();
    let warmup = config.warmup_slots();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(k, spec))| {
            let params = &models[k];
            let want_trace = config.trace && j == 0;
            let out = run(
                params,
                Policy::new(spec),
                config.horizon,
                cell_seed(config.seed, k),
                RunOptions {
                    keep_events: want_trace,
                    warmup: Some(warmup),
                    ..RunOptions::default()
                },
            );
            let trace_csv = want_trace.then(|| {
                let mut buf = Vec::new();
                out.trace.write_csv(&mut buf, true).expect("trace replays");
                buf
            });
            let s = &out.summary;
            let row = SummaryRow {
                scenario: config.scenario.to_string(),
                n: config.n,
                load: config.loads[k],
                policy: spec.to_string(),
                slug: spec.slug(),
                splittable: spec.splittable,
                lambda: params.lambda,
                avg_total_queue: s.avg_total_queue,
                messages_per_slot: s.messages_per_slot,
                jct_mean: s.jct_mean,
                completed: s.completed_count,
                arrived: s.arrived_count,
                arrivals_total: out.trace.arrivals_total,
                first_half_avg: s.first_half_avg,
                second_half_avg: s.second_half_avg,
                final_total_queue: s.final_total_queue,
                unstable: s.unstable,
            };
            Cell {
                row,
                summary: out.summary,
                trace_csv,
            }
        })
        .collect();

    let dir = &config.out;
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut files = Vec::new();

    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    for c in &cells {
        w.serialize(&c.row).map_err(|source| ExperimentError::Csv {
            path: path.clone(),
            source,
        })?;
    }
    flush(w, &path)?;
    files.push(path);

    for c in cells.iter().filter(|c| is_jct_load(c.row.load)) {
        let path = dir.join(format!("jct_{}_{}.csv", c.row.slug, c.row.load));
        let mut w = csv_writer(&path)?;
        let csv_err = |source| ExperimentError::Csv {
            path: path.clone(),
            source,
        };
        w.write_record(["jct", "cdf"]).map_err(csv_err)?;
        for &(v, p) in &c.summary.jct_cdf {
            w.write_record([v.to_string(), p.to_string()]).map_err(csv_err)?;
        }
        flush(w, &path)?;
        files.push(path);
    }

    if let Some(buf) = cells.iter().find_map(|c| c.trace_csv.as_ref()) {
        let path = dir.join("trace.csv");
        fs::write(&path, buf).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        files.push(path);
    }

    if config.drift_lab {
        let experiment = config
            .loads
            .iter()
            .zip(&models)
            .map(|(&load, p)| match compute_constants(p) {
                Ok(k) => LoadConstants {
                    load,
                    constants: Some(k),
                    error: None,
                },
                Err(e) => LoadConstants {
                    load,
                    constants: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        let doc = DriftDocument {
            experiment,
            lab: run_drift_lab(&desk_scenarios(), config.drift_reps, config.seed),
        };
        let path = dir.join("drift_report.json");
        write_json(&path, &doc)?;
        files.push(path);
    }

    Ok(ExperimentOutput {
        rows: cells.into_iter().map(|c| c.row).collect(),
        files,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ExperimentError> {
    let f = File::create(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn flush(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), ExperimentError> {
    w.flush().map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let f = File::create(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })
}
