//! Experiment configuration and its text format.
//!
//! One `key = value` per line. Blank lines and lines starting with `#` are
//! skipped, and so is anything after a `#` on a line. Lists are comma
//! separated. Keys:
//!
//! | key | value | default |
//! |---|---|---|
//! | `scenario` | `ratio_10_90`, `ratio_50_50`, `ratio_90_10`, `custom` | `ratio_50_50` |
//! | `n` | servers | 100 |
//! | `slow` | slow servers, required for `custom` | from the ratio |
//! | `fast_lo`, `fast_hi` | support of the fast capacity | 1, 19 |
//! | `policies` | families: `pi`, `jiq`, `jsq`, `jsq2`, `jsq11` | all five |
//! | `split` | `off`, `on`, `both` | `both` |
//! | `loads` | loads in (0, 1) | 0.05, 0.10, ..., 0.95, 0.99 |
//! | `horizon` | slots, at least 1000 | 1000000 |
//! | `seed` | u64 | 1 |
//! | `out` | output directory | `out` |
//! | `warmup` | fraction of the horizon in [0, 1) | 0.1 |
//! | `drift_lab` | `true` / `false` | `false` |
//! | `drift_reps` | episodes per drift-lab state | 10000 |
//! | `trace` | write `trace.csv` for the first cell | `false` |
//!
//! `PISIM_SEED` and `PISIM_OUT` in the environment override `seed` and
//! `out`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Family, PolicySpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("custom scenario needs `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Ratio10_90,
    Ratio50_50,
    Ratio90_10,
    Custom,
}

impl Scenario {
    /// Share of slow servers, in percent.
    pub fn slow_percent(self) -> Option<usize> {
        match self {
            Scenario::Ratio10_90 => Some(10),
            Scenario::Ratio50_50 => Some(50),
            Scenario::Ratio90_10 => Some(90),
            Scenario::Custom => None,
        }
    }
}

impl FromStr for Scenario {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([':', '-'], "_").as_str() {
            "ratio_10_90" | "10_90" => Ok(Scenario::Ratio10_90),
            "ratio_50_50" | "50_50" => Ok(Scenario::Ratio50_50),
            "ratio_90_10" | "90_10" => Ok(Scenario::Ratio90_10),
            "custom" => Ok(Scenario::Custom),
            _ => Err(ConfigError::BadValue {
                key: "scenario".into(),
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Ratio10_90 => "ratio_10_90",
            Scenario::Ratio50_50 => "ratio_50_50",
            Scenario::Ratio90_10 => "ratio_90_10",
            Scenario::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Off,
    On,
    Both,
}

impl SplitMode {
    pub fn flags(self) -> &'static [bool] {
        match self {
            SplitMode::Off => &[false],
            SplitMode::On => &[true],
            SplitMode::Both => &[false, true],
        }
    }
}

impl FromStr for SplitMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" | "false" | "no" => Ok(SplitMode::Off),
            "on" | "true" | "yes" => Ok(SplitMode::On),
            "both" => Ok(SplitMode::Both),
            _ => Err(ConfigError::BadValue {
                key: "split".into(),
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub slow: Option<usize>,
    pub fast_lo: u64,
    pub fast_hi: u64,
    pub policies: Vec<Family>,
    pub split: SplitMode,
    pub loads: Vec<f64>,
    pub horizon: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub warmup: f64,
    pub drift_lab: bool,
    pub drift_reps: usize,
    pub trace: bool,
}

/// 0.05, 0.10, ..., 0.95 and 0.99.
pub fn default_loads() -> Vec<f64> {
    let mut v: Vec<f64> = (1..=19).map(|k| f64::from(k) / 20.0).collect();
    v.push(0.99);
    v
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Ratio50_50,
            n: 100,
            slow: None,
            fast_lo: 1,
            fast_hi: 19,
            policies: Family::ALL.to_vec(),
            split: SplitMode::Both,
            loads: default_loads(),
            horizon: 1_000_000,
            seed: 1,
            out: PathBuf::from("out"),
            warmup: 0.1,
            drift_lab: false,
            drift_reps: 10_000,
            trace: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// Splits on commas that are not inside parentheses, so `JSQ(1,1)` stays
/// one item.
pub fn split_outside_parens(value: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in value.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(value[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(value[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

impl ExperimentConfig {
    /// n = 10, horizon 10⁴, loads 0.5, 0.9 and 0.99.
    pub fn smoke() -> Self {
        ExperimentConfig {
            n: 10,
            horizon: 10_000,
            loads: vec![0.5, 0.9, 0.99],
            ..Self::default()
        }
    }

    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            c.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: i + 1, key },
                    e => e,
                })?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "scenario" => self.scenario = parse_value(key, value)?,
            "n" => self.n = parse_value(key, value)?,
            "slow" => self.slow = Some(parse_value(key, value)?),
            "fast_lo" => self.fast_lo = parse_value(key, value)?,
            "fast_hi" => self.fast_hi = parse_value(key, value)?,
            "policies" => {
                self.policies = split_outside_parens(value)
                    .into_iter()
                    .map(|s| {
                        s.parse::<Family>().map_err(|_| ConfigError::BadValue {
                            key: key.into(),
                            value: s.into(),
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            "split" => self.split = parse_value(key, value)?,
            "loads" => self.loads = parse_list(key, value)?,
            "horizon" => self.horizon = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "warmup" => self.warmup = parse_value(key, value)?,
            "drift_lab" => self.drift_lab = parse_value(key, value)?,
            "drift_reps" => self.drift_reps = parse_value(key, value)?,
            "trace" => self.trace = parse_value(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Applies `PISIM_SEED` and `PISIM_OUT` from `lookup`.
    pub fn apply_env_with<F>(&mut self, lookup: F) -> Result<(), ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(v) = lookup("PISIM_SEED") {
            self.seed = parse_value("PISIM_SEED", &v)?;
        }
        if let Some(v) = lookup("PISIM_OUT") {
            self.out = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env_with(|k| std::env::var(k).ok())
    }

    /// Number of slow servers.
    pub fn slow_count(&self) -> Result<usize, ConfigError> {
        match (self.scenario.slow_percent(), self.slow) {
            (_, Some(s)) => Ok(s),
            (Some(p), None) => Ok(self.n * p / 100),
            (None, None) => Err(ConfigError::Missing("slow")),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.slow_count()? > self.n {
            return bad(format!("{} slow servers out of {}", self.slow_count()?, self.n));
        }
        if self.fast_lo < 1 || self.fast_hi < self.fast_lo {
            return bad(format!("fast support {}..={} invalid", self.fast_lo, self.fast_hi));
        }
        if self.policies.is_empty() {
            return bad("no policies".into());
        }
        if self.loads.is_empty() {
            return bad("no loads".into());
        }
        if let Some(l) = self.loads.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
            return bad(format!("load {l} outside (0, 1)"));
        }
        if self.horizon < 1000 {
            return bad(format!("horizon {} below 1000", self.horizon));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad(format!("warmup fraction {} outside [0, 1)", self.warmup));
        }
        if self.drift_lab && self.drift_reps < 2 {
            return bad("drift_reps must be at least 2".into());
        }
        Ok(())
    }

    /// Every policy the config asks for, families in order, unsplit first.
    pub fn policy_specs(&self) -> Vec<PolicySpec> {
        self.policies
            .iter()
            .flat_map(|&f| self.split.flags().iter().map(move |&s| PolicySpec::new(f, s)))
            .collect()
    }

    pub fn warmup_slots(&self) -> u64 {
        (self.horizon as f64 * self.warmup).floor() as u64
    }
}
