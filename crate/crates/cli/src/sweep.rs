//! One training run per axis value, all other settings held fixed.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use clap::ValueEnum;
use diffformer::model::AttentionKind;

use crate::pipeline::run_train;
use crate::{CliError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Patch,
    Layers,
    Heads,
    Attention,
    TrainFrac,
}

impl Axis {
    pub const NAMES: [&'static str; 5] = ["patch", "layers", "heads", "attention", "train_frac"];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Patch => "patch",
            Axis::Layers => "layers",
            Axis::Heads => "heads",
            Axis::Attention => "attention",
            Axis::TrainFrac => "train_frac",
        }
    }

    /// Returns `base` with this axis set to `value`. Validation of the
    /// resulting config is left to the run.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig, CliError> {
        let bad = |e: &dyn std::fmt::Display| CliError::Usage(format!("{} value {value:?}: {e}", self.name()));
        let mut cfg = base.clone();
        match self {
            Axis::Patch => cfg.patch_size = value.parse().map_err(|e| bad(&e))?,
            Axis::Layers => cfg.n_layers = value.parse().map_err(|e| bad(&e))?,
            Axis::Heads => cfg.n_heads = value.parse().map_err(|e| bad(&e))?,
            Axis::Attention => cfg.attention = AttentionKind::from_str(value).map_err(|e| bad(&e))?,
            Axis::TrainFrac => {
                cfg.train_frac = value.parse().map_err(|e| bad(&e))?;
                cfg.test_frac = 1.0 - cfg.train_frac - cfg.val_frac;
            }
        }
        cfg.out_dir = base.out_dir.join(format!("{}_{value}", self.name()));
        Ok(cfg)
    }
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::from_str_name(s).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown sweep axis {s:?}; valid axes: {}",
                Axis::NAMES.join(", ")
            ))
        })
    }
}

impl Axis {
    fn from_str_name(s: &str) -> Option<Self> {
        let i = Axis::NAMES.iter().position(|n| *n == s || n.replace('_', "-") == s)?;
        Some(Axis::value_variants()[i])
    }
}

/// Outcome of one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub n_patch: usize,
    pub oa: Option<f64>,
    pub aa: Option<f64>,
    pub kappa: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "value,n_patch,oa,aa,kappa,seconds,error";

fn run_point(cfg: RunConfig, value: &str) -> SweepRow {
    let n_patch = cfg
        .patch_size
        .checked_div(cfg.token_spatial)
        .map_or(0, |side| side * side);
    let start = Instant::now();
    let result = cfg.validate().and_then(|_| run_train(&cfg, 1));
    let seconds = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    match result {
        Ok(s) => SweepRow {
            value: value.to_string(),
            n_patch: s.n_patch,
            oa: Some(s.report.oa),
            aa: Some(s.report.aa),
            kappa: Some(s.report.kappa),
            seconds,
            error: None,
        },
        Err(e) => {
            log::warn!("sweep point {value}: {e}");
            SweepRow {
                value: value.to_string(),
                n_patch,
                oa: None,
                aa: None,
                kappa: None,
                seconds,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs every value. With `workers > 1` the points run concurrently, each
/// in its own output directory; rows keep the order of `values`.
pub fn run_sweep(base: &RunConfig, axis: Axis, values: &[String], workers: usize) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>, _>>()?;
    let workers = workers.clamp(1, values.len());
    if workers == 1 {
        return Ok(configs.into_iter().zip(values).map(|(c, v)| run_point(c, v)).collect());
    }
    let mut rows: Vec<Option<SweepRow>> = vec![None; values.len()];
    let jobs: Vec<(usize, RunConfig)> = configs.into_iter().enumerate().collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(values.len().div_ceil(workers))
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|(i, c)| (*i, run_point(c.clone(), &values[*i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, row) in h.join().expect("sweep worker panicked") {
                rows[i] = Some(row);
            }
        }
    });
    Ok(rows.into_iter().map(|r| r.expect("every point ran")).collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.value),
            r.n_patch,
            opt(r.oa),
            opt(r.aa),
            opt(r.kappa),
            r.seconds,
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    out
}
