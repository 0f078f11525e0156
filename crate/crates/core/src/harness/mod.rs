//! Configuration-driven experiments: single runs, one-axis sweeps and
//! static validation.

pub mod config;
pub mod report;
pub mod run;
pub mod validate;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use config::{AttackConfig, AttackKind, Aggregation, Defense, ExperimentConfig};
pub use report::{write_atomic, Summary};
pub use run::{execute, ExperimentReport, RoundRow};
pub use validate::{validate, Diagnostic, Validation};

use crate::error::{Error, Result};

/// Executes `cfg` and writes its report into `dir`.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    let report = execute(cfg)?;
    report.write(dir)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    NClients,
    R,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "n_clients" | "n" => Ok(SweepAxis::NClients),
            "r" => Ok(SweepAxis::R),
            other => Err(Error::ConfigInvalid(format!("unknown sweep axis {other:?}; use alpha, n_clients or r"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::NClients => "n_clients",
            SweepAxis::R => "r",
        })
    }
}

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "axis,value,config_hash,final_accuracy,sia_success,sia_best_round_success,bits_per_param";

/// `template` with `axis` set to `value`.
pub fn sweep_point(template: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = template.clone();
    let integral = |what: &str| -> Result<u64> {
        if value.fract() != 0.0 || value < 0.0 {
            return Err(Error::ConfigInvalid(format!("{what} sweep values must be non-negative integers, got {value}")));
        }
        Ok(value as u64)
    };
    match axis {
        SweepAxis::Alpha => cfg.alpha = value,
        SweepAxis::NClients => cfg.n_clients = integral("n_clients")? as usize,
        SweepAxis::R => {
            let r = integral("r")? as u32;
            match &mut cfg.defense {
                Defense::Alg1 { r: slot, .. } | Defense::Alg1Rle { r: slot, .. } => *slot = r,
                _ => return Err(Error::ConfigInvalid("an r sweep needs defense alg1 or alg1_rle".into())),
            }
        }
    }
    Ok(cfg)
}

/// One run per value, each in `dir/<axis>_<value>`, plus a combined
/// `sweep.csv` in `dir`. All points share the template's seed.
pub fn sweep(template: &ExperimentConfig, axis: SweepAxis, values: &[f64], dir: &Path) -> Result<Vec<ExperimentReport>> {
    let configs = values.iter().map(|&v| sweep_point(template, axis, v)).collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::with_capacity(configs.len());
    let mut csv = format!("{SWEEP_HEADER}\n");
    for (cfg, &value) in configs.iter().zip(values) {
        let report = run(cfg, &dir.join(format!("{axis}_{value}")))?;
        let sia = report.sia_summary();
        csv.push_str(&format!(
            "{axis},{value},{},{},{},{},{}\n",
            report.config_hash,
            report.final_accuracy,
            sia.as_ref().map(|s| s.success_rate.to_string()).unwrap_or_default(),
            sia.as_ref().and_then(|s| s.best_round_success).map(|s| s.to_string()).unwrap_or_default(),
            report.rounds.last().map_or(0, |r| r.bits_per_param),
        ));
        reports.push(report);
    }
    if !values.is_empty() {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(SWEEP_FILE), csv.as_bytes())?;
    }
    Ok(reports)
}
