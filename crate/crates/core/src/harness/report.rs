//! Report files. Everything except `timing.json` is a pure function of the
//! configuration, so repeated runs produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, SCHEMA_VERSION};
use super::run::{ExperimentReport, RoundRow};
use crate::cost::CostReport;
use crate::error::Result;
use crate::stats::{binomial_acceptance_interval, wilson_interval};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const ATTACK_FILE: &str = "attack.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";

pub const ROUNDS_HEADER: &str = "round,model_accuracy,sia_success,bits_per_param";
pub const ATTACK_HEADER: &str = "round,record_id,true_owner,guess,correct";

/// Confidence level of the intervals in the summary.
pub const CI_LEVEL: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiaSummary {
    pub probes: usize,
    pub correct: usize,
    /// Pooled over all rounds.
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub best_round: Option<usize>,
    pub best_round_success: Option<f64>,
    pub random_baseline: f64,
    /// Range a random guesser lands in with probability `ci_level`.
    pub random_low: f64,
    pub random_high: f64,
    pub ci_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub version: &'static str,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub final_accuracy: f64,
    pub rounds: Vec<RoundRow>,
    pub sia: Option<SiaSummary>,
    pub cost: Option<CostReport>,
}

impl ExperimentReport {
    pub fn sia_summary(&self) -> Option<SiaSummary> {
        let a = self.attack.as_ref()?;
        let probes = a.probes.len();
        let correct = a.correct();
        let (ci_low, ci_high) = wilson_interval(correct as u64, probes as u64, CI_LEVEL);
        let (random_low, random_high) = if probes > 0 {
            binomial_acceptance_interval(probes as u64, a.baseline_random, CI_LEVEL)
        } else {
            (0.0, 1.0)
        };
        Some(SiaSummary {
            probes,
            correct,
            success_rate: a.success_rate,
            ci_low,
            ci_high,
            best_round: a.best_round.map(|b| b.0),
            best_round_success: a.best_round.map(|b| b.1),
            random_baseline: a.baseline_random,
            random_low,
            random_high,
            ci_level: CI_LEVEL,
        })
    }

    pub fn summary(&self) -> Summary {
        Summary {
            schema_version: SCHEMA_VERSION,
            version: VERSION,
            config_hash: self.config_hash.clone(),
            config: ExperimentConfig { output_dir: None, ..self.config.clone() },
            final_accuracy: self.final_accuracy,
            rounds: self.rounds.clone(),
            sia: self.sia_summary(),
            cost: self.cost.clone(),
        }
    }

    pub fn rounds_csv(&self) -> String {
        let mut out = format!("{ROUNDS_HEADER}\n");
        for r in &self.rounds {
            let sia = r.sia_success.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.round, r.model_accuracy, sia, r.bits_per_param));
        }
        out
    }

    pub fn attack_csv(&self) -> String {
        let mut out = format!("{ATTACK_HEADER}\n");
        for p in self.attack.iter().flat_map(|a| &a.probes) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.round,
                p.record_id,
                p.true_owner,
                p.guess,
                p.correct() as u8
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes all report files into `dir`. On failure, files written so far
    /// are removed.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let timing = format!("{{\n  \"wall_seconds\": {}\n}}\n", self.wall_seconds);
        let files = [
            (ROUNDS_FILE, self.rounds_csv()),
            (ATTACK_FILE, self.attack_csv()),
            (SUMMARY_FILE, self.summary_json()),
            (TIMING_FILE, timing),
        ];
        let mut written = Vec::new();
        for (name, contents) in files {
            let path = dir.join(name);
            if let Err(e) = write_atomic(&path, contents.as_bytes()) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Write to a temporary sibling, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
