use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use shufflab::cost::CostReport;
use shufflab::harness::{self, ExperimentConfig, SweepAxis};
use shufflab::rns::{ModuliStrategy, RnsBasis};
use shufflab::shuffle::mixnet::TrustLevel;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "shufflab", version, about = "Shuffle-model federated learning simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        trust: Option<Trust>,
    },
    /// Run one experiment per value of a single axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// alpha, n_clients or r
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 0.1,1,10
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        trust: Option<Trust>,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-parameter upload cost of every scheme.
    Cost {
        /// Client counts, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<u64>,
        /// Precisions, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<u32>,
        #[arg(long, value_enum, default_value = "both")]
        strategy: Strategy,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Decode residues (1, 0, 6) under moduli {3, 5, 7} step by step.
    DemoCrt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Trust {
    Full,
    Semi,
    Malicious,
}

impl From<Trust> for TrustLevel {
    fn from(t: Trust) -> Self {
        match t {
            Trust::Full => TrustLevel::FullyTrusted,
            Trust::Semi => TrustLevel::SemiHonest,
            Trust::Malicious => TrustLevel::PartiallyMalicious,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    ConsecutivePrimes,
    MinSumSearch,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| {
                c.is::<ConfigError>()
                    || matches!(c.downcast_ref::<shufflab::Error>(), Some(shufflab::Error::ConfigInvalid(_)))
            });
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}

fn load(path: &Path, trust: Option<Trust>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| ConfigError(e.to_string()))?;
    if let Some(t) = trust {
        cfg.trust = t.into();
    }
    let v = harness::validate(&cfg);
    if !v.is_ok() {
        let lines: Vec<String> = v.errors.iter().map(ToString::to_string).collect();
        return Err(ConfigError(format!("invalid configuration:\n  {}", lines.join("\n  "))).into());
    }
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(format!("runs/{}", &cfg.hash()[..12])))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, trust } => {
            let cfg = load(&config, trust)?;
            let dir = output_dir(&cfg, out);
            let report = harness::run(&cfg, &dir).with_context(|| format!("run failed ({})", dir.display()))?;
            println!("config {}", report.config_hash);
            println!("final accuracy {:.4}", report.final_accuracy);
            if let Some(s) = report.sia_summary() {
                println!(
                    "sia success {:.4} over {} probes (99% CI {:.4}..{:.4}; random guessing {:.4}..{:.4})",
                    s.success_rate, s.probes, s.ci_low, s.ci_high, s.random_low, s.random_high
                );
                if let (Some(r), Some(b)) = (s.best_round, s.best_round_success) {
                    println!("best round {r}: {b:.4}");
                }
            }
            println!("report written to {}", dir.display());
        }
        Command::Sweep { config, axis, values, out, trust } => {
            let cfg = load(&config, trust)?;
            let axis: SweepAxis = axis.parse().map_err(|e: shufflab::Error| ConfigError(e.to_string()))?;
            for &v in &values {
                let point = harness::sweep_point(&cfg, axis, v).map_err(|e| ConfigError(e.to_string()))?;
                let check = harness::validate(&point);
                if !check.is_ok() {
                    let lines: Vec<String> = check.errors.iter().map(ToString::to_string).collect();
                    return Err(ConfigError(format!("{axis} = {v}: {}", lines.join("; "))).into());
                }
            }
            let dir = output_dir(&cfg, out);
            let reports = harness::sweep(&cfg, axis, &values, &dir).context("sweep failed")?;
            for (v, r) in values.iter().zip(&reports) {
                let sia = r.sia_summary().map(|s| format!("{:.4}", s.success_rate)).unwrap_or_else(|| "-".into());
                println!("{axis} = {v}: accuracy {:.4}, sia {sia}", r.final_accuracy);
            }
            if !reports.is_empty() {
                println!("combined table written to {}", dir.join(harness::SWEEP_FILE).display());
            }
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| ConfigError(e.to_string()))?;
            let v = harness::validate(&cfg);
            for note in &v.notes {
                println!("note: {note}");
            }
            for d in &v.errors {
                println!("error: {d}");
            }
            if !v.is_ok() {
                return Err(ConfigError(format!("{} problem(s) found", v.errors.len())).into());
            }
            println!("ok ({})", cfg.hash());
        }
        Command::Cost { n, r, strategy, format } => cost_table(&n, &r, strategy, format)?,
        Command::DemoCrt => demo_crt()?,
    }
    Ok(())
}

fn cost_table(ns: &[u64], rs: &[u32], strategy: Strategy, format: Format) -> Result<()> {
    let strategies: &[ModuliStrategy] = match strategy {
        Strategy::ConsecutivePrimes => &[ModuliStrategy::ConsecutivePrimes],
        Strategy::MinSumSearch => &[ModuliStrategy::MinSumSearch],
        Strategy::Both => &[ModuliStrategy::ConsecutivePrimes, ModuliStrategy::MinSumSearch],
    };
    let mut reports = Vec::new();
    for &n in ns {
        for &r in rs {
            for &s in strategies {
                reports.push(CostReport::compute(n, r, s).map_err(|e| ConfigError(format!("n = {n}, r = {r}: {e}")))?);
            }
        }
    }
    match format {
        Format::Csv => {
            println!("{}", CostReport::CSV_HEADER);
            for c in &reports {
                println!("{}", c.csv_row());
            }
        }
        Format::Table => {
            println!(
                "{:>8} {:>3} {:<19} {:>6} {:>6} {:>7} {:>10} {:>7} {:>6}  moduli",
                "n", "r", "strategy", "alg1", "rle", "vanilla", "secure_agg", "expand", "rounds"
            );
            for c in &reports {
                let moduli: Vec<String> = c.moduli.iter().map(u64::to_string).collect();
                println!(
                    "{:>8} {:>3} {:<19} {:>6} {:>6} {:>7} {:>10} {:>7.3} {:>6}  {}",
                    c.n_clients,
                    c.precision,
                    c.strategy.to_string(),
                    c.alg1.bits,
                    c.alg1_rle.bits,
                    c.vanilla.bits,
                    c.secure_agg.bits,
                    c.alg1.expansion,
                    c.shuffle_rounds,
                    moduli.join(",")
                );
            }
        }
    }
    Ok(())
}

fn demo_crt() -> Result<()> {
    let basis = RnsBasis::new(vec![3, 5, 7])?;
    let residues = [1u64, 0, 6];
    println!("moduli 3, 5, 7; M = {}", basis.product());
    println!("residues {residues:?}");
    let mut terms = Vec::new();
    for (a, t) in residues.iter().zip(basis.crt_terms().iter()) {
        println!(
            "  m = {}: M_i = {}, M_i^-1 mod {} = {}, a·M_i·y_i = {}",
            t.modulus,
            t.partial,
            t.modulus,
            t.inverse,
            *a as u128 * t.partial * t.inverse as u128
        );
        terms.push(*a as u128 * t.partial * t.inverse as u128);
    }
    let total: u128 = terms.iter().sum();
    let y = basis.crt(&residues);
    println!("sum = {total}; {total} mod {} = {y}", basis.product());
    Ok(())
}
