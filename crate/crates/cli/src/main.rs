use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use v2v_aoi::config::{load_config, parse_config, ArrivalModel, Policy, RateModel, SimConfig};
use v2v_aoi::evt::fit_gpd;
use v2v_aoi::simulator::{self, run_with, write_outputs, RunOptions, Summary, SweepParam};

#[derive(Parser)]
#[command(
    name = "v2v-aoi",
    version,
    about = "AoI-tail-aware V2V power control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Proposed,
    Baseline2,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArrivalArg {
    Deterministic,
    Poisson,
}

#[derive(Clone, Copy, ValueEnum)]
enum RateArg {
    Shannon,
    Fbl,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    V,
    ArrivalRate,
    Blocklength,
    BlockError,
}

#[derive(clap::Args)]
struct Overrides {
    /// JSON config file; missing keys take the reference defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    arrival: Option<ArrivalArg>,
    #[arg(long = "rate-model", value_enum)]
    rate_model: Option<RateArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write summary.json and aoi_ccdf.csv.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write trace.csv (per slot, per pair).
        #[arg(long)]
        trace: bool,
        /// Also write positions.csv.
        #[arg(long)]
        positions: bool,
        /// Also write clusters.json (one entry per regrouping).
        #[arg(long)]
        groups: bool,
    },
    /// Run one simulation per parameter value.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// When given, each point is written to `<out>/<param>_<i>/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a generalized Pareto law to a CSV column of excesses.
    FitGpd {
        #[arg(long)]
        input: PathBuf,
        /// Column name or zero-based index (default: first column).
        #[arg(long)]
        column: Option<String>,
    },
}

fn resolve(o: &Overrides) -> Result<SimConfig, String> {
    let mut cfg = match &o.config {
        Some(path) => load_config(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => parse_config("").map_err(|e| e.to_string())?,
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = o.slots {
        cfg.slots = s;
    }
    if let Some(p) = o.policy {
        cfg.policy = match p {
            PolicyArg::Proposed => Policy::Proposed,
            PolicyArg::Baseline2 => Policy::Baseline2,
            PolicyArg::Fixed => Policy::FixedPower,
        };
    }
    if let Some(a) = o.arrival {
        cfg.arrival_model = match a {
            ArrivalArg::Deterministic => ArrivalModel::Deterministic,
            ArrivalArg::Poisson => ArrivalModel::Poisson,
        };
    }
    if let Some(r) = o.rate_model {
        cfg.rate_model = match r {
            RateArg::Shannon => RateModel::Shannon,
            RateArg::Fbl => RateModel::FiniteBlocklength,
        };
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SweepPoint<'a> {
    param: SweepParam,
    value: f64,
    summary: &'a Summary,
}

#[derive(Serialize)]
struct FitOutput {
    sigma: f64,
    xi: f64,
    loglik: f64,
    ks: f64,
    n: usize,
}

fn read_column(path: &Path, column: Option<&str>) -> Result<Vec<f64>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut index = match column {
        Some(c) => c.parse::<usize>().ok(),
        None => Some(0),
    };
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if index.is_none() {
            let name = column.unwrap_or_default();
            index = Some(
                record
                    .iter()
                    .position(|f| f == name)
                    .ok_or_else(|| format!("no column named '{name}'"))?,
            );
            continue;
        }
        let i = index.unwrap_or(0);
        let field = record
            .get(i)
            .ok_or_else(|| format!("line {}: missing column {i}", line + 1))?;
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            // A non-numeric first row is a header.
            Err(_) if line == 0 => continue,
            Err(_) => return Err(format!("line {}: '{field}' is not a number", line + 1)),
        }
    }
    Ok(values)
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run {
            overrides,
            out,
            trace,
            positions,
            groups,
        } => {
            let cfg = resolve(&overrides)?;
            let report =
                run_with(&cfg, &RunOptions { trace, positions }).map_err(|e| e.to_string())?;
            write_outputs(&out, &report, groups).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report.summary).map_err(|e| e.to_string())?
            );
        }
        Command::Sweep {
            overrides,
            param,
            values,
            out,
        } => {
            let cfg = resolve(&overrides)?;
            let param = match param {
                ParamArg::V => SweepParam::V,
                ParamArg::ArrivalRate => SweepParam::ArrivalRate,
                ParamArg::Blocklength => SweepParam::Blocklength,
                ParamArg::BlockError => SweepParam::BlockError,
            };
            let reports = simulator::sweep(&cfg, param, &values).map_err(|e| e.to_string())?;
            if let Some(dir) = &out {
                for (i, r) in reports.iter().enumerate() {
                    let name = serde_json::to_value(param)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from));
                    let sub = dir.join(format!("{}_{i}", name.unwrap_or_default()));
                    write_outputs(&sub, r, false).map_err(|e| e.to_string())?;
                }
            }
            let points: Vec<SweepPoint> = values
                .iter()
                .zip(&reports)
                .map(|(&value, r)| SweepPoint {
                    param,
                    value,
                    summary: &r.summary,
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&points).map_err(|e| e.to_string())?
            );
        }
        Command::FitGpd { input, column } => {
            let xs = read_column(&input, column.as_deref())?;
            let fit = fit_gpd(&xs).map_err(|e| e.to_string())?;
            let out = FitOutput {
                sigma: fit.sigma,
                xi: fit.xi,
                loglik: fit.loglik,
                ks: fit.ks,
                n: fit.n,
            };
            println!(
                "{}",
                serde_json::to_string(&out).map_err(|e| e.to_string())?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
