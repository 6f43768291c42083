use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, CommandFactory, FromArgMatches, Parser};

use cbrp_sim::config::{ConfigBuilder, ConfigError, Protocol, KEYS};
use cbrp_sim::metrics::RUNS_HEADER;
use cbrp_sim::runner::{parse_sweep, run_plan, ExperimentPlan, RunError, RunOptions, SweepAxis};

/// Cluster-based routing simulator.
///
/// Every scenario key can also be given as `--<key> VALUE` (for example
/// `--node_count 25 --area 500x500`); these override the config file.
#[derive(Parser, Debug)]
#[command(name = "simrun", version)]
struct Cli {
    /// Scenario file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cbrp, cross-cbrp or both.
    #[arg(long)]
    protocol: Option<String>,
    /// speed=V1,V2,... or rate=V1,V2,...
    #[arg(long)]
    sweep: Option<String>,
    /// Run seeds 0..N-1.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<u64>,
    /// Run the single seed S.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for runs.csv, summary.csv and report.txt.
    #[arg(long, default_value = "simrun-out")]
    out: PathBuf,
    /// Write full per-run event traces under OUT/traces.
    #[arg(long)]
    trace: bool,
    /// Skip runs already present in OUT/runs.csv.
    #[arg(long)]
    resume: bool,
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for key in KEYS.iter().copied().chain(["area"]) {
        if key == "protocol" {
            continue;
        }
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .hide(true),
        );
    }
    cmd
}

fn plan_from_args() -> Result<(ExperimentPlan, RunOptions), RunError> {
    let matches = command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());

    let mut builder = ConfigBuilder::new();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?;
        builder.apply_text(&text)?;
    }
    for key in KEYS.iter().copied().chain(["area"]) {
        if key == "protocol" {
            continue;
        }
        if let Some(v) = matches.get_one::<String>(key) {
            builder.set(key, v, "command line")?;
        }
    }
    let protocols = match cli.protocol.as_deref() {
        Some("both") => vec![Protocol::Cbrp, Protocol::CrossCbrp],
        Some(p) => {
            let p: Protocol = p.parse().map_err(|message| ConfigError::Value {
                key: "protocol".into(),
                origin: "command line".into(),
                message,
            })?;
            builder.set("protocol", p.as_str(), "command line")?;
            vec![p]
        }
        None => Vec::new(),
    };
    let base = builder.build()?;
    let protocols = if protocols.is_empty() { vec![base.protocol] } else { protocols };
    let seeds: Vec<u64> = match (cli.seeds, cli.seed) {
        (Some(n), _) => (0..n).collect(),
        (None, Some(s)) => vec![s],
        (None, None) => (base.rng_seed..base.rng_seed + u64::from(base.replications)).collect(),
    };
    let (axis, values) = match &cli.sweep {
        Some(s) => parse_sweep(s).map_err(RunError::Plan)?,
        None => (SweepAxis::None, Vec::new()),
    };
    let plan = ExperimentPlan {
        base,
        axis,
        values,
        protocols,
        seeds,
    };
    let opts = RunOptions {
        out_dir: Some(cli.out),
        trace: cli.trace,
        resume: cli.resume,
    };
    Ok((plan, opts))
}

fn main() -> ExitCode {
    let result = plan_from_args().and_then(|(plan, opts)| {
        let out = opts.out_dir.clone();
        run_plan(&plan, &opts).map(|r| (r, out))
    });
    match result {
        Ok((r, out)) => {
            println!("{RUNS_HEADER}");
            for row in &r.reports {
                println!("{}", row.csv_row());
            }
            if let Some(dir) = out {
                eprintln!("wrote {}", dir.join("report.txt").display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("simrun: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
