use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use qbm_core::io::{compare_runs, Tolerance};
use qbm_core::run::{exit_code, run_scenario_with_warnings};
use qbm_core::scenario::parse_scenario_file;

/// Quantum Brownian motion scenarios: master equations, positivity audits
/// and stochastic unravelings.
#[derive(Debug, Parser)]
#[command(name = "qbm", version)]
struct Cli {
    /// Scenario file (JSON).
    #[arg(long, required_unless_present = "compare")]
    scenario: Option<PathBuf>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Overrides the stochastic seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,

    /// Reject unknown scenario keys (default).
    #[arg(long, overrides_with = "no_strict")]
    strict: bool,

    /// Ignore unknown scenario keys with a warning.
    #[arg(long, overrides_with = "strict")]
    no_strict: bool,

    /// Compare two CSV files instead of running a scenario.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with = "scenario")]
    compare: Option<Vec<PathBuf>>,

    /// Columns to compare, comma separated; all shared columns by default.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,

    /// Absolute tolerance for --compare.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,

    /// Relative tolerance for --compare.
    #[arg(long, default_value_t = 0.0)]
    rel_tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    if let Some(files) = &cli.compare {
        let tol = Tolerance {
            abs: cli.tol,
            rel: cli.rel_tol,
        };
        return match compare_runs(&files[0], &files[1], &cli.columns, tol) {
            Ok(report) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
                if report.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }

    let path = cli.scenario.expect("clap enforces --scenario");
    let strict = !cli.no_strict;
    let result = parse_scenario_file(&path, strict).and_then(|mut parsed| {
        if let Some(seed) = cli.seed {
            match parsed.scenario.stochastic.as_mut() {
                Some(st) => st.seed = seed,
                None => parsed
                    .warnings
                    .push("--seed given but the scenario has no stochastic block".into()),
            }
        }
        run_scenario_with_warnings(&parsed.scenario, &cli.out, parsed.warnings)
    });
    match result {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} outputs written to {} ({:.2} s)",
                manifest.outputs.len(),
                cli.out.display(),
                manifest.wall_clock_seconds
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
