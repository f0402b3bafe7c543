use std::path::PathBuf;
use std::process::ExitCode;

use blockprop::runner::{self, summary_json, write_run};
use blockprop::scenario::{load_scenario, Scenario, PRESETS};
use blockprop::RunError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockprop", version, about = "Block propagation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a file path or a preset name).
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write summary.json, blocks.csv and buckets.csv here instead of
        /// printing the summary.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's stop_blocks.
        #[arg(long)]
        blocks: Option<usize>,
    },
    /// Run a scenario once per (value, seed).
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
    },
    /// Inspect the built-in presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset as a scenario file.
    Show {
        name: String,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn scenario_with(path: &std::path::Path, blocks: Option<usize>) -> Result<Scenario, Failure> {
    let mut sc = load_scenario(path).map_err(|e| Failure::Validation(e.to_string()))?;
    if let Some(b) = blocks {
        sc.stop_blocks = b;
        sc.validate()
            .map_err(|v| Failure::Validation(format!("{}: {}", v.key, v.message)))?;
    }
    Ok(sc)
}

fn fmt_ms(v: Option<f64>) -> String {
    v.map(|ms| format!("{:.3} s", ms / 1000.0))
        .unwrap_or_else(|| "n/a".into())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            blocks,
        } => {
            let sc = scenario_with(&scenario, blocks)?;
            let seed = seed.unwrap_or(sc.seed);
            let report = runner::run(&sc, seed)?;
            match out {
                Some(dir) => {
                    write_run(&dir, &sc, seed, &report)?;
                    println!(
                        "{}: t_MBP {} r_f {:.3}% -> {}",
                        sc.name,
                        fmt_ms(report.t_mbp_ms),
                        report.fork_rate * 100.0,
                        dir.display()
                    );
                }
                None => print!("{}", summary_json(&sc, seed, &report)),
            }
        }
        Command::Sweep {
            scenario,
            param,
            values,
            seeds,
            out,
            workers,
            blocks,
        } => {
            let sc = scenario_with(&scenario, blocks)?;
            let workers = workers.unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
            let runs = runner::sweep(&sc, &param, &values, &seeds, out.as_deref(), workers)?;
            for r in &runs {
                let groups: Vec<String> = r
                    .group_medians
                    .iter()
                    .filter(|(k, _)| k.as_str() != runner::GROUP_ALL)
                    .map(|(k, v)| format!("{k} {}", fmt_ms(*v)))
                    .collect();
                println!(
                    "{param}={} seed={}: t_MBP {} r_f {:.3}% {}",
                    r.value,
                    r.seed,
                    fmt_ms(r.t_mbp_ms),
                    r.fork_rate * 100.0,
                    groups.join(" ")
                );
            }
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in PRESETS {
                    let p = Scenario::preset(name).expect("listed preset exists");
                    println!(
                        "{name}: {} nodes, {} s interval, {} byte blocks",
                        p.n_nodes,
                        p.target_interval_ms as f64 / 1000.0,
                        p.block_size
                    );
                }
            }
            PresetAction::Show { name } => {
                let p = Scenario::preset(&name)
                    .ok_or_else(|| Failure::Validation(format!("unknown preset `{name}`")))?;
                print!("{}", p.to_toml());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("fault: {msg}");
            ExitCode::from(3)
        }
    }
}
