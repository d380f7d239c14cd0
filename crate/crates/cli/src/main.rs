use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use wealthsim::harness::{self, PersistenceSpec, SweepGrid, PRESETS, SCENARIO_NAMES};
use wealthsim::{ExperimentConfig, Manifest, Outputs};

#[derive(Parser, Debug)]
#[command(
    name = "wealthsim",
    version,
    about = "Agent-based wealth inequality simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured scenarios and write ensemble time series.
    Run(Common),
    /// Sweep normal return parameters over the configured mu x sigma grid.
    Sweep(Common),
    /// Track top-percentile cohorts selected at given periods.
    Persistence {
        #[command(flatten)]
        common: Common,
        /// Selection period (repeatable).
        #[arg(long = "select", value_name = "T")]
        select: Vec<usize>,
        /// Periods each cohort is followed after selection.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run several named scenarios under one seed into a joined time series.
    Compare(Common),
    /// List built-in configurations and scenario names.
    Presets,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file, manifest.json, or built-in preset name.
    #[arg(long, value_name = "PATH", default_value = "desk.json")]
    config: String,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Number of agents.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "t-max")]
    t_max: Option<usize>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Built-in scenario name (repeatable); replaces the configured scenarios.
    #[arg(long = "scenario", value_name = "NAME")]
    scenarios: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write one time-series row per replication.
    #[arg(long)]
    per_replication: bool,
    /// Only report errors.
    #[arg(long, short)]
    quiet: bool,
}

/// Failure classes with distinct exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<wealthsim::Error> for Failure {
    fn from(e: wealthsim::Error) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = harness::load_config(&self.config)
            .with_context(|| format!("loading configuration {:?}", self.config))
            .map_err(Failure::Config)?;
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(t) = self.t_max {
            cfg.t_max = t;
        }
        if let Some(r) = self.reps {
            cfg.replications = r;
        }
        if !self.scenarios.is_empty() {
            cfg.scenarios = self
                .scenarios
                .iter()
                .map(|name| {
                    harness::named_scenario(name).ok_or_else(|| {
                        Failure::Config(anyhow::anyhow!(
                            "unknown scenario {name:?}; available: {}",
                            SCENARIO_NAMES.join(", ")
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
        }
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    let (name, common) = match &command {
        Command::Presets => {
            println!("configurations:");
            for (name, _) in PRESETS {
                let cfg = harness::preset(name).expect("built-in preset");
                println!(
                    "  {name:<24} n={} t_max={} replications={} scenarios={}",
                    cfg.n,
                    cfg.t_max,
                    cfg.replications,
                    cfg.scenarios.len()
                );
            }
            println!("scenarios:");
            for name in SCENARIO_NAMES {
                println!("  {name}");
            }
            return Ok(());
        }
        Command::Run(c) => ("run", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Compare(c) => ("compare", c),
        Command::Persistence { common, .. } => ("persistence", common),
    };
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let mut cfg = common.resolve()?;
    let started = Instant::now();
    let mut outputs = Outputs {
        manifest: Manifest::new(name, cfg.clone()),
        ensembles: Vec::new(),
        sweep: None,
        persistence: None,
        per_replication: common.per_replication,
    };
    match &command {
        Command::Run(_) | Command::Compare(_) => {
            if matches!(command, Command::Compare(_)) && cfg.scenarios.len() < 2 {
                return Err(Failure::Config(anyhow::anyhow!(
                    "compare needs at least two scenarios; pass --scenario NAME repeatedly"
                )));
            }
            outputs.ensembles = wealthsim::run_experiment(&cfg)?;
            for e in &outputs.ensembles {
                let last = e.last();
                info!(
                    "{}: t={} gini={:.4}±{:.4} mobility={:.4}",
                    e.scenario.id, last.t, last.gini.mean, last.gini.std, last.mobility.mean
                );
            }
        }
        Command::Sweep(_) => {
            if cfg.sweep.is_none() {
                let grid = SweepGrid::range(0.02, 0.08, 0.01);
                cfg.sweep = Some(SweepGrid {
                    mu: grid.clone(),
                    sigma: grid,
                });
            }
            let sweep = wealthsim::run_sweep(&cfg)?;
            info!("{} sweep cells", sweep.cells.len());
            outputs.sweep = Some(sweep);
        }
        Command::Persistence {
            select, horizon, ..
        } => {
            if !select.is_empty() || horizon.is_some() {
                let current = cfg.persistence.take();
                cfg.persistence = Some(PersistenceSpec {
                    selections: if select.is_empty() {
                        current
                            .as_ref()
                            .map(|p| p.selections.clone())
                            .unwrap_or_default()
                    } else {
                        select.clone()
                    },
                    horizon: horizon.or(current.map(|p| p.horizon)).unwrap_or(1000),
                });
            }
            let result = wealthsim::run_persistence(&cfg)?;
            for o in &result.outcomes {
                info!(
                    "cohort t={}: final mean normalised rank {:.4}",
                    o.t_sel,
                    o.mean_trajectory.last().copied().unwrap_or(f64::NAN)
                );
            }
            outputs.persistence = Some(result);
        }
        Command::Presets => unreachable!(),
    }
    outputs.manifest = Manifest::new(name, cfg);
    let written = wealthsim::write_outputs(&outputs, &common.out)?;
    info!(
        "wrote {} files to {} in {:.1?}",
        written.len(),
        common.out.display(),
        started.elapsed()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let quiet = match &cli.command {
        Command::Run(c) | Command::Sweep(c) | Command::Compare(c) => c.quiet,
        Command::Persistence { common, .. } => common.quiet,
        Command::Presets => false,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet {
        "error"
    } else {
        "info"
    }))
    .format_target(false)
    .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
