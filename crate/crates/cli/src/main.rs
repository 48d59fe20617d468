//! `gmdp`: experiments, bounds and grouping selection for grouped-action MDPs.

mod config;
mod error;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grouped_mdp::selector::{FeasibleSet, PracticalOptions, ResourceGrid, UtilityConfig};
use grouped_mdp::{GroupingFunction, TabularMdp};
use serde_json::json;

use config::{load_experiment, read_json, EnvSpec, Scale, SelectMode};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "gmdp", version, about = "Planning with grouped action spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write one CSV row per trial.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        /// Replaces the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, value_enum, default_value_t = Scale::Desk)]
        scale: Scale,
    },
    /// Print the performance bound of a grouping as JSON.
    Bounds {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        grouping: PathBuf,
        /// Total sample budget K.
        #[arg(long)]
        k: u64,
        #[arg(long)]
        t: u64,
        /// Defaults to the MDP's discount.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = config::default_delta())]
        delta: f64,
    },
    /// Choose a grouping and budget from a feasible set.
    Select {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        feasible: PathBuf,
        #[arg(long)]
        utility: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1_000u64, 10_000, 100_000, 1_000_000, 10_000_000])]
        k_values: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [10u64, 50, 100, 200, 500])]
        t_values: Vec<u64>,
        #[arg(long)]
        k_max: Option<u64>,
        #[arg(long)]
        t_max: Option<u64>,
        #[arg(long, value_enum, default_value_t = SelectMode::Exact)]
        mode: SelectMode,
        /// Actions sampled per group in practical mode.
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Probe samples in practical mode.
        #[arg(long, default_value_t = 100_000)]
        k1: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = config::default_delta())]
        delta: f64,
        #[arg(long)]
        gamma: Option<f64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an environment and write its MDP, grouping and candidate set as JSON.
    ExportEnv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grouping_out: Option<PathBuf>,
        #[arg(long)]
        feasible_out: Option<PathBuf>,
    },
}

fn load_mdp(path: &Path) -> CliResult<TabularMdp> {
    read_json(path)
}

fn load_grouping(path: &Path, mdp: &TabularMdp, mdp_path: &Path) -> CliResult<GroupingFunction> {
    let g: GroupingFunction = read_json(path)?;
    g.check_mdp(mdp)
        .map_err(|e| CliError::Input(format!("{} does not fit {}: {e}", path.display(), mdp_path.display())))?;
    Ok(g)
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config, out, seed, threads, scale } => {
            if threads == 0 {
                return Err(CliError::Input("--threads must be at least 1".into()));
            }
            let cfg = load_experiment(&config, scale, seed)?;
            let rows = run::run_experiment(&config, &cfg, threads)?;
            output::write_csv(&out, &rows)?;
            println!("{}: {} rows -> {}", cfg.name(), rows.len(), out.display());
            println!("{}", output::summary(&rows));
        }
        Command::Bounds { mdp, grouping, k, t, gamma, delta } => {
            let m = load_mdp(&mdp)?;
            let g = load_grouping(&grouping, &m, &mdp)?;
            let b = run::bounds_for(&m, &g, k, t, gamma.unwrap_or(m.gamma()), delta)?;
            output::write_text(None, &output::to_sorted_json(&b)?)?;
        }
        Command::Select {
            mdp,
            feasible,
            utility,
            k_values,
            t_values,
            k_max,
            t_max,
            mode,
            m,
            k1,
            seed,
            delta,
            gamma,
            out,
        } => {
            let model = load_mdp(&mdp)?;
            let set: FeasibleSet = read_json(&feasible)?;
            set.check_mdp(&model)
                .map_err(|e| CliError::Input(format!("{} does not fit {}: {e}", feasible.display(), mdp.display())))?;
            let utility: UtilityConfig = read_json(&utility)?;
            let grid = ResourceGrid::new(k_values, t_values)?.with_caps(k_max, t_max)?;
            let opts = PracticalOptions { m_per_group: m, k1, gamma: gamma.unwrap_or(model.gamma()), delta, eta: None };
            let result = run::select(&model, &set, &utility, &grid, mode, &opts, seed)?;
            let report = json!({
                "best_index": result.best_index,
                "best": result.best(),
                "result": result,
            });
            output::write_text(out.as_deref(), &output::to_sorted_json(&report)?)?;
        }
        Command::ExportEnv { config, out, grouping_out, feasible_out } => {
            let spec: EnvSpec = read_json(&config)?;
            let env = spec.build().map_err(|e| CliError::input_in(&config, e))?;
            output::write_text(Some(&out), &output::to_sorted_json(&env.mdp)?)?;
            if let Some(p) = grouping_out {
                output::write_text(Some(&p), &output::to_sorted_json(&env.grouping)?)?;
            }
            if let Some(p) = feasible_out {
                let set = FeasibleSet::new(env.feasible)?;
                output::write_text(Some(&p), &output::to_sorted_json(&set)?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
