//! Command-line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use fcps::cannon;
use fcps::cps::{self, ExperienceDataset, HpSchedule};
use fcps::experiment::{
    compute_oracle_curve, eval_grid_targets, evaluate_offline, run_experiment, Algorithm,
    ExperimentConfig,
};
use fcps::gp::Hyperparams;
use fcps::opt::Bounds;

#[derive(Parser)]
#[command(name = "fcps", about = "Factored contextual policy search on the toy cannon benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a learning experiment and write learning curves
    Run(RunArgs),
    /// Compute (and cache) per-environment oracle means over the eval grid
    Oracle(OracleArgs),
    /// Offline-evaluate a persisted dataset in a persisted environment
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config mirroring the experiment configuration
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    algo: Option<Algorithm>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the hilly terrains with flat ground
    #[arg(long)]
    flat_terrain: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON-lines dataset written by `fcps run`
    #[arg(long)]
    dataset: PathBuf,
    /// Environment JSON written by `fcps run`
    #[arg(long)]
    env: PathBuf,
    /// Evaluation grid size per axis
    #[arg(long, default_value_t = 8)]
    grid: usize,
    #[arg(long, value_enum, default_value_t = Algorithm::Fcps)]
    algo: Algorithm,
}

fn apply_run_overrides(config: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(algo) = args.algo {
        config.algorithm = algo;
    }
    if let Some(episodes) = args.episodes {
        config.n_episodes = episodes;
    }
    if let Some(envs) = args.envs {
        config.n_environments = envs;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.output = out.clone();
    }
    if args.flat_terrain {
        config.flat_terrain = true;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    apply_run_overrides(&mut config, &args);
    let out = run_experiment(&config).map_err(|e| e.to_string())?;
    let last = out.curve.checkpoints.last().expect("at least one checkpoint");
    println!(
        "{}: {} environments x {} episodes, final offline reward {:.3} +- {:.3} (2 sd)",
        config.algorithm,
        config.n_environments,
        config.n_episodes,
        last.mean_reward,
        2.0 * last.stddev
    );
    println!("results written to {}", config.output.display());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), String> {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(out) = &args.out {
        config.output = out.clone();
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    let entries = compute_oracle_curve(&config).map_err(|e| e.to_string())?;
    for e in &entries {
        println!("env {:03} seed {}: oracle mean {:.4}", e.env_index, e.env_seed, e.mean_reward);
    }
    let mean = entries.iter().map(|e| e.mean_reward).sum::<f64>() / entries.len() as f64;
    println!("aggregate oracle mean over {} environments: {:.4}", entries.len(), mean);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), String> {
    let records = cps::load_records(&args.dataset)
        .map_err(|e| format!("{}: {e}", args.dataset.display()))?;
    let text = std::fs::read_to_string(&args.env).map_err(|e| format!("{}: {e}", args.env.display()))?;
    let env: cannon::Environment =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", args.env.display()))?;
    let mut d = ExperienceDataset::new(
        cannon::launch_bounds(),
        cannon::target_bounds(),
        Bounds::new(&[]),
    );
    for rec in records {
        d.push(rec);
    }
    let mut hp = Hyperparams::default_for_dim(match args.algo {
        Algorithm::Bocps => 5,
        _ => 3,
    });
    if d.len() >= 2 {
        // one marginal-likelihood fit over the loaded data
        let mut schedule = HpSchedule::new(hp.dim(), 5, d.len().max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match args.algo {
            Algorithm::Bocps => {
                let query = cps::Context {
                    target: vec![0.0, 0.0],
                    environment: vec![],
                };
                let _ = cps::select_parameters_bocps(&d, &query, 0.0, &mut schedule, &mut rng);
            }
            _ => {
                cps::maybe_refit_fcps(&d, &[0.0, 0.0], &cannon::reward_interface, &mut schedule, &mut rng);
            }
        }
        hp = schedule.hp;
    }
    let grid = eval_grid_targets(args.grid);
    let mean = evaluate_offline(&d, &env, &grid, args.algo, &hp, env.seed, 0);
    println!(
        "offline mean reward over {}x{} grid ({} records, {}): {:.4}",
        args.grid,
        args.grid,
        d.len(),
        args.algo,
        mean
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
