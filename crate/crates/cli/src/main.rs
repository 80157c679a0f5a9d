use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use strange_marl::trainer::MetricsRow;
use strange_marl_cli::config::{Overrides, RunConfig};
use strange_marl_cli::error::{exit, Result};
use strange_marl_cli::run::{self, RunDir, TrainOptions};

#[derive(Parser)]
#[command(name = "strange-marl", version, about = "Train and evaluate value-decomposition MARL with strangeness-driven exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mixer and exploration, e.g. qmix+sim, qmix+sim_wo_eq, vdn+rnd, qmix+none.
    #[arg(long)]
    algo: Option<String>,
    /// matrix_game[:K] or pressureplate[:LAYOUT[:MAX_STEPS]].
    #[arg(long)]
    env: Option<String>,
    #[arg(long, env = "STRANGE_MARL_OUT")]
    out: PathBuf,
    /// Also checkpoint every N env steps.
    #[arg(long, value_name = "N")]
    checkpoint_interval: Option<u64>,
    /// Do not print evaluation rows.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train(RunArgs),
    /// Train one run per seed and aggregate the metrics.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
    /// Continue a run from its checkpoint.
    Resume {
        #[arg(long, env = "STRANGE_MARL_OUT")]
        out: PathBuf,
        /// New total step budget.
        #[arg(long)]
        total_env_steps: Option<u64>,
        #[arg(long, value_name = "N")]
        checkpoint_interval: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy evaluation of a run's goal policy.
    Eval {
        #[arg(long, env = "STRANGE_MARL_OUT")]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides { seed: args.seed, algo: args.algo.clone(), env: args.env.clone() })?;
    config.resolve()
}

fn printer(quiet: bool) -> impl FnMut(u64, &MetricsRow) {
    move |seed, r| {
        if !quiet {
            eprintln!(
                "seed {seed} step {:>8} episodes {:>7} return {:>8.3} length {:>7.2} solved {:.2} eps {:.3}",
                r.env_steps, r.episodes, r.eval_return_mean, r.eval_episode_length_mean, r.eval_win_or_solve_rate, r.epsilon
            );
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = load(&args)?;
            let opts = TrainOptions { checkpoint_interval: args.checkpoint_interval };
            run::train(&config, &RunDir::new(&args.out), &opts, &mut printer(args.quiet))?;
            println!("{}", RunDir::new(&args.out).metrics().display());
        }
        Command::Sweep { run: args, seeds } => {
            let config = load(&args)?;
            let opts = TrainOptions { checkpoint_interval: args.checkpoint_interval };
            run::sweep(&config, &seeds, &args.out, &opts, &mut printer(args.quiet))?;
            println!("{}", args.out.join("aggregate.csv").display());
        }
        Command::Resume { out, total_env_steps, checkpoint_interval, quiet } => {
            let opts = TrainOptions { checkpoint_interval };
            run::resume(&RunDir::new(&out), total_env_steps, &opts, &mut printer(quiet))?;
            println!("{}", RunDir::new(&out).metrics().display());
        }
        Command::Eval { out, episodes } => {
            let r = run::eval(&RunDir::new(&out), episodes)?;
            println!(
                "{{\"mean_return\":{},\"mean_length\":{},\"solve_rate\":{}}}",
                r.mean_return, r.mean_length, r.solve_rate
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
