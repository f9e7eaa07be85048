use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use isgc_core::config::{self, ExperimentConfig, Preset};
use isgc_core::experiment::{self, Algo};
use isgc_core::oracle::DEFAULT_RESOLUTION;
use isgc_core::Result;

#[derive(Parser)]
#[command(
    name = "isgc-alloc",
    version,
    about = "Bandwidth allocation for semantic, AIGC and rendering links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Diffusion,
    Ppo,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Args)]
struct Common {
    /// Config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; `train` without it sweeps the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Number of states (oracle, compare).
    #[arg(long)]
    states: Option<usize>,
    /// Oracle grid resolution.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write curve, checkpoints and manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        algo: AlgoArg,
        /// Run a seed sweep on parallel threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Solve sampled states with the grid oracle.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a diffusion run and a PPO run on the same states.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Run directory holding actor.ckpt, or `oracle`.
        #[arg(long)]
        diffusion_run: PathBuf,
        #[arg(long)]
        ppo_run: PathBuf,
        /// Accepted for interface symmetry; both runs are always evaluated.
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let preset = common.preset.map(|p| match p {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    });
    let mut cfg = match &common.config {
        Some(path) => config::parse_config(path, preset)?,
        None => config::parse_str("", Path::new("<defaults>"), preset)?,
    };
    if let Some(r) = common.resolution {
        cfg.diffusion.oracle_resolution = r;
        cfg.ppo.oracle_resolution = r;
        cfg.validate()?;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            algo,
            parallel,
        } => {
            let cfg = load(&common)?;
            let algo = match algo {
                AlgoArg::Diffusion => Algo::Diffusion,
                AlgoArg::Ppo => Algo::Ppo,
            };
            let report = |seed: u64, s: &experiment::TrainSummary| match &s.final_eval {
                Some(e) => println!(
                    "{} seed {seed}: mean reward {:.4}, mean utility {:.4}, oracle ratio {:.4}",
                    algo.as_str(),
                    e.mean_reward,
                    e.mean_utility,
                    e.oracle_ratio
                ),
                None => println!("{} seed {seed}: no epochs run", algo.as_str()),
            };
            if let Some(seed) = common.seed {
                let s = experiment::cmd_train(&cfg, algo, seed, &cfg.out_dir)?;
                report(seed, &s);
                return Ok(());
            }
            let dirs: Vec<(u64, PathBuf)> = cfg
                .seeds
                .iter()
                .map(|s| (*s, cfg.out_dir.join(format!("seed-{s}"))))
                .collect();
            if parallel {
                let results: Vec<Result<experiment::TrainSummary>> = std::thread::scope(|scope| {
                    let handles: Vec<_> = dirs
                        .iter()
                        .map(|(seed, dir)| {
                            let cfg = &cfg;
                            scope.spawn(move || experiment::cmd_train(cfg, algo, *seed, dir))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("training thread panicked"))
                        .collect()
                });
                for ((seed, _), r) in dirs.iter().zip(results) {
                    report(*seed, &r?);
                }
            } else {
                for (seed, dir) in &dirs {
                    report(*seed, &experiment::cmd_train(&cfg, algo, *seed, dir)?);
                }
            }
            Ok(())
        }
        Command::Oracle { common } => {
            let cfg = load(&common)?;
            let seed = common.seed.unwrap_or(cfg.seeds[0]);
            let b = experiment::cmd_oracle(
                &cfg,
                common.states.unwrap_or(1000),
                seed,
                common.resolution.unwrap_or(DEFAULT_RESOLUTION),
                &cfg.out_dir,
            )?;
            println!(
                "oracle: mean utility {:.4}, infeasible {} of {}",
                b.mean_utility,
                b.infeasible_count,
                b.per_state.len()
            );
            Ok(())
        }
        Command::Compare {
            common,
            diffusion_run,
            ppo_run,
            algo: _,
        } => {
            let cfg = load(&common)?;
            let seed = common.seed.unwrap_or(cfg.diffusion.eval_seed);
            let s = experiment::cmd_compare(
                &cfg,
                &diffusion_run,
                &ppo_run,
                common.states.unwrap_or(cfg.diffusion.eval_states),
                seed,
                common.resolution.unwrap_or(cfg.diffusion.oracle_resolution),
                &cfg.out_dir,
            )?;
            println!(
                "diffusion reward {:.4} (ratio {:.4}), ppo reward {:.4} (ratio {:.4}), gap {:+.4}",
                s.diffusion.mean_reward,
                s.diffusion.oracle_ratio,
                s.ppo.mean_reward,
                s.ppo.oracle_ratio,
                s.reward_gap
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
