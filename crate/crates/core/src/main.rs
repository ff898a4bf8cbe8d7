use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use echelon::baseline::SearchOptions;
use echelon::eval::{DEFAULT_EVAL_EPISODES, DEFAULT_EVAL_SEED_BASE};
use echelon::harness::{
    cmd_baseline, cmd_demand_shift, cmd_eval, cmd_noise_sweep, cmd_timing, cmd_train, plot_outputs, ExperimentSpec,
    PolicySource, TrainOptions, DEMAND_RATES, NOISE_LEVELS,
};
use echelon::marl::Variant;
use echelon::supply_net::BUILTIN_NAMES;

/// Multi-echelon inventory control with multi-agent PPO.
///
/// The rollout worker count is read from ECHELON_WORKERS (default 1).
#[derive(Parser)]
#[command(name = "echelon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Built-in network (net6, net12, net18, net24) or a network file
    #[arg(long)]
    net: Option<String>,
    /// ippo, mappo, g-mappo, p-gcn-mappo or reg-p-gcn-mappo
    #[arg(long, default_value = "reg-p-gcn-mappo")]
    algo: String,
    /// Training seeds, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
    seed: Vec<u64>,
    /// Training iterations
    #[arg(long)]
    iters: Option<usize>,
    /// Value-noise standard deviation (reg-p-gcn-mappo only)
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Override the mean customer demand
    #[arg(long)]
    lambda_d: Option<f64>,
    /// Override the mean lead time
    #[arg(long)]
    lambda_l: Option<f64>,
    /// Override the observation history length
    #[arg(long, value_name = "M")]
    history: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Environment steps per training iteration
    #[arg(long)]
    batch_steps: Option<usize>,
    /// Evaluation episodes
    #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
    episodes: usize,
    /// Seed of the first evaluation episode
    #[arg(long, default_value_t = DEFAULT_EVAL_SEED_BASE)]
    eval_seed: u64,
}

impl Common {
    fn spec(&self, default_net: &str, default_iters: usize) -> Result<ExperimentSpec> {
        let variant: Variant = self.algo.parse()?;
        let mut spec = ExperimentSpec::new(self.net.as_deref().unwrap_or(default_net), variant, &self.out);
        spec.seeds = self.seed.clone();
        spec.iterations = self.iters.unwrap_or(default_iters);
        spec.noise_std = self.noise_std;
        spec.lambda_d = self.lambda_d;
        spec.lambda_l = self.lambda_l;
        spec.history = self.history;
        spec.batch_steps = self.batch_steps;
        spec.eval_episodes = self.episodes;
        spec.eval_seed = self.eval_seed;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in each run directory
        #[arg(long)]
        resume: bool,
        /// Checkpoint interval in iterations
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Evaluate a checkpoint or a static policy file
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "policy")]
        checkpoint: Option<PathBuf>,
        /// Static (s, S) policy CSV written by `baseline`
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Tune the static (s, S) heuristic
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        starts: usize,
        /// Total objective evaluations
        #[arg(long, default_value_t = 5000)]
        budget: usize,
        /// Episodes per objective evaluation
        #[arg(long, default_value_t = 20)]
        tune_episodes: usize,
    },
    /// Train the noise-regularized variant at several noise levels
    NoiseSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = NOISE_LEVELS.to_vec())]
        sigmas: Vec<f64>,
    },
    /// Evaluate a checkpoint under different demand rates
    DemandShift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEMAND_RATES.to_vec())]
        lambdas: Vec<f64>,
        /// Demand draws per rate for the histogram
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Measure training time per iteration across networks and variants
    Timing {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        nets: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        algos: Vec<String>,
    },
    /// Redraw the charts in a directory from its CSV files
    Plot { dir: PathBuf },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            common,
            resume,
            checkpoint_every,
        } => {
            let spec = common.spec("net6", 60)?;
            let runs = cmd_train(
                &spec,
                &TrainOptions {
                    resume,
                    checkpoint_every,
                },
            )?;
            for r in runs {
                println!(
                    "{}: profit {:.1} +- {:.1}, median backlog {:.1}, median inventory {:.1}",
                    r.dir.display(),
                    r.eval.profit_mean,
                    r.eval.profit_std,
                    r.eval.backlog_median,
                    r.eval.inventory_median
                );
            }
        }
        Command::Eval {
            common,
            checkpoint,
            policy,
        } => {
            let spec = common.spec("net6", 0)?;
            let source = match (checkpoint, policy) {
                (Some(c), None) => PolicySource::Checkpoint(c),
                (None, Some(p)) => PolicySource::Static(p),
                _ => bail!("pass exactly one of --checkpoint or --policy"),
            };
            let s = cmd_eval(&spec, &source)?;
            println!(
                "profit {:.1} +- {:.1}, median backlog {:.1}, median inventory {:.1}",
                s.profit_mean, s.profit_std, s.backlog_median, s.inventory_median
            );
        }
        Command::Baseline {
            common,
            starts,
            budget,
            tune_episodes,
        } => {
            let spec = common.spec("net6", 0)?;
            let search = SearchOptions {
                n_starts: starts,
                budget,
                seed: spec.seeds[0],
                episodes: tune_episodes,
                ..SearchOptions::default()
            };
            let (res, s) = cmd_baseline(&spec, &search)?;
            println!(
                "static policy {:?}: tuning profit {:.1}, evaluation profit {:.1} +- {:.1}{}",
                res.policy.levels,
                res.profit,
                s.profit_mean,
                s.profit_std,
                if res.truncated { " (budget exhausted)" } else { "" }
            );
        }
        Command::NoiseSweep { common, sigmas } => {
            let spec = common.spec("net18", 60)?;
            for r in cmd_noise_sweep(&spec, &sigmas)? {
                println!(
                    "sigma {:<4} seed {}: profit {:.1}, final entropy {:.4}",
                    r.sigma, r.seed, r.profit_mean, r.final_entropy
                );
            }
        }
        Command::DemandShift {
            common,
            checkpoint,
            lambdas,
            samples,
        } => {
            let spec = common.spec("net6", 0)?;
            let report = cmd_demand_shift(&spec, &checkpoint, &lambdas, samples)?;
            for (r, f) in report.rows.iter().zip(&report.fits) {
                println!(
                    "lambda_d {}: profit {:.1}, median backlog {:.1}, median inventory {:.1}, demand TV {:.4}",
                    r.lambda_d, r.profit_mean, r.backlog_median, r.inventory_median, f.total_variation
                );
            }
        }
        Command::Timing { common, nets, algos } => {
            let spec = common.spec("net6", 12)?;
            let nets = if nets.is_empty() {
                BUILTIN_NAMES.iter().map(|s| s.to_string()).collect()
            } else {
                nets
            };
            let variants = if algos.is_empty() {
                Variant::ALL.to_vec()
            } else {
                algos
                    .iter()
                    .map(|a| a.parse())
                    .collect::<Result<Vec<Variant>, _>>()?
            };
            for r in cmd_timing(&spec, &nets, &variants)? {
                println!(
                    "{} {}: {:.3}s +- {:.3}s per iteration ({} outliers removed)",
                    r.network, r.variant, r.mean_seconds, r.std_seconds, r.removed_outliers
                );
            }
        }
        Command::Plot { dir } => {
            let written = plot_outputs(&dir).with_context(|| format!("plotting {}", dir.display()))?;
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
