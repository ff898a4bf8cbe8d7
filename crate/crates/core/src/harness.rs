//! Experiment commands behind the command-line interface.
//!
//! Every command writes CSV files with a header row into its output
//! directory and then draws SVG charts from those CSV files. Apart from
//! wall-clock columns, all numbers are reproducible from the seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{optimize_static, BaselineError, SearchOptions, SearchResult, StaticPolicy};
use crate::env::{poisson_pmf, sample_poisson, EnvError, EpisodeTrace};
use crate::eval::{
    eval_seeds, mean, run_episode, std_dev, summarize, EpisodeSummary, EvalStats, JointPolicy, DEFAULT_EVAL_EPISODES,
    DEFAULT_EVAL_SEED_BASE,
};
use crate::marl::{derive_seed, AlgoConfig, Checkpoint, IterationStats, MarlError, Trainer, Variant};
use crate::plot::{bar_chart_from_csv, line_chart_from_csv, PlotError};
use crate::supply_net::{NetworkError, SupplyNetwork};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Everything a command needs besides its command-specific switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Built-in network name or path to a network file.
    pub network: String,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub noise_std: f64,
    pub lambda_d: Option<f64>,
    pub lambda_l: Option<f64>,
    pub history: Option<usize>,
    pub out: PathBuf,
    /// Overrides the rollout batch size (environment steps per iteration).
    pub batch_steps: Option<usize>,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl ExperimentSpec {
    pub fn new(network: &str, variant: Variant, out: impl Into<PathBuf>) -> Self {
        Self {
            network: network.to_string(),
            variant,
            seeds: vec![0, 1, 2],
            iterations: 60,
            noise_std: 0.0,
            lambda_d: None,
            lambda_l: None,
            history: None,
            out: out.into(),
            batch_steps: None,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            eval_seed: DEFAULT_EVAL_SEED_BASE,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::NoSeeds);
        }
        if !(self.noise_std >= 0.0) {
            return Err(HarnessError::Invalid("noise std must be non-negative".into()));
        }
        if self.history == Some(0) {
            return Err(HarnessError::Invalid("history length must be at least 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::Invalid("need at least one evaluation episode".into()));
        }
        Ok(())
    }

    /// Loads the network and applies the rate and history overrides.
    pub fn network(&self) -> Result<SupplyNetwork, HarnessError> {
        let mut net = SupplyNetwork::resolve(&self.network)?;
        if let Some(l) = self.lambda_d {
            net = net.with_demand_rate(l)?;
        }
        if let Some(l) = self.lambda_l {
            net = net.with_lead_rate(l)?;
        }
        if let Some(m) = self.history {
            net = net.with_history(m);
        }
        Ok(net)
    }

    pub fn algo_config(&self, seed: u64) -> AlgoConfig {
        let mut cfg = AlgoConfig::new(self.variant);
        cfg.seed = seed;
        cfg.iterations = self.iterations;
        cfg.noise_std = self.noise_std;
        if let Some(b) = self.batch_steps {
            cfg.batch_steps = b;
        }
        cfg
    }

    pub fn eval_seed_list(&self) -> Vec<u64> {
        eval_seeds(self.eval_seed, self.eval_episodes)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let rows = csv::Reader::from_path(path)?
        .deserialize()
        .collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn write_iteration_log(path: &Path, history: &[IterationStats]) -> Result<(), HarnessError> {
    write_rows(path, history)
}

/// One evaluation summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub network: String,
    pub lambda_d: f64,
    pub episodes: usize,
    pub profit_mean: f64,
    pub profit_std: f64,
    pub backlog_median: f64,
    pub backlog_std: f64,
    pub inventory_median: f64,
    pub inventory_std: f64,
}

impl EvalRow {
    pub fn new(label: &str, network: &str, lambda_d: f64, s: &EvalStats) -> Self {
        Self {
            label: label.to_string(),
            network: network.to_string(),
            lambda_d,
            episodes: s.episodes,
            profit_mean: s.profit_mean,
            profit_std: s.profit_std,
            backlog_median: s.backlog_median,
            backlog_std: s.backlog_std,
            inventory_median: s.inventory_median,
            inventory_std: s.inventory_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeRow {
    episode: usize,
    seed: u64,
    profit: f64,
    mean_backlog: f64,
    mean_inventory: f64,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub resume: bool,
    /// Save a checkpoint every this many iterations (and always at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            resume: false,
            checkpoint_every: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub seed: u64,
    pub history: Vec<IterationStats>,
    pub eval: EvalStats,
}

pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(format!("{}-seed{seed}", variant.name()))
}

fn save_run(dir: &Path, trainer: &Trainer) -> Result<(), HarnessError> {
    trainer.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
    write_iteration_log(&dir.join(TRAIN_LOG_FILE), &trainer.history)
}

/// Trains one run per seed into `<out>/<algo>-seed<k>/`: training log,
/// checkpoint, the network used, a deterministic evaluation of the final
/// policy and training-curve plots.
pub fn cmd_train(spec: &ExperimentSpec, opts: &TrainOptions) -> Result<Vec<RunSummary>, HarnessError> {
    spec.validate()?;
    let net = spec.network()?;
    let mut runs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let dir = run_dir(&spec.out, spec.variant, seed);
        create_dir(&dir)?;
        let ck_path = dir.join(CHECKPOINT_FILE);
        let mut trainer = if opts.resume && ck_path.exists() {
            let ck = Checkpoint::load(&ck_path)?;
            if ck.config.variant != spec.variant || ck.config.seed != seed {
                return Err(HarnessError::Invalid(format!(
                    "checkpoint {} was written by {} seed {}",
                    ck_path.display(),
                    ck.config.variant,
                    ck.config.seed
                )));
            }
            Trainer::from_checkpoint(ck, net.clone())?
        } else {
            Trainer::new(spec.algo_config(seed), net.clone(), &spec.network)?
        };
        let net_path = dir.join("network.txt");
        fs::write(&net_path, net.to_config_text()).map_err(io_err(&net_path))?;
        while trainer.iteration < spec.iterations {
            let s = trainer.train_iteration()?;
            eprintln!(
                "[{} seed {seed}] iter {:>3}  profit {:>10.1}  entropy {:.4}  kl {:.5}  {:.2}s",
                spec.variant, s.iteration, s.mean_profit, s.entropy, s.kl, s.seconds
            );
            if opts.checkpoint_every > 0 && s.iteration % opts.checkpoint_every == 0 {
                save_run(&dir, &trainer)?;
            }
        }
        save_run(&dir, &trainer)?;
        let (eval, _) = trainer.policy().evaluate(&net, &spec.eval_seed_list())?;
        let row = EvalRow::new(
            &format!("{}-seed{seed}", spec.variant.name()),
            &spec.network,
            net.lambda_d,
            &eval,
        );
        write_rows(&dir.join(EVAL_SUMMARY_FILE), &[row])?;
        plot_outputs(&dir)?;
        runs.push(RunSummary {
            dir,
            seed,
            history: trainer.history.clone(),
            eval,
        });
    }
    Ok(runs)
}

/// What `cmd_eval` evaluates.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    Checkpoint(PathBuf),
    Static(PathBuf),
}

fn load_policy(source: &PolicySource, net: &SupplyNetwork) -> Result<(Box<dyn JointPolicy>, String), HarnessError> {
    match source {
        PolicySource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_network(net)?;
            let label = format!("{}-seed{}", ck.config.variant.name(), ck.config.seed);
            Ok((Box::new(ck.policy()), label))
        }
        PolicySource::Static(path) => {
            let file = fs::File::open(path).map_err(io_err(path))?;
            let policy = StaticPolicy::read_csv(file)?;
            policy.validate(net)?;
            Ok((Box::new(policy), "static".to_string()))
        }
    }
}

/// Deterministic evaluation: one trace per episode under `<out>/traces/`,
/// per-episode statistics and a one-row summary.
pub fn cmd_eval(spec: &ExperimentSpec, source: &PolicySource) -> Result<EvalStats, HarnessError> {
    spec.validate()?;
    let net = spec.network()?;
    let (policy, label) = load_policy(source, &net)?;
    let traces = spec.out.join("traces");
    create_dir(&traces)?;
    let mut episodes = Vec::with_capacity(spec.eval_episodes);
    for (k, seed) in spec.eval_seed_list().into_iter().enumerate() {
        let mut trace = EpisodeTrace::default();
        episodes.push(run_episode(&net, policy.as_ref(), seed, Some(&mut trace)));
        let path = traces.join(format!("episode_{k:02}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        trace.write_csv(file)?;
    }
    let stats = summarize(&episodes);
    write_episode_rows(&spec.out.join("episodes.csv"), &episodes)?;
    write_rows(
        &spec.out.join(EVAL_SUMMARY_FILE),
        &[EvalRow::new(&label, &spec.network, net.lambda_d, &stats)],
    )?;
    plot_outputs(&spec.out)?;
    Ok(stats)
}

fn write_episode_rows(path: &Path, episodes: &[EpisodeSummary]) -> Result<(), HarnessError> {
    let rows: Vec<EpisodeRow> = episodes
        .iter()
        .enumerate()
        .map(|(k, e)| EpisodeRow {
            episode: k,
            seed: e.seed,
            profit: e.profit,
            mean_backlog: e.mean_backlog,
            mean_inventory: e.mean_inventory,
        })
        .collect();
    write_rows(path, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaselineSummaryRow {
    network: String,
    n_starts: usize,
    budget: usize,
    evaluations: usize,
    truncated: bool,
    tuning_profit: f64,
    eval_profit_mean: f64,
    eval_profit_std: f64,
    eval_backlog_median: f64,
    eval_inventory_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SearchTraceRow {
    start: usize,
    accepted_move: usize,
    objective: f64,
}

/// Tunes the static policy, writes it to `static_policy.csv` and evaluates
/// it on the evaluation seeds.
pub fn cmd_baseline(spec: &ExperimentSpec, search: &SearchOptions) -> Result<(SearchResult, EvalStats), HarnessError> {
    spec.validate()?;
    let net = spec.network()?;
    create_dir(&spec.out)?;
    let result = optimize_static(&net, search);
    let path = spec.out.join("static_policy.csv");
    result
        .policy
        .write_csv(fs::File::create(&path).map_err(io_err(&path))?)?;
    let episodes: Vec<EpisodeSummary> = spec
        .eval_seed_list()
        .into_iter()
        .map(|s| run_episode(&net, &result.policy, s, None))
        .collect();
    let stats = summarize(&episodes);
    write_rows(
        &spec.out.join("baseline_summary.csv"),
        &[BaselineSummaryRow {
            network: spec.network.clone(),
            n_starts: search.n_starts,
            budget: search.budget,
            evaluations: result.evaluations,
            truncated: result.truncated,
            tuning_profit: result.profit,
            eval_profit_mean: stats.profit_mean,
            eval_profit_std: stats.profit_std,
            eval_backlog_median: stats.backlog_median,
            eval_inventory_median: stats.inventory_median,
        }],
    )?;
    let trace: Vec<SearchTraceRow> = result
        .starts
        .iter()
        .enumerate()
        .flat_map(|(k, r)| {
            r.accepted.iter().enumerate().map(move |(m, &objective)| SearchTraceRow {
                start: k,
                accepted_move: m,
                objective,
            })
        })
        .collect();
    write_rows(&spec.out.join("search_trace.csv"), &trace)?;
    plot_outputs(&spec.out)?;
    Ok((result, stats))
}

pub const NOISE_LEVELS: [f64; 6] = [0.0, 0.1, 0.2, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub seed: u64,
    pub profit_mean: f64,
    pub profit_std: f64,
    pub backlog_median: f64,
    pub inventory_median: f64,
    pub final_entropy: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NoiseSummaryRow {
    sigma: f64,
    seeds: usize,
    profit_mean: f64,
    profit_seed_std: f64,
    final_entropy_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntropyRow {
    sigma: f64,
    seed: u64,
    iteration: usize,
    entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeanEntropyRow {
    sigma: f64,
    iteration: usize,
    entropy: f64,
}

/// Trains the noise-regularized variant at each noise level and seed.
/// Writes per-run rows (`noise_sweep.csv`), per-level means
/// (`noise_sweep_summary.csv`) and entropy curves.
pub fn cmd_noise_sweep(spec: &ExperimentSpec, sigmas: &[f64]) -> Result<Vec<NoiseRow>, HarnessError> {
    spec.validate()?;
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(HarnessError::Invalid("noise levels must be non-negative".into()));
    }
    let net = spec.network()?;
    create_dir(&spec.out)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    let mut mean_curves = Vec::new();
    for &sigma in sigmas {
        let mut finals: Vec<Vec<f64>> = Vec::new();
        for &seed in &spec.seeds {
            let mut cfg = spec.algo_config(seed);
            cfg.variant = Variant::RegPGcnMappo;
            cfg.noise_std = sigma;
            let start = Instant::now();
            let mut trainer = Trainer::new(cfg, net.clone(), &spec.network)?;
            trainer.train(spec.iterations, |s| {
                eprintln!(
                    "[sigma {sigma} seed {seed}] iter {:>3}  profit {:>10.1}  entropy {:.4}",
                    s.iteration, s.mean_profit, s.entropy
                )
            })?;
            let train_seconds = start.elapsed().as_secs_f64();
            let dir = spec.out.join(format!("sigma{sigma}-seed{seed}"));
            create_dir(&dir)?;
            write_iteration_log(&dir.join(TRAIN_LOG_FILE), &trainer.history)?;
            let (eval, _) = trainer.policy().evaluate(&net, &spec.eval_seed_list())?;
            rows.push(NoiseRow {
                sigma,
                seed,
                profit_mean: eval.profit_mean,
                profit_std: eval.profit_std,
                backlog_median: eval.backlog_median,
                inventory_median: eval.inventory_median,
                final_entropy: trainer.mean_entropy(),
                train_seconds,
            });
            curves.extend(trainer.history.iter().map(|h| EntropyRow {
                sigma,
                seed,
                iteration: h.iteration,
                entropy: h.entropy,
            }));
            finals.push(trainer.history.iter().map(|h| h.entropy).collect());
        }
        let these: Vec<&NoiseRow> = rows.iter().filter(|r| r.sigma == sigma).collect();
        let profits: Vec<f64> = these.iter().map(|r| r.profit_mean).collect();
        summary.push(NoiseSummaryRow {
            sigma,
            seeds: these.len(),
            profit_mean: mean(&profits),
            profit_seed_std: std_dev(&profits),
            final_entropy_mean: mean(&these.iter().map(|r| r.final_entropy).collect::<Vec<_>>()),
        });
        for it in 0..spec.iterations {
            let at: Vec<f64> = finals.iter().filter_map(|c| c.get(it).copied()).collect();
            mean_curves.push(MeanEntropyRow {
                sigma,
                iteration: it + 1,
                entropy: mean(&at),
            });
        }
    }
    write_rows(&spec.out.join("noise_sweep.csv"), &rows)?;
    write_rows(&spec.out.join("noise_sweep_summary.csv"), &summary)?;
    write_rows(&spec.out.join("noise_entropy.csv"), &curves)?;
    write_rows(&spec.out.join("noise_entropy_mean.csv"), &mean_curves)?;
    if let Some(best) = summary.iter().max_by(|a, b| a.profit_mean.total_cmp(&b.profit_mean)) {
        eprintln!("best mean profit at sigma = {} ({:.1})", best.sigma, best.profit_mean);
    }
    plot_outputs(&spec.out)?;
    Ok(rows)
}

pub const DEMAND_RATES: [f64; 5] = [3.0, 4.0, 5.0, 6.0, 7.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandShiftRow {
    pub lambda_d: f64,
    pub trained_lambda_d: f64,
    pub profit_mean: f64,
    pub profit_std: f64,
    pub backlog_median: f64,
    pub backlog_std: f64,
    pub inventory_median: f64,
    pub inventory_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub lambda_d: f64,
    pub k: u64,
    pub empirical: f64,
    pub theoretical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandFitRow {
    pub lambda_d: f64,
    pub samples: usize,
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandShiftReport {
    pub rows: Vec<DemandShiftRow>,
    pub fits: Vec<DemandFitRow>,
    /// Soft check: median backlog never falls as demand rises.
    pub backlog_non_decreasing: bool,
}

/// Empirical demand histogram and its total variation distance to the
/// Poisson pmf (mass beyond the largest observed count included).
pub fn demand_histogram(lambda: f64, samples: usize, seed: u64) -> Result<(Vec<HistogramRow>, f64), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: Vec<usize> = Vec::new();
    for _ in 0..samples {
        let k = sample_poisson(&mut rng, lambda)? as usize;
        if k >= counts.len() {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
    }
    let mut rows = Vec::with_capacity(counts.len());
    let mut tv = 0.0;
    let mut covered = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let empirical = c as f64 / samples.max(1) as f64;
        let theoretical = poisson_pmf(lambda, k as u64);
        covered += theoretical;
        tv += (empirical - theoretical).abs();
        rows.push(HistogramRow {
            lambda_d: lambda,
            k: k as u64,
            empirical,
            theoretical,
        });
    }
    tv += (1.0 - covered).max(0.0);
    Ok((rows, 0.5 * tv))
}

/// Evaluates a checkpoint under several demand rates and records the
/// demand histograms at each rate.
pub fn cmd_demand_shift(
    spec: &ExperimentSpec,
    checkpoint: &Path,
    lambdas: &[f64],
    samples: usize,
) -> Result<DemandShiftReport, HarnessError> {
    spec.validate()?;
    let base = spec.network()?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_network(&base)?;
    let policy = ck.policy();
    create_dir(&spec.out)?;
    let mut rows = Vec::new();
    let mut hist = Vec::new();
    let mut fits = Vec::new();
    for (k, &lambda) in lambdas.iter().enumerate() {
        let net = base.clone().with_demand_rate(lambda)?;
        let (s, _) = policy.evaluate(&net, &spec.eval_seed_list())?;
        rows.push(DemandShiftRow {
            lambda_d: lambda,
            trained_lambda_d: ck.lambda_d,
            profit_mean: s.profit_mean,
            profit_std: s.profit_std,
            backlog_median: s.backlog_median,
            backlog_std: s.backlog_std,
            inventory_median: s.inventory_median,
            inventory_std: s.inventory_std,
        });
        let seed = derive_seed(spec.seeds[0], &[0xd3, k as u64]);
        let (h, tv) = demand_histogram(lambda, samples, seed)?;
        hist.extend(h);
        fits.push(DemandFitRow {
            lambda_d: lambda,
            samples,
            total_variation: tv,
        });
    }
    let mut sorted: Vec<&DemandShiftRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.lambda_d.total_cmp(&b.lambda_d));
    let backlog_non_decreasing = sorted.windows(2).all(|w| w[1].backlog_median >= w[0].backlog_median);
    if !backlog_non_decreasing {
        eprintln!("note: median backlog is not monotone in the demand rate");
    }
    write_rows(&spec.out.join("demand_shift.csv"), &rows)?;
    write_rows(&spec.out.join("demand_histogram.csv"), &hist)?;
    write_rows(&spec.out.join("demand_fit.csv"), &fits)?;
    plot_outputs(&spec.out)?;
    Ok(DemandShiftReport {
        rows,
        fits,
        backlog_non_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRawRow {
    pub network: String,
    pub nodes: usize,
    pub variant: String,
    pub iteration: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub network: String,
    pub nodes: usize,
    pub variant: String,
    pub iterations: usize,
    pub kept: usize,
    pub removed_outliers: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub critic_input_dim: usize,
}

/// Mean and standard deviation after dropping samples more than two
/// standard deviations from the mean. Returns `(mean, std, kept, removed)`.
pub fn trimmed_stats(xs: &[f64]) -> (f64, f64, usize, usize) {
    let m = mean(xs);
    let sd = std_dev(xs);
    let kept: Vec<f64> = xs.iter().copied().filter(|x| (x - m).abs() <= 2.0 * sd).collect();
    (mean(&kept), std_dev(&kept), kept.len(), xs.len() - kept.len())
}

/// Per-iteration training time for each (network, variant). Variants on the
/// same network advance one iteration at a time in turn, so slow drifts in
/// machine load affect them alike.
pub fn cmd_timing(
    spec: &ExperimentSpec,
    networks: &[String],
    variants: &[Variant],
) -> Result<Vec<TimingRow>, HarnessError> {
    spec.validate()?;
    create_dir(&spec.out)?;
    let mut raw = Vec::new();
    let mut rows = Vec::new();
    for name in networks {
        let mut net_spec = spec.clone();
        net_spec.network = name.clone();
        let net = net_spec.network()?;
        let mut trainers = variants
            .iter()
            .map(|&v| {
                let mut cfg = net_spec.algo_config(spec.seeds[0]);
                cfg.variant = v;
                Trainer::new(cfg, net.clone(), name)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut times = vec![Vec::with_capacity(spec.iterations); trainers.len()];
        for it in 0..spec.iterations {
            for (k, trainer) in trainers.iter_mut().enumerate() {
                let s = trainer.train_iteration()?;
                eprintln!("[timing {name} {}] iter {:>3}  {:.3}s", trainer.config.variant, it + 1, s.seconds);
                times[k].push(s.seconds);
                raw.push(TimingRawRow {
                    network: name.clone(),
                    nodes: net.len(),
                    variant: trainer.config.variant.name().to_string(),
                    iteration: it + 1,
                    seconds: s.seconds,
                });
            }
        }
        for (trainer, t) in trainers.iter().zip(&times) {
            let (m, sd, kept, removed) = trimmed_stats(t);
            rows.push(TimingRow {
                network: name.clone(),
                nodes: net.len(),
                variant: trainer.config.variant.name().to_string(),
                iterations: t.len(),
                kept,
                removed_outliers: removed,
                mean_seconds: m,
                std_seconds: sd,
                critic_input_dim: trainer.critic.input_dim(),
            });
        }
    }
    write_rows(&spec.out.join("timing_raw.csv"), &raw)?;
    write_rows(&spec.out.join("timing.csv"), &rows)?;
    plot_outputs(&spec.out)?;
    Ok(rows)
}

/// Redraws every chart whose source CSV exists in `dir`.
pub fn plot_outputs(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    type Job = (&'static str, &'static str, &'static str, Option<&'static str>, &'static str, &'static str);
    let lines: [Job; 9] = [
        (TRAIN_LOG_FILE, "training_profit.svg", "Mean episode profit during training", None, "iteration", "mean_profit"),
        (TRAIN_LOG_FILE, "entropy.svg", "Mean policy entropy", None, "iteration", "entropy"),
        ("noise_entropy_mean.csv", "noise_entropy.svg", "Policy entropy by noise level", Some("sigma"), "iteration", "entropy"),
        ("demand_shift.csv", "demand_shift_profit.svg", "Profit under shifted demand", None, "lambda_d", "profit_mean"),
        ("demand_shift.csv", "demand_shift_backlog.svg", "Median backlog under shifted demand", None, "lambda_d", "backlog_median"),
        ("demand_shift.csv", "demand_shift_inventory.svg", "Median inventory under shifted demand", None, "lambda_d", "inventory_median"),
        ("demand_histogram.csv", "demand_histogram.svg", "Empirical demand distribution", Some("lambda_d"), "k", "empirical"),
        ("timing.csv", "timing.svg", "Training time per iteration", Some("variant"), "nodes", "mean_seconds"),
        ("search_trace.csv", "baseline_search.svg", "Static policy search", Some("start"), "accepted_move", "objective"),
    ];
    let mut written = Vec::new();
    for (csv_name, svg, title, group, x, y) in lines {
        let src = dir.join(csv_name);
        if src.exists() {
            let dst = dir.join(svg);
            line_chart_from_csv(&src, &dst, title, group, x, y)?;
            written.push(dst);
        }
    }
    let src = dir.join("noise_sweep_summary.csv");
    if src.exists() {
        let dst = dir.join("noise_sweep.svg");
        bar_chart_from_csv(&src, &dst, "Evaluation profit by noise level", "sigma", "profit_mean", Some("profit_seed_std"))?;
        written.push(dst);
    }
    Ok(written)
}
