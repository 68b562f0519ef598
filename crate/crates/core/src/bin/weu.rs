use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use weu::analysis::{self, DEFAULT_BINS};
use weu::baselines::{bpr_fit, mf_fit, BaselineConfig};
use weu::checkpoint::{
    write_train_log, Checkpoint, ModelParameters, ModelType, RngState, TrainStateDoc, CHECKPOINT_FILE,
    TRAIN_LOG_FILE, TRAIN_STATE_FILE,
};
use weu::data::{Partition, SplitDataset};
use weu::evaluation::{evaluate, write_metrics_csv, write_per_user_csv, EvalConfig, DEFAULT_NEGATIVES};
use weu::ingest::{self, DatasetStats, IngestConfig};
use weu::probability::{build_histograms, weight_grid, PwfKind, PwfParams};
use weu::scorer::sort_ranked;
use weu::training::{self, TrainConfig, TrainState};
use weu::utility::DEFAULT_LATENT_DIM;
use weu::{Error, Result};

const THREADS_ENV: &str = "WEU_THREADS";

#[derive(Parser)]
#[command(name = "weu", version, about = "Weighted expected utility recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw ratings CSV and write the chronological split.
    Ingest(IngestArgs),
    /// Fit a model on a split directory.
    Train(TrainArgs),
    /// Sampled-negatives top-K metrics on the test split.
    Evaluate(EvaluateArgs),
    /// Top-K recommendations among items each user has not rated in training.
    Predict(PredictArgs),
    /// Per-user utility scales and the mean weighting curve.
    Analyze(AnalyzeArgs),
    /// Weighting curve `p,w` on a 0.01 grid.
    ExportPwf(ExportPwfArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Raw `user,item,rating,timestamp` CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_interactions: usize,
    #[arg(long, default_value_t = 5)]
    r_max: u8,
    /// Recorded in the stats file; the split itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    eval_negatives: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig { negatives: self.eval_negatives, ks: self.k.clone(), seed: self.seed, threads: thread_cap() }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Split directory written by `ingest`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// One of eu, tf, tf+, prelec, prelec+, cf-lfm, bpr.
    #[arg(long, default_value = "prelec+")]
    model: String,
    #[arg(long, default_value_t = DEFAULT_LATENT_DIM)]
    latent_dim: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Candidate-set size of the choice objective.
    #[arg(long, default_value_t = training::DEFAULT_CANDIDATES)]
    candidates: usize,
    #[arg(long)]
    no_noise: bool,
    /// Continue from the checkpoint and training state in this directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Also write per_user_metrics.csv.
    #[arg(long)]
    per_user: bool,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
}

#[derive(Args)]
struct ExportPwfArgs {
    /// Weighting kind when no checkpoint is given.
    #[arg(long, default_value = "prelec+")]
    model: String,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Use the mean parameters of a trained model over test users.
    #[arg(long, requires = "input")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Writes `pwf.csv` here; standard output otherwise.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn header(model: &str, seed: u64, ks: &[usize]) -> String {
    let mut line = format!("# model={model} seed={seed}");
    if !ks.is_empty() {
        let ks: Vec<String> = ks.iter().map(ToString::to_string).collect();
        line.push_str(&format!(" k={}", ks.join(",")));
    }
    line
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn write_file(path: &Path, head: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{head}")
        .and_then(|_| body(&mut w))
        .and_then(|_| w.flush())
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn load_model(input: &Path, checkpoint: &Path) -> Result<(SplitDataset, Checkpoint)> {
    let dataset = ingest::read_split(input)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.check_against(&dataset)?;
    Ok((dataset, ckpt))
}

fn run_ingest(args: IngestArgs) -> Result<()> {
    let config = IngestConfig { min_interactions: args.min_interactions, r_max: args.r_max, ..IngestConfig::default() };
    let file = File::open(&args.input).map_err(|e| Error::Io { path: args.input.clone(), source: e })?;
    let dataset = ingest::ingest(BufReader::new(file), &config).map_err(|e| match e {
        Error::Parse { .. } | Error::RatingRange { .. } => {
            Error::File { path: args.input.clone(), message: e.to_string() }
        }
        other => other,
    })?;
    make_dir(&args.output_dir)?;
    let stats = DatasetStats::new(&dataset, args.min_interactions, args.seed);
    ingest::write_split(&args.output_dir, &dataset, &stats)?;
    eprintln!(
        "{} users, {} items, {} interactions ({}/{}/{})",
        stats.users, stats.items, stats.interactions, stats.train, stats.validation, stats.test
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let model: ModelType = args.model.parse()?;
    let dataset = ingest::read_split(&args.input)?;
    make_dir(&args.output_dir)?;
    let seed = args.eval.seed;
    let eval = EvalConfig { ks: vec![10], ..args.eval.config() };
    let (ckpt, state, log_metric, rows) = match model.kind() {
        Some(kind) => {
            let defaults = TrainConfig::default();
            let config = TrainConfig {
                candidate_set_size: args.candidates,
                epochs: args.epochs,
                learning_rate: args.lr.unwrap_or(defaults.learning_rate),
                momentum: args.momentum.unwrap_or(defaults.momentum),
                lambda: args.lambda.unwrap_or(defaults.lambda),
                latent_dim: args.latent_dim,
                seed,
                noise_enabled: !args.no_noise,
                kind,
                eval,
                ..defaults
            };
            let fit = match &args.resume {
                Some(dir) => resume_weu(dir, &dataset, &config)?,
                None => training::fit(&dataset, &config)?,
            };
            let rows: Vec<_> = fit.trace.iter().map(|l| (l.epoch, l.objective, l.val_ndcg10)).collect();
            let state = TrainStateDoc {
                model_type: model,
                epoch: fit.state.epoch,
                best_epoch: fit.best_epoch,
                rng: RngState::new(fit.state.seed, fit.state.epoch),
                momentum: ModelParameters::Weu(fit.state.velocity),
            };
            (Checkpoint::weu(fit.params, seed), state, "val_ndcg10", rows)
        }
        None => {
            if args.resume.is_some() {
                return Err(Error::Config("--resume is only supported for utility models".into()));
            }
            let defaults = BaselineConfig::default();
            let config = BaselineConfig {
                epochs: args.epochs,
                learning_rate: args.lr.unwrap_or(defaults.learning_rate),
                momentum: args.momentum.unwrap_or(defaults.momentum),
                lambda: args.lambda.unwrap_or(defaults.lambda),
                latent_dim: args.latent_dim,
                seed,
                eval,
            };
            let (fit, metric) = if model == ModelType::CfLfm {
                (mf_fit(&dataset, &config)?, "val_rmse")
            } else {
                (bpr_fit(&dataset, &config)?, "val_ndcg10")
            };
            let rows: Vec<_> = fit.trace.iter().map(|l| (l.epoch, l.objective, l.validation)).collect();
            let state = TrainStateDoc {
                model_type: model,
                epoch: args.epochs,
                best_epoch: fit.best_epoch,
                rng: RngState::new(seed, args.epochs),
                momentum: ModelParameters::Mf(fit.velocity),
            };
            (Checkpoint::mf(model, fit.params, seed), state, metric, rows)
        }
    };
    ckpt.save(&args.output_dir.join(CHECKPOINT_FILE))?;
    state.save(&args.output_dir.join(TRAIN_STATE_FILE))?;
    write_file(&args.output_dir.join(TRAIN_LOG_FILE), &header(model.name(), seed, &[10]), |w| {
        write_train_log(w, log_metric, &rows)
    })?;
    eprintln!("trained {} epochs, kept epoch {}", rows.len(), state.best_epoch);
    Ok(())
}

fn resume_weu(dir: &Path, dataset: &SplitDataset, config: &TrainConfig) -> Result<training::FitResult> {
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let doc = TrainStateDoc::load(&dir.join(TRAIN_STATE_FILE))?;
    let (ModelParameters::Weu(mut params), ModelParameters::Weu(velocity)) = (ckpt.parameters, doc.momentum) else {
        return Err(Error::Config("resume needs a utility-model checkpoint".into()));
    };
    if params.kind != config.kind {
        return Err(Error::Config(format!("checkpoint model is {}, requested {}", ckpt.model_type, config.kind)));
    }
    velocity.check_shape()?;
    let hists = build_histograms(&dataset.train, dataset.item_count, dataset.r_max);
    let mut state = TrainState { epoch: doc.rng.next_epoch, seed: doc.rng.seed, velocity };
    training::resume(&mut params, &mut state, dataset, &hists, config)
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let (dataset, ckpt) = load_model(&args.input, &args.checkpoint)?;
    let hists = build_histograms(&dataset.train, dataset.item_count, dataset.r_max);
    let config = args.eval.config();
    let report = evaluate(&*ckpt.scorer(&hists), &dataset, Partition::Test, &config)?;
    make_dir(&args.output_dir)?;
    let head = header(ckpt.model_type.name(), ckpt.seed, &config.ks);
    write_file(&args.output_dir.join("metrics.csv"), &head, |w| {
        write_metrics_csv(w, ckpt.model_type.name(), &report.metrics)
    })?;
    if args.per_user {
        write_file(&args.output_dir.join("per_user_metrics.csv"), &head, |w| {
            write_per_user_csv(w, &dataset, &config.ks, &report.per_user)
        })?;
    }
    for (k, m) in report.metrics.ks.iter().zip(&report.metrics.values) {
        eprintln!("K={k}: P={:.6} R={:.6} F1={:.6} NDCG={:.6}", m.precision, m.recall, m.f1, m.ndcg);
    }
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let (dataset, ckpt) = load_model(&args.input, &args.checkpoint)?;
    let hists = build_histograms(&dataset.train, dataset.item_count, dataset.r_max);
    let scorer = ckpt.scorer(&hists);
    let mut seen = dataset.items_by_user(Partition::Train);
    for items in &mut seen {
        items.sort_unstable();
        items.dedup();
    }
    let rank_user = |user: usize| {
        let candidates: Vec<usize> =
            (0..dataset.item_count).filter(|i| seen[user].binary_search(i).is_err()).collect();
        let scores = scorer.score_items(user, &candidates);
        let mut ranked: Vec<(usize, f64)> = candidates.into_iter().zip(scores).collect();
        sort_ranked(&mut ranked);
        ranked.truncate(args.top_k);
        ranked
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap().unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let lists: Vec<Vec<(usize, f64)>> = pool.install(|| (0..dataset.user_count).into_par_iter().map(rank_user).collect());
    make_dir(&args.output_dir)?;
    let head = header(ckpt.model_type.name(), ckpt.seed, &[args.top_k]);
    write_file(&args.output_dir.join("predictions.csv"), &head, |w| {
        writeln!(w, "user_raw_id,item_raw_id,rank,score")?;
        for (user, list) in lists.iter().enumerate() {
            let user_id = dataset.users.raw(user).unwrap_or_default();
            for (rank, (item, score)) in list.iter().enumerate() {
                let item_id = dataset.items.raw(*item).unwrap_or_default();
                writeln!(w, "{user_id},{item_id},{},{score}", rank + 1)?;
            }
        }
        Ok(())
    })
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let (dataset, ckpt) = load_model(&args.input, &args.checkpoint)?;
    let params = ckpt
        .weu_params()
        .ok_or_else(|| Error::Config(format!("analyze needs a utility model, got {}", ckpt.model_type)))?;
    let summaries = analysis::user_scale_summaries(params, &dataset);
    let bins = analysis::scale_histogram(&summaries, args.bins);
    let curve = analysis::export_mean_pwf_curve(params, &dataset, params.kind, args.grid_step);
    make_dir(&args.output_dir)?;
    let head = header(ckpt.model_type.name(), ckpt.seed, &[]);
    write_file(&args.output_dir.join("user_scales.csv"), &head, |w| {
        analysis::write_user_scales(w, &dataset, &summaries)
    })?;
    write_file(&args.output_dir.join("scale_histogram.csv"), &head, |w| analysis::write_scale_histogram(w, &bins))?;
    write_file(&args.output_dir.join("pwf_curve.csv"), &head, |w| analysis::write_pwf_curve(w, &curve))?;
    eprintln!(
        "{} test users, fraction with mean alpha > mean beta: {:.6}",
        summaries.len(),
        analysis::fraction_gain_dominant(&summaries)
    );
    Ok(())
}

fn run_export_pwf(args: ExportPwfArgs) -> Result<()> {
    let (kind, params, model, seed) = match (&args.checkpoint, &args.input) {
        (Some(ckpt), Some(input)) => {
            let (dataset, ckpt) = load_model(input, ckpt)?;
            let params = ckpt
                .weu_params()
                .ok_or_else(|| Error::Config(format!("export-pwf needs a utility model, got {}", ckpt.model_type)))?;
            let mean = analysis::mean_pwf_params(params, &analysis::test_users(&dataset), params.kind);
            (params.kind, mean, ckpt.model_type.name(), ckpt.seed)
        }
        _ => {
            let kind: PwfKind = args.model.parse()?;
            let params = PwfParams::new(args.delta, args.gamma, args.theta);
            if !params.is_valid() {
                return Err(Error::Config("need 0 < delta < 1, gamma > 0, 0 < theta <= 1".into()));
            }
            (kind, params, kind.name(), 0)
        }
    };
    let rows = weight_grid(kind, params, 0.01);
    let head = header(model, seed, &[]);
    let body = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "p,w")?;
        for (p, wv) in &rows {
            writeln!(w, "{p},{wv}")?;
        }
        Ok(())
    };
    match args.output_dir {
        Some(dir) => {
            make_dir(&dir)?;
            write_file(&dir.join("pwf.csv"), &head, body)
        }
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{head}").and_then(|_| body(&mut out)).map_err(|e| Error::Io { path: "-".into(), source: e })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => run_ingest(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Predict(a) => run_predict(a),
        Command::Analyze(a) => run_analyze(a),
        Command::ExportPwf(a) => run_export_pwf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("weu: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("weu: {e}");
            ExitCode::FAILURE
        }
    }
}
