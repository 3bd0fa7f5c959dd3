#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::rngs::StdRng;
use rand::SeedableRng;

use hoi_refine::cliploss::{self, Activation, Metric};
use hoi_refine::debate::DebateMode;
use hoi_refine::eval::{recall_at_k_dataset, DEFAULT_KS};
use hoi_refine::ingest;
use hoi_refine::pipeline::{Pipeline, Refinement};
use hoi_refine::{EmbeddingBatch, Mlp, RefinementConfig, RelationVocabulary, VideoPredictionSet};

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "hoi-refine", version, about = "Refine video human-object interaction predictions with chat-model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine a prediction file and write fused scores.
    Refine {
        #[command(flatten)]
        run: RunArgs,
        /// Refined prediction file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall@K of a prediction file against ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Relation vocabulary; taken from --config when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score threshold; the configured one (or 0.3) when omitted.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        k: Vec<usize>,
        /// JSON report to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline plus every combination of agent components.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        k: Vec<usize>,
        /// JSONL table to write; a text copy goes to `<out>.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the embedding loss.
    Gradcheck {
        #[arg(long)]
        batch: PathBuf,
        /// Distance; the batch header's when omitted.
        #[arg(long)]
        metric: Option<Metric>,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Seed of the MLP initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value = "tanh")]
        activation: Activation,
    },
    /// Write a random embedding batch file.
    GenBatch {
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        d_f: usize,
        #[arg(long, default_value_t = 4)]
        d_e: usize,
        /// Probability that an off-diagonal cell is in the mask.
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value = "neg_cosine")]
        metric: Metric,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Relation vocabulary; overrides the configured one.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    interval: Option<usize>,
    #[arg(long)]
    debate_mode: Option<DebateMode>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory receiving debate transcripts.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

/// Failure classes and their exit codes.
enum Failure {
    Invalid(anyhow::Error),
    Provider,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.into())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Refine { run, out } => refine(&run, &out),
        Command::Eval { predictions, gt, vocab, config, threshold, k, out } => {
            eval(&predictions, &gt, vocab.as_deref(), config.as_deref(), threshold, &k, out.as_deref())
        }
        Command::Ablate { run, gt, k, out } => ablate(&run, &gt, &k, out.as_deref()),
        Command::Gradcheck { batch, metric, h, seed, hidden, activation } => gradcheck(&batch, metric, h, seed, hidden, activation),
        Command::GenBatch { k, d_f, d_e, density, metric, seed, out } => gen_batch(k, d_f, d_e, density, metric, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Provider) => ExitCode::from(2),
    }
}

fn load_config(run: &RunArgs) -> Result<RefinementConfig> {
    let mut config = RefinementConfig::load(&run.config)?;
    if let Some(v) = &run.vocab {
        config.vocabulary = Some(v.clone());
    }
    if let Some(t) = run.threshold {
        config.weights.threshold = t;
    }
    if let Some(i) = run.interval {
        config.keyframe_interval = i;
    }
    if let Some(m) = run.debate_mode {
        config.debate_mode = m;
    }
    if let Some(d) = &run.cache_dir {
        config.cache_dir = Some(d.clone());
    }
    if let Some(d) = &run.transcripts {
        config.transcript_dir = Some(d.clone());
    }
    config.validate()?;
    Ok(config)
}

fn vocabulary(explicit: Option<&Path>, config: Option<&RefinementConfig>) -> Result<RelationVocabulary> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| config.and_then(|c| c.vocabulary.clone()))
        .context("no relation vocabulary: pass --vocab or set `vocabulary` in the config")?;
    Ok(ingest::load_vocabulary(&path)?)
}

fn prepare(run: &RunArgs) -> Result<(Pipeline, VideoPredictionSet)> {
    let config = load_config(run)?;
    let vocab = vocabulary(None, Some(&config))?;
    let set = ingest::load_predictions(&run.predictions, &vocab)?;
    let pipeline = Pipeline::from_config(config)?;
    Ok((pipeline, set))
}

/// Prints the run summary; provider failures turn into exit status 2.
fn report_run(pipeline: &Pipeline, refinement: &Refinement) -> Result<(), Failure> {
    let summary = pipeline.summary(refinement);
    eprint!("{}", summary.to_text());
    if summary.fatal.is_empty() {
        Ok(())
    } else {
        eprintln!("error: {} provider request(s) failed permanently; results are incomplete", summary.fatal.len());
        Err(Failure::Provider)
    }
}

fn refine(run: &RunArgs, out: &Path) -> Result<(), Failure> {
    let (pipeline, set) = prepare(run)?;
    let refinement = pipeline.refine(&set)?;
    let refined = pipeline.refined_set(&set, &refinement)?;
    ingest::write_prediction_set(&refined, out)?;
    report_run(&pipeline, &refinement)
}

fn eval(
    predictions: &Path,
    gt: &Path,
    vocab: Option<&Path>,
    config: Option<&Path>,
    threshold: Option<f64>,
    ks: &[usize],
    out: Option<&Path>,
) -> Result<(), Failure> {
    let config = config.map(RefinementConfig::load).transpose()?;
    let vocab = vocabulary(vocab, config.as_ref())?;
    let set = ingest::load_predictions(predictions, &vocab)?;
    let truth = ingest::load_ground_truth(gt, &set)?;
    let threshold = threshold.or(config.map(|c| c.weights.threshold)).unwrap_or(0.3);
    let report = recall_at_k_dataset(&set, &truth, threshold, ks)?;
    print!("{}", report.to_text());
    if let Some(out) = out {
        std::fs::write(out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn ablate(run: &RunArgs, gt: &Path, ks: &[usize], out: Option<&Path>) -> Result<(), Failure> {
    let (pipeline, set) = prepare(run)?;
    let truth = ingest::load_ground_truth(gt, &set)?;
    let (table, refinement) = pipeline.ablate(&set, &truth, ks)?;
    let text = table.to_text();
    print!("{text}");
    if let Some(out) = out {
        std::fs::write(out, table.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
        let txt = sidecar(out, "txt");
        std::fs::write(&txt, &text).with_context(|| format!("writing {}", txt.display()))?;
    }
    report_run(&pipeline, &refinement)
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn gradcheck(batch: &Path, metric: Option<Metric>, h: f64, seed: u64, hidden: usize, activation: Activation) -> Result<(), Failure> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(anyhow!("--h must be a positive step, got {h}").into());
    }
    if hidden == 0 {
        return Err(anyhow!("--hidden must be at least 1").into());
    }
    let (batch, header_metric) = EmbeddingBatch::load(batch).with_context(|| format!("reading {}", batch.display()))?;
    let metric = metric.unwrap_or(header_metric);
    let mut rng = StdRng::seed_from_u64(seed);
    let params = Mlp::random(&[3 * batch.d_f(), hidden, batch.d_e()], &[activation, Activation::Identity], &mut rng)?;
    let err = cliploss::finite_diff_check(&params, &batch, metric, h)?;
    println!("max relative error {err:.3e} ({metric}, h = {h:e}, {} parameters)", params.num_params());
    if err <= GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed: {err:.3e} exceeds {GRADCHECK_TOLERANCE:e}").into())
    }
}

fn gen_batch(k: usize, d_f: usize, d_e: usize, density: f64, metric: Metric, seed: u64, out: &Path) -> Result<(), Failure> {
    if k == 0 || d_f == 0 || d_e == 0 {
        return Err(anyhow!("--k, --d-f and --d-e must be positive").into());
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(anyhow!("--density must lie in [0,1]").into());
    }
    let mut rng = StdRng::seed_from_u64(seed);
    EmbeddingBatch::random(k, d_f, d_e, density, &mut rng).save(metric, out)?;
    Ok(())
}
