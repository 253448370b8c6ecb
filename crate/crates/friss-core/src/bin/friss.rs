//! Command-line front end: corpus validation and splitting, training,
//! cross-validation, ablations, prediction and interpretation.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use friss_core::corpus::{
    filter_document, load_corpus, save_corpus, stratified_folds, validate_document, CorpusSplit,
    Document, LabelRegistry, MFC_FRAMES,
};
use friss_core::encoding::{build_encoder, encode_document};
use friss_core::error::{FrissError, Result};
use friss_core::interpret::{
    default_palette, export_html, extract_descriptors, highlight_document, DescriptorMode,
    SimpleNormalizer,
};
use friss_core::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelParams};
use friss_core::synthetic::{generate, generate_unlabeled, SyntheticConfig};
use friss_core::trainer::{
    ablate, aggregate_cv, train_fold, AblationSwitch, TrainConfig, TrainReport,
};

#[derive(Parser)]
#[command(name = "friss", about = "Semi-supervised interpretable frame classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus inspection and fold splitting.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train on one fold of a split.
    Train(TrainArgs),
    /// Full k-fold cross-validation.
    Cv(CvArgs),
    /// Cross-validation under an ablation switch.
    Ablate(AblateArgs),
    /// Per-document frame prediction.
    Predict(PredictArgs),
    /// Extract ranked frame descriptors from a trained model.
    Interpret(InterpretArgs),
    /// Render one document with span-level frame highlighting.
    Highlight(HighlightArgs),
    /// Generate a synthetic corpus with planted frame signal.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Check every document against the schema and span invariants.
    Validate { path: PathBuf },
    /// Write a stratified fold assignment.
    Split {
        path: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Fold assignment JSON; derived from the config's fold count and seed
    /// when omitted.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    /// One of: -focal, -gumbel, -focal-gumbel, p_only, arg0_only, arg1_only.
    #[arg(long, allow_hyphen_values = true)]
    switch: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpretArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    /// Use one sharpened sample per span instead of the plain distribution.
    #[arg(long)]
    sampled: bool,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct HighlightArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    doc: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 15)]
    classes: usize,
    #[arg(long, default_value_t = 12)]
    docs_per_class: usize,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Additional unlabeled documents to append.
    #[arg(long, default_value_t = 0)]
    unlabeled: usize,
}

fn main() {
    env_logger::init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn registry_for(k: usize) -> Result<LabelRegistry> {
    if k == MFC_FRAMES.len() {
        Ok(LabelRegistry::mfc_default())
    } else if k <= MFC_FRAMES.len() {
        LabelRegistry::from_names(MFC_FRAMES[..k].iter().map(|s| s.to_string()).collect())
    } else {
        LabelRegistry::from_names((0..k).map(|i| format!("frame_{i:02}")).collect())
    }
}

fn load_split(
    split: &Option<PathBuf>,
    docs: &[Document],
    cfg: &TrainConfig,
) -> Result<CorpusSplit> {
    match split {
        Some(path) => CorpusSplit::load(path),
        None => stratified_folds(docs, cfg.folds, cfg.seed),
    }
}

fn checkpoint_meta(cfg: &TrainConfig, registry: &LabelRegistry, report: &TrainReport) -> serde_json::Value {
    serde_json::json!({
        "labels": registry.labels().iter().map(|l| l.name.clone()).collect::<Vec<_>>(),
        "config": cfg,
        "best_iteration": report.best_iteration,
        "best_accuracy": report.best_accuracy,
    })
}

/// Pull the training config and label registry back out of a checkpoint.
fn checkpoint_context(ckpt: &Checkpoint) -> Result<(TrainConfig, LabelRegistry)> {
    let cfg: TrainConfig = serde_json::from_value(
        ckpt.meta
            .get("config")
            .cloned()
            .ok_or_else(|| FrissError::Checkpoint("checkpoint missing config metadata".into()))?,
    )?;
    let labels: Vec<String> = serde_json::from_value(
        ckpt.meta
            .get("labels")
            .cloned()
            .ok_or_else(|| FrissError::Checkpoint("checkpoint missing label metadata".into()))?,
    )?;
    Ok((cfg, LabelRegistry::from_names(labels)?))
}

/// Filter and encode a corpus for inference; unusable documents are skipped
/// with a warning. Returns filtered documents paired with their encodings.
fn prepare_for_inference(
    docs: &[Document],
    cfg: &TrainConfig,
) -> Result<Vec<Document>> {
    let mut out = Vec::new();
    for doc in docs {
        match filter_document(doc, &cfg.limits) {
            Ok(filtered) => out.push(filtered),
            Err(FrissError::UnusableDocument(id)) => {
                log::warn!("document {id} unusable after filtering; skipped");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data { command } => match command {
            DataCommand::Validate { path } => {
                let registry = LabelRegistry::mfc_default();
                let docs = load_corpus(&path, &registry)?;
                let mut bad = 0usize;
                for doc in &docs {
                    if let Err(e) = validate_document(doc) {
                        eprintln!("{e}");
                        bad += 1;
                    }
                }
                println!("{} documents, {} invalid", docs.len(), bad);
                if bad > 0 {
                    std::process::exit(1);
                }
            }
            DataCommand::Split { path, folds, seed, out } => {
                let registry = LabelRegistry::mfc_default();
                let docs = load_corpus(&path, &registry)?;
                let split = stratified_folds(&docs, folds, seed)?;
                std::fs::create_dir_all(&out)?;
                let split_path = out.join("split.json");
                split.save(&split_path)?;
                println!(
                    "wrote {} folds ({} unlabeled docs) to {}",
                    split.folds.len(),
                    split.unlabeled.len(),
                    split_path.display()
                );
            }
        },
        Command::Train(args) => {
            let cfg = TrainConfig::load(&args.config)?;
            let registry = registry_for(cfg.k)?;
            let docs = load_corpus(&args.corpus, &registry)?;
            let split = load_split(&args.split, &docs, &cfg)?;
            let (report, params) = train_fold(&docs, &split, args.fold, &cfg)?;
            std::fs::create_dir_all(&args.out)?;
            emit_fold(&args.out, &cfg, &registry, &report, &params)?;
            println!(
                "fold {}: best accuracy {:.4}, macro-F1 {:.4} at iteration {}",
                args.fold, report.best_accuracy, report.best_macro_f1, report.best_iteration
            );
        }
        Command::Cv(args) => {
            let cfg = TrainConfig::load(&args.config)?;
            run_cv(&cfg, &args.corpus, &args.split, &args.out)?;
        }
        Command::Ablate(args) => {
            let base = TrainConfig::load(&args.config)?;
            let switch: AblationSwitch = args.switch.parse()?;
            let cfg = ablate(&base, switch);
            run_cv(&cfg, &args.corpus, &args.split, &args.out)?;
        }
        Command::Predict(args) => {
            let ckpt = load_checkpoint(&args.model)?;
            let (cfg, registry) = checkpoint_context(&ckpt)?;
            let docs = load_corpus(&args.input, &registry)?;
            let docs = prepare_for_inference(&docs, &cfg)?;
            let encoder = build_encoder(&cfg.encoder)?;
            let mut out = std::fs::File::create(&args.out)?;
            use std::io::Write;
            #[derive(Serialize)]
            struct PredRecord<'a> {
                doc_id: &'a str,
                y_hat_u: Vec<f64>,
                y_hat_s: Vec<f64>,
                predicted: &'a str,
            }
            for doc in &docs {
                let encoded = encode_document(encoder.as_ref(), doc)?;
                let pred = friss_core::classifier::predict(
                    &ckpt.params,
                    &encoded,
                    &cfg.ablations.views,
                    cfg.inference_combine,
                )?;
                let rec = PredRecord {
                    doc_id: &doc.doc_id,
                    y_hat_u: pred.y_hat_u.to_vec(),
                    y_hat_s: pred.y_hat_s.to_vec(),
                    predicted: registry.name_of(pred.combined_argmax).unwrap_or("?"),
                };
                writeln!(out, "{}", serde_json::to_string(&rec)?)?;
            }
            println!("wrote {} predictions to {}", docs.len(), args.out.display());
        }
        Command::Interpret(args) => {
            let ckpt = load_checkpoint(&args.model)?;
            let (cfg, _registry) = checkpoint_context(&ckpt)?;
            let registry = registry_for(cfg.k)?;
            let docs = load_corpus(&args.corpus, &registry)?;
            let docs = prepare_for_inference(&docs, &cfg)?;
            let encoder = build_encoder(&cfg.encoder)?;
            let mode = if args.sampled {
                DescriptorMode::SampledG { tau: args.tau, seed: args.seed }
            } else {
                DescriptorMode::EvalD
            };
            let report = extract_descriptors(
                &ckpt.params,
                encoder.as_ref(),
                &docs,
                args.threshold,
                mode,
                &SimpleNormalizer::default(),
            )?;
            let file = std::fs::File::create(&args.out)?;
            serde_json::to_writer_pretty(file, &report)?;
            println!("wrote descriptor report to {}", args.out.display());
        }
        Command::Highlight(args) => {
            let ckpt = load_checkpoint(&args.model)?;
            let (cfg, registry) = checkpoint_context(&ckpt)?;
            let docs = load_corpus(&args.corpus, &registry)?;
            let doc = docs
                .iter()
                .find(|d| d.doc_id == args.doc)
                .ok_or_else(|| FrissError::InvalidArgument(format!("no document with id {}", args.doc)))?;
            let filtered = filter_document(doc, &cfg.limits)?;
            let encoder = build_encoder(&cfg.encoder)?;
            let highlighted = highlight_document(
                &ckpt.params,
                encoder.as_ref(),
                &filtered,
                &cfg.ablations.views,
                cfg.inference_combine,
            )?;
            let html = export_html(&highlighted, &default_palette(cfg.k), cfg.k)?;
            std::fs::write(&args.out, html)?;
            println!("wrote highlighted document to {}", args.out.display());
        }
        Command::Synth(args) => {
            let syn_cfg = SyntheticConfig {
                n_classes: args.classes,
                docs_per_class: args.docs_per_class,
                noise_rate: args.noise,
                seed: args.seed,
                ..Default::default()
            };
            let mut corpus = generate(&syn_cfg);
            if args.unlabeled > 0 {
                corpus
                    .docs
                    .extend(generate_unlabeled(&syn_cfg, args.unlabeled, args.seed ^ 0xABCD));
            }
            let registry = registry_for(args.classes)?;
            save_corpus(&corpus.docs, &registry, &args.out)?;
            println!("wrote {} documents to {}", corpus.docs.len(), args.out.display());
        }
    }
    Ok(())
}

fn emit_fold(
    out: &Path,
    cfg: &TrainConfig,
    registry: &LabelRegistry,
    report: &TrainReport,
    params: &ModelParams,
) -> Result<()> {
    report.save_json(&out.join(format!("fold{}_report.json", report.fold)))?;
    report.save_loss_csv(&out.join(format!("fold{}_losses.csv", report.fold)))?;
    save_checkpoint(
        &out.join(format!("fold{}_model.ckpt", report.fold)),
        params,
        &cfg.config_hash(),
        checkpoint_meta(cfg, registry, report),
    )
}

fn run_cv(cfg: &TrainConfig, corpus: &Path, split: &Option<PathBuf>, out: &Path) -> Result<()> {
    let registry = registry_for(cfg.k)?;
    let docs = load_corpus(corpus, &registry)?;
    let split = load_split(split, &docs, cfg)?;
    std::fs::create_dir_all(out)?;
    let mut per_fold = Vec::new();
    for fold in 0..split.folds.len() {
        let (report, params) = train_fold(&docs, &split, fold, cfg)?;
        emit_fold(out, cfg, &registry, &report, &params)?;
        println!(
            "fold {fold}: accuracy {:.4}, macro-F1 {:.4}",
            report.best_accuracy, report.best_macro_f1
        );
        per_fold.push(report);
    }
    let cv = aggregate_cv(per_fold);
    let file = std::fs::File::create(out.join("cv_report.json"))?;
    serde_json::to_writer_pretty(file, &cv)?;
    println!(
        "cv: accuracy {:.4} +/- {:.4}, macro-F1 {:.4} +/- {:.4}",
        cv.mean_accuracy, cv.std_accuracy, cv.mean_macro_f1, cv.std_macro_f1
    );
    Ok(())
}
