//! Command-line runner: scoring manifests, training the quality predictor,
//! ranking pools, emitting preference pairs, and the evaluation protocols.
//!
//! Exit codes: 0 full success, 1 fatal error, 2 completed with per-item
//! failures (recorded in errors.jsonl).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{resolve, Overrides, RunConfig};
use t2a_eval::dataset::{
    read_jsonl, write_jsonl, ManifestEntry, PairPolicy, RankAggregation, ScoreRow,
};
use t2a_eval::evalharness::EvalReport;
use t2a_eval::providers::{Provider, ProviderKind};
use t2a_eval::runner::{
    bench_win_rates, load_recognition_items, pairs_rows, rank_rows, score_manifest,
    segment_f1_from_files, threshold_suffix, validate_manifest, write_score_artifacts,
    FoilField, ScoreField, ScoreRun,
};
use t2a_eval::scoring::ahq::{parse_label_file, train, AhqModel, TrainOptions};
use t2a_eval::scoring::{event_occurrence_score, event_sequence_score};

#[derive(Parser)]
#[command(name = "t2a-eval", version, about = "Audio evaluation engine for text-to-audio generation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed for anything stochastic (shuffles, sampling)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker pool size for per-item scoring
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Provider backend
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderArg>,
    /// Remote provider base URL (implies --provider remote)
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Embedding cache directory
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Output directory for artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Volume threshold for event activity detection
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Comma-separated threshold sweep, e.g. 0.1,0.3,0.5 (score only)
    #[arg(long, global = true)]
    sweep: Option<String>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ProviderArg {
    Remote,
    Stub,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PolicyArg {
    BestWorst,
    AllOrdered,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum AggregateArg {
    MeanRank,
    MeanScore,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FieldArg {
    Eos,
    Ess,
    Ahq,
}

impl From<FieldArg> for ScoreField {
    fn from(f: FieldArg) -> Self {
        match f {
            FieldArg::Eos => ScoreField::Eos,
            FieldArg::Ess => ScoreField::Ess,
            FieldArg::Ahq => ScoreField::Ahq,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Score every (audio, caption) pair in a manifest
    Score {
        /// Manifest JSONL: caption_id, caption, audio_id, audio_path, source_model
        #[arg(long)]
        manifest: PathBuf,
        /// AHQ model file; omit to leave ahq null in the output
        #[arg(long)]
        ahq_model: Option<PathBuf>,
    },
    /// Train the acoustic-quality predictor from labels + embeddings
    TrainAhq {
        /// Label CSV (audio_id,label or audio_id,a1,a2,a3)
        #[arg(long)]
        labels: PathBuf,
        /// Manifest JSONL resolving audio_id -> audio_path
        #[arg(long)]
        manifest: PathBuf,
        /// Output model path (default: {out}/ahq_model.bin)
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
    },
    /// Combine per-score rankings into an overall ranking per caption
    Rank {
        /// Score JSONL produced by `score`
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value_t = AggregateArg::MeanRank)]
        aggregate: AggregateArg,
    },
    /// Emit chosen/rejected preference pairs per caption pool
    Pairs {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::BestWorst)]
        policy: PolicyArg,
        #[arg(long, value_enum, default_value_t = AggregateArg::MeanRank)]
        aggregate: AggregateArg,
    },
    /// Evaluation protocols
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Win rates between two score files joined on caption_id
    Bench {
        /// Score JSONL for side A (or use --manifest-a to score now)
        #[arg(long, conflicts_with = "manifest_a")]
        scores_a: Option<PathBuf>,
        #[arg(long, conflicts_with = "manifest_b")]
        scores_b: Option<PathBuf>,
        /// Manifest for side A, scored before comparison
        #[arg(long, requires = "manifest_b")]
        manifest_a: Option<PathBuf>,
        #[arg(long, requires = "manifest_a")]
        manifest_b: Option<PathBuf>,
        /// Caption list (one per line) restricting the comparison
        #[arg(long)]
        captions: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Ground-truth vs distractor-caption recognition accuracy (EOS scorer)
    MissingEvent {
        /// Items JSONL: audio_path, caption, distractor
        #[arg(long)]
        items: PathBuf,
    },
    /// Ground-truth vs reversed-caption recognition accuracy (ESS scorer)
    Sequence {
        /// Items JSONL: audio_path, caption, reversed
        #[arg(long)]
        items: PathBuf,
    },
    /// Segment-based F1 between reference and prediction timelines
    SegmentF1 {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        prediction: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        segment_len: f64,
    },
    /// Correlation between a score axis and human labels
    Correlation {
        #[arg(long)]
        scores: PathBuf,
        /// Items JSONL with audio_path and human_label
        #[arg(long)]
        items: PathBuf,
        #[arg(long, value_enum, default_value_t = FieldArg::Eos)]
        field: FieldArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let overrides = Overrides {
        config_path: cli.global.config.clone(),
        seed: cli.global.seed,
        parallelism: cli.global.parallelism,
        provider_kind: cli.global.provider.map(|p| match p {
            ProviderArg::Remote => ProviderKind::Remote,
            ProviderArg::Stub => ProviderKind::Stub,
        }),
        endpoint: cli.global.endpoint.clone(),
        cache_dir: cli.global.cache.clone(),
        out_dir: cli.global.out.clone(),
        threshold: cli.global.threshold,
    };
    let config = resolve(&overrides)?;

    match cli.command {
        Command::Score { manifest, ahq_model } => {
            cmd_score(&config, &manifest, ahq_model.as_deref(), cli.global.sweep.as_deref())
        }
        Command::TrainAhq {
            labels,
            manifest,
            model_out,
            epochs,
            hidden,
        } => cmd_train_ahq(&config, &labels, &manifest, model_out, epochs, hidden),
        Command::Rank { scores, aggregate } => cmd_rank(&config, &scores, aggregate),
        Command::Pairs {
            scores,
            policy,
            aggregate,
        } => cmd_pairs(&config, &scores, policy, aggregate),
        Command::Eval(eval) => cmd_eval(&config, eval),
        Command::Bench {
            scores_a,
            scores_b,
            manifest_a,
            manifest_b,
            captions,
        } => cmd_bench(&config, scores_a, scores_b, manifest_a, manifest_b, captions),
    }
}

fn make_provider(config: &RunConfig) -> anyhow::Result<Provider> {
    Provider::new(config.provider.clone()).context("constructing provider")
}

fn load_ahq(config: &RunConfig, flag: Option<&Path>) -> anyhow::Result<Option<AhqModel>> {
    let path = flag.map(Path::to_path_buf).or(config.ahq_model_path.clone());
    match path {
        Some(p) => {
            let model = AhqModel::load(&p)
                .with_context(|| format!("loading AHQ model {}", p.display()))?;
            Ok(Some(model))
        }
        None => Ok(None),
    }
}

fn parse_sweep(sweep: &str) -> anyhow::Result<Vec<f64>> {
    sweep
        .split(',')
        .map(|s| {
            let t: f64 = s.trim().parse().with_context(|| format!("bad threshold {s:?}"))?;
            anyhow::ensure!(t > 0.0 && t < 1.0, "threshold {t} outside (0, 1)");
            Ok(t)
        })
        .collect()
}

fn cmd_score(
    config: &RunConfig,
    manifest: &Path,
    ahq_flag: Option<&Path>,
    sweep: Option<&str>,
) -> anyhow::Result<ExitCode> {
    let entries: Vec<ManifestEntry> = read_jsonl(manifest)?;
    anyhow::ensure!(!entries.is_empty(), "manifest {} is empty", manifest.display());
    validate_manifest(&entries)?;
    let provider = make_provider(config)?;
    let ahq_model = load_ahq(config, ahq_flag)?;

    let thresholds = match sweep {
        Some(list) => parse_sweep(list)?,
        None => vec![config.volume_threshold],
    };
    let sweeping = sweep.is_some();

    let mut any_failures = false;
    for threshold in &thresholds {
        let mut options = config.score_options();
        options.volume_threshold = *threshold;
        let run: ScoreRun = score_manifest(
            &entries,
            &provider,
            ahq_model.as_ref(),
            &options,
            config.parallelism,
            config.rng_seed,
        );
        let suffix = threshold_suffix(*threshold, sweeping);
        write_score_artifacts(&config.output_dir, &suffix, &run)?;
        any_failures |= !run.failures.is_empty();
        println!(
            "threshold {:.2}: scored {}/{} items (mean EOS {}, mean ESS {} over {} applicable, mean AHQ {})",
            threshold,
            run.summary.scored,
            run.summary.count,
            fmt_opt(run.summary.mean_eos),
            fmt_opt(run.summary.mean_ess),
            run.summary.ess_applicable,
            fmt_opt(run.summary.mean_ahq),
        );
        if !run.failures.is_empty() {
            println!(
                "  {} item(s) failed; see errors{}.jsonl",
                run.failures.len(),
                suffix
            );
        }
    }
    println!("artifacts written to {}", config.output_dir.display());
    Ok(if any_failures {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn cmd_train_ahq(
    config: &RunConfig,
    labels_path: &Path,
    manifest: &Path,
    model_out: Option<PathBuf>,
    epochs: usize,
    hidden: usize,
) -> anyhow::Result<ExitCode> {
    let labels = parse_label_file(labels_path)
        .with_context(|| format!("parsing labels {}", labels_path.display()))?;
    if !labels.dropped.is_empty() {
        println!(
            "dropped {} row(s) without a strict majority: {}",
            labels.dropped.len(),
            labels.dropped.join(", ")
        );
    }
    anyhow::ensure!(!labels.labels.is_empty(), "no usable label rows");

    let entries: Vec<ManifestEntry> = read_jsonl(manifest)?;
    let provider = make_provider(config)?;

    let mut dataset = Vec::with_capacity(labels.labels.len());
    let mut missing = Vec::new();
    for (audio_id, label) in &labels.labels {
        match entries.iter().find(|e| &e.audio_id == audio_id) {
            Some(entry) => {
                let clip = t2a_eval::audio_io::load_wav(&entry.audio_path)?;
                let embedding = provider
                    .embed_audio(std::slice::from_ref(&clip))
                    .map_err(|e| anyhow::anyhow!("embedding {audio_id}: {e}"))?
                    .remove(0);
                dataset.push((embedding, *label));
            }
            None => missing.push(audio_id.clone()),
        }
    }
    anyhow::ensure!(
        missing.is_empty(),
        "label rows without manifest entries: {}",
        missing.join(", ")
    );

    let options = TrainOptions {
        epochs,
        hidden,
        rng_seed: config.rng_seed,
        ..TrainOptions::default()
    };
    let outcome = train(&dataset, &options)?;
    let accuracy = outcome.model.accuracy(&dataset)?;

    std::fs::create_dir_all(&config.output_dir)?;
    let model_path = model_out.unwrap_or_else(|| config.output_dir.join("ahq_model.bin"));
    outcome.model.save(&model_path)?;
    let trace_path = config.output_dir.join("ahq_loss_trace.json");
    std::fs::write(
        &trace_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "epoch_losses": outcome.epoch_losses,
            "epochs": epochs,
            "hidden": hidden,
            "seed": config.rng_seed,
            "train_items": dataset.len(),
            "dropped_no_majority": labels.dropped,
        }))?,
    )?;

    println!("model written to {}", model_path.display());
    println!("loss trace written to {}", trace_path.display());
    println!("final train accuracy: {:.1}%", accuracy * 100.0);
    Ok(ExitCode::SUCCESS)
}

fn cmd_rank(config: &RunConfig, scores: &Path, aggregate: AggregateArg) -> anyhow::Result<ExitCode> {
    let rows: Vec<ScoreRow> = read_jsonl(scores)?;
    let aggregation = match aggregate {
        AggregateArg::MeanRank => RankAggregation::MeanRank,
        AggregateArg::MeanScore => RankAggregation::MeanScore,
    };
    let (rankings, skipped) = rank_rows(&rows, aggregation)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("rankings.jsonl");
    write_jsonl(&path, &rankings)?;
    println!(
        "ranked {} pool(s) ({} caption(s) skipped with < 2 audios) -> {}",
        rankings.len(),
        skipped,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_pairs(
    config: &RunConfig,
    scores: &Path,
    policy: PolicyArg,
    aggregate: AggregateArg,
) -> anyhow::Result<ExitCode> {
    let rows: Vec<ScoreRow> = read_jsonl(scores)?;
    let policy = match policy {
        PolicyArg::BestWorst => PairPolicy::BestWorst,
        PolicyArg::AllOrdered => PairPolicy::AllOrdered,
    };
    let aggregation = match aggregate {
        AggregateArg::MeanRank => RankAggregation::MeanRank,
        AggregateArg::MeanScore => RankAggregation::MeanScore,
    };
    let (pairs, skipped) = pairs_rows(&rows, policy, aggregation)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("pairs.jsonl");
    write_jsonl(&path, &pairs)?;
    println!(
        "emitted {} pair(s) ({} caption(s) skipped) -> {}",
        pairs.len(),
        skipped,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_report(config: &RunConfig, name: &str, report: &EvalReport) -> anyhow::Result<()> {
    std::fs::create_dir_all(&config.output_dir)?;
    let details_path = config.output_dir.join(format!("{name}_details.jsonl"));
    write_jsonl(&details_path, &report.details)?;
    let report_path = config.output_dir.join(format!("{name}.json"));
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "metric": report.metric,
            "value": report.value,
            "count": report.count,
            "excluded": report.excluded,
            "details_path": details_path.display().to_string(),
        }))?,
    )?;
    println!(
        "{}: {:.4} over {} item(s) ({} excluded) -> {}",
        report.metric,
        report.value,
        report.count,
        report.excluded,
        report_path.display()
    );
    Ok(())
}

fn cmd_eval(config: &RunConfig, eval: EvalCommand) -> anyhow::Result<ExitCode> {
    match eval {
        EvalCommand::MissingEvent { items } => {
            let items = load_recognition_items(&items, FoilField::Distractor)?;
            let provider = make_provider(config)?;
            let report = t2a_eval::evalharness::missing_event_accuracy(&items, |clip, caption| {
                let events = provider
                    .decompose(caption)
                    .map_err(t2a_eval::scoring::ScoringError::Decompose)?;
                event_occurrence_score(clip, &events, &provider).map(|(eos, _)| eos)
            })?;
            write_report(config, "missing_event", &report)?;
            Ok(exit_for_exclusions(report.excluded))
        }
        EvalCommand::Sequence { items } => {
            let items = load_recognition_items(&items, FoilField::Reversed)?;
            let provider = make_provider(config)?;
            let options = config.score_options();
            let report = t2a_eval::evalharness::sequence_accuracy(&items, |clip, caption| {
                let events = provider
                    .decompose(caption)
                    .map_err(t2a_eval::scoring::ScoringError::Decompose)?;
                let (ess, _, _) = event_sequence_score(clip, &events, &provider, &options)?;
                // single-event captions carry no sequence signal; score 0
                Ok(ess.unwrap_or(0.0))
            })?;
            write_report(config, "sequence", &report)?;
            Ok(exit_for_exclusions(report.excluded))
        }
        EvalCommand::SegmentF1 {
            reference,
            prediction,
            segment_len,
        } => {
            let report = segment_f1_from_files(&reference, &prediction, segment_len)?;
            write_report(config, "segment_f1", &report)?;
            Ok(ExitCode::SUCCESS)
        }
        EvalCommand::Correlation {
            scores,
            items,
            field,
        } => {
            let field: ScoreField = field.into();
            let (spearman, pearson, count) =
                t2a_eval::runner::correlation_from_files(&scores, &items, field)?;
            std::fs::create_dir_all(&config.output_dir)?;
            let path = config.output_dir.join("correlation.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "metric": format!("correlation_{}", field.name()),
                    "spearman": spearman,
                    "pearson": pearson,
                    "count": count,
                }))?,
            )?;
            println!(
                "correlation[{}] over {count} item(s): spearman {spearman:.4}, pearson {pearson:.4} -> {}",
                field.name(),
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_for_exclusions(excluded: usize) -> ExitCode {
    if excluded > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_bench(
    config: &RunConfig,
    scores_a: Option<PathBuf>,
    scores_b: Option<PathBuf>,
    manifest_a: Option<PathBuf>,
    manifest_b: Option<PathBuf>,
    captions: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let mut any_failures = false;
    let side = |scores: Option<PathBuf>,
                    manifest: Option<PathBuf>,
                    tag: &str,
                    failures: &mut bool|
     -> anyhow::Result<Vec<ScoreRow>> {
        match (scores, manifest) {
            (Some(path), _) => Ok(read_jsonl(&path)?),
            (None, Some(path)) => {
                let entries: Vec<ManifestEntry> = read_jsonl(&path)?;
                validate_manifest(&entries)?;
                let provider = make_provider(config)?;
                let ahq_model = load_ahq(config, None)?;
                let run = score_manifest(
                    &entries,
                    &provider,
                    ahq_model.as_ref(),
                    &config.score_options(),
                    config.parallelism,
                    config.rng_seed,
                );
                *failures |= !run.failures.is_empty();
                write_score_artifacts(&config.output_dir, &format!("_{tag}"), &run)?;
                Ok(run.rows)
            }
            (None, None) => anyhow::bail!("bench needs --scores-{tag} or --manifest-{tag}"),
        }
    };
    let rows_a = side(scores_a, manifest_a, "a", &mut any_failures)?;
    let rows_b = side(scores_b, manifest_b, "b", &mut any_failures)?;

    let caption_filter: Option<Vec<String>> = match captions {
        Some(path) => Some(
            std::fs::read_to_string(&path)
                .with_context(|| format!("reading captions {}", path.display()))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        ),
        None => None,
    };

    let reports = bench_win_rates(&rows_a, &rows_b, caption_filter.as_deref())?;
    std::fs::create_dir_all(&config.output_dir)?;
    let mut summary = serde_json::Map::new();
    for (field, report) in &reports {
        println!(
            "win rate (A over B) on {}: {:.1}% over {} caption(s)",
            field.name(),
            report.value,
            report.count
        );
        summary.insert(
            field.name().to_string(),
            serde_json::json!({
                "win_rate": report.value,
                "count": report.count,
                "details": report.details,
            }),
        );
    }
    let path = config.output_dir.join("bench.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&serde_json::Value::Object(summary))?,
    )?;
    println!("bench report -> {}", path.display());
    Ok(if any_failures {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}
