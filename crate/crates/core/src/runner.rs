//! Corpus-scale runs: score a manifest with a bounded worker pool, write
//! the JSONL artifacts, group scores into pools for ranking and pair
//! emission, and drive the evaluation protocols from item files.
//!
//! Items are dispatched concurrently but collected by manifest index, so
//! outputs are written in manifest order and equal inputs plus an equal
//! seed reproduce byte-identical files.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{load_wav, AudioError};
use crate::dataset::{
    pools_from_rows, read_jsonl, write_jsonl, DatasetError, ManifestEntry, PairPolicy, PairRow,
    RankAggregation, ScoreRow,
};
use crate::evalharness::{
    correlation, segment_f1, win_rate, CorrelationKind, EvalReport, HarnessError,
    RecognitionItem, SegmentTimeline,
};
use crate::providers::Provider;
use crate::scoring::{score_pair, AhqModel, ScoreOptions, ScoringError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("manifest references missing audio files:\n{}", paths.join("\n"))]
    MissingAudio { paths: Vec<String> },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("no pools of size >= 2 in the score file")]
    NoPools,
    #[error("score files share no caption_id")]
    NoCommonCaptions,
    #[error("eval items file {path}: item {index} missing field {field}")]
    MissingField {
        path: String,
        index: usize,
        field: &'static str,
    },
    #[error("timeline files do not match: {message}")]
    TimelineJoin { message: String },
    #[error("failed to write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Run items through `f` on a pool of `parallelism` workers, returning
/// results in input order.
pub fn run_parallel<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = parallelism.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(i, &items[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot poisoned").expect("worker filled slot"))
        .collect()
}

/// One failed manifest item (kept out of the score file, written to the
/// error log).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRow {
    pub audio_id: String,
    pub caption_id: String,
    pub stage: String,
}

/// Corpus summary written next to the score file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub scored: usize,
    pub failed: usize,
    pub mean_eos: Option<f64>,
    /// Mean over ESS-applicable items (multi-event captions) only.
    pub mean_ess: Option<f64>,
    pub ess_applicable: usize,
    pub mean_ahq: Option<f64>,
    pub volume_threshold: f64,
    pub seed: u64,
}

/// Everything one scoring pass produces.
#[derive(Debug)]
pub struct ScoreRun {
    pub rows: Vec<ScoreRow>,
    pub failures: Vec<FailureRow>,
    pub summary: ScoreSummary,
}

/// Check that every referenced audio file exists; all misses reported at
/// once.
pub fn validate_manifest(entries: &[ManifestEntry]) -> Result<(), RunnerError> {
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !Path::new(&e.audio_path).is_file())
        .map(|e| e.audio_path.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(RunnerError::MissingAudio { paths: missing })
    }
}

/// Score every manifest entry (decode, decompose, separate, score) on the
/// worker pool. Per-item failures become [`FailureRow`]s; the run itself
/// only fails on structural problems.
pub fn score_manifest(
    entries: &[ManifestEntry],
    provider: &Provider,
    ahq_model: Option<&AhqModel>,
    options: &ScoreOptions,
    parallelism: usize,
    seed: u64,
) -> ScoreRun {
    let results: Vec<Result<ScoreRow, FailureRow>> =
        run_parallel(entries, parallelism, |_, entry| {
            let fail = |stage: String| FailureRow {
                audio_id: entry.audio_id.clone(),
                caption_id: entry.caption_id.clone(),
                stage,
            };
            let mut clip = load_wav(&entry.audio_path)
                .map_err(|e| fail(format!("load audio: {e}")))?;
            clip.id = entry.audio_id.clone();
            score_pair(&clip, &entry.caption, provider, ahq_model, options)
                .map(|record| ScoreRow::new(entry, &record))
                .map_err(|e: ScoringError| fail(e.to_string()))
        });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(row) => rows.push(row),
            Err(failure) => failures.push(failure),
        }
    }

    let mean = |values: &[f64]| -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let eos: Vec<f64> = rows.iter().map(|r| r.eos).collect();
    let ess: Vec<f64> = rows.iter().filter_map(|r| r.ess).collect();
    let ahq: Vec<f64> = rows.iter().filter_map(|r| r.ahq).collect();
    let summary = ScoreSummary {
        count: entries.len(),
        scored: rows.len(),
        failed: failures.len(),
        mean_eos: mean(&eos),
        mean_ess: mean(&ess),
        ess_applicable: ess.len(),
        mean_ahq: mean(&ahq),
        volume_threshold: options.volume_threshold,
        seed,
    };
    ScoreRun {
        rows,
        failures,
        summary,
    }
}

/// Suffix artifacts by threshold in sweep mode: `scores_t0.30.jsonl`.
pub fn threshold_suffix(threshold: f64, sweeping: bool) -> String {
    if sweeping {
        format!("_t{threshold:.2}")
    } else {
        String::new()
    }
}

/// Write the score run artifacts into `out_dir`; returns their paths.
pub fn write_score_artifacts(
    out_dir: &Path,
    suffix: &str,
    run: &ScoreRun,
) -> Result<Vec<PathBuf>, RunnerError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RunnerError::Unwritable {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let scores_path = out_dir.join(format!("scores{suffix}.jsonl"));
    write_jsonl(&scores_path, &run.rows)?;
    written.push(scores_path);
    let summary_path = out_dir.join(format!("summary{suffix}.json"));
    let summary = serde_json::to_string_pretty(&run.summary).expect("summary serializes");
    std::fs::write(&summary_path, summary.as_bytes()).map_err(|source| {
        RunnerError::Unwritable {
            path: summary_path.display().to_string(),
            source,
        }
    })?;
    written.push(summary_path);
    if !run.failures.is_empty() {
        let errors_path = out_dir.join(format!("errors{suffix}.jsonl"));
        write_jsonl(&errors_path, &run.failures)?;
        written.push(errors_path);
    }
    Ok(written)
}

/// One caption's combined ranking, as written by the rank command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingRow {
    pub caption_id: String,
    pub caption: String,
    pub ranking: Vec<RankingSlot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingSlot {
    pub audio_id: String,
    pub combined_rank: usize,
}

/// Rank every pool in a score file. Returns rankings plus the count of
/// captions skipped for having fewer than two audios.
pub fn rank_rows(
    rows: &[ScoreRow],
    aggregation: RankAggregation,
) -> Result<(Vec<RankingRow>, usize), RunnerError> {
    let (pools, skipped) = pools_from_rows(rows);
    if pools.is_empty() {
        return Err(RunnerError::NoPools);
    }
    let mut rankings = Vec::with_capacity(pools.len());
    for (caption_id, pool) in &pools {
        let ranked = crate::dataset::rank_pool_with(pool, aggregation)?;
        rankings.push(RankingRow {
            caption_id: caption_id.clone(),
            caption: pool.caption.clone(),
            ranking: ranked
                .into_iter()
                .map(|r| RankingSlot {
                    audio_id: r.audio_id,
                    combined_rank: r.combined_rank,
                })
                .collect(),
        });
    }
    Ok((rankings, skipped))
}

/// Emit preference pairs for every pool in a score file.
pub fn pairs_rows(
    rows: &[ScoreRow],
    policy: PairPolicy,
    aggregation: RankAggregation,
) -> Result<(Vec<PairRow>, usize), RunnerError> {
    let (pools, skipped) = pools_from_rows(rows);
    if pools.is_empty() {
        return Err(RunnerError::NoPools);
    }
    let mut out = Vec::new();
    for (_, pool) in &pools {
        let ranking = crate::dataset::rank_pool_with(pool, aggregation)?;
        let pairs = crate::dataset::emit_pairs(pool, &ranking, policy)?;
        out.extend(pairs.iter().map(PairRow::from));
    }
    Ok((out, skipped))
}

// ---------------------------------------------------------------------------
// Evaluation item files
// ---------------------------------------------------------------------------

/// Row of an evaluation items file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItemRow {
    pub audio_path: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_label: Option<f64>,
}

/// Which perturbed caption a recognition protocol needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoilField {
    Distractor,
    Reversed,
}

/// Load recognition items, decoding each referenced clip.
pub fn load_recognition_items(
    path: impl AsRef<Path>,
    foil: FoilField,
) -> Result<Vec<RecognitionItem>, RunnerError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let rows: Vec<EvalItemRow> = read_jsonl(path)?;
    let mut items = Vec::with_capacity(rows.len());
    for (index, row) in rows.into_iter().enumerate() {
        let foil_caption = match foil {
            FoilField::Distractor => {
                row.distractor.ok_or_else(|| RunnerError::MissingField {
                    path: display.clone(),
                    index,
                    field: "distractor",
                })?
            }
            FoilField::Reversed => row.reversed.ok_or_else(|| RunnerError::MissingField {
                path: display.clone(),
                index,
                field: "reversed",
            })?,
        };
        let clip = load_wav(&row.audio_path)?;
        items.push(RecognitionItem {
            item_id: clip.id.clone(),
            clip,
            truth_caption: row.caption,
            foil_caption,
        });
    }
    Ok(items)
}

/// Row of a timeline file for segment F1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimelineRow {
    pub item_id: String,
    pub horizon_s: f64,
    pub events: Vec<TimelineEventRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimelineEventRow {
    pub label: String,
    pub spans: Vec<(f64, f64)>,
}

fn to_timelines(row: &TimelineRow) -> Vec<SegmentTimeline> {
    row.events
        .iter()
        .map(|e| SegmentTimeline {
            event_label: e.label.clone(),
            spans: e.spans.clone(),
            horizon_s: row.horizon_s,
        })
        .collect()
}

/// (reference, prediction) timelines for one item.
pub type TimelinePair = (Vec<SegmentTimeline>, Vec<SegmentTimeline>);

/// Join a reference and a prediction timeline file on item_id.
pub fn join_timeline_files(
    reference_path: impl AsRef<Path>,
    prediction_path: impl AsRef<Path>,
) -> Result<Vec<TimelinePair>, RunnerError> {
    let reference: Vec<TimelineRow> = read_jsonl(reference_path)?;
    let prediction: Vec<TimelineRow> = read_jsonl(prediction_path)?;
    let mut items = Vec::with_capacity(reference.len());
    for r in &reference {
        let p = prediction
            .iter()
            .find(|p| p.item_id == r.item_id)
            .ok_or_else(|| RunnerError::TimelineJoin {
                message: format!("item_id {:?} missing from prediction file", r.item_id),
            })?;
        items.push((to_timelines(r), to_timelines(p)));
    }
    if items.len() != prediction.len() {
        return Err(RunnerError::TimelineJoin {
            message: format!(
                "prediction file has {} items, reference {}",
                prediction.len(),
                reference.len()
            ),
        });
    }
    Ok(items)
}

/// Run segment F1 over two timeline files.
pub fn segment_f1_from_files(
    reference_path: impl AsRef<Path>,
    prediction_path: impl AsRef<Path>,
    segment_len_s: f64,
) -> Result<EvalReport, RunnerError> {
    let items = join_timeline_files(reference_path, prediction_path)?;
    Ok(segment_f1(&items, segment_len_s)?)
}

/// Join a score file and an items file carrying human labels on
/// audio_path, then correlate the chosen score axis with the labels.
pub fn correlation_from_files(
    scores_path: impl AsRef<Path>,
    items_path: impl AsRef<Path>,
    field: ScoreField,
) -> Result<(f64, f64, usize), RunnerError> {
    let scores: Vec<ScoreRow> = read_jsonl(scores_path)?;
    let items_path = items_path.as_ref();
    let display = items_path.display().to_string();
    let items: Vec<EvalItemRow> = read_jsonl(items_path)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let label = item.human_label.ok_or_else(|| RunnerError::MissingField {
            path: display.clone(),
            index,
            field: "human_label",
        })?;
        if let Some(row) = scores.iter().find(|r| r.audio_path == item.audio_path) {
            if let Some(v) = field.value(row) {
                x.push(v);
                y.push(label);
            }
        }
    }
    let spearman = correlation(&x, &y, CorrelationKind::Spearman)?;
    let pearson = correlation(&x, &y, CorrelationKind::Pearson)?;
    Ok((spearman, pearson, x.len()))
}

/// One score axis of a [`ScoreRow`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreField {
    Eos,
    Ess,
    Ahq,
}

impl ScoreField {
    pub fn value(&self, row: &ScoreRow) -> Option<f64> {
        match self {
            ScoreField::Eos => Some(row.eos),
            ScoreField::Ess => row.ess,
            ScoreField::Ahq => row.ahq,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreField::Eos => "eos",
            ScoreField::Ess => "ess",
            ScoreField::Ahq => "ahq",
        }
    }
}

/// Per-axis win rates of side A against side B, joined on caption_id.
/// Captions appearing in both files contribute their per-caption mean on
/// each axis; captions where an axis is entirely NOT_APPLICABLE on either
/// side are excluded from that axis.
pub fn bench_win_rates(
    rows_a: &[ScoreRow],
    rows_b: &[ScoreRow],
    captions_filter: Option<&[String]>,
) -> Result<Vec<(ScoreField, EvalReport)>, RunnerError> {
    use std::collections::BTreeMap;
    let group = |rows: &[ScoreRow]| -> BTreeMap<String, Vec<ScoreRow>> {
        let mut m: BTreeMap<String, Vec<ScoreRow>> = BTreeMap::new();
        for r in rows {
            if let Some(filter) = captions_filter {
                if !filter.contains(&r.caption) {
                    continue;
                }
            }
            m.entry(r.caption_id.clone()).or_default().push(r.clone());
        }
        m
    };
    let a = group(rows_a);
    let b = group(rows_b);
    let common: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
    if common.is_empty() {
        return Err(RunnerError::NoCommonCaptions);
    }

    let mut out = Vec::new();
    for field in [ScoreField::Eos, ScoreField::Ess, ScoreField::Ahq] {
        let mut va = Vec::new();
        let mut vb = Vec::new();
        for key in &common {
            let mean_of = |rows: &Vec<ScoreRow>| -> Option<f64> {
                let vals: Vec<f64> = rows.iter().filter_map(|r| field.value(r)).collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            if let (Some(x), Some(y)) = (mean_of(&a[*key]), mean_of(&b[*key])) {
                va.push(x);
                vb.push(y);
            }
        }
        if va.is_empty() {
            continue;
        }
        let mut report = win_rate(&va, &vb)?;
        report.metric = format!("win_rate_{}", field.name());
        out.push((field, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ProviderConfig;
    use crate::synth;

    #[test]
    fn run_parallel_preserves_order() {
        let items: Vec<usize> = (0..100).collect();
        let out = run_parallel(&items, 8, |i, &x| {
            if i % 7 == 0 {
                std::thread::sleep(std::time::Duration::from_millis(1));
            }
            x * 2
        });
        assert_eq!(out, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn score_fixture_manifest_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_fixture_corpus(dir.path(), 3, 1).unwrap();
        let entries: Vec<ManifestEntry> =
            read_jsonl(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(entries.len(), 3);
        validate_manifest(&entries).unwrap();

        let provider = Provider::new(ProviderConfig::stub()).unwrap();
        let run = score_manifest(
            &entries,
            &provider,
            None,
            &ScoreOptions::default(),
            4,
            42,
        );
        assert_eq!(run.rows.len(), 3);
        assert!(run.failures.is_empty());
        assert_eq!(run.summary.scored, 3);

        // ordered fixture scores 1.0, reversed -1.0, swapped 1/3
        let by_id = |needle: &str| {
            run.rows
                .iter()
                .find(|r| r.audio_id.ends_with(needle))
                .unwrap()
        };
        assert_eq!(by_id("ordered").ess, Some(1.0));
        assert_eq!(by_id("reversed").ess, Some(-1.0));
        assert_eq!(by_id("swapped").ess, Some(1.0 / 3.0));
        assert!(run.rows.iter().all(|r| r.eos >= 0.99));

        let written = write_score_artifacts(dir.path(), "", &run).unwrap();
        assert_eq!(written.len(), 2);
        let rows_back: Vec<ScoreRow> = read_jsonl(&written[0]).unwrap();
        assert_eq!(rows_back.len(), 3);
    }

    #[test]
    fn missing_audio_listed_all_at_once() {
        let entries = vec![
            ManifestEntry {
                caption_id: "c".into(),
                caption: "a dog barks".into(),
                audio_id: "x".into(),
                audio_path: "/nonexistent/a.wav".into(),
                source_model: "m".into(),
            },
            ManifestEntry {
                caption_id: "c".into(),
                caption: "a dog barks".into(),
                audio_id: "y".into(),
                audio_path: "/nonexistent/b.wav".into(),
                source_model: "m".into(),
            },
        ];
        match validate_manifest(&entries) {
            Err(RunnerError::MissingAudio { paths }) => assert_eq!(paths.len(), 2),
            other => panic!("expected MissingAudio, got {other:?}"),
        }
    }

    #[test]
    fn bench_same_file_is_all_ties() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_fixture_corpus(dir.path(), 5, 2).unwrap();
        let entries: Vec<ManifestEntry> =
            read_jsonl(dir.path().join("manifest.jsonl")).unwrap();
        let provider = Provider::new(ProviderConfig::stub()).unwrap();
        let run = score_manifest(&entries, &provider, None, &ScoreOptions::default(), 4, 0);
        let reports = bench_win_rates(&run.rows, &run.rows, None).unwrap();
        assert!(!reports.is_empty());
        for (_, report) in reports {
            assert_eq!(report.value, 50.0);
        }
    }
}
