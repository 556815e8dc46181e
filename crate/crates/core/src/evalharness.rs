//! Evaluation protocols: missing-event recognition, sequence recognition,
//! segment-based F1, correlation with human labels, and pairwise win rates.
//!
//! Accuracy-style metrics give half credit on ties, which pins the
//! random-guess baseline at exactly 50%. Metric accumulation is a
//! sequential reduction over item order, so reports are deterministic
//! regardless of how per-item scoring was scheduled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::AudioClip;
use crate::scoring::ScoringError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no items supplied")]
    NoItems,
    #[error("item {index}: {message}")]
    InputValidation { index: usize, message: String },
    #[error("every item failed its scorer; nothing to aggregate")]
    AllItemsExcluded,
    #[error("score vectors differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("correlation needs at least 3 points, got {n}")]
    TooFewPoints { n: usize },
    #[error("correlation undefined for constant {which} input")]
    ConstantInput { which: &'static str },
    #[error("item {item_index}: reference and prediction horizons differ")]
    HorizonMismatch { item_index: usize },
    #[error("segment length must be positive, got {0}")]
    BadSegmentLen(f64),
}

/// Activity timeline of one event label within one item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentTimeline {
    pub event_label: String,
    /// (onset_s, offset_s) spans, each within [0, horizon_s].
    pub spans: Vec<(f64, f64)>,
    pub horizon_s: f64,
}

/// A metric result: headline value plus per-item rows.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub count: usize,
    pub excluded: usize,
    pub details: Vec<serde_json::Value>,
}

/// One two-caption recognition item: the clip, its true caption, and the
/// perturbed foil (distractor-added or order-reversed).
#[derive(Debug, Clone)]
pub struct RecognitionItem {
    pub item_id: String,
    pub clip: AudioClip,
    pub truth_caption: String,
    pub foil_caption: String,
}

fn pairwise_accuracy<F>(
    metric: &str,
    items: &[RecognitionItem],
    scorer: F,
) -> Result<EvalReport, HarnessError>
where
    F: Fn(&AudioClip, &str) -> Result<f64, ScoringError>,
{
    if items.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let mut credit_sum = 0.0;
    let mut included = 0usize;
    let mut excluded = 0usize;
    let mut details = Vec::with_capacity(items.len());
    for item in items {
        let outcome = scorer(&item.clip, &item.truth_caption)
            .and_then(|t| scorer(&item.clip, &item.foil_caption).map(|f| (t, f)));
        match outcome {
            Ok((truth_score, foil_score)) => {
                let credit = if truth_score > foil_score {
                    1.0
                } else if truth_score == foil_score {
                    0.5
                } else {
                    0.0
                };
                credit_sum += credit;
                included += 1;
                details.push(serde_json::json!({
                    "item_id": item.item_id,
                    "truth_score": truth_score,
                    "foil_score": foil_score,
                    "credit": credit,
                }));
            }
            Err(e) => {
                excluded += 1;
                details.push(serde_json::json!({
                    "item_id": item.item_id,
                    "error": e.to_string(),
                }));
            }
        }
    }
    if included == 0 {
        return Err(HarnessError::AllItemsExcluded);
    }
    Ok(EvalReport {
        metric: metric.to_string(),
        value: 100.0 * credit_sum / included as f64,
        count: included,
        excluded,
        details,
    })
}

/// Fraction of items (percent) where the ground-truth caption outscores a
/// distractor-extended caption; ties earn half credit. Items whose scorer
/// fails are excluded and counted.
pub fn missing_event_accuracy<F>(
    items: &[RecognitionItem],
    scorer: F,
) -> Result<EvalReport, HarnessError>
where
    F: Fn(&AudioClip, &str) -> Result<f64, ScoringError>,
{
    pairwise_accuracy("missing_event_accuracy", items, scorer)
}

/// As [`missing_event_accuracy`], with the foil being the order-reversed
/// caption. Items whose foil equals the truth caption (single-event
/// captions cannot be reversed) are rejected up front.
pub fn sequence_accuracy<F>(
    items: &[RecognitionItem],
    scorer: F,
) -> Result<EvalReport, HarnessError>
where
    F: Fn(&AudioClip, &str) -> Result<f64, ScoringError>,
{
    for (index, item) in items.iter().enumerate() {
        if item.foil_caption.trim().is_empty() {
            return Err(HarnessError::InputValidation {
                index,
                message: "missing reversed caption".into(),
            });
        }
        if item.foil_caption == item.truth_caption {
            return Err(HarnessError::InputValidation {
                index,
                message: "reversed caption equals ground truth (single-event item?)".into(),
            });
        }
    }
    pairwise_accuracy("sequence_accuracy", items, scorer)
}

/// Per-item TP/FP/FN over the (segment, label) activity grid.
fn segment_counts(
    reference: &[SegmentTimeline],
    prediction: &[SegmentTimeline],
    segment_len_s: f64,
    item_index: usize,
) -> Result<(u64, u64, u64), HarnessError> {
    let horizon = reference
        .first()
        .or_else(|| prediction.first())
        .map(|t| t.horizon_s)
        .unwrap_or(0.0);
    for t in reference.iter().chain(prediction.iter()) {
        if (t.horizon_s - horizon).abs() > 1e-9 {
            return Err(HarnessError::HorizonMismatch { item_index });
        }
    }
    if horizon <= 0.0 {
        return Ok((0, 0, 0));
    }
    let segments = (horizon / segment_len_s).ceil() as usize;
    let active = |timelines: &[SegmentTimeline], label: &str, seg: usize| -> bool {
        let seg_start = seg as f64 * segment_len_s;
        let seg_end = (seg_start + segment_len_s).min(horizon);
        timelines
            .iter()
            .filter(|t| t.event_label == label)
            .flat_map(|t| t.spans.iter())
            .any(|&(onset, offset)| onset < seg_end && offset > seg_start)
    };
    let mut labels: Vec<&str> = reference
        .iter()
        .chain(prediction.iter())
        .map(|t| t.event_label.as_str())
        .collect();
    labels.sort_unstable();
    labels.dedup();

    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for label in labels {
        for seg in 0..segments {
            match (
                active(reference, label, seg),
                active(prediction, label, seg),
            ) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok((tp, fp, fn_))
}

/// Micro-averaged segment-based F1: timelines are cut into fixed-length
/// segments, each (segment, label) cell is a binary activity decision
/// (active iff any span overlaps by more than zero), and TP/FP/FN
/// accumulate across items and labels. Defined as 1.0 when reference and
/// prediction are both entirely empty.
pub fn segment_f1(
    items: &[(Vec<SegmentTimeline>, Vec<SegmentTimeline>)],
    segment_len_s: f64,
) -> Result<EvalReport, HarnessError> {
    if segment_len_s <= 0.0 {
        return Err(HarnessError::BadSegmentLen(segment_len_s));
    }
    if items.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    let mut details = Vec::with_capacity(items.len());
    for (item_index, (reference, prediction)) in items.iter().enumerate() {
        let (item_tp, item_fp, item_fn) =
            segment_counts(reference, prediction, segment_len_s, item_index)?;
        tp += item_tp;
        fp += item_fp;
        fn_ += item_fn;
        details.push(serde_json::json!({
            "item": item_index,
            "tp": item_tp,
            "fp": item_fp,
            "fn": item_fn,
        }));
    }
    let denom = 2 * tp + fp + fn_;
    let value = if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    };
    Ok(EvalReport {
        metric: "segment_f1".to_string(),
        value,
        count: items.len(),
        excluded: 0,
        details,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

/// Mean ranks (1-based) with ties sharing the average position.
fn mean_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let mut end = pos + 1;
        while end < n && values[order[end]] == values[order[pos]] {
            end += 1;
        }
        let mean = (pos + 1..=end).map(|r| r as f64).sum::<f64>() / (end - pos) as f64;
        for &idx in &order[pos..end] {
            ranks[idx] = mean;
        }
        pos = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, HarnessError> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        cov += (a - mean_x) * (b - mean_y);
        var_x += (a - mean_x).powi(2);
        var_y += (b - mean_y).powi(2);
    }
    if var_x == 0.0 {
        return Err(HarnessError::ConstantInput { which: "x" });
    }
    if var_y == 0.0 {
        return Err(HarnessError::ConstantInput { which: "y" });
    }
    Ok((cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0))
}

/// Product-moment correlation, either on raw values (Pearson) or on
/// mean-rank-transformed values (Spearman).
pub fn correlation(x: &[f64], y: &[f64], kind: CorrelationKind) -> Result<f64, HarnessError> {
    if x.len() != y.len() {
        return Err(HarnessError::LengthMismatch {
            a: x.len(),
            b: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(HarnessError::TooFewPoints { n: x.len() });
    }
    match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => pearson(&mean_ranks(x), &mean_ranks(y)),
    }
}

/// Win rate of side A over side B on pairwise-matched prompts: a win when
/// a > b, half credit on ties, reported as a percentage with both means.
pub fn win_rate(scores_a: &[f64], scores_b: &[f64]) -> Result<EvalReport, HarnessError> {
    if scores_a.len() != scores_b.len() {
        return Err(HarnessError::LengthMismatch {
            a: scores_a.len(),
            b: scores_b.len(),
        });
    }
    if scores_a.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let mut wins = 0usize;
    let mut ties = 0usize;
    for (&a, &b) in scores_a.iter().zip(scores_b.iter()) {
        if a > b {
            wins += 1;
        } else if a == b {
            ties += 1;
        }
    }
    let n = scores_a.len();
    let value = 100.0 * (wins as f64 + 0.5 * ties as f64) / n as f64;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(EvalReport {
        metric: "win_rate".to_string(),
        value,
        count: n,
        excluded: 0,
        details: vec![serde_json::json!({
            "wins": wins,
            "ties": ties,
            "losses": n - wins - ties,
            "mean_a": mean(scores_a),
            "mean_b": mean(scores_b),
        })],
    })
}
