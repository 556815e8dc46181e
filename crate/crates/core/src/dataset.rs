//! Preference-data construction from pools of scored audios.
//!
//! Audios generated from the same caption form a pool; per score axis the
//! pool is ranked, the three ranks are combined (mean rank by default,
//! ties shared as mean positions), and chosen/rejected pairs are emitted
//! with per-axis margins. Also builds the event inventory and composes
//! augmented multi-event prompts from it.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_text::EventList;
use crate::providers::{similarity, Provider, ProviderError};
use crate::scoring::ScoreRecord;

/// Default text-similarity threshold above which two inventory events are
/// considered overlapping.
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.85;

/// Substitute rank key for NOT_APPLICABLE ESS (single-event pools).
const ESS_NA_RANK_VALUE: f64 = 0.0;
/// Substitute rank key when AHQ was not computed (no model configured).
const AHQ_MISSING_RANK_VALUE: f64 = 2.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("pool for caption {caption:?} has {size} entries; need at least 2")]
    PoolTooSmall { caption: String, size: usize },
    #[error("duplicate audio_id {audio_id:?} in pool {caption:?}")]
    DuplicateAudioId { caption: String, audio_id: String },
    #[error("no captions supplied")]
    NoCaptions,
    #[error("inventory needs 2 <= k ({k}) <= |inventory| ({inventory})")]
    BadPromptArity { k: usize, inventory: usize },
    #[error("could not produce {requested} distinct prompts within {tries} tries each")]
    PromptRetryBudget { requested: usize, tries: usize },
    #[error("provider failure: {0}")]
    Provider(#[from] ProviderError),
    #[error("{path}:{line}: {message}")]
    BadRow {
        path: String,
        line: usize,
        message: String,
    },
    #[error("failed to read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One audio entry of a pool: id, generator tag, and its scores.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub audio_id: String,
    pub source_model: String,
    pub record: ScoreRecord,
}

/// All audios generated for one caption.
#[derive(Debug, Clone)]
pub struct Pool {
    pub caption: String,
    pub entries: Vec<PoolEntry>,
}

impl Pool {
    pub fn new(caption: impl Into<String>, entries: Vec<PoolEntry>) -> Result<Self, DatasetError> {
        let caption = caption.into();
        if entries.len() < 2 {
            return Err(DatasetError::PoolTooSmall {
                caption,
                size: entries.len(),
            });
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|p| p.audio_id == e.audio_id) {
                return Err(DatasetError::DuplicateAudioId {
                    caption,
                    audio_id: e.audio_id.clone(),
                });
            }
        }
        Ok(Self { caption, entries })
    }
}

/// How the three per-axis orderings combine into one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankAggregation {
    /// Mean of the three per-axis ranks (rank-based, transform-invariant).
    MeanRank,
    /// Mean of the three raw scores (for comparison runs).
    MeanScore,
}

/// One ranked pool entry; ranks run 1..m with 1 best.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub audio_id: String,
    pub combined_rank: usize,
}

fn axis_values(pool: &Pool, axis: usize) -> Vec<f64> {
    pool.entries
        .iter()
        .map(|e| match axis {
            0 => e.record.eos,
            1 => e.record.ess.unwrap_or(ESS_NA_RANK_VALUE),
            _ => e.record.ahq.unwrap_or(AHQ_MISSING_RANK_VALUE),
        })
        .collect()
}

/// Descending ranks with ties sharing the mean of covered positions
/// (1-based): values [5, 5, 3] rank as [1.5, 1.5, 3].
fn mean_ranks_descending(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; m];
    let mut pos = 0;
    while pos < m {
        let mut end = pos + 1;
        while end < m && values[order[end]] == values[order[pos]] {
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

/// Combine the three per-score rankings into the overall pool ranking.
///
/// Ties on the combined key break by higher EOS, then higher AHQ, then
/// audio_id, so the output is a strict 1..m ordering.
pub fn rank_pool_with(
    pool: &Pool,
    aggregation: RankAggregation,
) -> Result<Vec<RankedEntry>, DatasetError> {
    if pool.entries.len() < 2 {
        return Err(DatasetError::PoolTooSmall {
            caption: pool.caption.clone(),
            size: pool.entries.len(),
        });
    }
    let m = pool.entries.len();
    let keys: Vec<f64> = match aggregation {
        RankAggregation::MeanRank => {
            let per_axis: Vec<Vec<f64>> =
                (0..3).map(|a| mean_ranks_descending(&axis_values(pool, a))).collect();
            (0..m)
                .map(|i| (per_axis[0][i] + per_axis[1][i] + per_axis[2][i]) / 3.0)
                .collect()
        }
        RankAggregation::MeanScore => (0..m)
            .map(|i| {
                -(axis_values(pool, 0)[i] + axis_values(pool, 1)[i] + axis_values(pool, 2)[i])
                    / 3.0
            })
            .collect(),
    };

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .partial_cmp(&keys[b])
            .expect("finite keys")
            .then(
                pool.entries[b]
                    .record
                    .eos
                    .partial_cmp(&pool.entries[a].record.eos)
                    .expect("finite eos"),
            )
            .then(
                pool.entries[b]
                    .record
                    .ahq
                    .unwrap_or(AHQ_MISSING_RANK_VALUE)
                    .partial_cmp(&pool.entries[a].record.ahq.unwrap_or(AHQ_MISSING_RANK_VALUE))
                    .expect("finite ahq"),
            )
            .then(pool.entries[a].audio_id.cmp(&pool.entries[b].audio_id))
    });

    Ok(order
        .iter()
        .enumerate()
        .map(|(rank0, &idx)| RankedEntry {
            audio_id: pool.entries[idx].audio_id.clone(),
            combined_rank: rank0 + 1,
        })
        .collect())
}

/// [`rank_pool_with`] under the default mean-rank aggregation.
pub fn rank_pool(pool: &Pool) -> Result<Vec<RankedEntry>, DatasetError> {
    rank_pool_with(pool, RankAggregation::MeanRank)
}

/// Which chosen/rejected pairs a ranked pool emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairPolicy {
    /// The single (rank 1, rank m) pair — maximal margin.
    BestWorst,
    /// All m(m-1)/2 pairs ordered by rank.
    AllOrdered,
}

/// One preference pair: chosen beats rejected by `combined_rank_gap`
/// positions; margins are chosen minus rejected per axis (`None` when
/// either side's ESS is NOT_APPLICABLE).
#[derive(Debug, Clone)]
pub struct PreferencePair {
    pub caption: String,
    pub chosen_id: String,
    pub rejected_id: String,
    pub margin_eos: f64,
    pub margin_ess: Option<f64>,
    pub margin_ahq: Option<f64>,
    pub combined_rank_gap: usize,
}

/// Emit preference pairs from a ranked pool.
pub fn emit_pairs(
    pool: &Pool,
    ranking: &[RankedEntry],
    policy: PairPolicy,
) -> Result<Vec<PreferencePair>, DatasetError> {
    let m = ranking.len();
    if m < 2 {
        return Err(DatasetError::PoolTooSmall {
            caption: pool.caption.clone(),
            size: m,
        });
    }
    let entry = |audio_id: &str| -> &PoolEntry {
        pool.entries
            .iter()
            .find(|e| e.audio_id == audio_id)
            .expect("ranking ids come from the pool")
    };
    let make_pair = |chosen: &RankedEntry, rejected: &RankedEntry| -> PreferencePair {
        let c = entry(&chosen.audio_id);
        let r = entry(&rejected.audio_id);
        PreferencePair {
            caption: pool.caption.clone(),
            chosen_id: c.audio_id.clone(),
            rejected_id: r.audio_id.clone(),
            margin_eos: c.record.eos - r.record.eos,
            margin_ess: match (c.record.ess, r.record.ess) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            },
            margin_ahq: match (c.record.ahq, r.record.ahq) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            },
            combined_rank_gap: rejected.combined_rank - chosen.combined_rank,
        }
    };

    let mut sorted: Vec<&RankedEntry> = ranking.iter().collect();
    sorted.sort_by_key(|e| e.combined_rank);
    let pairs = match policy {
        PairPolicy::BestWorst => vec![make_pair(sorted[0], sorted[m - 1])],
        PairPolicy::AllOrdered => {
            let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
            for i in 0..m {
                for j in (i + 1)..m {
                    pairs.push(make_pair(sorted[i], sorted[j]));
                }
            }
            pairs
        }
    };
    Ok(pairs)
}

/// Inventory build output: kept events plus how many captions were
/// skipped as empty.
#[derive(Debug, Clone)]
pub struct EventInventory {
    pub events: Vec<String>,
    pub skipped_captions: usize,
}

/// Decompose captions into events and greedily keep each event whose
/// maximum text similarity to everything already kept stays below the
/// overlap threshold. Input order, deterministic.
pub fn build_event_inventory(
    captions: &[String],
    provider: &Provider,
    overlap_threshold: f64,
) -> Result<EventInventory, DatasetError> {
    if captions.is_empty() {
        return Err(DatasetError::NoCaptions);
    }
    let mut kept: Vec<String> = Vec::new();
    let mut kept_vecs: Vec<crate::providers::EmbeddingVector> = Vec::new();
    let mut skipped = 0usize;
    for caption in captions {
        if caption.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let events = provider.decompose(caption)?;
        for event in events.events() {
            let vec = provider
                .embed_text(std::slice::from_ref(event))?
                .remove(0);
            let max_sim = kept_vecs
                .iter()
                .map(|k| similarity(k, &vec).expect("same provider dimension"))
                .fold(f64::NEG_INFINITY, f64::max);
            if kept_vecs.is_empty() || max_sim < overlap_threshold {
                kept.push(event.clone());
                kept_vecs.push(vec);
            }
        }
    }
    Ok(EventInventory {
        events: kept,
        skipped_captions: skipped,
    })
}

/// Compose `count` distinct multi-event prompts by seeded sampling of
/// `k_events` distinct inventory events, joined with all-BEFORE ordering.
/// Duplicate event sequences are rejected and resampled, up to 100 tries
/// per prompt.
pub fn compose_prompts(
    inventory: &[String],
    k_events: usize,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<String>, DatasetError> {
    const TRIES_PER_PROMPT: usize = 100;
    if k_events < 2 || k_events > inventory.len() {
        return Err(DatasetError::BadPromptArity {
            k: k_events,
            inventory: inventory.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seen: Vec<Vec<usize>> = Vec::new();
    let mut prompts = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..TRIES_PER_PROMPT {
            // partial Fisher-Yates for k distinct indices
            let mut idx: Vec<usize> = (0..inventory.len()).collect();
            for i in 0..k_events {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            let pick: Vec<usize> = idx[..k_events].to_vec();
            if !seen.contains(&pick) {
                accepted = Some(pick);
                break;
            }
        }
        let pick = accepted.ok_or(DatasetError::PromptRetryBudget {
            requested: count,
            tries: TRIES_PER_PROMPT,
        })?;
        let events: Vec<String> = pick.iter().map(|&i| inventory[i].clone()).collect();
        let list = EventList::sequential(events).expect("inventory events are non-empty");
        prompts.push(crate::event_text::compose_caption(&list));
        seen.push(pick);
    }
    Ok(prompts)
}

// ---------------------------------------------------------------------------
// File schemas (JSONL, UTF-8, one object per line)
// ---------------------------------------------------------------------------

/// Input manifest row: one audio to score.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub caption_id: String,
    pub caption: String,
    pub audio_id: String,
    pub audio_path: String,
    pub source_model: String,
}

/// Score output row: manifest fields plus the scored values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub caption_id: String,
    pub caption: String,
    pub audio_id: String,
    pub audio_path: String,
    pub source_model: String,
    pub eos: f64,
    pub eos_per_event: Vec<f64>,
    pub ess: Option<f64>,
    pub ess_counts: EssCountsRow,
    pub ahq: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EssCountsRow {
    #[serde(rename = "C")]
    pub c: u32,
    #[serde(rename = "D")]
    pub d: u32,
    pub n: u32,
}

impl ScoreRow {
    pub fn new(manifest: &ManifestEntry, record: &ScoreRecord) -> Self {
        Self {
            caption_id: manifest.caption_id.clone(),
            caption: manifest.caption.clone(),
            audio_id: manifest.audio_id.clone(),
            audio_path: manifest.audio_path.clone(),
            source_model: manifest.source_model.clone(),
            eos: record.eos,
            eos_per_event: record.eos_per_event.clone(),
            ess: record.ess,
            ess_counts: EssCountsRow {
                c: record.ess_counts.concordant,
                d: record.ess_counts.discordant,
                n: record.ess_counts.n,
            },
            ahq: record.ahq,
        }
    }

    pub fn to_record(&self) -> ScoreRecord {
        ScoreRecord {
            audio_id: self.audio_id.clone(),
            eos: self.eos,
            eos_per_event: self.eos_per_event.clone(),
            ess: self.ess,
            ess_counts: crate::scoring::EssCounts {
                concordant: self.ess_counts.c,
                discordant: self.ess_counts.d,
                n: self.ess_counts.n,
            },
            ahq: self.ahq,
            spans: Vec::new(),
        }
    }
}

/// Preference-pair output row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRow {
    pub caption: String,
    pub chosen: String,
    pub rejected: String,
    pub margins: PairMargins,
    pub rank_gap: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMargins {
    pub eos: f64,
    pub ess: Option<f64>,
    pub ahq: Option<f64>,
}

impl From<&PreferencePair> for PairRow {
    fn from(p: &PreferencePair) -> Self {
        Self {
            caption: p.caption.clone(),
            chosen: p.chosen_id.clone(),
            rejected: p.rejected_id.clone(),
            margins: PairMargins {
                eos: p.margin_eos,
                ess: p.margin_ess,
                ahq: p.margin_ahq,
            },
            rank_gap: p.combined_rank_gap,
        }
    }
}

/// Read a whole JSONL file of `T` rows, with line numbers on errors.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: impl AsRef<Path>,
) -> Result<Vec<T>, DatasetError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Unreadable {
        path: display.clone(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Unreadable {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| DatasetError::BadRow {
            path: display.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Write rows as JSONL (stable field order, so equal inputs reproduce
/// byte-identical files).
pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    rows: &[T],
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("rows serialize");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|source| DatasetError::Unwritable {
            path: display,
            source,
        })
}

/// Group score rows into pools keyed by caption_id (insertion order kept
/// within each pool; pools ordered by caption_id). Captions with fewer
/// than two audios cannot form a pool and are returned as a skip count.
pub fn pools_from_rows(rows: &[ScoreRow]) -> (Vec<(String, Pool)>, usize) {
    let mut grouped: BTreeMap<String, (String, Vec<PoolEntry>)> = BTreeMap::new();
    for row in rows {
        let slot = grouped
            .entry(row.caption_id.clone())
            .or_insert_with(|| (row.caption.clone(), Vec::new()));
        slot.1.push(PoolEntry {
            audio_id: row.audio_id.clone(),
            source_model: row.source_model.clone(),
            record: row.to_record(),
        });
    }
    let mut skipped = 0usize;
    let pools = grouped
        .into_iter()
        .filter_map(|(caption_id, (caption, entries))| match Pool::new(caption, entries) {
            Ok(p) => Some((caption_id, p)),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    (pools, skipped)
}
