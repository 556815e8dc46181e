//! The three scores for an (audio, prompt) pair.
//!
//! - Event Occurrence Score: per described event, similarity between the
//!   event caption and its separated stem in embedding space; the pair
//!   score is the minimum over events (the weakest event decides).
//! - Event Sequence Score: rank correlation between described order and
//!   detected onset order over all n(n-1) ordered event pairs,
//!   (C - D) / (n(n-1)); undefined for single-event captions.
//! - Acoustic & Harmonic Quality: expected class value (1-4) of a small
//!   MLP classifier over the whole-clip audio embedding (see [`ahq`]).

pub mod ahq;

pub use ahq::AhqModel;

use thiserror::Error;

use crate::audio_io::{
    compute_envelope, detect_active_span, normalize_envelope, AudioClip, AudioError, EventSpan,
    DEFAULT_FRAME_LEN_S, DEFAULT_HOP_S, DEFAULT_VOLUME_THRESHOLD,
};
use crate::event_text::{EventList, Relation};
use crate::providers::{similarity, Provider, ProviderError};

/// Default onset tolerance for SIMULTANEOUS pairs (seconds).
pub const DEFAULT_SIMULTANEITY_TOL_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("decompose: {0}")]
    Decompose(#[source] ProviderError),
    #[error("separate event {event_index}: {source}")]
    Separate {
        event_index: usize,
        #[source]
        source: ProviderError,
    },
    #[error("embed text: {source}")]
    EmbedText {
        #[source]
        source: ProviderError,
    },
    #[error("embed audio: {source}")]
    EmbedAudio {
        #[source]
        source: ProviderError,
    },
    #[error("similarity: {source}")]
    Similarity {
        #[source]
        source: ProviderError,
    },
    #[error("envelope for event {event_index}: {source}")]
    Envelope {
        event_index: usize,
        #[source]
        source: AudioError,
    },
    #[error("quality predictor: {source}")]
    Ahq {
        #[source]
        source: ahq::AhqError,
    },
    #[error("span count {spans} does not match event count {events}")]
    SpanCountMismatch { events: usize, spans: usize },
}

/// Ordered-pair tallies behind an ESS value: `ess = (c - d) / (n (n-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EssCounts {
    pub concordant: u32,
    pub discordant: u32,
    pub n: u32,
}

/// The scored triple for one audio-prompt pair, plus per-event diagnostics.
#[derive(Debug, Clone)]
pub struct ScoreRecord {
    pub audio_id: String,
    pub eos: f64,
    pub eos_per_event: Vec<f64>,
    /// `None` = NOT_APPLICABLE (single-event caption).
    pub ess: Option<f64>,
    pub ess_counts: EssCounts,
    /// `None` when scoring ran without a quality model.
    pub ahq: Option<f64>,
    pub spans: Vec<EventSpan>,
}

/// Tunables shared by the scoring entry points.
#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub volume_threshold: f64,
    pub simultaneity_tol_s: f64,
    pub frame_len_s: f64,
    pub hop_s: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            volume_threshold: DEFAULT_VOLUME_THRESHOLD,
            simultaneity_tol_s: DEFAULT_SIMULTANEITY_TOL_S,
            frame_len_s: DEFAULT_FRAME_LEN_S,
            hop_s: DEFAULT_HOP_S,
        }
    }
}

/// Separate one stem per event (provider failures carry the event index).
fn separate_stems(
    clip: &AudioClip,
    events: &EventList,
    provider: &Provider,
) -> Result<Vec<AudioClip>, ScoringError> {
    events
        .events()
        .iter()
        .enumerate()
        .map(|(event_index, caption)| {
            provider
                .separate(clip, caption)
                .map_err(|source| ScoringError::Separate {
                    event_index,
                    source,
                })
        })
        .collect()
}

fn per_event_similarities(
    events: &EventList,
    stems: &[AudioClip],
    provider: &Provider,
) -> Result<Vec<f64>, ScoringError> {
    let text_vecs = provider
        .embed_text(events.events())
        .map_err(|source| ScoringError::EmbedText { source })?;
    let audio_vecs = provider
        .embed_audio(stems)
        .map_err(|source| ScoringError::EmbedAudio { source })?;
    text_vecs
        .iter()
        .zip(audio_vecs.iter())
        .map(|(t, a)| similarity(t, a).map_err(|source| ScoringError::Similarity { source }))
        .collect()
}

/// Event Occurrence Score: the minimum per-event audio-text similarity.
pub fn event_occurrence_score(
    clip: &AudioClip,
    events: &EventList,
    provider: &Provider,
) -> Result<(f64, Vec<f64>), ScoringError> {
    let stems = separate_stems(clip, events, provider)?;
    let per_event = per_event_similarities(events, &stems, provider)?;
    let eos = per_event.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((eos, per_event))
}

/// Detect every event's activity span in its stem.
pub fn detect_event_spans(
    stems: &[AudioClip],
    options: &ScoreOptions,
) -> Result<Vec<EventSpan>, ScoringError> {
    stems
        .iter()
        .enumerate()
        .map(|(event_index, stem)| {
            let env = compute_envelope(stem, options.frame_len_s, options.hop_s)
                .map_err(|source| ScoringError::Envelope {
                    event_index,
                    source,
                })?;
            let mut span = detect_active_span(&normalize_envelope(&env), options.volume_threshold)
                .map_err(|source| ScoringError::Envelope {
                    event_index,
                    source,
                })?;
            span.event_index = event_index;
            Ok(span)
        })
        .collect()
}

/// Sequence score from already-detected spans: classify every ordered
/// event pair against the text relations.
///
/// For a BEFORE pair the earlier-described event must start strictly first
/// (onset ties are discordant); a SIMULTANEOUS pair is concordant when
/// onsets fall within `simultaneity_tol_s`. Any pair with an undetected
/// member is discordant. Single-event lists return `None` (n(n-1) = 0).
pub fn sequence_score_from_spans(
    events: &EventList,
    spans: &[EventSpan],
    simultaneity_tol_s: f64,
) -> Result<(Option<f64>, EssCounts), ScoringError> {
    let n = events.len();
    if spans.len() != n {
        return Err(ScoringError::SpanCountMismatch {
            events: n,
            spans: spans.len(),
        });
    }
    if n == 1 {
        return Ok((
            None,
            EssCounts {
                concordant: 0,
                discordant: 0,
                n: 1,
            },
        ));
    }

    let mut concordant = 0u32;
    let mut discordant = 0u32;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (i.min(j), i.max(j));
            let ok = match events.relation(a, b) {
                Relation::Before => {
                    spans[a].detected && spans[b].detected && spans[a].onset_s < spans[b].onset_s
                }
                Relation::Simultaneous => {
                    spans[a].detected
                        && spans[b].detected
                        && (spans[a].onset_s - spans[b].onset_s).abs() <= simultaneity_tol_s
                }
            };
            if ok {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1)) as f64;
    let ess = (concordant as f64 - discordant as f64) / pairs;
    Ok((
        Some(ess),
        EssCounts {
            concordant,
            discordant,
            n: n as u32,
        },
    ))
}

/// Event Sequence Score straight from a clip: separate, envelope,
/// normalize, detect, then pair counting.
pub fn event_sequence_score(
    clip: &AudioClip,
    events: &EventList,
    provider: &Provider,
    options: &ScoreOptions,
) -> Result<(Option<f64>, EssCounts, Vec<EventSpan>), ScoringError> {
    let stems = separate_stems(clip, events, provider)?;
    let spans = detect_event_spans(&stems, options)?;
    let (ess, counts) = sequence_score_from_spans(events, &spans, options.simultaneity_tol_s)?;
    Ok((ess, counts, spans))
}

/// Score one (clip, caption) pair: decompose once, separate once per
/// event, and reuse the stems across EOS and ESS. AHQ comes from the
/// whole-clip audio embedding when a model is supplied.
pub fn score_pair(
    clip: &AudioClip,
    caption: &str,
    provider: &Provider,
    ahq_model: Option<&AhqModel>,
    options: &ScoreOptions,
) -> Result<ScoreRecord, ScoringError> {
    let events = provider
        .decompose(caption)
        .map_err(ScoringError::Decompose)?;
    let stems = separate_stems(clip, &events, provider)?;
    let per_event = per_event_similarities(&events, &stems, provider)?;
    let eos = per_event.iter().cloned().fold(f64::INFINITY, f64::min);

    let spans = detect_event_spans(&stems, options)?;
    let (ess, ess_counts) = sequence_score_from_spans(&events, &spans, options.simultaneity_tol_s)?;

    let ahq = match ahq_model {
        Some(model) => {
            let embedding = provider
                .embed_audio(std::slice::from_ref(clip))
                .map_err(|source| ScoringError::EmbedAudio { source })?
                .remove(0);
            Some(
                model
                    .predict(&embedding)
                    .map_err(|source| ScoringError::Ahq { source })?,
            )
        }
        None => None,
    };

    Ok(ScoreRecord {
        audio_id: clip.id.clone(),
        eos,
        eos_per_event: per_event,
        ess,
        ess_counts,
        ahq,
        spans,
    })
}
