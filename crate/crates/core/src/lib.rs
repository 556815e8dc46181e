//! Audio evaluation engine for text-to-audio generation.
//!
//! Scores generated audio against multi-event text prompts along three axes:
//!
//! - **EOS** (event occurrence): minimum per-event audio-text similarity,
//!   computed over separated stems in a joint embedding space. A low value
//!   flags a described event that is likely absent from the audio.
//! - **ESS** (event sequence): Kendall-style rank correlation between the
//!   event order described in text and the order of detected onsets.
//! - **AHQ** (acoustic & harmonic quality): expected class value (1-4) of a
//!   small MLP classifier over a whole-clip audio embedding.
//!
//! On top of the scores the crate builds preference data (pool ranking and
//! chosen/rejected pair emission) and reproduces the evaluation protocols
//! (missing-event recognition, sequence recognition, segment F1, correlation
//! with human labels, pairwise win rates).
//!
//! Neural dependencies (audio-text embedder, text-queried separator, caption
//! decomposer) are abstracted behind [`providers::Provider`], with a remote
//! HTTP implementation and a deterministic in-process stub for testing.

pub mod audio_io;
pub mod dataset;
pub mod evalharness;
pub mod event_text;
pub mod providers;
pub mod runner;
pub mod scoring;
pub mod synth;

pub use audio_io::{AudioClip, Envelope, EventSpan};
pub use event_text::{EventList, Relation, TemporalRelation};
pub use providers::{EmbeddingVector, Provider, ProviderConfig, ProviderKind};
pub use scoring::{AhqModel, EssCounts, ScoreRecord};
