//! Deterministic in-process provider stub.
//!
//! The stub makes end-to-end tests possible without model access by pinning
//! a shared audio-text space to a frequency-band lexicon:
//!
//! - text embeds as a seeded hash of its lowercased content tokens scattered
//!   into `dim` coordinates, then L2-normalized — a pure function of the
//!   input bytes, bitwise-stable across processes;
//! - audio embeds by detecting its dominant spectral band, looking the band
//!   up in the lexicon, and embedding that entry's caption as text;
//! - separation band-passes the mixture around the band the caption maps to
//!   (unknown captions yield an all-zero stem).
//!
//! So `similarity(embed_text(c), embed_audio(separate(mix, c)))` is 1.0 by
//! construction whenever the mixture contains the band of caption `c`, and
//! near zero otherwise.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingVector, ProviderBackend, ProviderError, DEFAULT_EMBED_DIM};
use crate::audio_io::AudioClip;
use crate::event_text::{self, EventList};

/// Scatter points contributed by one token into the embedding.
const SCATTER_PER_TOKEN: usize = 32;
/// Stems quieter than this RMS embed as silence.
const SILENCE_RMS_FLOOR: f64 = 1e-4;
/// A band must hold at least this fraction of total spectral energy to
/// count as dominant.
const DOMINANCE_FRACTION: f64 = 0.5;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "then", "as", "while", "of", "in", "on", "at", "is", "are",
];

/// One lexicon row: an event caption tied to a frequency band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub caption: String,
    pub center_hz: f64,
    pub half_bw_hz: f64,
}

/// The spectral-band -> caption lexicon backing the stub's shared space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubLexicon {
    pub entries: Vec<LexiconEntry>,
}

impl StubLexicon {
    /// Six content-word-disjoint events on well-separated bands, all below
    /// the 8 kHz Nyquist of the 16 kHz fixture corpus.
    pub fn default_test_lexicon() -> Self {
        let rows: &[(&str, f64)] = &[
            ("a dog barks", 440.0),
            ("a horn honks", 1000.0),
            ("a bell rings", 1800.0),
            ("rain falls", 2800.0),
            ("a bird chirps", 4000.0),
            ("glass shatters", 5600.0),
        ];
        Self {
            entries: rows
                .iter()
                .map(|&(caption, center_hz)| LexiconEntry {
                    caption: caption.into(),
                    center_hz,
                    half_bw_hz: 150.0,
                })
                .collect(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| ProviderError::Config(e.to_string()))
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<(), ProviderError> {
        let json = serde_json::to_string_pretty(self).expect("lexicon serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    fn lookup_caption(&self, caption: &str) -> Option<&LexiconEntry> {
        let wanted = caption.trim().to_lowercase();
        self.entries
            .iter()
            .find(|e| e.caption.trim().to_lowercase() == wanted)
    }
}

/// Deterministic provider backend over a [`StubLexicon`].
///
/// Counts in-flight and total calls so tests can observe the concurrency
/// bound enforced by the provider handle.
pub struct StubProvider {
    lexicon: StubLexicon,
    dim: usize,
    latency: Duration,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    calls: AtomicUsize,
}

impl StubProvider {
    pub fn new(lexicon: StubLexicon) -> Self {
        Self {
            lexicon,
            dim: DEFAULT_EMBED_DIM,
            latency: Duration::ZERO,
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_default_lexicon() -> Self {
        Self::new(StubLexicon::default_test_lexicon())
    }

    /// Simulated per-call latency, for concurrency tests.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn lexicon(&self) -> &StubLexicon {
        &self.lexicon
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn track_call(&self) -> CallGuard<'_> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        CallGuard { stub: self }
    }

    /// Hash-scatter embedding of one text: per content token, a
    /// sha256-seeded stream of signed unit bumps into `dim` coordinates.
    pub fn embed_text_deterministic(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0.0f64; self.dim];
        let tokens = content_tokens(text);
        let fallback;
        let tokens: Vec<&str> = if tokens.is_empty() {
            fallback = text.trim().to_lowercase();
            vec![fallback.as_str()]
        } else {
            tokens
        };
        for token in tokens {
            let digest: [u8; 32] = Sha256::digest(token.as_bytes()).into();
            let mut rng = ChaCha8Rng::from_seed(digest);
            for _ in 0..SCATTER_PER_TOKEN {
                let idx = rng.random_range(0..self.dim);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                acc[idx] += sign;
            }
        }
        let norm: f64 = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm > 0.0 {
            acc.iter().map(|&v| (v / norm) as f32).collect()
        } else {
            // all scatter bumps cancelled; fall back to a fixed basis vector
            let mut v = vec![0.0f32; self.dim];
            v[0] = 1.0;
            v
        };
        EmbeddingVector {
            values,
            unit_norm: true,
        }
    }

    /// The token a clip embeds as: its dominant lexicon band's caption,
    /// a reserved silence token, or an off-lexicon band bucket.
    pub fn dominant_token(&self, clip: &AudioClip) -> String {
        if clip.rms() < SILENCE_RMS_FLOOR {
            return "__silence__".to_string();
        }
        let spectrum = magnitude_spectrum(&clip.samples);
        let n = clip.samples.len();
        let sr = clip.sample_rate as f64;
        let hz_per_bin = sr / n as f64;
        let half = spectrum.len();

        let total: f64 = spectrum.iter().map(|m| m * m).sum();
        let mut best: Option<(usize, f64)> = None;
        for (i, entry) in self.lexicon.entries.iter().enumerate() {
            let lo = ((entry.center_hz - entry.half_bw_hz) / hz_per_bin).floor().max(0.0) as usize;
            let hi = (((entry.center_hz + entry.half_bw_hz) / hz_per_bin).ceil() as usize).min(half - 1);
            // bands above this clip's Nyquist hold no energy
            let energy: f64 = if lo >= half {
                0.0
            } else {
                spectrum[lo..=hi.max(lo)].iter().map(|m| m * m).sum()
            };
            if best.is_none_or(|(_, e)| energy > e) {
                best = Some((i, energy));
            }
        }
        match best {
            Some((i, energy)) if total > 0.0 && energy >= DOMINANCE_FRACTION * total => {
                self.lexicon.entries[i].caption.clone()
            }
            _ => {
                let peak_bin = spectrum
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite magnitudes"))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let bucket = (peak_bin as f64 * hz_per_bin / 100.0).round() as i64;
                format!("__band{bucket}__")
            }
        }
    }
}

impl ProviderBackend for StubProvider {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let _guard = self.track_call();
        Ok(texts
            .iter()
            .map(|t| self.embed_text_deterministic(t))
            .collect())
    }

    fn embed_audio(&self, clips: &[AudioClip]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let _guard = self.track_call();
        Ok(clips
            .iter()
            .map(|c| self.embed_text_deterministic(&self.dominant_token(c)))
            .collect())
    }

    fn separate(&self, clip: &AudioClip, event_caption: &str) -> Result<AudioClip, ProviderError> {
        let _guard = self.track_call();
        let stem_id = format!("{}#stem", clip.id);
        match self.lexicon.lookup_caption(event_caption) {
            Some(entry) => {
                let samples = band_pass(
                    &clip.samples,
                    clip.sample_rate,
                    entry.center_hz - entry.half_bw_hz,
                    entry.center_hz + entry.half_bw_hz,
                );
                Ok(AudioClip::new(stem_id, samples, clip.sample_rate))
            }
            None => Ok(AudioClip::new(
                stem_id,
                vec![0.0; clip.samples.len()],
                clip.sample_rate,
            )),
        }
    }

    fn decompose(&self, caption: &str) -> Result<EventList, ProviderError> {
        let _guard = self.track_call();
        Ok(event_text::decompose_caption(caption)?)
    }
}

struct CallGuard<'a> {
    stub: &'a StubProvider,
}

impl Drop for CallGuard<'_> {
    fn drop(&mut self) {
        self.stub.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

fn content_tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !STOPWORDS.contains(&t.to_ascii_lowercase().as_str()))
        .collect()
}

/// Magnitude of the positive-frequency half of the DFT.
fn magnitude_spectrum(samples: &[f32]) -> Vec<f64> {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|&s| Complex::new(s as f64, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Ideal band-pass via DFT masking: zero every bin outside [lo_hz, hi_hz]
/// (mirrored onto negative frequencies), then invert.
fn band_pass(samples: &[f32], sample_rate: u32, lo_hz: f64, hi_hz: f64) -> Vec<f32> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|&s| Complex::new(s as f64, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);

    let hz_per_bin = sample_rate as f64 / n as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        // frequency of bin k, folding the upper half onto negative freqs
        let f = if k <= n / 2 {
            k as f64 * hz_per_bin
        } else {
            (n - k) as f64 * hz_per_bin
        };
        if f < lo_hz || f > hi_hz {
            *v = Complex::new(0.0, 0.0);
        }
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter()
        .map(|c| ((c.re * scale) as f32).clamp(-1.0, 1.0))
        .collect()
}
