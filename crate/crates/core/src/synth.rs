//! Synthetic signal construction for stub-mode runs and tests.
//!
//! Builds tone bursts and multi-band mixtures whose ground-truth onsets are
//! known by construction, plus a small fixture corpus (WAV files + manifest)
//! that exercises the whole pipeline against the stub provider.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::{write_wav_f32, AudioClip, AudioError};
use crate::providers::stub::StubLexicon;

/// One tone event inside a mixture: frequency band plus active interval.
#[derive(Debug, Clone, Copy)]
pub struct ToneEvent {
    pub freq_hz: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub amp: f32,
}

/// A sine burst active on `[start_s, end_s)` inside a silent clip.
///
/// Edges carry a raised-cosine amplitude fade of `fade_s` seconds eating
/// into the burst. The fade serves two constraints at once: it keeps
/// spectral leakage far below the stub separator's silence floor, and it
/// shapes the RMS ramp so the 0.3-threshold crossing of a 20 ms / 10 ms
/// envelope lands within one hop of the true onset for every grid
/// alignment (with the default 24 ms fade the crossing sits ~8.7 ms early,
/// against a +-10 ms budget).
pub fn tone_burst(
    sample_rate: u32,
    total_s: f64,
    freq_hz: f64,
    start_s: f64,
    end_s: f64,
    amp: f32,
    fade_s: f64,
) -> Vec<f32> {
    let n = (sample_rate as f64 * total_s).round() as usize;
    let mut out = vec![0.0f32; n];
    add_tone_burst(&mut out, sample_rate, freq_hz, start_s, end_s, amp, fade_s);
    out
}

/// Add a faded sine burst into an existing buffer.
pub fn add_tone_burst(
    buf: &mut [f32],
    sample_rate: u32,
    freq_hz: f64,
    start_s: f64,
    end_s: f64,
    amp: f32,
    fade_s: f64,
) {
    let sr = sample_rate as f64;
    let i0 = (start_s * sr).round() as usize;
    let i1 = ((end_s * sr).round() as usize).min(buf.len());
    let fade_n = (fade_s * sr).round() as usize;
    for (into, sample) in buf[i0..i1].iter_mut().enumerate() {
        let i = i0 + into;
        let t = i as f64 / sr;
        let mut a = amp as f64;
        let left = i1 - 1 - i;
        if fade_n > 0 && into < fade_n {
            let x = into as f64 / fade_n as f64;
            a *= (0.5 - 0.5 * (PI * x).cos()).sqrt();
        }
        if fade_n > 0 && left < fade_n {
            let x = left as f64 / fade_n as f64;
            a *= (0.5 - 0.5 * (PI * x).cos()).sqrt();
        }
        *sample += (a * (2.0 * PI * freq_hz * t).sin()) as f32;
    }
}

/// Default edge fade for synthetic bursts (24 ms; see [`tone_burst`]).
pub const DEFAULT_FADE_S: f64 = 0.024;

/// A clip mixing several tone events, each in its own band and interval.
pub fn mixture(id: &str, sample_rate: u32, total_s: f64, events: &[ToneEvent]) -> AudioClip {
    let n = (sample_rate as f64 * total_s).round() as usize;
    let mut buf = vec![0.0f32; n];
    for ev in events {
        add_tone_burst(
            &mut buf,
            sample_rate,
            ev.freq_hz,
            ev.start_s,
            ev.end_s,
            ev.amp,
            DEFAULT_FADE_S,
        );
    }
    for s in &mut buf {
        *s = s.clamp(-1.0, 1.0);
    }
    AudioClip::new(id, buf, sample_rate)
}

/// One row of the synthetic fixture corpus.
#[derive(Debug, Clone)]
pub struct FixtureItem {
    pub caption_id: String,
    pub caption: String,
    pub audio_id: String,
    pub file_name: String,
    pub source_model: String,
    /// Lexicon captions in the order their bands become active in audio.
    pub audio_order: Vec<usize>,
}

/// Synthetic corpus description: clips whose event order relative to the
/// caption is controlled, so expected ESS values are known exactly.
pub struct FixtureCorpus {
    pub sample_rate: u32,
    pub items: Vec<FixtureItem>,
    pub lexicon: StubLexicon,
}

/// Build the stub fixture corpus on disk: WAV files plus a manifest at
/// `dir/manifest.jsonl`, all derived from the given seed.
///
/// Per caption it writes one clip per variant: events in described order,
/// in reversed order, and with one adjacent swap (3-event captions only).
pub fn write_fixture_corpus(
    dir: impl AsRef<Path>,
    seed: u64,
    captions: usize,
) -> Result<FixtureCorpus, AudioError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| AudioError::Unwritable {
        path: dir.display().to_string(),
        source,
    })?;
    let lexicon = StubLexicon::default_test_lexicon();
    let sample_rate = 16_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    let mut manifest = String::new();

    for c in 0..captions {
        let k = 3usize;
        // pick k distinct lexicon entries via partial Fisher-Yates
        let mut idx: Vec<usize> = (0..lexicon.entries.len()).collect();
        for i in 0..k {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        let chosen: Vec<usize> = idx[..k].to_vec();
        let caption = chosen
            .iter()
            .map(|&i| lexicon.entries[i].caption.clone())
            .collect::<Vec<_>>()
            .join(", then ");
        let caption_id = format!("cap{c:03}");

        let variants: Vec<(&str, Vec<usize>)> = vec![
            ("ordered", vec![0, 1, 2]),
            ("reversed", vec![2, 1, 0]),
            ("swapped", vec![1, 0, 2]),
        ];
        for (tag, order) in variants {
            let audio_id = format!("{caption_id}_{tag}");
            let file_name = format!("{audio_id}.wav");
            let mut events = Vec::new();
            for (slot, &pos) in order.iter().enumerate() {
                let entry = &lexicon.entries[chosen[pos]];
                let start = 0.4 + slot as f64 * 1.5;
                events.push(ToneEvent {
                    freq_hz: entry.center_hz,
                    start_s: start,
                    end_s: start + 1.0,
                    amp: 0.4,
                });
            }
            let total_s = 0.4 + k as f64 * 1.5 + 0.4;
            let clip = mixture(&audio_id, sample_rate, total_s, &events);
            write_wav_f32(dir.join(&file_name), &clip)?;
            manifest.push_str(
                &serde_json::to_string(&serde_json::json!({
                    "caption_id": caption_id,
                    "caption": caption,
                    "audio_id": audio_id,
                    "audio_path": dir.join(&file_name).display().to_string(),
                    "source_model": format!("synth-{tag}"),
                }))
                .expect("manifest row serializes"),
            );
            manifest.push('\n');
            items.push(FixtureItem {
                caption_id: caption_id.clone(),
                caption: caption.clone(),
                audio_id,
                file_name,
                source_model: format!("synth-{tag}"),
                audio_order: order.iter().map(|&p| chosen[p]).collect(),
            });
        }
    }

    std::fs::write(dir.join("manifest.jsonl"), manifest).map_err(|source| {
        AudioError::Unwritable {
            path: dir.join("manifest.jsonl").display().to_string(),
            source,
        }
    })?;
    Ok(FixtureCorpus {
        sample_rate,
        items,
        lexicon,
    })
}

/// Four-cluster embedding dataset for quality-predictor training tests:
/// unit centroids with small isotropic noise, labels 1..4 by cluster.
///
/// Clusters stay nearest-centroid separable (centroids in high dimension
/// are near-orthogonal, noise sigma is 0.15), so a trained classifier can
/// be audited against the exact nearest-centroid oracle.
pub fn cluster_dataset(
    count: usize,
    dim: usize,
    seed: u64,
) -> Vec<(crate::providers::EmbeddingVector, u8)> {
    use crate::providers::EmbeddingVector;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| -> f64 {
        // Box-Muller
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let centroids: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    (0..count)
        .map(|i| {
            let cluster = i % 4;
            let values: Vec<f32> = centroids[cluster]
                .iter()
                .map(|&c| (c + 0.15 * gaussian(&mut rng)) as f32)
                .collect();
            (
                EmbeddingVector::normalized(values).expect("nonzero cluster point"),
                (cluster + 1) as u8,
            )
        })
        .collect()
}
