//! Python bindings: the main types and operations of the evaluation
//! engine, driven in-process (no server, no subprocess).
//!
//! Build the cdylib with `cargo build -p t2a-eval-py --release`; the
//! smoke test under `python/` locates the shared object inside the cargo
//! target directory and imports it as `t2a_eval_py`.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use t2a_eval::audio_io;
use t2a_eval::dataset;
use t2a_eval::evalharness;
use t2a_eval::event_text;
use t2a_eval::providers::{self, stub::StubLexicon, ProviderConfig, ProviderKind};
use t2a_eval::scoring::{self, ahq};
use t2a_eval::synth;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// Mono audio clip: id, float samples in [-1, 1], sample rate.
#[pyclass(name = "AudioClip", from_py_object)]
#[derive(Clone)]
struct PyAudioClip {
    inner: audio_io::AudioClip,
}

#[pymethods]
impl PyAudioClip {
    #[new]
    fn new(id: String, samples: Vec<f32>, sample_rate: u32) -> PyResult<Self> {
        if sample_rate == 0 {
            return Err(PyValueError::new_err("sample_rate must be positive"));
        }
        let samples = samples.iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self {
            inner: audio_io::AudioClip::new(id, samples, sample_rate),
        })
    }

    /// Decode a RIFF/WAVE file (PCM16 or float32, mono or stereo).
    #[staticmethod]
    fn load_wav(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: audio_io::load_wav(path).map_err(io_err)?,
        })
    }

    /// Write the clip as a float32 WAV file.
    fn save_wav(&self, path: &str) -> PyResult<()> {
        audio_io::write_wav_f32(path, &self.inner).map_err(io_err)
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.sample_rate
    }

    #[getter]
    fn samples(&self) -> Vec<f32> {
        self.inner.samples.clone()
    }

    fn duration_seconds(&self) -> f64 {
        self.inner.duration_seconds()
    }

    fn rms(&self) -> f64 {
        self.inner.rms()
    }

    /// Detected activity span (onset_s, offset_s, detected) of the
    /// normalized volume envelope at the given threshold.
    #[pyo3(signature = (threshold = 0.3, frame_len_s = 0.02, hop_s = 0.01))]
    fn detect_span(
        &self,
        threshold: f64,
        frame_len_s: f64,
        hop_s: f64,
    ) -> PyResult<(f64, f64, bool)> {
        let env =
            audio_io::compute_envelope(&self.inner, frame_len_s, hop_s).map_err(value_err)?;
        let span = audio_io::detect_active_span(&audio_io::normalize_envelope(&env), threshold)
            .map_err(value_err)?;
        Ok((span.onset_s, span.offset_s, span.detected))
    }

    fn __repr__(&self) -> String {
        format!(
            "AudioClip(id={:?}, samples={}, sample_rate={})",
            self.inner.id,
            self.inner.samples.len(),
            self.inner.sample_rate
        )
    }
}

/// Ordered event captions plus pairwise temporal relations.
#[pyclass(name = "EventList", skip_from_py_object)]
#[derive(Clone)]
struct PyEventList {
    inner: event_text::EventList,
}

#[pymethods]
impl PyEventList {
    /// Parse a caption with the rule-based decomposer.
    #[staticmethod]
    fn decompose(caption: &str) -> PyResult<Self> {
        Ok(Self {
            inner: event_text::decompose_caption(caption).map_err(value_err)?,
        })
    }

    /// All-BEFORE list in the given order.
    #[staticmethod]
    fn sequential(events: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: event_text::EventList::sequential(events).map_err(value_err)?,
        })
    }

    #[getter]
    fn events(&self) -> Vec<String> {
        self.inner.events().to_vec()
    }

    /// Relations as (i, j, "BEFORE" | "SIMULTANEOUS") triples.
    #[getter]
    fn relations(&self) -> Vec<(usize, usize, String)> {
        self.inner
            .relations()
            .iter()
            .map(|r| {
                let rel = match r.rel {
                    event_text::Relation::Before => "BEFORE",
                    event_text::Relation::Simultaneous => "SIMULTANEOUS",
                };
                (r.i, r.j, rel.to_string())
            })
            .collect()
    }

    fn compose(&self) -> String {
        event_text::compose_caption(&self.inner)
    }

    fn reversed(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.reversed().map_err(value_err)?,
        })
    }

    fn reverse_caption(&self) -> PyResult<String> {
        event_text::reverse_caption(&self.inner).map_err(value_err)
    }

    #[pyo3(signature = (candidates, rng_seed = 0))]
    fn make_distractor_caption(&self, candidates: Vec<String>, rng_seed: u64) -> PyResult<String> {
        event_text::make_distractor_caption(&self.inner, &candidates, rng_seed).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("EventList({:?})", self.inner.events())
    }
}

/// Provider handle over the stub or a remote HTTP backend.
#[pyclass(name = "Provider")]
struct PyProvider {
    inner: Arc<providers::Provider>,
}

#[pymethods]
impl PyProvider {
    /// Deterministic in-process stub with the default test lexicon (or a
    /// lexicon loaded from JSON).
    #[staticmethod]
    #[pyo3(signature = (cache_dir = None, max_in_flight = 4, lexicon_json = None))]
    fn stub(
        cache_dir: Option<String>,
        max_in_flight: usize,
        lexicon_json: Option<String>,
    ) -> PyResult<Self> {
        let mut config = ProviderConfig::stub();
        config.cache_dir = cache_dir.map(Into::into);
        config.max_in_flight = max_in_flight;
        let provider = match lexicon_json {
            Some(path) => {
                let lexicon = StubLexicon::from_json_file(&path).map_err(value_err)?;
                providers::Provider::with_backend(
                    Arc::new(providers::stub::StubProvider::new(lexicon)),
                    config,
                )
            }
            None => providers::Provider::new(config),
        }
        .map_err(value_err)?;
        Ok(Self {
            inner: Arc::new(provider),
        })
    }

    /// Remote HTTP provider at `endpoint_url`.
    #[staticmethod]
    #[pyo3(signature = (endpoint_url, timeout_s = 30.0, max_in_flight = 4, cache_dir = None, bearer_token = None))]
    fn remote(
        endpoint_url: String,
        timeout_s: f64,
        max_in_flight: usize,
        cache_dir: Option<String>,
        bearer_token: Option<String>,
    ) -> PyResult<Self> {
        let mut config = ProviderConfig::remote(endpoint_url);
        config.kind = ProviderKind::Remote;
        config.timeout_s = timeout_s;
        config.max_in_flight = max_in_flight;
        config.cache_dir = cache_dir.map(Into::into);
        config.bearer_token = bearer_token;
        Ok(Self {
            inner: Arc::new(providers::Provider::new(config).map_err(value_err)?),
        })
    }

    /// One unit-normalized embedding per text, as lists of floats.
    fn embed_text(&self, texts: Vec<String>) -> PyResult<Vec<Vec<f32>>> {
        Ok(self
            .inner
            .embed_text(&texts)
            .map_err(value_err)?
            .into_iter()
            .map(|v| v.values)
            .collect())
    }

    fn embed_audio(&self, clips: Vec<PyAudioClip>) -> PyResult<Vec<Vec<f32>>> {
        let clips: Vec<audio_io::AudioClip> = clips.into_iter().map(|c| c.inner).collect();
        Ok(self
            .inner
            .embed_audio(&clips)
            .map_err(value_err)?
            .into_iter()
            .map(|v| v.values)
            .collect())
    }

    fn separate(&self, clip: &PyAudioClip, event_caption: &str) -> PyResult<PyAudioClip> {
        Ok(PyAudioClip {
            inner: self
                .inner
                .separate(&clip.inner, event_caption)
                .map_err(value_err)?,
        })
    }

    fn decompose(&self, caption: &str) -> PyResult<PyEventList> {
        Ok(PyEventList {
            inner: self.inner.decompose(caption).map_err(value_err)?,
        })
    }
}

/// Acoustic-quality predictor (two-layer MLP over audio embeddings).
#[pyclass(name = "AhqModel", skip_from_py_object)]
#[derive(Clone)]
struct PyAhqModel {
    inner: ahq::AhqModel,
}

fn to_dataset(data: Vec<(Vec<f32>, u8)>) -> PyResult<Vec<(providers::EmbeddingVector, u8)>> {
    data.into_iter()
        .map(|(values, label)| {
            Ok((
                providers::EmbeddingVector::normalized(values).map_err(value_err)?,
                label,
            ))
        })
        .collect()
}

#[pymethods]
impl PyAhqModel {
    /// All-zero parameters (uniform prior; every prediction is 2.5).
    #[staticmethod]
    #[pyo3(signature = (dim, hidden = 64))]
    fn zeroed(dim: usize, hidden: usize) -> Self {
        Self {
            inner: ahq::AhqModel::zeroed(dim, hidden),
        }
    }

    /// Train with Adam on (embedding, label in 1..4) pairs.
    #[staticmethod]
    #[pyo3(signature = (data, epochs = 6, hidden = 64, batch_size = 32, rng_seed = 0, learning_rate = None))]
    fn train(
        data: Vec<(Vec<f32>, u8)>,
        epochs: usize,
        hidden: usize,
        batch_size: usize,
        rng_seed: u64,
        learning_rate: Option<f64>,
    ) -> PyResult<Self> {
        let dataset = to_dataset(data)?;
        let options = ahq::TrainOptions {
            epochs,
            hidden,
            batch_size,
            rng_seed,
            learning_rate: learning_rate.unwrap_or_else(ahq::default_learning_rate),
        };
        let outcome = ahq::train(&dataset, &options).map_err(value_err)?;
        Ok(Self {
            inner: outcome.model,
        })
    }

    /// As `train`, returning (model, per-epoch mean loss list).
    #[staticmethod]
    #[pyo3(signature = (data, epochs = 6, hidden = 64, batch_size = 32, rng_seed = 0))]
    fn train_with_trace(
        data: Vec<(Vec<f32>, u8)>,
        epochs: usize,
        hidden: usize,
        batch_size: usize,
        rng_seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let dataset = to_dataset(data)?;
        let options = ahq::TrainOptions {
            epochs,
            hidden,
            batch_size,
            rng_seed,
            ..Default::default()
        };
        let outcome = ahq::train(&dataset, &options).map_err(value_err)?;
        Ok((
            Self {
                inner: outcome.model,
            },
            outcome.epoch_losses,
        ))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ahq::AhqModel::load(path).map_err(io_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(io_err)
    }

    /// Expected class value in [1, 4] for one embedding.
    fn predict(&self, embedding: Vec<f32>) -> PyResult<f64> {
        let v = providers::EmbeddingVector::normalized(embedding).map_err(value_err)?;
        self.inner.predict(&v).map_err(value_err)
    }

    fn accuracy(&self, data: Vec<(Vec<f32>, u8)>) -> PyResult<f64> {
        let dataset = to_dataset(data)?;
        self.inner.accuracy(&dataset).map_err(value_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.h
    }
}

/// Cosine similarity of two embeddings (normalized internally).
#[pyfunction]
fn similarity(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    let a = providers::EmbeddingVector::normalized(a).map_err(value_err)?;
    let b = providers::EmbeddingVector::normalized(b).map_err(value_err)?;
    providers::similarity(&a, &b).map_err(value_err)
}

fn record_to_dict<'py>(
    py: Python<'py>,
    record: &scoring::ScoreRecord,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("audio_id", &record.audio_id)?;
    d.set_item("eos", record.eos)?;
    d.set_item("eos_per_event", record.eos_per_event.clone())?;
    d.set_item("ess", record.ess)?;
    let counts = PyDict::new(py);
    counts.set_item("C", record.ess_counts.concordant)?;
    counts.set_item("D", record.ess_counts.discordant)?;
    counts.set_item("n", record.ess_counts.n)?;
    d.set_item("ess_counts", counts)?;
    d.set_item("ahq", record.ahq)?;
    let spans = PyList::new(
        py,
        record
            .spans
            .iter()
            .map(|s| (s.event_index, s.onset_s, s.offset_s, s.detected)),
    )?;
    d.set_item("spans", spans)?;
    Ok(d)
}

/// Score one (clip, caption) pair; returns a dict with eos, eos_per_event,
/// ess, ess_counts, ahq and per-event spans.
#[pyfunction]
#[pyo3(signature = (clip, caption, provider, ahq_model = None, volume_threshold = 0.3, simultaneity_tol_s = 0.5))]
fn score_pair<'py>(
    py: Python<'py>,
    clip: &PyAudioClip,
    caption: &str,
    provider: &PyProvider,
    ahq_model: Option<&PyAhqModel>,
    volume_threshold: f64,
    simultaneity_tol_s: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let options = scoring::ScoreOptions {
        volume_threshold,
        simultaneity_tol_s,
        ..Default::default()
    };
    let record = scoring::score_pair(
        &clip.inner,
        caption,
        &provider.inner,
        ahq_model.map(|m| &m.inner),
        &options,
    )
    .map_err(value_err)?;
    record_to_dict(py, &record)
}

fn pool_from_dicts(caption: &str, entries: &[Bound<'_, PyDict>]) -> PyResult<dataset::Pool> {
    let entries: Vec<dataset::PoolEntry> = entries
        .iter()
        .map(|d| {
            let audio_id: String = d
                .get_item("audio_id")?
                .ok_or_else(|| PyValueError::new_err("entry missing audio_id"))?
                .extract()?;
            let eos: f64 = d
                .get_item("eos")?
                .ok_or_else(|| PyValueError::new_err("entry missing eos"))?
                .extract()?;
            let ess: Option<f64> = match d.get_item("ess")? {
                Some(v) => v.extract()?,
                None => None,
            };
            let ahq: Option<f64> = match d.get_item("ahq")? {
                Some(v) => v.extract()?,
                None => None,
            };
            Ok(dataset::PoolEntry {
                audio_id: audio_id.clone(),
                source_model: String::new(),
                record: scoring::ScoreRecord {
                    audio_id,
                    eos,
                    eos_per_event: Vec::new(),
                    ess,
                    ess_counts: scoring::EssCounts {
                        concordant: 0,
                        discordant: 0,
                        n: 1,
                    },
                    ahq,
                    spans: Vec::new(),
                },
            })
        })
        .collect::<PyResult<_>>()?;
    dataset::Pool::new(caption, entries).map_err(value_err)
}

/// Rank one pool. `entries` is a list of dicts with keys audio_id, eos,
/// ess (may be None), ahq (may be None). Returns (audio_id, rank) pairs.
#[pyfunction]
#[pyo3(signature = (caption, entries, aggregation = "mean-rank"))]
fn rank_pool(
    caption: &str,
    entries: Vec<Bound<'_, PyDict>>,
    aggregation: &str,
) -> PyResult<Vec<(String, usize)>> {
    let pool = pool_from_dicts(caption, &entries)?;
    let aggregation = match aggregation {
        "mean-rank" => dataset::RankAggregation::MeanRank,
        "mean-score" => dataset::RankAggregation::MeanScore,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown aggregation {other:?}"
            )))
        }
    };
    let ranking = dataset::rank_pool_with(&pool, aggregation).map_err(value_err)?;
    Ok(ranking
        .into_iter()
        .map(|r| (r.audio_id, r.combined_rank))
        .collect())
}

/// Emit preference pairs from a pool: dicts with chosen, rejected,
/// margins and rank_gap.
#[pyfunction]
#[pyo3(signature = (caption, entries, policy = "best-worst"))]
fn emit_pairs<'py>(
    py: Python<'py>,
    caption: &str,
    entries: Vec<Bound<'py, PyDict>>,
    policy: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let pool = pool_from_dicts(caption, &entries)?;
    let policy = match policy {
        "best-worst" => dataset::PairPolicy::BestWorst,
        "all-ordered" => dataset::PairPolicy::AllOrdered,
        other => return Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
    };
    let ranking = dataset::rank_pool(&pool).map_err(value_err)?;
    let pairs = dataset::emit_pairs(&pool, &ranking, policy).map_err(value_err)?;
    pairs
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("caption", &p.caption)?;
            d.set_item("chosen", &p.chosen_id)?;
            d.set_item("rejected", &p.rejected_id)?;
            let margins = PyDict::new(py);
            margins.set_item("eos", p.margin_eos)?;
            margins.set_item("ess", p.margin_ess)?;
            margins.set_item("ahq", p.margin_ahq)?;
            d.set_item("margins", margins)?;
            d.set_item("rank_gap", p.combined_rank_gap)?;
            Ok(d)
        })
        .collect()
}

/// Greedy event inventory from captions; returns (events, skipped_count).
#[pyfunction]
#[pyo3(signature = (captions, provider, overlap_threshold = 0.85))]
fn build_event_inventory(
    captions: Vec<String>,
    provider: &PyProvider,
    overlap_threshold: f64,
) -> PyResult<(Vec<String>, usize)> {
    let inv = dataset::build_event_inventory(&captions, &provider.inner, overlap_threshold)
        .map_err(value_err)?;
    Ok((inv.events, inv.skipped_captions))
}

/// Seeded multi-event prompt composition from an inventory.
#[pyfunction]
#[pyo3(signature = (inventory, k_events, count, rng_seed = 0))]
fn compose_prompts(
    inventory: Vec<String>,
    k_events: usize,
    count: usize,
    rng_seed: u64,
) -> PyResult<Vec<String>> {
    dataset::compose_prompts(&inventory, k_events, count, rng_seed).map_err(value_err)
}

type PyTimeline = (String, Vec<(f64, f64)>, f64);

fn timelines_from(raw: Vec<PyTimeline>) -> Vec<evalharness::SegmentTimeline> {
    raw.into_iter()
        .map(|(event_label, spans, horizon_s)| evalharness::SegmentTimeline {
            event_label,
            spans,
            horizon_s,
        })
        .collect()
}

/// Micro-averaged segment F1. Items are (reference, prediction) pairs,
/// each a list of (label, [(onset, offset), ..], horizon_s) timelines.
#[pyfunction]
#[pyo3(signature = (items, segment_len_s = 1.0))]
fn segment_f1(
    items: Vec<(Vec<PyTimeline>, Vec<PyTimeline>)>,
    segment_len_s: f64,
) -> PyResult<f64> {
    let items: Vec<_> = items
        .into_iter()
        .map(|(r, p)| (timelines_from(r), timelines_from(p)))
        .collect();
    Ok(evalharness::segment_f1(&items, segment_len_s)
        .map_err(value_err)?
        .value)
}

/// Pearson or Spearman correlation ("pearson" | "spearman").
#[pyfunction]
#[pyo3(signature = (x, y, kind = "spearman"))]
fn correlation(x: Vec<f64>, y: Vec<f64>, kind: &str) -> PyResult<f64> {
    let kind = match kind {
        "pearson" => evalharness::CorrelationKind::Pearson,
        "spearman" => evalharness::CorrelationKind::Spearman,
        other => return Err(PyValueError::new_err(format!("unknown kind {other:?}"))),
    };
    evalharness::correlation(&x, &y, kind).map_err(value_err)
}

/// Win rate (percent) of side A over B with half credit on ties.
#[pyfunction]
fn win_rate(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    Ok(evalharness::win_rate(&a, &b).map_err(value_err)?.value)
}

/// Synthesize a multi-band tone mixture; events are
/// (freq_hz, start_s, end_s, amp) tuples.
#[pyfunction]
fn synth_mixture(
    id: &str,
    sample_rate: u32,
    total_s: f64,
    events: Vec<(f64, f64, f64, f32)>,
) -> PyAudioClip {
    let events: Vec<synth::ToneEvent> = events
        .into_iter()
        .map(|(freq_hz, start_s, end_s, amp)| synth::ToneEvent {
            freq_hz,
            start_s,
            end_s,
            amp,
        })
        .collect();
    PyAudioClip {
        inner: synth::mixture(id, sample_rate, total_s, &events),
    }
}

/// Write the synthetic fixture corpus (WAVs + manifest.jsonl); returns
/// the manifest path.
#[pyfunction]
#[pyo3(signature = (dir, seed = 2024, captions = 3))]
fn write_fixture_corpus(dir: &str, seed: u64, captions: usize) -> PyResult<String> {
    synth::write_fixture_corpus(dir, seed, captions).map_err(io_err)?;
    Ok(format!("{dir}/manifest.jsonl"))
}

/// The default stub lexicon as (caption, center_hz, half_bw_hz) rows.
#[pyfunction]
fn default_stub_lexicon() -> Vec<(String, f64, f64)> {
    StubLexicon::default_test_lexicon()
        .entries
        .into_iter()
        .map(|e| (e.caption, e.center_hz, e.half_bw_hz))
        .collect()
}

#[pymodule]
fn t2a_eval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyAudioClip>()?;
    m.add_class::<PyEventList>()?;
    m.add_class::<PyProvider>()?;
    m.add_class::<PyAhqModel>()?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(score_pair, m)?)?;
    m.add_function(wrap_pyfunction!(rank_pool, m)?)?;
    m.add_function(wrap_pyfunction!(emit_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(build_event_inventory, m)?)?;
    m.add_function(wrap_pyfunction!(compose_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(segment_f1, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    m.add_function(wrap_pyfunction!(win_rate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(default_stub_lexicon, m)?)?;
    Ok(())
}
