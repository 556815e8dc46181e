//! Recognition protocols end to end on the stub: 20 synthetic two-band
//! clips per protocol, where construction guarantees the ground-truth
//! caption wins every comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use t2a_eval::evalharness::{missing_event_accuracy, sequence_accuracy, RecognitionItem};
use t2a_eval::event_text::{decompose_caption, reverse_caption};
use t2a_eval::providers::{stub::StubLexicon, Provider, ProviderConfig};
use t2a_eval::scoring::{event_occurrence_score, event_sequence_score, ScoreOptions, ScoringError};
use t2a_eval::synth::{mixture, ToneEvent};

/// 20 two-band clips: per item, two distinct lexicon events with ordered
/// onsets; foils are built per protocol.
fn build_items(foil: impl Fn(&str, &[usize], &StubLexicon) -> String) -> Vec<RecognitionItem> {
    let lexicon = StubLexicon::default_test_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(515);
    (0..20)
        .map(|k| {
            let a = rng.random_range(0..lexicon.entries.len());
            let mut b = rng.random_range(0..lexicon.entries.len());
            while b == a {
                b = rng.random_range(0..lexicon.entries.len());
            }
            let caption = format!(
                "{}, then {}",
                lexicon.entries[a].caption, lexicon.entries[b].caption
            );
            let clip = mixture(
                &format!("item{k}"),
                16000,
                4.6,
                &[
                    ToneEvent {
                        freq_hz: lexicon.entries[a].center_hz,
                        start_s: 0.4,
                        end_s: 1.4,
                        amp: 0.4,
                    },
                    ToneEvent {
                        freq_hz: lexicon.entries[b].center_hz,
                        start_s: 2.4,
                        end_s: 3.4,
                        amp: 0.4,
                    },
                ],
            );
            RecognitionItem {
                item_id: format!("item{k}"),
                foil_caption: foil(&caption, &[a, b], &lexicon),
                clip,
                truth_caption: caption,
            }
        })
        .collect()
}

#[test]
fn missing_event_recognition_is_perfect_on_stub() {
    // distractor: append a lexicon event absent from both bands
    let items = build_items(|caption, used, lexicon| {
        let extra = (0..lexicon.entries.len())
            .find(|i| !used.contains(i))
            .expect("lexicon has spare events");
        format!("{caption}, then {}", lexicon.entries[extra].caption)
    });
    let provider = Provider::new(ProviderConfig::stub()).unwrap();
    let report = missing_event_accuracy(&items, |clip, caption| {
        let events = decompose_caption(caption).map_err(|e| {
            ScoringError::Decompose(t2a_eval::providers::ProviderError::Decompose(e))
        })?;
        event_occurrence_score(clip, &events, &provider).map(|(eos, _)| eos)
    })
    .unwrap();
    assert_eq!(report.value, 100.0);
    assert_eq!(report.count, 20);
    assert_eq!(report.excluded, 0);
}

#[test]
fn sequence_recognition_is_perfect_on_stub() {
    let items = build_items(|caption, _, _| {
        let events = decompose_caption(caption).expect("two-event caption");
        reverse_caption(&events).expect("reversible")
    });
    let provider = Provider::new(ProviderConfig::stub()).unwrap();
    let options = ScoreOptions::default();
    let report = sequence_accuracy(&items, |clip, caption| {
        let events = decompose_caption(caption).map_err(|e| {
            ScoringError::Decompose(t2a_eval::providers::ProviderError::Decompose(e))
        })?;
        let (ess, _, _) = event_sequence_score(clip, &events, &provider, &options)?;
        Ok(ess.unwrap_or(0.0))
    })
    .unwrap();
    assert_eq!(report.value, 100.0);
    assert_eq!(report.count, 20);
}
