//! Generate a synthetic stub-mode corpus under a directory:
//!
//! - `manifest.jsonl` + WAV mixtures whose event order is controlled
//! - `eval_missing_event.jsonl` / `eval_sequence.jsonl` recognition items
//! - `timelines_ref.jsonl` / `timelines_pred.jsonl` for segment F1
//! - `ahq_manifest.jsonl` + `ahq_labels.csv` for quality-predictor training
//! - `captions.txt` for bench filtering
//!
//! Usage: cargo run -p t2a-eval-cli --example gen_fixtures -- OUT_DIR [SEED] [CAPTIONS]

use std::path::Path;

use t2a_eval::audio_io::write_wav_f32;
use t2a_eval::event_text::{decompose_caption, reverse_caption};
use t2a_eval::synth::{self, mixture, ToneEvent};

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "fixtures".to_string());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2024);
    let captions: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let dir = Path::new(&out);

    let corpus = synth::write_fixture_corpus(dir, seed, captions).expect("write corpus");
    println!(
        "wrote {} clips + manifest.jsonl to {}",
        corpus.items.len(),
        dir.display()
    );

    let lexicon = &corpus.lexicon;
    let mut missing_items = String::new();
    let mut sequence_items = String::new();
    let mut timelines_ref = String::new();
    let mut timelines_pred = String::new();
    let mut captions_txt = String::new();
    let mut correlation_items = String::new();

    // ESS tracks these by construction: ordered 1, swapped 1/3, reversed -1
    for item in &corpus.items {
        let human_label = if item.audio_id.ends_with("ordered") {
            3.0
        } else if item.audio_id.ends_with("swapped") {
            2.0
        } else {
            1.0
        };
        correlation_items.push_str(
            &serde_json::json!({
                "audio_path": dir.join(&item.file_name).display().to_string(),
                "caption": item.caption,
                "human_label": human_label,
            })
            .to_string(),
        );
        correlation_items.push('\n');
    }

    for item in corpus.items.iter().filter(|i| i.audio_id.ends_with("ordered")) {
        let events = decompose_caption(&item.caption).expect("fixture caption parses");
        // distractor: first lexicon event not present in this caption
        let distractor_event = lexicon
            .entries
            .iter()
            .map(|e| e.caption.clone())
            .find(|c| !events.events().contains(c))
            .expect("lexicon larger than caption");
        let distractor = format!("{}, then {}", item.caption, distractor_event);
        let reversed = reverse_caption(&events).expect("multi-event caption");
        let audio_path = dir.join(&item.file_name).display().to_string();

        missing_items.push_str(
            &serde_json::json!({
                "audio_path": audio_path,
                "caption": item.caption,
                "distractor": distractor,
            })
            .to_string(),
        );
        missing_items.push('\n');
        sequence_items.push_str(
            &serde_json::json!({
                "audio_path": audio_path,
                "caption": item.caption,
                "reversed": reversed,
            })
            .to_string(),
        );
        sequence_items.push('\n');
        captions_txt.push_str(&item.caption);
        captions_txt.push('\n');

        // ground-truth activity spans mirror the synthesis schedule
        let horizon = 0.4 + 3.0 * 1.5 + 0.4;
        let make_events = |shift: f64| -> Vec<serde_json::Value> {
            item.audio_order
                .iter()
                .enumerate()
                .map(|(slot, &lex_idx)| {
                    let start = 0.4 + slot as f64 * 1.5 + shift;
                    serde_json::json!({
                        "label": lexicon.entries[lex_idx].caption,
                        "spans": [[start, start + 1.0]],
                    })
                })
                .collect()
        };
        timelines_ref.push_str(
            &serde_json::json!({
                "item_id": item.audio_id,
                "horizon_s": horizon,
                "events": make_events(0.0),
            })
            .to_string(),
        );
        timelines_ref.push('\n');
        timelines_pred.push_str(
            &serde_json::json!({
                "item_id": item.audio_id,
                "horizon_s": horizon,
                "events": make_events(0.3),
            })
            .to_string(),
        );
        timelines_pred.push('\n');
    }

    std::fs::write(dir.join("eval_missing_event.jsonl"), missing_items).unwrap();
    std::fs::write(dir.join("eval_sequence.jsonl"), sequence_items).unwrap();
    std::fs::write(dir.join("eval_correlation.jsonl"), correlation_items).unwrap();
    std::fs::write(dir.join("timelines_ref.jsonl"), timelines_ref).unwrap();
    std::fs::write(dir.join("timelines_pred.jsonl"), timelines_pred).unwrap();
    std::fs::write(dir.join("captions.txt"), captions_txt).unwrap();

    // quality-training corpus: pure tones over the first four lexicon
    // bands, labelled 1..4 by band
    let mut ahq_manifest = String::new();
    let mut ahq_labels = String::from("audio_id,label\n");
    for k in 0..48 {
        let band = k % 4;
        let entry = &lexicon.entries[band];
        let audio_id = format!("tone{k:02}");
        let file_name = format!("{audio_id}.wav");
        let clip = mixture(
            &audio_id,
            corpus.sample_rate,
            1.0,
            &[ToneEvent {
                freq_hz: entry.center_hz,
                start_s: 0.1,
                end_s: 0.9,
                amp: 0.3 + 0.01 * (k / 4) as f32,
            }],
        );
        write_wav_f32(dir.join(&file_name), &clip).unwrap();
        ahq_manifest.push_str(
            &serde_json::json!({
                "caption_id": format!("tonecap{k:02}"),
                "caption": entry.caption,
                "audio_id": audio_id,
                "audio_path": dir.join(&file_name).display().to_string(),
                "source_model": "synth-tone",
            })
            .to_string(),
        );
        ahq_manifest.push('\n');
        ahq_labels.push_str(&format!("{audio_id},{}\n", band + 1));
    }
    std::fs::write(dir.join("ahq_manifest.jsonl"), ahq_manifest).unwrap();
    std::fs::write(dir.join("ahq_labels.csv"), ahq_labels).unwrap();

    println!("wrote eval items, timelines, captions.txt and AHQ training fixtures");
}
