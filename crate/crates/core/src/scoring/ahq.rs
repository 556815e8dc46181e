//! Acoustic & harmonic quality predictor: a two-layer MLP over audio
//! embeddings, classifying quality into four classes and reporting the
//! expected class value (1-4) as the score.
//!
//! Trained with mean cross-entropy and Adam; runs are bitwise-reproducible
//! per seed. The model file format is a fixed binary container (`AHQ1`
//! magic) holding f32 parameter arrays; label files are CSV with either a
//! single label column or three annotator columns resolved by strict
//! majority (no-majority rows are dropped).

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::providers::EmbeddingVector;

pub const NUM_CLASSES: usize = 4;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EPOCHS: usize = 6;
pub const DEFAULT_BATCH: usize = 32;

/// Adam learning rate 10^(-2.5).
pub fn default_learning_rate() -> f64 {
    10f64.powf(-2.5)
}

#[derive(Debug, Error)]
pub enum AhqError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set covers a single class; need at least 2 of 1..4")]
    SingleClass,
    #[error("label {value:?} on line {line} is not an integer in 1..4")]
    InvalidLabel { line: usize, value: String },
    #[error("label file header {found:?} (expected 'audio_id,label' or 'audio_id,a1,a2,a3')")]
    BadHeader { found: String },
    #[error("embedding dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model file {path}: {reason}")]
    BadModelFile { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Two-layer MLP: logits = W2 . relu(W1 . x + b1) + b2.
///
/// `w1` is d x h row-major, `w2` is h x 4 row-major, matching the on-disk
/// layout exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AhqModel {
    pub d: usize,
    pub h: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter gradients, in model layout.
#[derive(Debug, Clone)]
pub struct AhqGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Trainer output: the fitted model plus the per-epoch mean loss trace.
#[derive(Debug, Clone)]
pub struct AhqTraining {
    pub model: AhqModel,
    pub epoch_losses: Vec<f64>,
}

/// Trainer hyperparameters (defaults follow the fixed recipe: Adam at
/// lr 10^-2.5, 6 epochs, batch 32, hidden width 64).
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub rng_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            learning_rate: default_learning_rate(),
            batch_size: DEFAULT_BATCH,
            hidden: DEFAULT_HIDDEN,
            rng_seed: 0,
        }
    }
}

impl AhqModel {
    /// All-zero parameters: uniform softmax, so every prediction is 2.5.
    pub fn zeroed(d: usize, h: usize) -> Self {
        Self {
            d,
            h,
            w1: vec![0.0; d * h],
            b1: vec![0.0; h],
            w2: vec![0.0; h * NUM_CLASSES],
            b2: vec![0.0; NUM_CLASSES],
        }
    }

    /// Seeded init: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
    /// biases zero.
    pub fn init(d: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut model = Self::zeroed(d, h);
        let a1 = 1.0 / (d as f64).sqrt();
        for w in &mut model.w1 {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = 1.0 / (h as f64).sqrt();
        for w in &mut model.w2 {
            *w = rng.random_range(-a2..a2);
        }
        model
    }

    fn check_dim(&self, x: &EmbeddingVector) -> Result<(), AhqError> {
        if x.dim() != self.d {
            return Err(AhqError::DimensionMismatch {
                expected: self.d,
                got: x.dim(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let mut hidden = vec![0.0f64; self.h];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let xi = xi as f64;
            let row = &self.w1[i * self.h..(i + 1) * self.h];
            for (j, &w) in row.iter().enumerate() {
                hidden[j] += xi * w;
            }
        }
        for (j, b) in self.b1.iter().enumerate() {
            hidden[j] = (hidden[j] + b).max(0.0);
        }
        let mut logits = self.b2.clone();
        for (j, &hj) in hidden.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            let row = &self.w2[j * NUM_CLASSES..(j + 1) * NUM_CLASSES];
            for (c, &w) in row.iter().enumerate() {
                logits[c] += hj * w;
            }
        }
        (hidden, logits)
    }

    pub fn logits(&self, x: &EmbeddingVector) -> Result<Vec<f64>, AhqError> {
        self.check_dim(x)?;
        Ok(self.forward(&x.values).1)
    }

    pub fn class_probabilities(&self, x: &EmbeddingVector) -> Result<Vec<f64>, AhqError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// The quality score: expected class value, sum of c * p_c over
    /// classes 1..4. Always lands in [1, 4].
    pub fn predict(&self, x: &EmbeddingVector) -> Result<f64, AhqError> {
        let p = self.class_probabilities(x)?;
        Ok(p.iter()
            .enumerate()
            .map(|(c, &pc)| (c + 1) as f64 * pc)
            .sum())
    }

    /// Mean cross-entropy over a dataset.
    pub fn mean_loss(&self, data: &[(EmbeddingVector, u8)]) -> Result<f64, AhqError> {
        if data.is_empty() {
            return Err(AhqError::EmptyDataset);
        }
        let mut total = 0.0;
        for (x, y) in data {
            self.check_dim(x)?;
            let (_, logits) = self.forward(&x.values);
            total += cross_entropy(&logits, *y as usize - 1);
        }
        Ok(total / data.len() as f64)
    }

    /// Mean cross-entropy gradients over a batch (analytic backprop).
    pub fn gradients(&self, batch: &[(EmbeddingVector, u8)]) -> Result<AhqGradients, AhqError> {
        if batch.is_empty() {
            return Err(AhqError::EmptyDataset);
        }
        let mut g = AhqGradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        };
        let scale = 1.0 / batch.len() as f64;
        for (x, y) in batch {
            self.check_dim(x)?;
            let (hidden, logits) = self.forward(&x.values);
            let p = softmax(&logits);
            let mut dlogits = p;
            dlogits[*y as usize - 1] -= 1.0;

            for (j, &hj) in hidden.iter().enumerate() {
                let w2_row = j * NUM_CLASSES;
                for (c, &dc) in dlogits.iter().enumerate() {
                    g.w2[w2_row + c] += scale * hj * dc;
                }
            }
            for (c, &dc) in dlogits.iter().enumerate() {
                g.b2[c] += scale * dc;
            }

            let mut dhidden = vec![0.0f64; self.h];
            for (j, dh) in dhidden.iter_mut().enumerate() {
                if hidden[j] == 0.0 {
                    continue; // relu gate closed
                }
                let row = &self.w2[j * NUM_CLASSES..(j + 1) * NUM_CLASSES];
                *dh = row
                    .iter()
                    .zip(dlogits.iter())
                    .map(|(&w, &dc)| w * dc)
                    .sum();
            }
            for (i, &xi) in x.values.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let xi = xi as f64 * scale;
                let row = i * self.h;
                for (j, &dh) in dhidden.iter().enumerate() {
                    g.w1[row + j] += xi * dh;
                }
            }
            for (j, &dh) in dhidden.iter().enumerate() {
                g.b1[j] += scale * dh;
            }
        }
        Ok(g)
    }

    /// Classification accuracy (argmax of logits vs label).
    pub fn accuracy(&self, data: &[(EmbeddingVector, u8)]) -> Result<f64, AhqError> {
        if data.is_empty() {
            return Err(AhqError::EmptyDataset);
        }
        let mut correct = 0usize;
        for (x, y) in data {
            let logits = self.logits(x)?;
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(c, _)| c)
                .unwrap();
            if pred == *y as usize - 1 {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Write the binary container: magic `AHQ1`, u32 d, u32 h, then f32
    /// arrays w1, b1, w2, b2 in row-major order, all little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AhqError> {
        let mut bytes = Vec::with_capacity(12 + 4 * (self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()));
        bytes.extend_from_slice(b"AHQ1");
        bytes.extend_from_slice(&(self.d as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.h as u32).to_le_bytes());
        for arr in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for &v in arr.iter() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AhqError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |reason: &str| AhqError::BadModelFile {
            path: display.clone(),
            reason: reason.to_string(),
        };
        if bytes.len() < 12 || &bytes[0..4] != b"AHQ1" {
            return Err(bad("missing AHQ1 magic"));
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let counts = [d * h, h, h * NUM_CLASSES, NUM_CLASSES];
        let expected = 12 + 4 * counts.iter().sum::<usize>();
        if bytes.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes for d={d}, h={h}, found {}",
                bytes.len()
            )));
        }
        let mut offset = 12;
        let mut read_array = |count: usize| -> Vec<f64> {
            let arr: Vec<f64> = bytes[offset..offset + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            offset += 4 * count;
            arr
        };
        let w1 = read_array(counts[0]);
        let b1 = read_array(counts[1]);
        let w2 = read_array(counts[2]);
        let b2 = read_array(counts[3]);
        if [&w1, &b1, &w2, &b2]
            .iter()
            .any(|arr| arr.iter().any(|v| !v.is_finite()))
        {
            return Err(bad("non-finite parameter"));
        }
        Ok(Self {
            d,
            h,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[class]
}

/// Train with Adam (beta1 0.9, beta2 0.999, eps 1e-8), shuffling per epoch
/// with the seeded generator. Identical seed and data reproduce the model
/// bitwise.
pub fn train(
    dataset: &[(EmbeddingVector, u8)],
    options: &TrainOptions,
) -> Result<AhqTraining, AhqError> {
    if dataset.is_empty() {
        return Err(AhqError::EmptyDataset);
    }
    let mut classes = [false; NUM_CLASSES];
    for (line, (x, y)) in dataset.iter().enumerate() {
        if !(1..=NUM_CLASSES as u8).contains(y) {
            return Err(AhqError::InvalidLabel {
                line,
                value: y.to_string(),
            });
        }
        classes[*y as usize - 1] = true;
        if x.dim() != dataset[0].0.dim() {
            return Err(AhqError::DimensionMismatch {
                expected: dataset[0].0.dim(),
                got: x.dim(),
            });
        }
    }
    if classes.iter().filter(|&&c| c).count() < 2 {
        return Err(AhqError::SingleClass);
    }

    let d = dataset[0].0.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
    let mut model = AhqModel::init(d, options.hidden, &mut rng);

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut adam_m = AhqGradients {
        w1: vec![0.0; model.w1.len()],
        b1: vec![0.0; model.b1.len()],
        w2: vec![0.0; model.w2.len()],
        b2: vec![0.0; model.b2.len()],
    };
    let mut adam_v = adam_m.clone();
    let mut step = 0u32;

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(options.epochs);
    let batch_size = options.batch_size.max(1);

    for epoch in 0..options.epochs {
        // Fisher-Yates with the session rng
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in indices.chunks(batch_size).enumerate() {
            let batch: Vec<(EmbeddingVector, u8)> =
                chunk.iter().map(|&i| dataset[i].clone()).collect();
            let loss = model.mean_loss(&batch)?;
            if !loss.is_finite() {
                return Err(AhqError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            let grads = model.gradients(&batch)?;

            step += 1;
            let bias1 = 1.0 - BETA1.powi(step as i32);
            let bias2 = 1.0 - BETA2.powi(step as i32);
            for (param, grad, m, v) in [
                (&mut model.w1, &grads.w1, &mut adam_m.w1, &mut adam_v.w1),
                (&mut model.b1, &grads.b1, &mut adam_m.b1, &mut adam_v.b1),
                (&mut model.w2, &grads.w2, &mut adam_m.w2, &mut adam_v.w2),
                (&mut model.b2, &grads.b2, &mut adam_m.b2, &mut adam_v.b2),
            ] {
                for k in 0..param.len() {
                    let g = grad[k];
                    m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                    v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                    let m_hat = m[k] / bias1;
                    let v_hat = v[k] / bias2;
                    param[k] -= options.learning_rate * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
        epoch_losses.push(epoch_loss / dataset.len() as f64);
    }

    Ok(AhqTraining {
        model,
        epoch_losses,
    })
}

/// Parsed label file: accepted (audio_id, label) rows plus the ids of
/// three-annotator rows dropped for lacking a strict majority.
#[derive(Debug, Clone)]
pub struct LabelFile {
    pub labels: Vec<(String, u8)>,
    pub dropped: Vec<String>,
}

/// Parse a label CSV. Header `audio_id,label` reads one label per row;
/// header `audio_id,a1,a2,a3` reads three annotator labels and keeps the
/// strict-majority value, dropping rows without one.
pub fn parse_label_file(path: impl AsRef<Path>) -> Result<LabelFile, AhqError> {
    let text = std::fs::read_to_string(path)?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<LabelFile, AhqError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(AhqError::BadHeader {
        found: String::new(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let annotated = match columns.as_slice() {
        ["audio_id", "label"] => false,
        ["audio_id", "a1", "a2", "a3"] => true,
        _ => {
            return Err(AhqError::BadHeader {
                found: header.to_string(),
            })
        }
    };

    let parse_one = |line: usize, field: &str| -> Result<u8, AhqError> {
        field
            .trim()
            .parse::<u8>()
            .ok()
            .filter(|v| (1..=NUM_CLASSES as u8).contains(v))
            .ok_or(AhqError::InvalidLabel {
                line,
                value: field.trim().to_string(),
            })
    };

    let mut labels = Vec::new();
    let mut dropped = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if annotated { 4 } else { 2 };
        if fields.len() != expected {
            return Err(AhqError::InvalidLabel {
                line: line_no,
                value: line.to_string(),
            });
        }
        let audio_id = fields[0].trim().to_string();
        if annotated {
            let votes: Vec<u8> = fields[1..]
                .iter()
                .map(|f| parse_one(line_no, f))
                .collect::<Result<_, _>>()?;
            // strict majority among three annotators = any value twice
            let majority = (1..=NUM_CLASSES as u8)
                .find(|v| votes.iter().filter(|&&x| x == *v).count() >= 2);
            match majority {
                Some(v) => labels.push((audio_id, v)),
                None => dropped.push(audio_id),
            }
        } else {
            labels.push((audio_id, parse_one(line_no, fields[1])?));
        }
    }
    Ok(LabelFile { labels, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::cluster_dataset;

    fn unit_vec(values: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector::normalized(values).unwrap()
    }

    #[test]
    fn zeroed_model_predicts_midpoint() {
        let model = AhqModel::zeroed(8, 4);
        let x = unit_vec(vec![0.5, -0.25, 0.0, 0.0, 0.7, 0.1, 0.0, 0.3]);
        assert!((model.predict(&x).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn point_mass_and_uniform_expectations() {
        // drive logits directly through b2 on a zero-weight model
        let mut model = AhqModel::zeroed(4, 2);
        model.b2 = vec![-1e3, -1e3, -1e3, 1e3];
        let x = unit_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert!((model.predict(&x).unwrap() - 4.0).abs() < 1e-9);

        model.b2 = vec![0.7; 4];
        assert!((model.predict(&x).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn prediction_in_range_and_shift_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut model = AhqModel::init(16, 8, &mut rng);
        for _ in 0..50 {
            let x = unit_vec((0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect());
            let p = model.predict(&x).unwrap();
            assert!((1.0..=4.0).contains(&p));

            let base = model.predict(&x).unwrap();
            let saved_b2 = model.b2.clone();
            for b in &mut model.b2 {
                *b += 3.7;
            }
            let shifted = model.predict(&x).unwrap();
            assert!((base - shifted).abs() < 1e-9);
            model.b2 = saved_b2;
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = AhqModel::zeroed(8, 4);
        let x = unit_vec(vec![1.0, 0.0]);
        assert!(matches!(
            model.predict(&x),
            Err(AhqError::DimensionMismatch {
                expected: 8,
                got: 2
            })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let d = 12;
        let model = AhqModel::init(d, 6, &mut rng);
        let batch: Vec<(EmbeddingVector, u8)> = (0..8)
            .map(|k| {
                let x = unit_vec((0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect());
                (x, (k % 4 + 1) as u8)
            })
            .collect();
        let grads = model.gradients(&batch).unwrap();

        let mut check = |get: &dyn Fn(&AhqModel) -> &Vec<f64>,
                         get_mut: &dyn Fn(&mut AhqModel) -> &mut Vec<f64>,
                         grad: &Vec<f64>| {
            for _ in 0..6 {
                let k = rng.random_range(0..get(&model).len());
                let eps = 1e-4;
                let mut plus = model.clone();
                get_mut(&mut plus)[k] += eps;
                let mut minus = model.clone();
                get_mut(&mut minus)[k] -= eps;
                let numeric = (plus.mean_loss(&batch).unwrap()
                    - minus.mean_loss(&batch).unwrap())
                    / (2.0 * eps);
                let analytic = grad[k];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "param {k}: numeric {numeric} vs analytic {analytic}"
                );
            }
        };
        check(&|m| &m.w1, &|m| &mut m.w1, &grads.w1);
        check(&|m| &m.b1, &|m| &mut m.b1, &grads.b1);
        check(&|m| &m.w2, &|m| &mut m.w2, &grads.w2);
        check(&|m| &m.b2, &|m| &mut m.b2, &grads.b2);
    }

    #[test]
    fn training_separates_clusters_and_is_deterministic() {
        let data = cluster_dataset(240, 32, 31);
        let options = TrainOptions {
            rng_seed: 7,
            ..Default::default()
        };
        let run1 = train(&data, &options).unwrap();
        let run2 = train(&data, &options).unwrap();
        assert_eq!(run1.model, run2.model);
        assert_eq!(run1.epoch_losses, run2.epoch_losses);
        assert!(run1.model.accuracy(&data).unwrap() >= 0.95);
        assert_eq!(run1.epoch_losses.len(), DEFAULT_EPOCHS);
    }

    /// Loss trace is non-increasing on the separable set, allowing at most
    /// one epoch-to-epoch increase of at most 5% for stochastic batching.
    #[test]
    fn training_loss_is_essentially_non_increasing() {
        let data = cluster_dataset(240, 32, 13);
        let run = train(
            &data,
            &TrainOptions {
                rng_seed: 11,
                ..Default::default()
            },
        )
        .unwrap();
        let mut increases = 0;
        for w in run.epoch_losses.windows(2) {
            if w[1] > w[0] {
                increases += 1;
                assert!(
                    w[1] <= w[0] * 1.05,
                    "epoch loss jumped {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
        assert!(increases <= 1, "{increases} epoch-to-epoch increases");
    }

    #[test]
    fn training_rejects_single_class() {
        let data: Vec<(EmbeddingVector, u8)> = (0..10)
            .map(|i| (unit_vec(vec![i as f32 + 1.0, 1.0]), 2u8))
            .collect();
        assert!(matches!(
            train(&data, &TrainOptions::default()),
            Err(AhqError::SingleClass)
        ));
    }

    #[test]
    fn model_file_roundtrip() {
        use rand::SeedableRng;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ahq");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let model = AhqModel::init(16, 8, &mut rng);
        model.save(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"AHQ1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);

        let back = AhqModel::load(&path).unwrap();
        assert_eq!(back.d, 16);
        assert_eq!(back.h, 8);
        // save truncates to f32; compare at f32 precision
        for (a, b) in model.w1.iter().zip(back.w1.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn model_load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ahq");
        std::fs::write(&path, b"not a model").unwrap();
        assert!(matches!(
            AhqModel::load(&path),
            Err(AhqError::BadModelFile { .. })
        ));
    }

    #[test]
    fn label_file_single_column() {
        let parsed = parse_labels("audio_id,label\nx1,3\nx2,1\n\nx3,4\n").unwrap();
        assert_eq!(
            parsed.labels,
            vec![
                ("x1".to_string(), 3),
                ("x2".to_string(), 1),
                ("x3".to_string(), 4)
            ]
        );
        assert!(parsed.dropped.is_empty());
    }

    #[test]
    fn label_file_majority_vote() {
        let parsed =
            parse_labels("audio_id,a1,a2,a3\nx1,3,3,2\nx2,1,2,3\nx3,4,4,4\n").unwrap();
        assert_eq!(
            parsed.labels,
            vec![("x1".to_string(), 3), ("x3".to_string(), 4)]
        );
        assert_eq!(parsed.dropped, vec!["x2".to_string()]);
    }

    #[test]
    fn label_file_rejects_bad_values() {
        assert!(matches!(
            parse_labels("audio_id,label\nx1,7\n"),
            Err(AhqError::InvalidLabel { line: 2, .. })
        ));
        assert!(matches!(
            parse_labels("id,score\nx1,2\n"),
            Err(AhqError::BadHeader { .. })
        ));
    }
}
