//! HTTP/1.1 JSON provider client.
//!
//! Endpoints (all POST, UTF-8 JSON bodies):
//!
//! - `{endpoint}/v1/embed_text`  `{"texts": [..]}` -> `{"dim": n, "embeddings": [[..], ..]}`
//! - `{endpoint}/v1/embed_audio` `{"sample_rate": sr, "clips": [{"id", "pcm_b64"}, ..]}` -> as embed_text
//! - `{endpoint}/v1/separate`    `{"sample_rate", "caption", "pcm_b64"}` -> `{"pcm_b64"}`
//! - `{endpoint}/v1/decompose`   `{"caption"}` -> `{"events": [..], "relations": [{"i","j","rel"}, ..]}`
//!
//! `pcm_b64` is base64 of little-endian float32 samples. Non-200 responses
//! carry `{"error": msg}`; 429/5xx are flagged retryable, everything else
//! fatal. Mixed-rate audio batches are split into one request per sample
//! rate, preserving input order.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, ProviderBackend, ProviderError};
use crate::audio_io::AudioClip;
use crate::event_text::{EventList, Relation, TemporalRelation};

pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    base: String,
    bearer_token: Option<String>,
    timeout_s: f64,
}

#[derive(Serialize)]
struct EmbedTextRequest<'a> {
    texts: &'a [String],
}

#[derive(Serialize)]
struct WireClip {
    id: String,
    pcm_b64: String,
}

#[derive(Serialize)]
struct EmbedAudioRequest {
    sample_rate: u32,
    clips: Vec<WireClip>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct SeparateRequest<'a> {
    sample_rate: u32,
    caption: &'a str,
    pcm_b64: String,
}

#[derive(Deserialize)]
struct SeparateResponse {
    pcm_b64: String,
}

#[derive(Serialize)]
struct DecomposeRequest<'a> {
    caption: &'a str,
}

#[derive(Deserialize)]
struct WireRelation {
    i: usize,
    j: usize,
    rel: String,
}

#[derive(Deserialize)]
struct DecomposeResponse {
    events: Vec<String>,
    relations: Vec<WireRelation>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

impl RemoteProvider {
    pub fn new(
        endpoint_url: String,
        timeout_s: f64,
        bearer_token: Option<String>,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(timeout_s.max(0.001)))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            client,
            base: endpoint_url.trim_end_matches('/').to_string(),
            bearer_token,
            timeout_s,
        })
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
        context: &'static str,
    ) -> Result<R, ProviderError> {
        let url = format!("{}{}", self.base, path);
        let mut req = self.client.post(&url).json(body);
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout {
                    url: url.clone(),
                    seconds: self.timeout_s,
                }
            } else {
                ProviderError::Unreachable {
                    url: url.clone(),
                    message: e.to_string(),
                }
            }
        })?;

        let status = resp.status();
        if !status.is_success() {
            let status = status.as_u16();
            let message = resp
                .json::<ErrorBody>()
                .map(|b| b.error)
                .unwrap_or_else(|_| format!("status {status}"));
            return Err(ProviderError::RemoteStatus {
                status,
                message,
                retryable: status == 429 || (500..=599).contains(&status),
            });
        }

        resp.json::<R>().map_err(|e| ProviderError::InvalidResponse {
            context,
            message: e.to_string(),
        })
    }

    fn parse_embeddings(
        &self,
        resp: EmbedResponse,
        expected: usize,
        context: &'static str,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if resp.embeddings.len() != expected {
            return Err(ProviderError::WrongCount {
                expected,
                got: resp.embeddings.len(),
            });
        }
        resp.embeddings
            .into_iter()
            .map(|values| {
                if values.len() != resp.dim {
                    return Err(ProviderError::InvalidResponse {
                        context,
                        message: format!(
                            "vector length {} does not match declared dim {}",
                            values.len(),
                            resp.dim
                        ),
                    });
                }
                // servers are expected to return unit vectors; normalize
                // defensively so similarity preconditions hold
                EmbeddingVector::normalized(values)
            })
            .collect()
    }
}

pub(crate) fn encode_pcm(samples: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn decode_pcm(b64: &str) -> Result<Vec<f32>, ProviderError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| ProviderError::InvalidResponse {
            context: "pcm",
            message: e.to_string(),
        })?;
    if bytes.len() % 4 != 0 {
        return Err(ProviderError::InvalidResponse {
            context: "pcm",
            message: format!("byte length {} not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl ProviderBackend for RemoteProvider {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let resp: EmbedResponse =
            self.post("/v1/embed_text", &EmbedTextRequest { texts }, "embed_text")?;
        self.parse_embeddings(resp, texts.len(), "embed_text")
    }

    fn embed_audio(&self, clips: &[AudioClip]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        // one request per sample rate; wire format carries a single rate
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; clips.len()];
        let mut rates: Vec<u32> = clips.iter().map(|c| c.sample_rate).collect();
        rates.sort_unstable();
        rates.dedup();
        for rate in rates {
            let indices: Vec<usize> = clips
                .iter()
                .enumerate()
                .filter(|(_, c)| c.sample_rate == rate)
                .map(|(i, _)| i)
                .collect();
            let wire: Vec<WireClip> = indices
                .iter()
                .map(|&i| WireClip {
                    id: clips[i].id.clone(),
                    pcm_b64: encode_pcm(&clips[i].samples),
                })
                .collect();
            let resp: EmbedResponse = self.post(
                "/v1/embed_audio",
                &EmbedAudioRequest {
                    sample_rate: rate,
                    clips: wire,
                },
                "embed_audio",
            )?;
            let vectors = self.parse_embeddings(resp, indices.len(), "embed_audio")?;
            for (&i, v) in indices.iter().zip(vectors) {
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("all rates covered")).collect())
    }

    fn separate(&self, clip: &AudioClip, event_caption: &str) -> Result<AudioClip, ProviderError> {
        let resp: SeparateResponse = self.post(
            "/v1/separate",
            &SeparateRequest {
                sample_rate: clip.sample_rate,
                caption: event_caption,
                pcm_b64: encode_pcm(&clip.samples),
            },
            "separate",
        )?;
        let samples = decode_pcm(&resp.pcm_b64)?;
        if samples.len() != clip.samples.len() {
            return Err(ProviderError::InvalidResponse {
                context: "separate",
                message: format!(
                    "stem length {} does not match input length {}",
                    samples.len(),
                    clip.samples.len()
                ),
            });
        }
        Ok(AudioClip::new(
            format!("{}#stem", clip.id),
            samples.iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
            clip.sample_rate,
        ))
    }

    fn decompose(&self, caption: &str) -> Result<EventList, ProviderError> {
        let resp: DecomposeResponse =
            self.post("/v1/decompose", &DecomposeRequest { caption }, "decompose")?;
        let relations = resp
            .relations
            .into_iter()
            .map(|w| {
                let rel = match w.rel.as_str() {
                    "BEFORE" => Relation::Before,
                    "SIMULTANEOUS" => Relation::Simultaneous,
                    other => {
                        return Err(ProviderError::InvalidResponse {
                            context: "decompose",
                            message: format!("unknown relation {other:?}"),
                        })
                    }
                };
                Ok(TemporalRelation { i: w.i, j: w.j, rel })
            })
            .collect::<Result<Vec<_>, _>>()?;
        // EventList::new re-validates the full pair cover and event text
        Ok(EventList::new(resp.events, relations)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_roundtrip() {
        let samples = vec![0.0f32, 0.5, -0.5, 1.0, -1.0, 0.125];
        let b64 = encode_pcm(&samples);
        assert_eq!(decode_pcm(&b64).unwrap(), samples);
    }

    #[test]
    fn pcm_rejects_torn_payload() {
        let b64 = base64::engine::general_purpose::STANDARD.encode([1u8, 2, 3]);
        assert!(decode_pcm(&b64).is_err());
    }
}
