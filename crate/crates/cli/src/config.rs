//! Run configuration: JSON config file with flag overrides on top.

use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use t2a_eval::providers::{ProviderConfig, ProviderKind};
use t2a_eval::scoring::ScoreOptions;

pub const PROVIDER_TOKEN_ENV: &str = "T2A_PROVIDER_TOKEN";

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Thresholds {
    #[serde(default)]
    pub volume: Option<f64>,
    #[serde(default)]
    pub overlap: Option<f64>,
    #[serde(default)]
    pub simultaneity_tol_s: Option<f64>,
}

/// On-disk config shape; every field optional so flags can fill the rest.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ConfigFile {
    #[serde(default)]
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub ahq_model_path: Option<PathBuf>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub provider: ProviderConfig,
    pub volume_threshold: f64,
    /// Inventory overlap threshold; consumed by the library/binding
    /// surface (no CLI subcommand drives inventory building).
    #[allow(dead_code)]
    pub overlap_threshold: f64,
    pub simultaneity_tol_s: f64,
    pub ahq_model_path: Option<PathBuf>,
    pub parallelism: usize,
    pub rng_seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            volume_threshold: self.volume_threshold,
            simultaneity_tol_s: self.simultaneity_tol_s,
            ..ScoreOptions::default()
        }
    }
}

/// Flag-level overrides collected by clap.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub provider_kind: Option<ProviderKind>,
    pub endpoint: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threshold: Option<f64>,
}

pub fn resolve(overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let file: ConfigFile = match &overrides.config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ConfigFile::default(),
    };

    let mut provider = file.provider.unwrap_or_else(ProviderConfig::stub);
    if let Some(kind) = overrides.provider_kind {
        provider.kind = kind;
    }
    if let Some(endpoint) = &overrides.endpoint {
        provider.endpoint_url = Some(endpoint.clone());
        if overrides.provider_kind.is_none() {
            provider.kind = ProviderKind::Remote;
        }
    }
    if let Some(cache) = &overrides.cache_dir {
        provider.cache_dir = Some(cache.clone());
    }
    if provider.bearer_token.is_none() {
        provider.bearer_token = std::env::var(PROVIDER_TOKEN_ENV).ok().filter(|t| !t.is_empty());
    }

    let volume_threshold = overrides
        .threshold
        .or(file.thresholds.volume)
        .unwrap_or(t2a_eval::audio_io::DEFAULT_VOLUME_THRESHOLD);
    anyhow::ensure!(
        volume_threshold > 0.0 && volume_threshold < 1.0,
        "volume threshold {volume_threshold} outside (0, 1)"
    );
    let parallelism = overrides.parallelism.or(file.parallelism).unwrap_or(4);
    anyhow::ensure!(parallelism >= 1, "parallelism must be >= 1");

    Ok(RunConfig {
        provider,
        volume_threshold,
        overlap_threshold: file
            .thresholds
            .overlap
            .unwrap_or(t2a_eval::dataset::DEFAULT_OVERLAP_THRESHOLD),
        simultaneity_tol_s: file
            .thresholds
            .simultaneity_tol_s
            .unwrap_or(t2a_eval::scoring::DEFAULT_SIMULTANEITY_TOL_S),
        ahq_model_path: file.ahq_model_path,
        parallelism,
        rng_seed: overrides.seed.or(file.rng_seed).unwrap_or(0),
        output_dir: overrides
            .out_dir
            .clone()
            .or(file.output_dir)
            .unwrap_or_else(|| PathBuf::from("out")),
    })
}
