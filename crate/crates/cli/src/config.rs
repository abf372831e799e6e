//! Run configuration: `--config` TOML merged with global flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use inclusive_core::benchmark::BenchmarkConfig;
use inclusive_core::encoders::{ToyEncoder, ToyEncoderSpec};
use inclusive_core::seed::derive_seed;
use inclusive_core::training::TrainingConfig;
use inclusive_core::Error;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    pub encoder: ToyEncoderSpec,
    pub training: TrainingConfig,
    pub benchmark: BenchmarkConfig,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub root_seed: u64,
    /// Whether `--seed` was given explicitly.
    pub seed_overridden: bool,
    pub encoder_id: String,
    pub backend_id: Option<String>,
    pub out: Option<PathBuf>,
    pub file: FileConfig,
}

impl Settings {
    pub fn load(
        config: Option<&Path>,
        seed: Option<u64>,
        encoder: &str,
        backend: Option<String>,
        out: Option<PathBuf>,
    ) -> anyhow::Result<Self> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        Ok(Settings {
            root_seed: seed.unwrap_or(file.seed),
            seed_overridden: seed.is_some(),
            encoder_id: encoder.to_string(),
            backend_id: backend,
            out,
            file,
        })
    }

    /// Seed for one stage, derived from the root seed.
    pub fn seed_for(&self, stage: &str) -> u64 {
        derive_seed(self.root_seed, stage)
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    /// The encoder named by `--encoder`. Only the toy encoder ships with
    /// this build.
    pub fn encoder(&self) -> anyhow::Result<ToyEncoder> {
        match self.encoder_id.as_str() {
            "toy" => Ok(ToyEncoder::new(self.file.encoder.clone())?),
            other => Err(Error::BackendUnavailable(format!(
                "encoder `{other}` is not available in this build (available: toy)"
            ))
            .into()),
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed_for("train"),
            ..self.file.training.clone()
        }
    }
}
