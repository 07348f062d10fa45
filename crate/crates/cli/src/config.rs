use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use zsdst::backbone::BackboneConfig;
use zsdst::query::DEFAULT_TOKEN_BUDGET;
use zsdst::{Ablation, ModelConfig, TrainConfig};

use crate::CliError;

/// Run configuration file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub qa_corpus: PathBuf,
    #[serde(default = "full_slice")]
    pub slice_fraction: f64,
    /// Needed by `ablate`; its values also extend the vocabulary in `train`.
    #[serde(default)]
    pub ontology: Option<PathBuf>,
    /// Needed by `ablate`.
    #[serde(default)]
    pub dialogues: Option<PathBuf>,
}

fn full_slice() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub token_budget: usize,
    pub max_target_len: usize,
    pub fusion_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let b = BackboneConfig::tiny(0);
        Self {
            width: b.width,
            encoder_layers: b.encoder_layers,
            decoder_layers: b.decoder_layers,
            heads: b.heads,
            ff_width: b.ff_width,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_target_len: b.max_target_len,
            fusion_width: 32,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.qa_corpus);
        for p in [&mut cfg.data.ontology, &mut cfg.data.dialogues].into_iter().flatten() {
            resolve(p);
        }
        Ok(cfg)
    }

    /// Flags win over file values.
    pub fn apply_overrides(&mut self, seed: Option<u64>, ablation: Option<Ablation>) {
        if let Some(s) = seed {
            self.train.seed = s;
        }
        if let Some(a) = ablation {
            self.train.ablation = a;
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            backbone: BackboneConfig {
                width: m.width,
                encoder_layers: m.encoder_layers,
                decoder_layers: m.decoder_layers,
                heads: m.heads,
                ff_width: m.ff_width,
                vocab_size: 0,
                token_budget: m.token_budget,
                max_target_len: m.max_target_len,
            },
            fusion_width: m.fusion_width,
            ablation: self.train.ablation,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        // The vocabulary is only known once the corpus is read.
        let mut backbone = self.model_config().backbone;
        backbone.vocab_size = zsdst::tokenizer::BOS as usize + 1;
        backbone.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.toml");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::load(&write(dir.path(), "[data]\nqa_corpus = \"qa.jsonl\"\n")).unwrap();
        assert_eq!(cfg.data.qa_corpus, dir.path().join("qa.jsonl"));
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.data.slice_fraction, 1.0);
    }

    #[test]
    fn unknown_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "[data]\nqa_corpus = \"qa.jsonl\"\n[train]\nlearnin_rate = 0.1\n");
        let err = RunConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains("learnin_rate"), "{err}");
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "[data]\nqa_corpus = \"q\"\n[train]\nseed = 4\nablation = \"fuse_only\"\n");
        let mut cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.train.ablation, Ablation::FuseOnly);
        cfg.apply_overrides(Some(9), Some(Ablation::KldOnly));
        assert_eq!((cfg.train.seed, cfg.train.ablation), (9, Ablation::KldOnly));
        assert_eq!(cfg.model_config().ablation, Ablation::KldOnly);
    }
}
