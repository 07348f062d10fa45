//! The choice-fusion reader: tokenizer, backbone and fusion head behind one
//! parameter store, plus versioned checkpoints.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{teacher_forcing, BackboneConfig, EncoderDecoder, MiniTransformer};
use crate::error::{Error, Result};
use crate::fusion::{fusion_forward, Ablation, FusionForward, FusionIds, FusionParams, Mode, DEFAULT_FUSION_WIDTH};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::query::ReaderExample;
use crate::tokenizer::Tokenizer;

pub const CHECKPOINT_FORMAT: &str = "zsdst-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Intermediate width `F` of the choice-selection heads.
    #[serde(default = "default_fusion_width")]
    pub fusion_width: usize,
    #[serde(default)]
    pub ablation: Ablation,
}

fn default_fusion_width() -> usize {
    DEFAULT_FUSION_WIDTH
}

/// Per-example loss terms recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub cross_entropy: Var,
    pub kld: Var,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct ReaderModel {
    config: ModelConfig,
    tokenizer: Tokenizer,
    store: ParamStore,
    backbone: MiniTransformer,
    fusion: FusionIds,
}

impl ReaderModel {
    /// Fresh parameters drawn from `seed`. `config.backbone.vocab_size` is
    /// overwritten with the tokenizer's size.
    pub fn new(mut config: ModelConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        if config.fusion_width == 0 {
            return Err(Error::Config("fusion_width must be positive".into()));
        }
        config.backbone.vocab_size = tokenizer.vocab_size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = MiniTransformer::init(config.backbone.clone(), &mut store, &mut rng)?;
        let fusion_params = FusionParams::init(config.backbone.width, config.fusion_width, &mut rng);
        let fusion = FusionIds::register(&mut store, fusion_params)?;
        Ok(Self { config, tokenizer, store, backbone, fusion })
    }

    pub fn from_parts(config: ModelConfig, tokenizer: Tokenizer, store: ParamStore) -> Result<Self> {
        if config.backbone.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, config says {}",
                tokenizer.vocab_size(),
                config.backbone.vocab_size
            )));
        }
        let backbone = MiniTransformer::bind(config.backbone.clone(), &store)?;
        let fusion = FusionIds::bind(&store, config.backbone.width, config.fusion_width)?;
        let expected = backbone_param_count(&store) + 5;
        if store.len() != expected {
            return Err(Error::Checkpoint(format!("{} parameters present, layout uses {expected}", store.len())));
        }
        Ok(Self { config, tokenizer, store, backbone, fusion })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ablation(&self) -> Ablation {
        self.config.ablation
    }

    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.config.ablation = ablation;
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn backbone(&self) -> &MiniTransformer {
        &self.backbone
    }

    pub fn fusion_ids(&self) -> &FusionIds {
        &self.fusion
    }

    pub fn fusion_params(&self) -> FusionParams {
        self.fusion.extract(&self.store)
    }

    pub fn forward(&self, g: &mut Graph, example: &ReaderExample, mode: Mode) -> Result<FusionForward> {
        fusion_forward(
            g,
            example,
            mode,
            self.config.ablation,
            &self.backbone,
            &self.tokenizer,
            &self.store,
            &self.fusion,
        )
    }

    /// Teacher-forced cross-entropy of the gold answer plus the KLD term.
    pub fn losses(&self, g: &mut Graph, example: &ReaderExample) -> Result<LossTerms> {
        let answer = example
            .answer
            .as_deref()
            .ok_or_else(|| Error::Contract(format!("example {} has no gold answer", example.id)))?;
        let out = self.forward(g, example, Mode::Train)?;
        let answer_ids = self.tokenizer.encode(answer);
        let (input, target) = teacher_forcing(&answer_ids);
        let logits = self.backbone.decoder_logits(g, &self.store, out.memory, None, &input)?;
        let targets: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        let cross_entropy = g.cross_entropy(logits, &targets);
        let total = g.add(cross_entropy, out.kld);
        Ok(LossTerms { cross_entropy, kld: out.kld, total })
    }

    /// Greedy answer for `example` using the prior path only.
    pub fn answer(&self, example: &ReaderExample) -> Result<String> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, example, Mode::Infer)?;
        let memory = g.value(out.memory).clone();
        let ids = self.backbone.generate(&self.store, &memory, None, self.backbone.max_target_len() - 1)?;
        Ok(self.tokenizer.decode(&ids))
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let ckpt = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            config: &self.config,
            vocab: &self.tokenizer,
            params: &self.store,
        };
        let mut bytes = serde_json::to_vec(&ckpt).expect("checkpoint serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        Self::from_parts(ckpt.config, ckpt.vocab, ckpt.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_checkpoint_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

fn backbone_param_count(store: &ParamStore) -> usize {
    store.iter().filter(|(_, name, _)| name.starts_with("backbone.")).count()
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    config: &'a ModelConfig,
    vocab: &'a Tokenizer,
    params: &'a ParamStore,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Tokenizer,
    params: ParamStore,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ReaderModel {
        let tok = Tokenizer::build(["red blue green paris rome which color"]);
        let mut backbone = BackboneConfig::tiny(0);
        backbone.width = 16;
        backbone.heads = 2;
        backbone.ff_width = 32;
        ReaderModel::new(ModelConfig { backbone, fusion_width: 8, ablation: Ablation::KldAndFuse }, tok, 3).unwrap()
    }

    fn example(choices: &[&str]) -> ReaderExample {
        ReaderExample {
            id: "e".into(),
            question: "which color ?".into(),
            context: "paris is red".into(),
            choices: choices.iter().map(|s| s.to_string()).collect(),
            answer: Some("red".into()),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = tiny();
        let bytes = m.to_checkpoint_bytes();
        let back = ReaderModel::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let bytes = tiny().to_checkpoint_bytes();
        assert!(ReaderModel::from_checkpoint_bytes(&bytes[..bytes.len() / 2]).is_err());
        let text = String::from_utf8(bytes).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(ReaderModel::from_checkpoint_bytes(text.as_bytes()).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(tiny().to_checkpoint_bytes(), tiny().to_checkpoint_bytes());
    }

    #[test]
    fn forward_contracts() {
        let m = tiny();
        let mut g = Graph::new();
        let out = m.forward(&mut g, &example(&["red", "blue", "none"]), Mode::Train).unwrap();
        assert!(out.posterior.is_some());
        assert_eq!(out.choice_count, 3);
        assert_eq!(out.memory_rows(&g), out.query_rows + 3);
        assert!(g.scalar(out.kld) >= 0.0);

        let mut g = Graph::new();
        let out = m.forward(&mut g, &example(&[]), Mode::Train).unwrap();
        assert_eq!(out.choice_count, 1);
        assert_eq!(g.scalar(out.kld), 0.0);

        let mut g = Graph::new();
        let out = m.forward(&mut g, &example(&["red", "blue"]), Mode::Infer).unwrap();
        assert!(out.posterior.is_none());
    }

    #[test]
    fn train_mode_needs_gold_answer() {
        let m = tiny();
        let mut ex = example(&["red"]);
        ex.answer = None;
        let mut g = Graph::new();
        assert!(matches!(m.forward(&mut g, &ex, Mode::Train), Err(Error::Contract(_))));
        assert!(m.answer(&ex).is_ok());
    }

    #[test]
    fn kld_only_memory_has_no_choice_rows() {
        let mut m = tiny();
        m.set_ablation(Ablation::KldOnly);
        let mut g = Graph::new();
        let out = m.forward(&mut g, &example(&["red", "blue"]), Mode::Train).unwrap();
        assert_eq!(out.memory_rows(&g), out.query_rows);
        assert!(g.scalar(out.kld) > 0.0);
    }
}
