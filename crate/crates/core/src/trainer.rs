//! Joint QA training: teacher-forced cross-entropy plus the choice KLD,
//! optimised with Adam under a linear learning-rate warm-up.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QaRecord;
use crate::error::{Error, Result};
use crate::fusion::Ablation;
use crate::graph::Graph;
use crate::model::{ModelConfig, ReaderModel};
use crate::params::ParamStore;
use crate::query::ReaderExample;
use crate::tensor::Matrix;
use crate::tokenizer::Tokenizer;

pub const OPTIMIZER_NAME: &str = "adam(beta1=0.9,beta2=0.999,eps=1e-8)+linear-warmup";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Stops early once this many optimizer steps have run.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
}

fn default_lr() -> f64 {
    3e-4
}
fn default_warmup() -> usize {
    100
}
fn default_epochs() -> usize {
    6
}
fn default_batch() -> usize {
    8
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            warmup_steps: default_warmup(),
            epochs: default_epochs(),
            max_steps: None,
            batch_size: default_batch(),
            seed: 0,
            ablation: Ablation::KldAndFuse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate for 1-based optimizer step `step`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub cross_entropy: f64,
    pub kld: f64,
    pub total: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub optimizer: String,
    pub example_count: usize,
    pub steps: Vec<StepLog>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_step(&self) -> Option<&StepLog> {
        self.steps.last()
    }

    /// One JSON object per line: a header, every step, then a summary.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            record: &'a str,
            config: &'a TrainConfig,
            seed: u64,
            optimizer: &'a str,
            example_count: usize,
        }
        #[derive(Serialize)]
        struct Step<'a> {
            record: &'a str,
            #[serde(flatten)]
            log: &'a StepLog,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            record: &'a str,
            steps: usize,
            checkpoint: Option<&'a Path>,
        }
        let mut out = String::new();
        let header = Header {
            record: "config",
            config: &self.config,
            seed: self.seed,
            optimizer: &self.optimizer,
            example_count: self.example_count,
        };
        writeln!(out, "{}", serde_json::to_string(&header).unwrap()).unwrap();
        for log in &self.steps {
            writeln!(out, "{}", serde_json::to_string(&Step { record: "step", log }).unwrap()).unwrap();
        }
        let summary = Summary { record: "summary", steps: self.steps.len(), checkpoint: self.checkpoint.as_deref() };
        writeln!(out, "{}", serde_json::to_string(&summary).unwrap()).unwrap();
        out
    }
}

/// Batch-mean loss terms; `total = cross_entropy + kld`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub cross_entropy: f64,
    pub kld: f64,
    pub total: f64,
}

/// Mean loss over `batch` without gradients.
pub fn total_loss(model: &ReaderModel, batch: &[ReaderExample]) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let (mut ce, mut kld) = (0.0, 0.0);
    for ex in batch {
        let mut g = Graph::new();
        let terms = model.losses(&mut g, ex)?;
        ce += g.scalar(terms.cross_entropy);
        kld += g.scalar(terms.kld);
    }
    let n = batch.len() as f64;
    Ok(BatchLoss { cross_entropy: ce / n, kld: kld / n, total: ce / n + kld / n })
}

/// Mean loss and mean parameter gradients over `batch`.
pub fn batch_gradients(model: &ReaderModel, batch: &[ReaderExample]) -> Result<(BatchLoss, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut grads = model.params().zeros_like();
    let (mut ce, mut kld) = (0.0, 0.0);
    for ex in batch {
        let mut g = Graph::new();
        let terms = model.losses(&mut g, ex)?;
        ce += g.scalar(terms.cross_entropy);
        kld += g.scalar(terms.kld);
        g.backward(terms.total).accumulate_into(&g, &mut grads);
    }
    let n = batch.len() as f64;
    for gm in &mut grads {
        gm.scale_assign(1.0 / n);
    }
    Ok((BatchLoss { cross_entropy: ce / n, kld: kld / n, total: ce / n + kld / n }, grads))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: store.zeros_like(), v: store.zeros_like() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let p = store.get_mut(id).data_mut();
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Trains `model` in place. When `checkpoint` is given it is rewritten after
/// every epoch (and once more if `max_steps` ends training mid-epoch).
pub fn train(
    model: &mut ReaderModel,
    examples: &[ReaderExample],
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    if let Some(ex) = examples.iter().find(|e| e.answer.is_none()) {
        return Err(Error::Validation(format!("training example {} has no gold answer", ex.id)));
    }
    model.set_ablation(config.ablation);
    let mut optimizer = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut steps = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    let mut step = 0;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            let batch: Vec<ReaderExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grads) = match batch_gradients(model, &batch) {
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, last_checkpoint: last_good }),
                other => other?,
            };
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { step, last_checkpoint: last_good });
            }
            let lr = config.learning_rate_at(step);
            optimizer.step(model.params_mut(), &grads, lr);
            if !model.params().all_finite() {
                return Err(Error::Diverged { step, last_checkpoint: last_good });
            }
            steps.push(StepLog {
                step,
                epoch,
                cross_entropy: loss.cross_entropy,
                kld: loss.kld,
                total: loss.total,
                learning_rate: lr,
            });
        }
        if let Some(path) = checkpoint {
            model.save(path)?;
            last_good = Some(path.to_path_buf());
        }
    }
    if let Some(path) = checkpoint {
        if last_good.is_none() || steps.last().is_some_and(|s| s.epoch + 1 < config.epochs) {
            model.save(path)?;
        }
    }

    Ok(TrainReport {
        config: config.clone(),
        seed: config.seed,
        optimizer: OPTIMIZER_NAME.into(),
        example_count: examples.len(),
        steps,
        checkpoint: checkpoint.map(Path::to_path_buf),
    })
}

/// Builds a tokenizer from `records` (plus `extra_texts`, e.g. ontology
/// words), initialises a model from `config.seed` and trains it.
pub fn train_on_corpus(
    records: &[QaRecord],
    model_config: &ModelConfig,
    config: &TrainConfig,
    extra_texts: &[String],
    checkpoint: Option<&Path>,
) -> Result<(ReaderModel, TrainReport)> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    let tokenizer = build_tokenizer(records, extra_texts);
    let mut mc = model_config.clone();
    mc.ablation = config.ablation;
    let mut model = ReaderModel::new(mc, tokenizer, config.seed)?;
    let examples: Vec<ReaderExample> = records.iter().map(ReaderExample::from).collect();
    let report = train(&mut model, &examples, config, checkpoint)?;
    Ok((model, report))
}

pub fn build_tokenizer(records: &[QaRecord], extra_texts: &[String]) -> Tokenizer {
    let texts = records
        .iter()
        .flat_map(|r| {
            [r.question.as_str(), r.context.as_str(), r.answer.as_str()]
                .into_iter()
                .chain(r.choices.iter().map(String::as_str))
        })
        .chain(extra_texts.iter().map(String::as_str));
    Tokenizer::build(texts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn warmup_is_linear() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_at(50), 1.5e-4);
        assert_eq!(c.learning_rate_at(100), 3e-4);
        assert_eq!(c.learning_rate_at(1000), 3e-4);
    }

    #[test]
    fn defaults_match_reported_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.warmup_steps, c.epochs), (3e-4, 100, 6));
    }
}
