//! Encoder/decoder contract used by the fusion head, and a miniature
//! pre-norm transformer trained from scratch that implements it.
//!
//! The reference model follows the T5 layout at toy size: shared token
//! embeddings tied to the output projection, RMS normalisation without
//! biases, learned absolute positions, and GELU feed-forward blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mask, Var};
use crate::params::{ParamId, ParamStore};
use crate::query::DEFAULT_TOKEN_BUDGET;
use crate::tensor::Matrix;
use crate::tokenizer::{TokenId, BOS, EOS};

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Model width `T`.
    pub width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub vocab_size: usize,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    /// Longest decoder input (start token plus answer tokens).
    #[serde(default = "default_target_len")]
    pub max_target_len: usize,
}

fn default_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}

fn default_target_len() -> usize {
    32
}

impl BackboneConfig {
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            width: 32,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 4,
            ff_width: 64,
            vocab_size,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_target_len: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 {
            return bad("width must be positive");
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return bad("width must be divisible by heads");
        }
        if self.ff_width == 0 {
            return bad("ff_width must be positive");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the special tokens");
        }
        if self.token_budget == 0 || self.max_target_len < 2 {
            return bad("token_budget and max_target_len must be positive");
        }
        Ok(())
    }
}

/// Encoder hidden states, one row per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Matrix,
}

/// What the fusion head needs from a backbone.
pub trait EncoderDecoder {
    fn width(&self) -> usize;
    fn token_budget(&self) -> usize;
    fn max_target_len(&self) -> usize;

    /// Records the encoder on `g`; result is `tokens.len() × width`.
    fn encode_graph(&self, g: &mut Graph, store: &ParamStore, tokens: &[TokenId]) -> Result<Var>;

    /// Records the decoder on `g` for teacher-forced `input` tokens; result is
    /// `input.len() × vocab` logits. `memory_mask[j] = false` hides memory row `j`.
    fn decoder_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: Var,
        memory_mask: Option<&[bool]>,
        input: &[TokenId],
    ) -> Result<Var>;
}

#[derive(Debug, Clone)]
struct AttnIds {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Debug, Clone)]
struct FeedForwardIds {
    input: ParamId,
    output: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayerIds {
    attn_norm: ParamId,
    attn: AttnIds,
    ff_norm: ParamId,
    ff: FeedForwardIds,
}

#[derive(Debug, Clone)]
struct DecoderLayerIds {
    self_norm: ParamId,
    self_attn: AttnIds,
    cross_norm: ParamId,
    cross_attn: AttnIds,
    ff_norm: ParamId,
    ff: FeedForwardIds,
}

/// Reference backbone. Parameters live in a [`ParamStore`] under `backbone.`.
#[derive(Debug, Clone)]
pub struct MiniTransformer {
    config: BackboneConfig,
    embed: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    encoder: Vec<EncoderLayerIds>,
    encoder_norm: ParamId,
    decoder: Vec<DecoderLayerIds>,
    decoder_norm: ParamId,
}

/// Creates or looks up parameters with a fixed naming scheme.
trait ParamSource {
    fn param(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId>;
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Ones,
}

struct Creator<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> ParamSource for Creator<'_, R> {
    fn param(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        let m = match init {
            Init::Normal(std) => Matrix::random_normal(rows, cols, std, self.rng),
            Init::Ones => Matrix::from_vec(rows, cols, vec![1.0; rows * cols])?,
        };
        self.store.insert(name, m)
    }
}

struct Binder<'a> {
    store: &'a ParamStore,
}

impl ParamSource for Binder<'_> {
    fn param(&mut self, name: &str, rows: usize, cols: usize, _: Init) -> Result<ParamId> {
        let id = self.store.require(name)?;
        let shape = self.store.get(id).shape();
        if shape != (rows, cols) {
            return Err(Error::Checkpoint(format!("{name} has shape {shape:?}, config expects ({rows}, {cols})")));
        }
        Ok(id)
    }
}

impl MiniTransformer {
    /// Registers freshly initialised parameters in `store`.
    pub fn init<R: Rng>(config: BackboneConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Self::layout(config, &mut Creator { store, rng })
    }

    /// Resolves existing parameters, checking every shape against `config`.
    pub fn bind(config: BackboneConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        Self::layout(config, &mut Binder { store })
    }

    fn layout(config: BackboneConfig, src: &mut impl ParamSource) -> Result<Self> {
        let t = config.width;
        let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
        let attn = |src: &mut dyn FnMut(&str, usize, usize, Init) -> Result<ParamId>, p: &str| -> Result<AttnIds> {
            Ok(AttnIds {
                q: src(&format!("{p}.q"), t, t, lin(t))?,
                k: src(&format!("{p}.k"), t, t, lin(t))?,
                v: src(&format!("{p}.v"), t, t, lin(t))?,
                o: src(&format!("{p}.o"), t, t, lin(t))?,
            })
        };
        let mut get = |name: &str, r: usize, c: usize, init: Init| src.param(name, r, c, init);

        let embed = get("backbone.embed", config.vocab_size, t, Init::Normal(1.0))?;
        let enc_pos = get("backbone.enc_pos", config.token_budget, t, Init::Normal(0.1))?;
        let dec_pos = get("backbone.dec_pos", config.max_target_len, t, Init::Normal(0.1))?;
        let mut encoder = Vec::new();
        for i in 0..config.encoder_layers {
            let p = format!("backbone.encoder.{i}");
            encoder.push(EncoderLayerIds {
                attn_norm: get(&format!("{p}.attn_norm"), 1, t, Init::Ones)?,
                attn: attn(&mut get, &format!("{p}.attn"))?,
                ff_norm: get(&format!("{p}.ff_norm"), 1, t, Init::Ones)?,
                ff: FeedForwardIds {
                    input: get(&format!("{p}.ff.in"), t, config.ff_width, lin(t))?,
                    output: get(&format!("{p}.ff.out"), config.ff_width, t, lin(config.ff_width))?,
                },
            });
        }
        let encoder_norm = get("backbone.encoder.final_norm", 1, t, Init::Ones)?;
        let mut decoder = Vec::new();
        for i in 0..config.decoder_layers {
            let p = format!("backbone.decoder.{i}");
            decoder.push(DecoderLayerIds {
                self_norm: get(&format!("{p}.self_norm"), 1, t, Init::Ones)?,
                self_attn: attn(&mut get, &format!("{p}.self_attn"))?,
                cross_norm: get(&format!("{p}.cross_norm"), 1, t, Init::Ones)?,
                cross_attn: attn(&mut get, &format!("{p}.cross_attn"))?,
                ff_norm: get(&format!("{p}.ff_norm"), 1, t, Init::Ones)?,
                ff: FeedForwardIds {
                    input: get(&format!("{p}.ff.in"), t, config.ff_width, lin(t))?,
                    output: get(&format!("{p}.ff.out"), config.ff_width, t, lin(config.ff_width))?,
                },
            });
        }
        let decoder_norm = get("backbone.decoder.final_norm", 1, t, Init::Ones)?;
        Ok(Self { config, embed, enc_pos, dec_pos, encoder, encoder_norm, decoder, decoder_norm })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn attention(&self, g: &mut Graph, store: &ParamStore, ids: &AttnIds, x: Var, memory: Var, mask: &Mask) -> Var {
        let t = self.config.width;
        let dh = t / self.config.heads;
        let wq = g.param(store, ids.q);
        let wk = g.param(store, ids.k);
        let wv = g.param(store, ids.v);
        let wo = g.param(store, ids.o);
        let q = g.matmul(x, wq);
        let k = g.matmul(memory, wk);
        let v = g.matmul(memory, wv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let probs = g.softmax_rows(scores, mask.clone());
            heads.push(g.matmul(probs, vh));
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        g.matmul(joined, wo)
    }

    fn feed_forward(&self, g: &mut Graph, store: &ParamStore, ids: &FeedForwardIds, x: Var) -> Var {
        let w_in = g.param(store, ids.input);
        let w_out = g.param(store, ids.output);
        let h = g.matmul(x, w_in);
        let h = g.gelu(h);
        g.matmul(h, w_out)
    }

    fn norm(&self, g: &mut Graph, store: &ParamStore, gain: ParamId, x: Var) -> Var {
        let gain = g.param(store, gain);
        g.rms_norm(x, gain, NORM_EPS)
    }

    fn embed_tokens(&self, g: &mut Graph, store: &ParamStore, tokens: &[TokenId], pos: ParamId) -> Result<Var> {
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Validation(format!("token id {bad} outside vocabulary")));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let table = g.param(store, self.embed);
        let pos_table = g.param(store, pos);
        let e = g.gather(table, &ids);
        let p = g.gather(pos_table, &positions);
        Ok(g.add(e, p))
    }

    /// Value-level encoder call.
    pub fn encode(&self, store: &ParamStore, tokens: &[TokenId]) -> Result<EncoderOutput> {
        let mut g = Graph::new();
        let h = self.encode_graph(&mut g, store, tokens)?;
        Ok(EncoderOutput { hidden: g.value(h).clone() })
    }

    /// Next-token scores after `prefix`, conditioned on `memory`.
    pub fn decode(
        &self,
        store: &ParamStore,
        memory: &Matrix,
        memory_mask: Option<&[bool]>,
        prefix: &[TokenId],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mem = g.input(memory.clone());
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS);
        input.extend_from_slice(prefix);
        let logits = self.decoder_logits(&mut g, store, mem, memory_mask, &input)?;
        let lv = g.value(logits);
        Ok(lv.row(lv.rows() - 1).to_vec())
    }

    /// Greedy decoding; stops at EOS (not returned) or after `max_length` tokens.
    pub fn generate(
        &self,
        store: &ParamStore,
        memory: &Matrix,
        memory_mask: Option<&[bool]>,
        max_length: usize,
    ) -> Result<Vec<TokenId>> {
        if max_length == 0 {
            return Err(Error::Validation("max_length must be at least 1".into()));
        }
        let max_length = max_length.min(self.config.max_target_len - 1);
        let mut out = Vec::new();
        while out.len() < max_length {
            let scores = self.decode(store, memory, memory_mask, &out)?;
            let next = argmax(&scores) as TokenId;
            if next == EOS {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl EncoderDecoder for MiniTransformer {
    fn width(&self) -> usize {
        self.config.width
    }

    fn token_budget(&self) -> usize {
        self.config.token_budget
    }

    fn max_target_len(&self) -> usize {
        self.config.max_target_len
    }

    fn encode_graph(&self, g: &mut Graph, store: &ParamStore, tokens: &[TokenId]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Validation("cannot encode an empty token sequence".into()));
        }
        if tokens.len() > self.config.token_budget {
            return Err(Error::Budget { needed: tokens.len(), budget: self.config.token_budget });
        }
        let mut x = self.embed_tokens(g, store, tokens, self.enc_pos)?;
        let no_mask = Mask::none();
        for layer in &self.encoder {
            let h = self.norm(g, store, layer.attn_norm, x);
            let a = self.attention(g, store, &layer.attn, h, h, &no_mask);
            x = g.add(x, a);
            let h = self.norm(g, store, layer.ff_norm, x);
            let f = self.feed_forward(g, store, &layer.ff, h);
            x = g.add(x, f);
        }
        Ok(self.norm(g, store, self.encoder_norm, x))
    }

    fn decoder_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: Var,
        memory_mask: Option<&[bool]>,
        input: &[TokenId],
    ) -> Result<Var> {
        let h = self.decoder_hidden(g, store, memory, memory_mask, input)?;
        let table = g.param(store, self.embed);
        let logits = g.matmul_bt(h, table);
        Ok(g.scale(logits, 1.0 / (self.config.width as f64).sqrt()))
    }
}

impl MiniTransformer {
    /// Final decoder states before the tied output projection.
    fn decoder_hidden(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: Var,
        memory_mask: Option<&[bool]>,
        input: &[TokenId],
    ) -> Result<Var> {
        let mem = g.value(memory);
        if mem.rows() == 0 {
            return Err(Error::Validation("decoder memory is empty".into()));
        }
        if mem.cols() != self.config.width {
            return Err(Error::Shape(format!("memory width {} != model width {}", mem.cols(), self.config.width)));
        }
        if !mem.is_finite() {
            return Err(Error::NonFinite("decoder memory".into()));
        }
        let cross_mask = match memory_mask {
            Some(m) if m.len() != mem.rows() => {
                return Err(Error::Shape(format!("memory mask has {} entries for {} rows", m.len(), mem.rows())))
            }
            Some(m) if !m.iter().any(|&b| b) => return Err(Error::Validation("memory mask hides every row".into())),
            Some(m) => Mask::keys(m.to_vec()),
            None => Mask::none(),
        };
        if input.is_empty() || input.len() > self.config.max_target_len {
            return Err(Error::Budget { needed: input.len(), budget: self.config.max_target_len });
        }
        let mut x = self.embed_tokens(g, store, input, self.dec_pos)?;
        let causal = Mask::causal();
        for layer in &self.decoder {
            let h = self.norm(g, store, layer.self_norm, x);
            let a = self.attention(g, store, &layer.self_attn, h, h, &causal);
            x = g.add(x, a);
            let h = self.norm(g, store, layer.cross_norm, x);
            let a = self.attention(g, store, &layer.cross_attn, h, memory, &cross_mask);
            x = g.add(x, a);
            let h = self.norm(g, store, layer.ff_norm, x);
            let f = self.feed_forward(g, store, &layer.ff, h);
            x = g.add(x, f);
        }
        Ok(self.norm(g, store, self.decoder_norm, x))
    }
}

/// Decoder input (start token + answer) and targets (answer + EOS).
pub fn teacher_forcing(answer: &[TokenId]) -> (Vec<TokenId>, Vec<TokenId>) {
    let mut input = Vec::with_capacity(answer.len() + 1);
    input.push(BOS);
    input.extend_from_slice(answer);
    let mut target = answer.to_vec();
    target.push(EOS);
    (input, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(width: usize) -> (MiniTransformer, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut cfg = BackboneConfig::tiny(20);
        cfg.width = width;
        let m = MiniTransformer::init(cfg, &mut store, &mut rng).unwrap();
        (m, store)
    }

    #[test]
    fn encode_shape_and_determinism() {
        let (m, store) = model(32);
        let tokens: Vec<TokenId> = (4..14).collect();
        let a = m.encode(&store, &tokens).unwrap();
        assert_eq!(a.hidden.shape(), (10, 32));
        assert!(a.hidden.is_finite());
        assert_eq!(a, m.encode(&store, &tokens).unwrap());
    }

    #[test]
    fn encode_rejects_over_budget() {
        let (m, store) = model(32);
        let tokens = vec![5; 513];
        assert!(matches!(m.encode(&store, &tokens), Err(Error::Budget { needed: 513, budget: 512 })));
    }

    #[test]
    fn decode_contract() {
        let (m, store) = model(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let memory = Matrix::random_normal(14, 32, 1.0, &mut rng);
        let scores = m.decode(&store, &memory, None, &[5, 6, 7]).unwrap();
        assert_eq!(scores.len(), 20);
        assert_eq!(scores, m.decode(&store, &memory, None, &[5, 6, 7]).unwrap());

        let mut bad = memory.clone();
        bad.set(3, 3, f64::NAN);
        assert!(matches!(m.decode(&store, &bad, None, &[5]), Err(Error::NonFinite(_))));
        assert!(m.decode(&store, &Matrix::zeros(0, 32), None, &[5]).is_err());
    }

    #[test]
    fn masked_padding_rows_do_not_change_scores() {
        let (m, store) = model(16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let memory = Matrix::random_normal(5, 16, 1.0, &mut rng);
        let padding = Matrix::random_normal(3, 16, 1.0, &mut rng);
        let mut padded = memory.data().to_vec();
        padded.extend_from_slice(padding.data());
        let padded = Matrix::from_vec(8, 16, padded).unwrap();
        let mask: Vec<bool> = (0..8).map(|i| i < 5).collect();
        let plain = m.decode(&store, &memory, None, &[4, 5]).unwrap();
        let masked = m.decode(&store, &padded, Some(&mask), &[4, 5]).unwrap();
        assert_eq!(plain, masked);
        let unmasked = m.decode(&store, &padded, None, &[4, 5]).unwrap();
        assert_ne!(plain, unmasked);
    }

    #[test]
    fn generate_length_bound() {
        let (m, store) = model(16);
        let memory = Matrix::from_vec(2, 16, vec![0.3; 32]).unwrap();
        let out = m.generate(&store, &memory, None, 1).unwrap();
        assert!(out.len() <= 1);
        assert!(m.generate(&store, &memory, None, 0).is_err());
    }

    #[test]
    fn generate_stops_at_eos() {
        let (m, mut store) = model(16);
        let memory = Matrix::from_vec(2, 16, vec![0.3; 32]).unwrap();
        // The EOS embedding row only feeds the output projection, so aligning it
        // with the first decoder hidden state makes EOS the first greedy choice.
        let mut g = Graph::new();
        let mem = g.input(memory.clone());
        let h = m.decoder_hidden(&mut g, &store, mem, None, &[BOS]).unwrap();
        let first = g.value(h).row(0).to_vec();
        let embed = store.require("backbone.embed").unwrap();
        for (c, v) in first.iter().enumerate() {
            store.get_mut(embed).set(EOS as usize, c, 100.0 * v);
        }
        assert!(m.generate(&store, &memory, None, 5).unwrap().is_empty());
    }
}
