//! Choice fusion: appreciative choice selection and context-choice fusion.
//!
//! Given the encoded query `D_pri` (`(K+L) × T`), the encoded gold answer
//! `D_post` (`M × T`, training only) and one pooled encoding per candidate
//! choice `V` (`N × T`):
//!
//! ```text
//! p_pri  = softmax( tanh(V·W_V) · tanh(mean(D_pri)·W_Dpri)ᵀ )
//! p_post = softmax( tanh(V·W_V) · tanh([mean(D_pri) ; mean(D_post)]·W_Dpost)ᵀ )
//! L_KLD  = KL(p_pri ‖ p_post)
//! H      = tanh( [D_pri ; diag(p)·V] · W_Dec )          (K+L+N) × T
//! ```
//!
//! `p` is `p_post` while training and `p_pri` at inference. The posterior
//! path refuses to run in [`Mode::Infer`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{EncoderDecoder, EncoderOutput};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mask, Var};
use crate::params::{ParamId, ParamStore};
use crate::query::{serialize_query, ReaderExample};
use crate::tensor::Matrix;
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_FUSION_WIDTH: usize = 64;

/// Smoothing applied to both distributions before the KL log-ratio.
pub const KLD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    KldAndFuse,
    KldOnly,
    FuseOnly,
    Neither,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::KldAndFuse, Ablation::KldOnly, Ablation::FuseOnly, Ablation::Neither];

    pub fn uses_kld(self) -> bool {
        matches!(self, Ablation::KldAndFuse | Ablation::KldOnly)
    }

    pub fn fuses_choices(self) -> bool {
        matches!(self, Ablation::KldAndFuse | Ablation::FuseOnly)
    }

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::KldAndFuse => "KLD+Fuse",
            Ablation::KldOnly => "KLD",
            Ablation::FuseOnly => "Fuse",
            Ablation::Neither => "Neither",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::KldAndFuse => "kld_and_fuse",
            Ablation::KldOnly => "kld_only",
            Ablation::FuseOnly => "fuse_only",
            Ablation::Neither => "neither",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| {
            Error::Config(format!("unknown ablation {s:?} (expected kld_and_fuse, kld_only, fuse_only or neither)"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Prior,
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDistribution {
    pub p: Vec<f64>,
    pub kind: DistributionKind,
}

impl ChoiceDistribution {
    pub fn new(p: Vec<f64>, kind: DistributionKind) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Validation("empty choice distribution".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("distribution entries must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("distribution sums to {total}")));
        }
        Ok(Self { p, kind })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    fn as_row(&self) -> Matrix {
        Matrix::from_vec(1, self.p.len(), self.p.clone()).expect("row vector")
    }
}

/// One pooled encoder row per candidate choice (`N × T`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceMatrix {
    pub v: Matrix,
}

impl ChoiceMatrix {
    pub fn choice_count(&self) -> usize {
        self.v.rows()
    }
}

/// Fused decoder memory `(K+L+N) × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMemory {
    pub h: Matrix,
}

/// Trainable fusion matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub w_v: Matrix,
    pub w_d_pri: Matrix,
    pub w_d_post: Matrix,
    pub w_dec: Matrix,
    pub null_choice: Matrix,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(width: usize, fusion_width: usize, rng: &mut R) -> Self {
        let std_t = 1.0 / (width as f64).sqrt();
        Self {
            w_v: Matrix::random_normal(width, fusion_width, std_t, rng),
            w_d_pri: Matrix::random_normal(width, fusion_width, std_t, rng),
            w_d_post: Matrix::random_normal(2 * width, fusion_width, 1.0 / (2.0 * width as f64).sqrt(), rng),
            w_dec: Matrix::random_normal(width, width, std_t, rng),
            null_choice: Matrix::random_normal(1, width, 1.0, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.w_dec.rows()
    }

    pub fn fusion_width(&self) -> usize {
        self.w_v.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, f) = (self.width(), self.fusion_width());
        let expect = [
            ("w_v", &self.w_v, (t, f)),
            ("w_d_pri", &self.w_d_pri, (t, f)),
            ("w_d_post", &self.w_d_post, (2 * t, f)),
            ("w_dec", &self.w_dec, (t, t)),
            ("null_choice", &self.null_choice, (1, t)),
        ];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(Error::Shape(format!("{name} is {:?}, expected {shape:?}", m.shape())));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }
}

pub const W_V: &str = "fusion.w_v";
pub const W_D_PRI: &str = "fusion.w_d_pri";
pub const W_D_POST: &str = "fusion.w_d_post";
pub const W_DEC: &str = "fusion.w_dec";
pub const NULL_CHOICE: &str = "fusion.null_choice";

/// Locations of the fusion parameters inside a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct FusionIds {
    pub w_v: ParamId,
    pub w_d_pri: ParamId,
    pub w_d_post: ParamId,
    pub w_dec: ParamId,
    pub null_choice: ParamId,
}

impl FusionIds {
    pub fn register(store: &mut ParamStore, params: FusionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            w_v: store.insert(W_V, params.w_v)?,
            w_d_pri: store.insert(W_D_PRI, params.w_d_pri)?,
            w_d_post: store.insert(W_D_POST, params.w_d_post)?,
            w_dec: store.insert(W_DEC, params.w_dec)?,
            null_choice: store.insert(NULL_CHOICE, params.null_choice)?,
        })
    }

    pub fn bind(store: &ParamStore, width: usize, fusion_width: usize) -> Result<Self> {
        let ids = Self {
            w_v: store.require(W_V)?,
            w_d_pri: store.require(W_D_PRI)?,
            w_d_post: store.require(W_D_POST)?,
            w_dec: store.require(W_DEC)?,
            null_choice: store.require(NULL_CHOICE)?,
        };
        let params = ids.extract(store);
        if params.width() != width || params.fusion_width() != fusion_width {
            return Err(Error::Checkpoint(format!(
                "fusion parameters are {}x{}, config expects {width}x{fusion_width}",
                params.width(),
                params.fusion_width()
            )));
        }
        params.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(ids)
    }

    pub fn extract(&self, store: &ParamStore) -> FusionParams {
        FusionParams {
            w_v: store.get(self.w_v).clone(),
            w_d_pri: store.get(self.w_d_pri).clone(),
            w_d_post: store.get(self.w_d_post).clone(),
            w_dec: store.get(self.w_dec).clone(),
            null_choice: store.get(self.null_choice).clone(),
        }
    }

    pub fn vars(&self, g: &mut Graph, store: &ParamStore) -> FusionVars {
        FusionVars {
            w_v: g.param(store, self.w_v),
            w_d_pri: g.param(store, self.w_d_pri),
            w_d_post: g.param(store, self.w_d_post),
            w_dec: g.param(store, self.w_dec),
            null_choice: g.param(store, self.null_choice),
        }
    }
}

/// Fusion parameters recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub w_v: Var,
    pub w_d_pri: Var,
    pub w_d_post: Var,
    pub w_dec: Var,
    pub null_choice: Var,
}

impl FusionVars {
    /// Constant (non-parameter) copies of `params`, for value-level calls.
    pub fn constants(g: &mut Graph, params: &FusionParams) -> Self {
        Self {
            w_v: g.input(params.w_v.clone()),
            w_d_pri: g.input(params.w_d_pri.clone()),
            w_d_post: g.input(params.w_d_post.clone()),
            w_dec: g.input(params.w_dec.clone()),
            null_choice: g.input(params.null_choice.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// Graph-level building blocks.

/// Mean-pools each choice's encoder rows; the null row stands in for an empty list.
pub fn encode_choices_graph<B: EncoderDecoder + ?Sized>(
    g: &mut Graph,
    backbone: &B,
    store: &ParamStore,
    choices: &[Vec<TokenId>],
    null_choice: Var,
) -> Result<Var> {
    if choices.is_empty() {
        return Ok(null_choice);
    }
    let mut rows = Vec::with_capacity(choices.len());
    for (i, tokens) in choices.iter().enumerate() {
        if tokens.is_empty() {
            return Err(Error::Validation(format!("choice {i} has no tokens")));
        }
        let h = backbone.encode_graph(g, store, tokens)?;
        rows.push(g.mean_rows(h));
    }
    Ok(if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) })
}

/// `1 × N` choice scores for the prior head.
pub fn prior_scores_graph(g: &mut Graph, v: Var, d_pri: Var, fv: &FusionVars) -> Var {
    let vp = g.matmul(v, fv.w_v);
    let vp = g.tanh(vp);
    let ctx = g.mean_rows(d_pri);
    let ctx = g.matmul(ctx, fv.w_d_pri);
    let ctx = g.tanh(ctx);
    g.matmul_bt(ctx, vp)
}

/// `1 × N` choice scores for the posterior head. Refuses to run at inference.
pub fn posterior_scores_graph(
    g: &mut Graph,
    mode: Mode,
    v: Var,
    d_pri: Var,
    d_post: Option<Var>,
    fv: &FusionVars,
) -> Result<Var> {
    if mode == Mode::Infer {
        return Err(Error::Contract("the posterior choice distribution is training-only".into()));
    }
    let d_post = d_post.ok_or_else(|| Error::Contract("posterior requires the encoded gold answer".into()))?;
    let vp = g.matmul(v, fv.w_v);
    let vp = g.tanh(vp);
    let pri = g.mean_rows(d_pri);
    let post = g.mean_rows(d_post);
    let ctx = g.concat_cols(&[pri, post]);
    let ctx = g.matmul(ctx, fv.w_d_post);
    let ctx = g.tanh(ctx);
    Ok(g.matmul_bt(ctx, vp))
}

pub fn distribution_graph(g: &mut Graph, scores: Var) -> Var {
    g.softmax_rows(scores, Mask::none())
}

/// `tanh([D_pri ; diag(p)·V] · W_Dec)`.
pub fn fuse_graph(g: &mut Graph, d_pri: Var, v: Var, p: Var, w_dec: Var) -> Var {
    let weighted = g.scale_rows(v, p);
    let stacked = g.concat_rows(&[d_pri, weighted]);
    let h = g.matmul(stacked, w_dec);
    g.tanh(h)
}

/// `tanh(D_pri · W_Dec)`, the memory used when choices are not fused.
pub fn context_only_graph(g: &mut Graph, d_pri: Var, w_dec: Var) -> Var {
    let h = g.matmul(d_pri, w_dec);
    g.tanh(h)
}

// ---------------------------------------------------------------------------
// Value-level operations.

fn check_width(what: &str, m: &Matrix, width: usize) -> Result<()> {
    if m.cols() != width {
        return Err(Error::Shape(format!("{what} has width {}, expected {width}", m.cols())));
    }
    if m.rows() == 0 {
        return Err(Error::Shape(format!("{what} has no rows")));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

fn finite_distribution(g: &Graph, p: Var, kind: DistributionKind) -> Result<ChoiceDistribution> {
    let values = g.value(p).data().to_vec();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{kind:?} distribution")));
    }
    ChoiceDistribution::new(values, kind)
}

/// Encodes each choice independently and mean-pools it to one row.
pub fn encode_choices<B: EncoderDecoder + ?Sized>(
    backbone: &B,
    store: &ParamStore,
    choices: &[Vec<TokenId>],
    null_choice: &Matrix,
) -> Result<ChoiceMatrix> {
    let mut g = Graph::new();
    let null = g.input(null_choice.clone());
    let v = encode_choices_graph(&mut g, backbone, store, choices, null)?;
    Ok(ChoiceMatrix { v: g.value(v).clone() })
}

pub fn prior_distribution(
    v: &ChoiceMatrix,
    d_pri: &EncoderOutput,
    params: &FusionParams,
) -> Result<ChoiceDistribution> {
    params.validate()?;
    check_width("choice matrix", &v.v, params.width())?;
    check_width("D_pri", &d_pri.hidden, params.width())?;
    let mut g = Graph::new();
    let fv = FusionVars::constants(&mut g, params);
    let vv = g.input(v.v.clone());
    let dv = g.input(d_pri.hidden.clone());
    let scores = prior_scores_graph(&mut g, vv, dv, &fv);
    let p = distribution_graph(&mut g, scores);
    finite_distribution(&g, p, DistributionKind::Prior)
}

pub fn posterior_distribution(
    mode: Mode,
    v: &ChoiceMatrix,
    d_pri: &EncoderOutput,
    d_post: Option<&EncoderOutput>,
    params: &FusionParams,
) -> Result<ChoiceDistribution> {
    if mode == Mode::Infer {
        return Err(Error::Contract("the posterior choice distribution is training-only".into()));
    }
    let d_post = d_post.ok_or_else(|| Error::Contract("posterior requires the encoded gold answer".into()))?;
    params.validate()?;
    check_width("choice matrix", &v.v, params.width())?;
    check_width("D_pri", &d_pri.hidden, params.width())?;
    check_width("D_post", &d_post.hidden, params.width())?;
    let mut g = Graph::new();
    let fv = FusionVars::constants(&mut g, params);
    let vv = g.input(v.v.clone());
    let dv = g.input(d_pri.hidden.clone());
    let pv = g.input(d_post.hidden.clone());
    let scores = posterior_scores_graph(&mut g, mode, vv, dv, Some(pv), &fv)?;
    let p = distribution_graph(&mut g, scores);
    finite_distribution(&g, p, DistributionKind::Posterior)
}

/// `KL(p_pri ‖ p_post)` with ε-smoothing.
pub fn kld_loss(p_pri: &ChoiceDistribution, p_post: &ChoiceDistribution) -> Result<f64> {
    if p_pri.len() != p_post.len() {
        return Err(Error::Shape(format!("prior has {} choices, posterior {}", p_pri.len(), p_post.len())));
    }
    if p_pri.kind != DistributionKind::Prior || p_post.kind != DistributionKind::Posterior {
        return Err(Error::Contract("kld_loss takes (prior, posterior)".into()));
    }
    let mut g = Graph::new();
    let a = g.input(p_pri.as_row());
    let b = g.input(p_post.as_row());
    let l = g.kld(a, b, KLD_EPS);
    Ok(g.scalar(l).max(0.0))
}

pub fn fuse_decoder_memory(
    d_pri: &EncoderOutput,
    v: &ChoiceMatrix,
    p: &ChoiceDistribution,
    params: &FusionParams,
) -> Result<DecoderMemory> {
    params.validate()?;
    check_width("D_pri", &d_pri.hidden, params.width())?;
    check_width("choice matrix", &v.v, params.width())?;
    if p.len() != v.choice_count() {
        return Err(Error::Shape(format!("{} probabilities for {} choices", p.len(), v.choice_count())));
    }
    let mut g = Graph::new();
    let dv = g.input(d_pri.hidden.clone());
    let vv = g.input(v.v.clone());
    let pv = g.input(p.as_row());
    let w = g.input(params.w_dec.clone());
    let h = fuse_graph(&mut g, dv, vv, pv, w);
    Ok(DecoderMemory { h: g.value(h).clone() })
}

// ---------------------------------------------------------------------------
// Full forward pass for one reader example.

/// Everything recorded on the graph for one example.
#[derive(Debug, Clone)]
pub struct FusionForward {
    pub memory: Var,
    /// `K + L`: encoder rows of the question and context tokens.
    pub query_rows: usize,
    /// `N` after null-choice substitution.
    pub choice_count: usize,
    pub had_choices: bool,
    pub prior: Var,
    pub posterior: Option<Var>,
    /// `1 × 1`; a constant zero when the KLD term does not apply.
    pub kld: Var,
}

impl FusionForward {
    pub fn memory_rows(&self, g: &Graph) -> usize {
        g.value(self.memory).rows()
    }
}

/// Tokenizes and encodes `example`, computes the choice distributions and
/// builds the decoder memory according to `ablation`.
#[allow(clippy::too_many_arguments)]
pub fn fusion_forward<B: EncoderDecoder + ?Sized>(
    g: &mut Graph,
    example: &ReaderExample,
    mode: Mode,
    ablation: Ablation,
    backbone: &B,
    tokenizer: &Tokenizer,
    store: &ParamStore,
    ids: &FusionIds,
) -> Result<FusionForward> {
    let query = serialize_query(&example.question, &example.context, backbone.token_budget())?;
    let query_ids = tokenizer.encode_tokens(&query.tokens);
    let fv = ids.vars(g, store);
    let positions = query.content_positions();
    if positions.is_empty() {
        return Err(Error::Validation(format!("example {} has neither question nor context tokens", example.id)));
    }
    let encoded = backbone.encode_graph(g, store, &query_ids)?;
    let d_pri = g.gather(encoded, &positions);

    let choice_ids: Vec<Vec<TokenId>> = example.choices.iter().map(|c| tokenizer.encode(c)).collect();
    let v = encode_choices_graph(g, backbone, store, &choice_ids, fv.null_choice)?;
    let choice_count = g.value(v).rows();
    let had_choices = !example.choices.is_empty();

    let scores = prior_scores_graph(g, v, d_pri, &fv);
    let prior = distribution_graph(g, scores);

    let posterior = match mode {
        Mode::Infer => None,
        Mode::Train => {
            let answer = example
                .answer
                .as_deref()
                .ok_or_else(|| Error::Contract(format!("training example {} has no gold answer", example.id)))?;
            let answer_ids = tokenizer.encode(answer);
            let d_post = backbone.encode_graph(g, store, &answer_ids)?;
            let scores = posterior_scores_graph(g, mode, v, d_pri, Some(d_post), &fv)?;
            Some(distribution_graph(g, scores))
        }
    };

    let kld = match posterior {
        Some(post) if had_choices && ablation.uses_kld() => g.kld(prior, post, KLD_EPS),
        _ => g.input(Matrix::zeros(1, 1)),
    };

    let memory = if ablation.fuses_choices() {
        let p = posterior.unwrap_or(prior);
        fuse_graph(g, d_pri, v, p, fv.w_dec)
    } else {
        context_only_graph(g, d_pri, fv.w_dec)
    };
    for (what, var) in [("prior", Some(prior)), ("posterior", posterior), ("decoder memory", Some(memory))] {
        if let Some(var) = var {
            if !g.value(var).is_finite() {
                return Err(Error::NonFinite(what.into()));
            }
        }
    }

    Ok(FusionForward { memory, query_rows: positions.len(), choice_count, had_choices, prior, posterior, kld })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn dist(p: &[f64], kind: DistributionKind) -> ChoiceDistribution {
        ChoiceDistribution::new(p.to_vec(), kind).unwrap()
    }

    #[test]
    fn identical_choices_give_uniform_prior_and_posterior() {
        let mut r = rng();
        let params = FusionParams::init(8, 4, &mut r);
        let row = Matrix::random_normal(1, 8, 1.0, &mut r);
        let v = ChoiceMatrix { v: Matrix::from_rows(&vec![row.data().to_vec(); 3]).unwrap() };
        let d = EncoderOutput { hidden: Matrix::random_normal(6, 8, 1.0, &mut r) };
        let a = EncoderOutput { hidden: Matrix::random_normal(2, 8, 1.0, &mut r) };
        for p in [
            prior_distribution(&v, &d, &params).unwrap(),
            posterior_distribution(Mode::Train, &v, &d, Some(&a), &params).unwrap(),
        ] {
            for x in &p.p {
                assert!((x - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_prior_is_one() {
        let mut r = rng();
        let params = FusionParams::init(8, 4, &mut r);
        let v = ChoiceMatrix { v: Matrix::random_normal(1, 8, 1.0, &mut r) };
        let d = EncoderOutput { hidden: Matrix::random_normal(3, 8, 1.0, &mut r) };
        assert_eq!(prior_distribution(&v, &d, &params).unwrap().p, vec![1.0]);
    }

    #[test]
    fn posterior_guards() {
        let mut r = rng();
        let params = FusionParams::init(8, 4, &mut r);
        let v = ChoiceMatrix { v: Matrix::random_normal(2, 8, 1.0, &mut r) };
        let d = EncoderOutput { hidden: Matrix::random_normal(3, 8, 1.0, &mut r) };
        let a = EncoderOutput { hidden: Matrix::random_normal(2, 8, 1.0, &mut r) };
        assert!(matches!(posterior_distribution(Mode::Infer, &v, &d, Some(&a), &params), Err(Error::Contract(_))));
        assert!(matches!(posterior_distribution(Mode::Train, &v, &d, None, &params), Err(Error::Contract(_))));
    }

    #[test]
    fn kld_values() {
        let half = dist(&[0.5, 0.5], DistributionKind::Posterior);
        let pri = dist(&[0.5, 0.5], DistributionKind::Prior);
        assert!(kld_loss(&pri, &half).unwrap().abs() < 1e-12);

        let pri = dist(&[0.25, 0.75], DistributionKind::Prior);
        let oracle = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
        let got = kld_loss(&pri, &half).unwrap();
        assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
        assert!((got - 0.1308).abs() < 5e-5);

        let three = dist(&[0.2, 0.3, 0.5], DistributionKind::Posterior);
        assert!(kld_loss(&pri, &three).is_err());
        assert!(kld_loss(&half, &pri).is_err());
    }

    #[test]
    fn fused_memory_shape_and_closed_forms() {
        let mut r = rng();
        let mut params = FusionParams::init(8, 4, &mut r);
        let d = EncoderOutput { hidden: Matrix::random_normal(10, 8, 1.0, &mut r) };
        let v = ChoiceMatrix { v: Matrix::random_normal(4, 8, 1.0, &mut r) };
        let p = dist(&[0.25; 4], DistributionKind::Prior);
        let h = fuse_decoder_memory(&d, &v, &p, &params).unwrap();
        assert_eq!(h.h.shape(), (14, 8));

        // one-hot p: other choice rows are tanh(0 · W) = 0
        let one_hot = dist(&[0.0, 0.0, 1.0, 0.0], DistributionKind::Posterior);
        let h = fuse_decoder_memory(&d, &v, &one_hot, &params).unwrap();
        for row in [10, 11, 13] {
            assert!(h.h.row(row).iter().all(|&x| x == 0.0));
        }

        // W_Dec = I, D_pri = 0, uniform p → choice rows are tanh(V / N)
        params.w_dec = Matrix::identity(8);
        let zeros = EncoderOutput { hidden: Matrix::zeros(10, 8) };
        let h = fuse_decoder_memory(&zeros, &v, &p, &params).unwrap();
        let expected = v.v.map(|x| (x / 4.0).tanh());
        for i in 0..4 {
            for c in 0..8 {
                assert!((h.h.get(10 + i, c) - expected.get(i, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut r = rng();
        let params = FusionParams::init(8, 4, &mut r);
        let d = EncoderOutput { hidden: Matrix::random_normal(3, 6, 1.0, &mut r) };
        let v = ChoiceMatrix { v: Matrix::random_normal(2, 8, 1.0, &mut r) };
        assert!(matches!(prior_distribution(&v, &d, &params), Err(Error::Shape(_))));
        let d = EncoderOutput { hidden: Matrix::random_normal(3, 8, 1.0, &mut r) };
        let p = dist(&[1.0 / 3.0; 3], DistributionKind::Prior);
        assert!(matches!(fuse_decoder_memory(&d, &v, &p, &params), Err(Error::Shape(_))));
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        assert!("both".parse::<Ablation>().is_err());
    }
}
