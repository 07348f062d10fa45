//! Independent straight-line oracles and random instance generators.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use zsdst::backbone::BackboneConfig;
use zsdst::corpus::{DialogueState, Ontology, QuestionStyle, SlotKey, SlotKind, SlotSchema};
use zsdst::evaluator::DialogueStatePrediction;
use zsdst::fusion::FusionParams;
use zsdst::query::ReaderExample;
use zsdst::tokenizer::Tokenizer;
use zsdst::{Ablation, Matrix, ModelConfig, ReaderModel};

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Rows {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

pub fn matrix(r: &Rows) -> Matrix {
    Matrix::from_rows(r).unwrap()
}

pub fn random_fusion_params(rng: &mut ChaCha8Rng, t: usize, f: usize) -> FusionParams {
    FusionParams {
        w_v: matrix(&random_rows(rng, t, f, 1.0)),
        w_d_pri: matrix(&random_rows(rng, t, f, 1.0)),
        w_d_post: matrix(&random_rows(rng, 2 * t, f, 1.0)),
        w_dec: matrix(&random_rows(rng, t, t, 1.0)),
        null_choice: matrix(&random_rows(rng, 1, t, 1.0)),
    }
}

fn mat_mul(a: &Rows, b: &Rows) -> Rows {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for x in 0..k {
                s += a[i][x] * b[x][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn tanh_all(a: Rows) -> Rows {
    a.into_iter().map(|r| r.into_iter().map(f64::tanh).collect()).collect()
}

fn column_mean(a: &Rows) -> Vec<f64> {
    let mut m = vec![0.0; a[0].len()];
    for r in a {
        for (j, v) in r.iter().enumerate() {
            m[j] += v;
        }
    }
    m.iter().map(|v| v / a.len() as f64).collect()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn scores(v: &Rows, w_v: &Rows, pooled: Vec<f64>, w_d: &Rows) -> Vec<f64> {
    let cv = tanh_all(mat_mul(v, w_v));
    let cd = tanh_all(mat_mul(&vec![pooled], w_d));
    cv.iter().map(|row| row.iter().zip(&cd[0]).map(|(a, b)| a * b).sum()).collect()
}

pub fn oracle_prior(v: &Rows, d_pri: &Rows, p: &FusionParams) -> Vec<f64> {
    softmax(&scores(v, &rows(&p.w_v), column_mean(d_pri), &rows(&p.w_d_pri)))
}

pub fn oracle_posterior(v: &Rows, d_pri: &Rows, d_post: &Rows, p: &FusionParams) -> Vec<f64> {
    let mut pooled = column_mean(d_pri);
    pooled.extend(column_mean(d_post));
    softmax(&scores(v, &rows(&p.w_v), pooled, &rows(&p.w_d_post)))
}

pub fn oracle_kld(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let zp: f64 = p.iter().map(|v| v + eps).sum();
    let zq: f64 = q.iter().map(|v| v + eps).sum();
    let mut total = 0.0;
    for i in 0..p.len() {
        let a = (p[i] + eps) / zp;
        let b = (q[i] + eps) / zq;
        total += a * (a / b).ln();
    }
    total
}

pub fn oracle_fuse(d_pri: &Rows, v: &Rows, p: &[f64], w_dec: &Rows) -> Rows {
    let mut stacked = d_pri.clone();
    for (row, w) in v.iter().zip(p) {
        stacked.push(row.iter().map(|x| x * w).collect());
    }
    tanh_all(mat_mul(&stacked, w_dec))
}

pub fn max_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Metrics by enumeration.

pub fn norm(v: &str) -> String {
    v.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn active(state: &DialogueState) -> BTreeMap<String, String> {
    state.iter().map(|(k, v)| (k.to_string(), norm(v))).filter(|(_, v)| !v.is_empty() && v != "none").collect()
}

pub fn brute_jga(preds: &[DialogueStatePrediction], golds: &[DialogueStatePrediction]) -> f64 {
    if golds.is_empty() {
        return 1.0;
    }
    let mut hit = 0;
    for g in golds {
        let p = preds.iter().find(|p| p.dialogue_id == g.dialogue_id && p.turn_index == g.turn_index).unwrap();
        if active(&p.predicted_state) == active(&g.predicted_state) {
            hit += 1;
        }
    }
    hit as f64 / golds.len() as f64
}

/// Turn-averaged and pooled slot accuracy over active slots.
pub fn brute_sga(preds: &[DialogueStatePrediction], golds: &[DialogueStatePrediction]) -> (f64, f64) {
    let (mut per_turn, mut matched, mut total) = (0.0, 0, 0);
    for g in golds {
        let p = preds.iter().find(|p| p.dialogue_id == g.dialogue_id && p.turn_index == g.turn_index).unwrap();
        let (pa, ga) = (active(&p.predicted_state), active(&g.predicted_state));
        let mut keys: Vec<&String> = pa.keys().chain(ga.keys()).collect();
        keys.sort();
        keys.dedup();
        let hits = keys.iter().filter(|k| pa.get(**k) == ga.get(**k)).count();
        matched += hits;
        total += keys.len();
        per_turn += if keys.is_empty() { 1.0 } else { hits as f64 / keys.len() as f64 };
    }
    let sga = if golds.is_empty() { 1.0 } else { per_turn / golds.len() as f64 };
    let pooled = if total == 0 { 1.0 } else { matched as f64 / total as f64 };
    (sga, pooled)
}

pub fn brute_f1(preds: &[DialogueStatePrediction], golds: &[DialogueStatePrediction]) -> (f64, f64, f64) {
    let triples = |v: &[DialogueStatePrediction]| -> BTreeSet<(String, usize, String, String)> {
        v.iter()
            .flat_map(|t| {
                active(&t.predicted_state)
                    .into_iter()
                    .map(move |(k, val)| (t.dialogue_id.clone(), t.turn_index, k, val))
            })
            .collect()
    };
    let (p, g) = (triples(preds), triples(golds));
    if p.is_empty() && g.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let c = p.intersection(&g).count() as f64;
    let prec = if p.is_empty() { 0.0 } else { c / p.len() as f64 };
    let rec = if g.is_empty() { 0.0 } else { c / g.len() as f64 };
    let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
    (prec, rec, f1)
}

/// `[missing, wrong, spurious]` counts and categorical counts, over all dialogues.
pub fn brute_taxonomy(
    preds: &[DialogueStatePrediction],
    golds: &[DialogueStatePrediction],
    ontology: &Ontology,
) -> ([usize; 3], [usize; 3]) {
    let (mut counts, mut cat) = ([0; 3], [0; 3]);
    for g in golds {
        let p = preds.iter().find(|p| p.dialogue_id == g.dialogue_id && p.turn_index == g.turn_index).unwrap();
        let (pa, ga) = (active(&p.predicted_state), active(&g.predicted_state));
        for schema in &ontology.schemas {
            let k = schema.key().to_string();
            let class = match (ga.get(&k), pa.get(&k)) {
                (Some(a), Some(b)) if a != b => 1,
                (Some(_), None) => 0,
                (None, Some(_)) => 2,
                _ => continue,
            };
            counts[class] += 1;
            if schema.kind == SlotKind::Categorical {
                cat[class] += 1;
            }
        }
    }
    (counts, cat)
}

pub fn metric_ontology() -> Ontology {
    let mk = |d: &str, s: &str, cat: bool| SlotSchema {
        domain: d.into(),
        slot: s.into(),
        kind: if cat { SlotKind::Categorical } else { SlotKind::NonCategorical },
        values: if cat { vec!["x".into(), "y".into(), "z".into()] } else { vec![] },
        question_style: QuestionStyle::WhatIs,
    };
    Ontology::new(vec![
        mk("hotel", "area", true),
        mk("hotel", "name", false),
        mk("taxi", "leave", false),
        mk("taxi", "car", true),
    ])
    .unwrap()
}

/// Random aligned prediction/gold lists over `metric_ontology` keys, with
/// case and whitespace noise and explicit `"none"` entries.
pub fn random_states(rng: &mut ChaCha8Rng) -> (Vec<DialogueStatePrediction>, Vec<DialogueStatePrediction>) {
    let keys: Vec<SlotKey> = metric_ontology().schemas.iter().map(|s| s.key()).collect();
    let values = ["x", "y", "z", "X ", " y", "none"];
    let state = |rng: &mut ChaCha8Rng| -> DialogueState {
        let mut s = DialogueState::new();
        for k in &keys {
            if rng.random_bool(0.5) {
                s.insert(k.clone(), values.choose(rng).unwrap().to_string());
            }
        }
        s
    };
    let dialogues = rng.random_range(1..4);
    let (mut preds, mut golds) = (Vec::new(), Vec::new());
    for d in 0..dialogues {
        for t in 0..rng.random_range(1..4) {
            let g = state(rng);
            let p = if rng.random_bool(0.3) { g.clone() } else { state(rng) };
            let id = format!("d{d}");
            golds.push(DialogueStatePrediction { dialogue_id: id.clone(), turn_index: t, predicted_state: g });
            preds.push(DialogueStatePrediction { dialogue_id: id, turn_index: t, predicted_state: p });
        }
    }
    (preds, golds)
}

// ---------------------------------------------------------------------------
// Tiny models.

pub const WORDS: [&str; 16] = [
    "red", "blue", "green", "paris", "rome", "tokyo", "the", "guest", "likes", "near", "which", "color", "city", "is",
    "a", "none",
];

pub fn tiny_model(width: usize, heads: usize, fusion_width: usize, ablation: Ablation, seed: u64) -> ReaderModel {
    let tok = Tokenizer::build([WORDS.join(" ").as_str()]);
    let backbone = BackboneConfig {
        width,
        encoder_layers: 1,
        decoder_layers: 1,
        heads,
        ff_width: 2 * width,
        vocab_size: 0,
        token_budget: 64,
        max_target_len: 8,
    };
    ReaderModel::new(ModelConfig { backbone, fusion_width, ablation }, tok, seed).unwrap()
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Example with `k` question words, `l` context words and `n` choices; the
/// answer is one of the choices when there are any.
pub fn random_example(rng: &mut ChaCha8Rng, k: usize, l: usize, n: usize) -> ReaderExample {
    let choices: Vec<String> = (0..n)
        .map(|_| {
            let len = rng.random_range(1..3);
            words(rng, len)
        })
        .collect();
    let answer = choices.choose(rng).cloned().unwrap_or_else(|| words(rng, 2));
    ReaderExample { id: "r".into(), question: words(rng, k), context: words(rng, l), choices, answer: Some(answer) }
}
