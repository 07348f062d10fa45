//! Zero-shot DST inference and metrics.
//!
//! Values are compared after [`normalize_value`]. A slot is *active* when
//! its value is not `"none"`; inactive slots are absent from state maps.
//!
//! * JGA: fraction of turns whose scoped state equals the gold state.
//! * SGA: per turn, the fraction of active (gold or predicted) slots whose
//!   values match, averaged over turns; a turn without active slots counts
//!   as 1. `sga_pooled` pools the same pairs over all turns instead.
//! * F1: micro-averaged over `(turn, slot, value)` triples.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_whitespace, DialogueState, DialogueTurn, Ontology, SlotKey, SlotKind, NONE_VALUE};
use crate::error::{Error, Result};
use crate::model::ReaderModel;
use crate::query::dst_to_reader_example;

pub const SGA_DENOMINATOR: &str = "per-turn slots active in gold or prediction, averaged over turns";

pub fn normalize_value(v: &str) -> String {
    normalize_whitespace(v).to_lowercase()
}

fn is_active(v: &str) -> bool {
    !v.is_empty() && v != NONE_VALUE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueStatePrediction {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub predicted_state: DialogueState,
}

impl DialogueStatePrediction {
    pub fn gold(turn: &DialogueTurn) -> Self {
        Self {
            dialogue_id: turn.dialogue_id.clone(),
            turn_index: turn.turn_index,
            predicted_state: turn.gold_state.clone(),
        }
    }

    fn key(&self) -> (String, usize) {
        (self.dialogue_id.clone(), self.turn_index)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictDiagnostics {
    pub slots_queried: usize,
    pub generation_failures: usize,
}

/// Predicts every slot of the turn's domains (all of `ontology` when the
/// turn lists none) from the full history; `"none"` answers are omitted.
pub fn predict_turn(
    turn: &DialogueTurn,
    ontology: &Ontology,
    model: &ReaderModel,
) -> (DialogueStatePrediction, PredictDiagnostics) {
    let mut diag = PredictDiagnostics::default();
    let mut state = DialogueState::new();
    for schema in &ontology.schemas {
        if !turn.domains.is_empty() && !turn.domains.contains(&schema.domain) {
            continue;
        }
        diag.slots_queried += 1;
        let example = dst_to_reader_example(turn, schema).with_none_choice();
        match model.answer(&example) {
            Ok(value) => {
                let value = normalize_value(&value);
                if is_active(&value) {
                    state.insert(schema.key(), value);
                }
            }
            Err(_) => diag.generation_failures += 1,
        }
    }
    let pred = DialogueStatePrediction {
        dialogue_id: turn.dialogue_id.clone(),
        turn_index: turn.turn_index,
        predicted_state: state,
    };
    (pred, diag)
}

pub fn predict_dialogues(
    turns: &[DialogueTurn],
    ontology: &Ontology,
    model: &ReaderModel,
) -> (Vec<DialogueStatePrediction>, PredictDiagnostics) {
    let mut total = PredictDiagnostics::default();
    let preds = turns
        .iter()
        .map(|t| {
            let (p, d) = predict_turn(t, ontology, model);
            total.slots_queried += d.slots_queried;
            total.generation_failures += d.generation_failures;
            p
        })
        .collect();
    (preds, total)
}

pub fn write_predictions(path: &Path, preds: &[DialogueStatePrediction]) -> Result<()> {
    let mut text = String::new();
    for p in preds {
        text.push_str(&serde_json::to_string(p).expect("serializable prediction"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<DialogueStatePrediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: DialogueStatePrediction = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

/// Restricts which slots a metric looks at.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scope {
    pub domain: Option<String>,
    pub kind: Option<SlotKind>,
}

impl Scope {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn domain(d: impl Into<String>) -> Self {
        Self { domain: Some(d.into()), kind: None }
    }

    pub fn kind(k: SlotKind) -> Self {
        Self { domain: None, kind: Some(k) }
    }

    fn admits(&self, key: &SlotKey, ontology: Option<&Ontology>) -> bool {
        if self.domain.as_ref().is_some_and(|d| *d != key.domain) {
            return false;
        }
        match self.kind {
            None => true,
            Some(k) => ontology.and_then(|o| o.kind_of(key)) == Some(k),
        }
    }
}

type Aligned<'a> = Vec<(&'a DialogueStatePrediction, &'a DialogueStatePrediction)>;

/// Pairs predictions with golds by `(dialogue_id, turn_index)`, in gold order.
pub fn align<'a>(preds: &'a [DialogueStatePrediction], golds: &'a [DialogueStatePrediction]) -> Result<Aligned<'a>> {
    let by_key: HashMap<(String, usize), &DialogueStatePrediction> = preds.iter().map(|p| (p.key(), p)).collect();
    let gold_keys: BTreeSet<(String, usize)> = golds.iter().map(|g| g.key()).collect();
    let mut unmatched: Vec<String> = golds
        .iter()
        .filter(|g| !by_key.contains_key(&g.key()))
        .map(|g| format!("gold {}#{}", g.dialogue_id, g.turn_index))
        .collect();
    unmatched.extend(
        preds
            .iter()
            .filter(|p| !gold_keys.contains(&p.key()))
            .map(|p| format!("pred {}#{}", p.dialogue_id, p.turn_index)),
    );
    if by_key.len() != preds.len() || gold_keys.len() != golds.len() {
        unmatched.push("duplicate turn keys".into());
    }
    if !unmatched.is_empty() {
        return Err(Error::Misaligned(unmatched));
    }
    Ok(golds.iter().map(|g| (by_key[&g.key()], g)).collect())
}

fn scoped(state: &DialogueState, scope: &Scope, ontology: Option<&Ontology>) -> BTreeMap<SlotKey, String> {
    state
        .iter()
        .filter(|(k, _)| scope.admits(k, ontology))
        .map(|(k, v)| (k.clone(), normalize_value(v)))
        .filter(|(_, v)| is_active(v))
        .collect()
}

pub fn joint_goal_accuracy(
    preds: &[DialogueStatePrediction],
    golds: &[DialogueStatePrediction],
    scope: &Scope,
    ontology: Option<&Ontology>,
) -> Result<f64> {
    let pairs = align(preds, golds)?;
    if pairs.is_empty() {
        return Ok(1.0);
    }
    let correct = pairs
        .iter()
        .filter(|(p, g)| scoped(&p.predicted_state, scope, ontology) == scoped(&g.predicted_state, scope, ontology))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotAccuracy {
    /// Turn-averaged accuracy over active slots.
    pub sga: f64,
    /// Matches over all active pairs pooled across turns.
    pub sga_pooled: f64,
    pub matched: usize,
    pub active_pairs: usize,
    /// True when no slot is active anywhere in scope.
    pub vacuous: bool,
}

pub fn slot_accuracy(
    preds: &[DialogueStatePrediction],
    golds: &[DialogueStatePrediction],
    scope: &Scope,
    ontology: Option<&Ontology>,
) -> Result<SlotAccuracy> {
    let pairs = align(preds, golds)?;
    let (mut matched, mut active, mut turn_sum) = (0usize, 0usize, 0.0);
    for (p, g) in &pairs {
        let ps = scoped(&p.predicted_state, scope, ontology);
        let gs = scoped(&g.predicted_state, scope, ontology);
        let keys: BTreeSet<&SlotKey> = ps.keys().chain(gs.keys()).collect();
        let hits = keys.iter().filter(|k| ps.get(**k) == gs.get(**k)).count();
        matched += hits;
        active += keys.len();
        turn_sum += if keys.is_empty() { 1.0 } else { hits as f64 / keys.len() as f64 };
    }
    Ok(SlotAccuracy {
        sga: if pairs.is_empty() { 1.0 } else { turn_sum / pairs.len() as f64 },
        sga_pooled: if active == 0 { 1.0 } else { matched as f64 / active as f64 },
        matched,
        active_pairs: active,
        vacuous: active == 0,
    })
}

pub fn slot_goal_accuracy(
    preds: &[DialogueStatePrediction],
    golds: &[DialogueStatePrediction],
    scope: &Scope,
    ontology: Option<&Ontology>,
) -> Result<f64> {
    Ok(slot_accuracy(preds, golds, scope, ontology)?.sga)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn slot_f1(
    preds: &[DialogueStatePrediction],
    golds: &[DialogueStatePrediction],
    scope: &Scope,
    ontology: Option<&Ontology>,
) -> Result<SlotF1> {
    let pairs = align(preds, golds)?;
    let (mut predicted, mut gold, mut correct) = (0usize, 0usize, 0usize);
    for (p, g) in &pairs {
        let ps = scoped(&p.predicted_state, scope, ontology);
        let gs = scoped(&g.predicted_state, scope, ontology);
        predicted += ps.len();
        gold += gs.len();
        correct += ps.iter().filter(|(k, v)| gs.get(*k) == Some(*v)).count();
    }
    if predicted == 0 && gold == 0 {
        return Ok(SlotF1 { precision: 1.0, recall: 1.0, f1: 1.0 });
    }
    let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(SlotF1 { precision, recall, f1 })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorClass {
    pub count: usize,
    /// Share of all sampled slot errors.
    pub share: f64,
    pub categorical_count: usize,
    /// Share of this class's errors that fall on categorical slots.
    pub categorical_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTaxonomy {
    pub sampled_dialogues: Vec<String>,
    pub total_errors: usize,
    pub missing_active: ErrorClass,
    pub wrong_value: ErrorClass,
    pub spurious: ErrorClass,
}

/// Seeded sample of `sample_size` dialogues (all of them when fewer exist).
pub fn sample_dialogues(golds: &[DialogueStatePrediction], sample_size: usize, seed: u64) -> Vec<String> {
    let ids: Vec<String> = golds.iter().map(|g| g.dialogue_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if sample_size >= ids.len() {
        return ids;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = ids.choose_multiple(&mut rng, sample_size).cloned().collect();
    picked.sort();
    picked
}

/// Classifies every erroneous `(turn, slot)` in the sampled dialogues.
pub fn error_analysis(
    preds: &[DialogueStatePrediction],
    golds: &[DialogueStatePrediction],
    ontology: &Ontology,
    scope: &Scope,
    sample_size: usize,
    seed: u64,
) -> Result<ErrorTaxonomy> {
    let pairs = align(preds, golds)?;
    let sampled = sample_dialogues(golds, sample_size, seed);
    let keep: BTreeSet<&str> = sampled.iter().map(String::as_str).collect();
    let mut classes = [ErrorClass::default(); 3];
    for (p, g) in pairs.iter().filter(|(_, g)| keep.contains(g.dialogue_id.as_str())) {
        let ps = scoped(&p.predicted_state, scope, Some(ontology));
        let gs = scoped(&g.predicted_state, scope, Some(ontology));
        let keys: BTreeSet<&SlotKey> = ps.keys().chain(gs.keys()).collect();
        for k in keys {
            let class = match (gs.get(k), ps.get(k)) {
                (Some(a), Some(b)) if a == b => continue,
                (Some(_), Some(_)) => 1,
                (Some(_), None) => 0,
                (None, Some(_)) => 2,
                (None, None) => continue,
            };
            classes[class].count += 1;
            if ontology.kind_of(k) == Some(SlotKind::Categorical) {
                classes[class].categorical_count += 1;
            }
        }
    }
    let total: usize = classes.iter().map(|c| c.count).sum();
    for c in &mut classes {
        c.share = if total == 0 { 0.0 } else { c.count as f64 / total as f64 };
        c.categorical_share = if c.count == 0 { 0.0 } else { c.categorical_count as f64 / c.count as f64 };
    }
    let [missing_active, wrong_value, spurious] = classes;
    Ok(ErrorTaxonomy { sampled_dialogues: sampled, total_errors: total, missing_active, wrong_value, spurious })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub turns: usize,
    pub jga: f64,
    pub sga: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTypeSga {
    /// `None` when no slot of the type is active in scope.
    pub categorical: Option<f64>,
    pub non_categorical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: String,
    pub turns: usize,
    pub jga: f64,
    pub sga: f64,
    pub sga_pooled: f64,
    pub sga_denominator: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_domain: BTreeMap<String, DomainMetrics>,
    pub per_slot_type: SlotTypeSga,
    pub error_taxonomy: Option<ErrorTaxonomy>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub domain: Option<String>,
    /// `(sample_size, seed)` for the error taxonomy.
    pub analyze: Option<(usize, u64)>,
}

/// Dialogues that involve `domain`, by listed domains or gold keys.
fn dialogues_with_domain(turns: &[DialogueTurn], domain: &str) -> BTreeSet<String> {
    turns
        .iter()
        .filter(|t| t.domains.iter().any(|d| d == domain) || t.gold_state.keys().any(|k| k.domain == domain))
        .map(|t| t.dialogue_id.clone())
        .collect()
}

fn subset(
    preds: &[DialogueStatePrediction],
    golds: &[DialogueStatePrediction],
    dialogues: &BTreeSet<String>,
) -> (Vec<DialogueStatePrediction>, Vec<DialogueStatePrediction>) {
    let pick =
        |v: &[DialogueStatePrediction]| v.iter().filter(|p| dialogues.contains(&p.dialogue_id)).cloned().collect();
    (pick(preds), pick(golds))
}

pub fn evaluate(
    preds: &[DialogueStatePrediction],
    turns: &[DialogueTurn],
    ontology: &Ontology,
    options: &EvaluateOptions,
) -> Result<MetricsReport> {
    let golds: Vec<DialogueStatePrediction> = turns.iter().map(DialogueStatePrediction::gold).collect();
    align(preds, &golds)?;
    let mut diagnostics = Vec::new();

    let (preds, golds, scope, domains) = match &options.domain {
        Some(d) => {
            if !ontology.domains().contains(d) {
                return Err(Error::Validation(format!("domain {d:?} is not in the ontology")));
            }
            let ids = dialogues_with_domain(turns, d);
            let (p, g) = subset(preds, &golds, &ids);
            (p, g, Scope::domain(d.clone()), vec![d.clone()])
        }
        None => (preds.to_vec(), golds, Scope::all(), ontology.domains()),
    };

    let jga = joint_goal_accuracy(&preds, &golds, &scope, Some(ontology))?;
    let acc = slot_accuracy(&preds, &golds, &scope, Some(ontology))?;
    if acc.vacuous {
        diagnostics.push("no active slots in scope; SGA defined as 1.0".into());
    }
    let f1 = slot_f1(&preds, &golds, &scope, Some(ontology))?;

    let mut per_domain = BTreeMap::new();
    for d in domains {
        let ids = dialogues_with_domain(turns, &d);
        let (p, g) = subset(&preds, &golds, &ids);
        let s = Scope::domain(d.clone());
        per_domain.insert(
            d.clone(),
            DomainMetrics {
                turns: g.len(),
                jga: joint_goal_accuracy(&p, &g, &s, Some(ontology))?,
                sga: slot_goal_accuracy(&p, &g, &s, Some(ontology))?,
                f1: slot_f1(&p, &g, &s, Some(ontology))?.f1,
            },
        );
    }

    let by_kind = |k| -> Result<Option<f64>> {
        let s = Scope { domain: scope.domain.clone(), kind: Some(k) };
        let acc = slot_accuracy(&preds, &golds, &s, Some(ontology))?;
        Ok((!acc.vacuous).then_some(acc.sga))
    };
    let per_slot_type = SlotTypeSga {
        categorical: by_kind(SlotKind::Categorical)?,
        non_categorical: by_kind(SlotKind::NonCategorical)?,
    };

    let error_taxonomy = match options.analyze {
        Some((sample, seed)) => {
            let dialogue_count = golds.iter().map(|g| &g.dialogue_id).collect::<BTreeSet<_>>().len();
            if sample > dialogue_count {
                diagnostics.push(format!("sample of {sample} requested, {dialogue_count} dialogues available"));
            }
            Some(error_analysis(&preds, &golds, ontology, &scope, sample, seed)?)
        }
        None => None,
    };

    Ok(MetricsReport {
        scope: options.domain.clone().unwrap_or_else(|| "all".into()),
        turns: golds.len(),
        jga,
        sga: acc.sga,
        sga_pooled: acc.sga_pooled,
        sga_denominator: SGA_DENOMINATOR.into(),
        precision: f1.precision,
        recall: f1.recall,
        f1: f1.f1,
        per_domain,
        per_slot_type,
        error_taxonomy,
        diagnostics,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report") + "\n"
    }

    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        let mut out = String::new();
        writeln!(out, "scope: {}   turns: {}", self.scope, self.turns).unwrap();
        writeln!(out, "{:<14} {:>6} {:>6} {:>6} {:>6}", "domain", "turns", "JGA", "SGA", "F1").unwrap();
        for (d, m) in &self.per_domain {
            writeln!(out, "{:<14} {:>6} {} {} {}", d, m.turns, pct(m.jga), pct(m.sga), pct(m.f1)).unwrap();
        }
        writeln!(out, "{:<14} {:>6} {} {} {}", "overall", self.turns, pct(self.jga), pct(self.sga), pct(self.f1))
            .unwrap();
        let opt = |v: Option<f64>| v.map_or("     -".to_string(), pct);
        writeln!(
            out,
            "SGA by slot type: categorical {} / non-categorical {}",
            opt(self.per_slot_type.categorical),
            opt(self.per_slot_type.non_categorical)
        )
        .unwrap();
        writeln!(out, "SGA denominator: {}", self.sga_denominator).unwrap();
        if let Some(t) = &self.error_taxonomy {
            writeln!(
                out,
                "error analysis over {} dialogues, {} slot errors",
                t.sampled_dialogues.len(),
                t.total_errors
            )
            .unwrap();
            for (name, c) in
                [("missing_active", &t.missing_active), ("wrong_value", &t.wrong_value), ("spurious", &t.spurious)]
            {
                writeln!(
                    out,
                    "  {:<15} {:>5} ({}% of errors, {}% categorical)",
                    name,
                    c.count,
                    pct(c.share).trim(),
                    pct(c.categorical_share).trim()
                )
                .unwrap();
            }
        }
        for d in &self.diagnostics {
            writeln!(out, "note: {d}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(pairs: &[(&str, &str)]) -> DialogueState {
        pairs.iter().map(|(k, v)| (SlotKey::parse(k).unwrap(), v.to_string())).collect()
    }

    fn turn(d: &str, i: usize, pairs: &[(&str, &str)]) -> DialogueStatePrediction {
        DialogueStatePrediction { dialogue_id: d.into(), turn_index: i, predicted_state: state(pairs) }
    }

    #[test]
    fn jga_hand_case() {
        let golds = [turn("d", 0, &[("r-area", "north")]), turn("d", 1, &[("r-area", "north"), ("r-food", "thai")])];
        let preds = [turn("d", 0, &[("r-area", "North ")]), turn("d", 1, &[("r-area", "north"), ("r-food", "indian")])];
        assert_eq!(joint_goal_accuracy(&preds, &golds, &Scope::all(), None).unwrap(), 0.5);
        assert_eq!(joint_goal_accuracy(&golds, &golds, &Scope::all(), None).unwrap(), 1.0);
        let empty = [turn("d", 0, &[]), turn("e", 0, &[])];
        assert_eq!(joint_goal_accuracy(&empty, &empty, &Scope::all(), None).unwrap(), 1.0);
    }

    #[test]
    fn sga_hand_case() {
        let golds = [turn("d", 0, &[("r-a", "x")])];
        let preds = [turn("d", 0, &[("r-a", "x"), ("r-b", "y")])];
        let acc = slot_accuracy(&preds, &golds, &Scope::all(), None).unwrap();
        assert_eq!(acc.active_pairs, 2);
        assert_eq!(acc.sga, 0.5);
        assert_eq!(slot_goal_accuracy(&golds, &golds, &Scope::all(), None).unwrap(), 1.0);
        let empty = [turn("d", 0, &[])];
        let acc = slot_accuracy(&empty, &empty, &Scope::all(), None).unwrap();
        assert!(acc.vacuous);
        assert_eq!(acc.sga, 1.0);
    }

    #[test]
    fn f1_hand_cases() {
        let golds = [turn("d", 0, &[("r-a", "x"), ("r-b", "y")])];
        let preds = [turn("d", 0, &[("r-a", "x")])];
        let f = slot_f1(&preds, &golds, &Scope::all(), None).unwrap();
        assert_eq!((f.precision, f.recall), (1.0, 0.5));
        assert!((f.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(slot_f1(&golds, &golds, &Scope::all(), None).unwrap().f1, 1.0);
        let other = [turn("d", 0, &[("r-a", "z")])];
        assert_eq!(slot_f1(&other, &golds, &Scope::all(), None).unwrap().f1, 0.0);
    }

    #[test]
    fn misalignment_lists_keys() {
        let golds = [turn("d", 0, &[]), turn("d", 1, &[])];
        let preds = [turn("d", 0, &[]), turn("x", 3, &[])];
        match joint_goal_accuracy(&preds, &golds, &Scope::all(), None) {
            Err(Error::Misaligned(keys)) => {
                assert!(keys.contains(&"gold d#1".to_string()));
                assert!(keys.contains(&"pred x#3".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn taxonomy_definitions() {
        let o = Ontology::new(vec![crate::corpus::SlotSchema {
            domain: "r".into(),
            slot: "a".into(),
            kind: SlotKind::Categorical,
            values: vec!["x".into()],
            question_style: Default::default(),
        }])
        .unwrap();
        let golds = [turn("d", 0, &[("r-a", "x")])];
        let t = error_analysis(&[turn("d", 0, &[])], &golds, &o, &Scope::all(), 50, 0).unwrap();
        assert_eq!((t.missing_active.count, t.total_errors), (1, 1));
        assert_eq!(t.missing_active.categorical_share, 1.0);
        let t = error_analysis(&golds, &[turn("d", 0, &[])], &o, &Scope::all(), 50, 0).unwrap();
        assert_eq!(t.spurious.count, 1);
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let golds: Vec<_> = (0..20).map(|i| turn(&format!("d{i:02}"), 0, &[])).collect();
        let a = sample_dialogues(&golds, 5, 9);
        assert_eq!(a, sample_dialogues(&golds, 5, 9));
        assert_eq!(a.len(), 5);
        assert_eq!(sample_dialogues(&golds, 50, 9).len(), 20);
    }

    #[test]
    fn vacuous_turns_keep_jga_below_sga() {
        // One empty-and-correct turn, one turn with a single wrong slot.
        let golds = [turn("d", 0, &[]), turn("d", 1, &[("r-a", "x")])];
        let preds = [turn("d", 0, &[]), turn("d", 1, &[("r-a", "y")])];
        let jga = joint_goal_accuracy(&preds, &golds, &Scope::all(), None).unwrap();
        let acc = slot_accuracy(&preds, &golds, &Scope::all(), None).unwrap();
        assert_eq!(jga, 0.5);
        assert_eq!(acc.sga, 0.5);
        assert_eq!(acc.sga_pooled, 0.0);
    }
}
