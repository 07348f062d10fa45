//! Line-delimited QA corpora, dialogue files, and slot ontologies.
//!
//! File layouts:
//!
//! * QA corpus: one JSON object per line with `id`, `question`, `context`,
//!   `choices`, `answer`, `source_kind` (`"extractive"` or `"multichoice"`).
//! * Dialogues: one JSON object per turn with `dialogue_id`, `turn_index`,
//!   either `history` (full text so far) or `utterances` (this turn's new
//!   utterances), `gold_state` as `{"domain-slot": "value"}` and an optional
//!   `domains` list.
//! * Ontology: a JSON array of `{domain, slot, kind, values, question_style}`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value of an inactive slot.
pub const NONE_VALUE: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Extractive,
    Multichoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub context: String,
    #[serde(default)]
    pub choices: Vec<String>,
    pub answer: String,
    pub source_kind: SourceKind,
}

impl QaRecord {
    /// Normalises whitespace in every text field and checks the record invariants.
    pub fn normalized(mut self) -> Result<Self> {
        self.question = normalize_whitespace(&self.question);
        self.context = normalize_whitespace(&self.context);
        self.answer = normalize_whitespace(&self.answer);
        self.choices = self.choices.iter().map(|c| normalize_whitespace(c)).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, text) in [("question", &self.question), ("context", &self.context), ("answer", &self.answer)] {
            if text.trim().is_empty() {
                return Err(Error::Validation(format!("record {}: empty {field}", self.id)));
            }
        }
        match self.source_kind {
            SourceKind::Multichoice => {
                if self.choices.is_empty() {
                    return Err(Error::Validation(format!("record {}: multichoice without choices", self.id)));
                }
                if !self.choices.contains(&self.answer) {
                    return Err(Error::Validation(format!(
                        "record {}: answer {:?} is not one of the choices",
                        self.id, self.answer
                    )));
                }
            }
            SourceKind::Extractive => {
                if !self.choices.is_empty() {
                    return Err(Error::Validation(format!("record {}: extractive record with choices", self.id)));
                }
            }
        }
        Ok(())
    }
}

/// One dialogue state key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotKey {
    pub domain: String,
    pub slot: String,
}

impl SlotKey {
    pub fn new(domain: impl Into<String>, slot: impl Into<String>) -> Self {
        Self { domain: domain.into(), slot: slot.into() }
    }

    /// Parses `"domain-slot"`; the split happens at the first hyphen.
    pub fn parse(key: &str) -> Option<Self> {
        let (domain, slot) = key.split_once('-')?;
        if domain.is_empty() || slot.is_empty() {
            return None;
        }
        Some(Self::new(domain, slot))
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

impl Serialize for SlotKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlotKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SlotKey::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad slot key {s:?}")))
    }
}

/// Map from slot to value; absent keys mean `"none"`.
pub type DialogueState = BTreeMap<SlotKey, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub history: String,
    pub gold_state: DialogueState,
    /// Domains active in the dialogue, when the file provides them.
    pub domains: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Categorical,
    NonCategorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStyle {
    #[default]
    WhatIs,
    WhatTime,
    HowMany,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub domain: String,
    pub slot: String,
    pub kind: SlotKind,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(default)]
    pub question_style: QuestionStyle,
}

impl SlotSchema {
    pub fn key(&self) -> SlotKey {
        SlotKey::new(&self.domain, &self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OntologyCounts {
    pub categorical: usize,
    pub non_categorical: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ontology {
    pub schemas: Vec<SlotSchema>,
}

impl Ontology {
    pub fn new(schemas: Vec<SlotSchema>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &schemas {
            if !seen.insert(s.key()) {
                return Err(Error::Validation(format!("duplicate slot schema ({}, {})", s.domain, s.slot)));
            }
            match (s.kind, s.values.is_empty()) {
                (SlotKind::Categorical, true) => {
                    return Err(Error::Validation(format!("categorical slot {} has no values", s.key())))
                }
                (SlotKind::NonCategorical, false) => {
                    return Err(Error::Validation(format!("non-categorical slot {} lists values", s.key())))
                }
                _ => {}
            }
        }
        Ok(Self { schemas })
    }

    pub fn counts(&self) -> OntologyCounts {
        let categorical = self.schemas.iter().filter(|s| s.kind == SlotKind::Categorical).count();
        OntologyCounts { categorical, non_categorical: self.schemas.len() - categorical }
    }

    pub fn get(&self, key: &SlotKey) -> Option<&SlotSchema> {
        self.schemas.iter().find(|s| s.domain == key.domain && s.slot == key.slot)
    }

    pub fn kind_of(&self, key: &SlotKey) -> Option<SlotKind> {
        self.get(key).map(|s| s.kind)
    }

    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.schemas {
            if !out.contains(&s.domain) {
                out.push(s.domain.clone());
            }
        }
        out
    }

    /// Schemas belonging to any of `domains`.
    pub fn restricted_to(&self, domains: &[String]) -> Ontology {
        Ontology { schemas: self.schemas.iter().filter(|s| domains.contains(&s.domain)).cloned().collect() }
    }

    /// All words appearing in slot names, domains and values; used to extend a vocabulary.
    pub fn texts(&self) -> Vec<String> {
        self.schemas
            .iter()
            .flat_map(|s| [s.domain.clone(), s.slot.clone()].into_iter().chain(s.values.iter().cloned()))
            .collect()
    }
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_line<T: for<'de> Deserialize<'de>>(path: &Path, line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })
}

/// Parses QA records from JSON lines (blank lines are skipped).
pub fn parse_qa_lines(path: &Path, text: &str) -> Result<Vec<QaRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: QaRecord = parse_line(path, i + 1, line)?;
        out.push(rec.normalized()?);
    }
    Ok(out)
}

/// Sort by id and keep the first `⌈fraction · count⌉` records.
pub fn slice_records(mut records: Vec<QaRecord>, fraction: f64) -> Result<Vec<QaRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!("slice fraction {fraction} outside (0, 1]")));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let keep = (fraction * records.len() as f64).ceil() as usize;
    records.truncate(keep);
    Ok(records)
}

pub fn load_qa_corpus(path: &Path, slice_fraction: f64) -> Result<Vec<QaRecord>> {
    let text = read(path)?;
    let records = parse_qa_lines(path, &text)?;
    let mut ids = HashSet::new();
    for r in &records {
        if !ids.insert(r.id.as_str()) {
            return Err(Error::Validation(format!("duplicate record id {}", r.id)));
        }
    }
    slice_records(records, slice_fraction)
}

pub fn write_qa_corpus(path: &Path, records: &[QaRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("serializable record"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_ontology(path: &Path) -> Result<Ontology> {
    let text = read(path)?;
    let schemas: Vec<SlotSchema> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let schemas = schemas
        .into_iter()
        .map(|mut s| {
            s.domain = normalize_whitespace(&s.domain).to_lowercase();
            s.slot = normalize_whitespace(&s.slot).to_lowercase();
            s.values = s.values.iter().map(|v| normalize_whitespace(v)).collect();
            s
        })
        .collect();
    Ontology::new(schemas)
}

#[derive(Debug, Deserialize)]
struct TurnLine {
    dialogue_id: String,
    turn_index: usize,
    #[serde(default)]
    history: Option<String>,
    #[serde(default)]
    utterances: Option<Vec<String>>,
    #[serde(default)]
    gold_state: BTreeMap<String, String>,
    #[serde(default)]
    domains: Vec<String>,
}

#[derive(Debug, Serialize)]
struct TurnLineOut<'a> {
    dialogue_id: &'a str,
    turn_index: usize,
    history: &'a str,
    gold_state: BTreeMap<String, &'a str>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    domains: &'a [String],
}

pub fn parse_dialogue_lines(path: &Path, text: &str, ontology: &Ontology) -> Result<Vec<DialogueTurn>> {
    let known: HashSet<SlotKey> = ontology.schemas.iter().map(SlotSchema::key).collect();
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<(usize, TurnLine)>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let turn: TurnLine = parse_line(path, i + 1, line)?;
        if turn.history.is_none() && turn.utterances.is_none() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "turn needs `history` or `utterances`".into(),
            });
        }
        if !grouped.contains_key(&turn.dialogue_id) {
            order.push(turn.dialogue_id.clone());
        }
        grouped.entry(turn.dialogue_id.clone()).or_default().push((i + 1, turn));
    }

    let mut out = Vec::new();
    for id in order {
        let mut turns = grouped.remove(&id).unwrap_or_default();
        turns.sort_by_key(|(_, t)| t.turn_index);
        let mut history = String::new();
        for (expected, (line_no, t)) in turns.into_iter().enumerate() {
            if t.turn_index != expected {
                return Err(Error::Validation(format!(
                    "dialogue {id}: turn indices not consecutive from 0 (expected {expected}, found {} at line {line_no})",
                    t.turn_index
                )));
            }
            let next = match (&t.history, &t.utterances) {
                (Some(h), _) => normalize_whitespace(h),
                (None, Some(u)) => {
                    let new = normalize_whitespace(&u.join(" "));
                    match (history.is_empty(), new.is_empty()) {
                        (true, _) => new,
                        (false, true) => history.clone(),
                        (false, false) => format!("{history} {new}"),
                    }
                }
                (None, None) => unreachable!(),
            };
            if !next.starts_with(&history) {
                return Err(Error::Validation(format!(
                    "dialogue {id} turn {}: history does not extend the previous turn",
                    t.turn_index
                )));
            }
            history = next;
            let mut gold_state = DialogueState::new();
            for (k, v) in &t.gold_state {
                let key = SlotKey::parse(k).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("bad slot key {k:?}"),
                })?;
                if !known.contains(&key) {
                    return Err(Error::Validation(format!(
                        "dialogue {id} turn {}: unknown slot ({}, {})",
                        t.turn_index, key.domain, key.slot
                    )));
                }
                let v = normalize_whitespace(v);
                if !v.eq_ignore_ascii_case(NONE_VALUE) && !v.is_empty() {
                    gold_state.insert(key, v);
                }
            }
            out.push(DialogueTurn {
                dialogue_id: id.clone(),
                turn_index: t.turn_index,
                history: history.clone(),
                gold_state,
                domains: t.domains,
            });
        }
    }
    Ok(out)
}

pub fn load_dialogues(path: &Path, ontology: &Ontology) -> Result<Vec<DialogueTurn>> {
    let text = read(path)?;
    parse_dialogue_lines(path, &text, ontology)
}

pub fn write_dialogues(path: &Path, turns: &[DialogueTurn]) -> Result<()> {
    let mut text = String::new();
    for t in turns {
        let line = TurnLineOut {
            dialogue_id: &t.dialogue_id,
            turn_index: t.turn_index,
            history: &t.history,
            gold_state: t.gold_state.iter().map(|(k, v)| (k.to_string(), v.as_str())).collect(),
            domains: &t.domains,
        };
        text.push_str(&serde_json::to_string(&line).expect("serializable turn"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_ontology(path: &Path, ontology: &Ontology) -> Result<()> {
    let text = serde_json::to_string_pretty(&ontology.schemas).expect("serializable ontology");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
