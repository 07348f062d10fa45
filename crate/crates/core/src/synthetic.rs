//! Seeded toy data: a QA corpus about colours and cities, and a two-domain
//! dialogue set whose slot names never appear in the QA questions.
//!
//! In the multichoice records the question is generic, so only the choice
//! list tells the reader which entity type to return.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    DialogueState, DialogueTurn, Ontology, QaRecord, QuestionStyle, SlotKey, SlotKind, SlotSchema, SourceKind,
    NONE_VALUE,
};

pub const COLORS: [&str; 6] = ["red", "blue", "green", "yellow", "black", "white"];
pub const CITIES: [&str; 6] = ["paris", "london", "rome", "berlin", "madrid", "tokyo"];
const FILLER: [&str; 14] =
    ["we", "want", "a", "nice", "place", "today", "please", "maybe", "very", "good", "the", "one", "near", "it"];

/// `(domain, slot, takes_cities)` for the dialogue ontology.
const SLOTS: [(&str, &str, bool); 4] =
    [("restaurant", "area", true), ("restaurant", "decor", false), ("hotel", "city", true), ("hotel", "theme", false)];

fn values(city: bool) -> &'static [&'static str] {
    if city {
        &CITIES
    } else {
        &COLORS
    }
}

fn sentence(rng: &mut ChaCha8Rng, entities: &[&str]) -> String {
    let len = rng.random_range(4..8);
    let mut words: Vec<&str> = (0..len).map(|_| *FILLER.choose(rng).unwrap()).collect();
    for e in entities {
        let at = rng.random_range(0..=words.len());
        words.insert(at, e);
    }
    words.join(" ")
}

/// `n` records, half extractive and half multichoice, with roughly a fifth
/// of each kind unanswerable.
pub fn qa_corpus(n: usize, seed: u64) -> Vec<QaRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let color = rng.random_bool(0.8).then(|| *COLORS.choose(&mut rng).unwrap());
            let city = rng.random_bool(0.8).then(|| *CITIES.choose(&mut rng).unwrap());
            let entities: Vec<&str> = color.into_iter().chain(city).collect();
            let context = format!("user : {}", sentence(&mut rng, &entities));
            let ask_city = rng.random_bool(0.5);
            let answer = if ask_city { city } else { color }.unwrap_or(NONE_VALUE).to_string();
            let id = format!("syn-{i:05}");
            if i % 2 == 0 {
                let noun = if ask_city { "city" } else { "color" };
                QaRecord {
                    id,
                    question: format!("which {noun} is mentioned ?"),
                    context,
                    choices: Vec::new(),
                    answer,
                    source_kind: SourceKind::Extractive,
                }
            } else {
                let mut choices: Vec<String> = values(ask_city).iter().map(|s| s.to_string()).collect();
                choices.shuffle(&mut rng);
                choices.push(NONE_VALUE.into());
                QaRecord {
                    id,
                    question: "what is the answer ?".into(),
                    context,
                    choices,
                    answer,
                    source_kind: SourceKind::Multichoice,
                }
            }
        })
        .collect()
}

pub fn ontology() -> Ontology {
    let schemas = SLOTS
        .iter()
        .map(|&(domain, slot, city)| SlotSchema {
            domain: domain.into(),
            slot: slot.into(),
            kind: SlotKind::Categorical,
            values: values(city).iter().map(|s| s.to_string()).collect(),
            question_style: QuestionStyle::WhatIs,
        })
        .collect();
    Ontology::new(schemas).expect("static ontology is valid")
}

/// `n` two-turn dialogues, each in one domain. Every slot value is
/// mentioned at most once, so the gold state is whatever the history names.
pub fn dialogues(n: usize, seed: u64) -> Vec<DialogueTurn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for d in 0..n {
        let domain = if rng.random_bool(0.5) { "restaurant" } else { "hotel" };
        let mut mentions: BTreeMap<usize, Vec<(SlotKey, &str)>> = BTreeMap::new();
        for &(dom, slot, city) in SLOTS.iter().filter(|s| s.0 == domain) {
            if rng.random_bool(0.75) {
                let value = *values(city).choose(&mut rng).unwrap();
                mentions.entry(rng.random_range(0..2)).or_default().push((SlotKey::new(dom, slot), value));
            }
        }
        let mut history = String::new();
        let mut state = DialogueState::new();
        for t in 0..2 {
            let said = mentions.remove(&t).unwrap_or_default();
            let words: Vec<&str> = said.iter().map(|(_, v)| *v).collect();
            if !history.is_empty() {
                history.push(' ');
            }
            history.push_str(&format!("user : {} system : ok", sentence(&mut rng, &words)));
            for (k, v) in said {
                state.insert(k, v.to_string());
            }
            out.push(DialogueTurn {
                dialogue_id: format!("dlg-{d:04}"),
                turn_index: t,
                history: history.clone(),
                gold_state: state.clone(),
                domains: vec![domain.to_string()],
            });
        }
    }
    out
}
