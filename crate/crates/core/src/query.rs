//! Reader inputs: slot questions, serialized queries, and the unified
//! [`ReaderExample`] shared by QA training and DST inference.

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueTurn, QaRecord, QuestionStyle, SlotKind, SlotSchema, NONE_VALUE};
use crate::error::{Error, Result};
use crate::tokenizer::{join, split};

pub const DEFAULT_TOKEN_BUDGET: usize = 512;

/// `question` `:` ... `context` `:` ... `answer` `:`
pub const QUERY_OVERHEAD_TOKENS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub choices: Vec<String>,
    pub answer: Option<String>,
}

impl ReaderExample {
    /// Appends `"none"` as a candidate unless the choice list is empty or
    /// already carries it.
    pub fn with_none_choice(mut self) -> Self {
        if !self.choices.is_empty() && !self.choices.iter().any(|c| c == NONE_VALUE) {
            self.choices.push(NONE_VALUE.to_string());
        }
        self
    }
}

impl From<&QaRecord> for ReaderExample {
    fn from(r: &QaRecord) -> Self {
        Self {
            id: r.id.clone(),
            question: r.question.clone(),
            context: r.context.clone(),
            choices: r.choices.clone(),
            answer: Some(r.answer.clone()),
        }
    }
}

pub fn formulate_question(schema: &SlotSchema) -> String {
    let stem = match schema.question_style {
        QuestionStyle::WhatIs => "What is",
        QuestionStyle::WhatTime => "What time is",
        QuestionStyle::HowMany => "How many is",
    };
    format!("{stem} the {} of {} that the user is interested in?", schema.slot, schema.domain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedQuery {
    pub text: String,
    pub tokens: Vec<String>,
    pub question_token_count: usize,
    pub context_token_count: usize,
}

impl SerializedQuery {
    pub fn total_tokens(&self) -> usize {
        self.tokens.len()
    }

    /// Positions of the question and context tokens, in order; template
    /// markers are excluded.
    pub fn content_positions(&self) -> Vec<usize> {
        let (k, l) = (self.question_token_count, self.context_token_count);
        (2..2 + k).chain(k + 4..k + 4 + l).collect()
    }
}

/// Builds `question: q context: c answer:`, dropping the oldest context
/// tokens until the whole query fits `token_budget`.
pub fn serialize_query(question: &str, context: &str, token_budget: usize) -> Result<SerializedQuery> {
    let q = split(question);
    let c = split(context);
    let fixed = q.len() + QUERY_OVERHEAD_TOKENS;
    if fixed > token_budget {
        return Err(Error::Budget { needed: fixed, budget: token_budget });
    }
    let keep = c.len().min(token_budget - fixed);
    let c = &c[c.len() - keep..];

    let mut tokens = Vec::with_capacity(fixed + keep);
    tokens.extend(["question".to_string(), ":".to_string()]);
    tokens.extend(q.iter().cloned());
    tokens.extend(["context".to_string(), ":".to_string()]);
    tokens.extend(c.iter().cloned());
    tokens.extend(["answer".to_string(), ":".to_string()]);
    Ok(SerializedQuery { text: join(&tokens), tokens, question_token_count: q.len(), context_token_count: keep })
}

pub fn dst_to_reader_example(turn: &DialogueTurn, schema: &SlotSchema) -> ReaderExample {
    let key = schema.key();
    ReaderExample {
        id: format!("{}#{}#{}", turn.dialogue_id, turn.turn_index, key),
        question: formulate_question(schema),
        context: turn.history.clone(),
        choices: match schema.kind {
            SlotKind::Categorical => schema.values.clone(),
            SlotKind::NonCategorical => Vec::new(),
        },
        answer: Some(turn.gold_state.get(&key).cloned().unwrap_or_else(|| NONE_VALUE.to_string())),
    }
}
