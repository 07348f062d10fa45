//! Closed-vocabulary reference tokenizer.
//!
//! Text is lowercased and split on whitespace; a leading `(` and trailing
//! `. , ! ? ; : )` are peeled off each word into their own tokens. Words
//! keep internal punctuation (`7:30`, `o'clock`). [`Tokenizer::decode`] is
//! the inverse of [`Tokenizer::encode`] on canonical text (lowercase, single
//! spaces, no space before closing punctuation or after `(`), provided every
//! word is in the vocabulary.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const EOS: TokenId = 2;
pub const BOS: TokenId = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "</s>", "<s>"];
const TRAILING: &[char] = &['.', ',', '!', '?', ';', ':', ')'];
const LEADING: &[char] = &['('];

/// Words every vocabulary carries so query templates never map to `<unk>`.
const TEMPLATE_WORDS: &[&str] = &[
    "question",
    "context",
    "answer",
    ":",
    "?",
    "none",
    "what",
    "is",
    "the",
    "of",
    "that",
    "user",
    "interested",
    "in",
    "time",
    "how",
    "many",
];

/// Splits text into token strings (vocabulary independent).
pub fn split(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        let mut rest = lower.as_str();
        while let Some(c) = rest.chars().next().filter(|c| LEADING.contains(c)) {
            out.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest.chars().next_back().filter(|c| TRAILING.contains(c)) {
            trailing.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Inverse of [`split`] on canonical text.
pub fn join<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev_opening = true;
    for t in tokens {
        let t = t.as_ref();
        let closing = t.chars().count() == 1 && t.chars().all(|c| TRAILING.contains(&c));
        if !out.is_empty() && !closing && !prev_opening {
            out.push(' ');
        }
        out.push_str(t);
        prev_opening = t.chars().count() == 1 && t.chars().all(|c| LEADING.contains(&c));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Tokenizer {
    /// Vocabulary = specials, then the sorted set of template words and all
    /// tokens of `texts`.
    pub fn build<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words: BTreeSet<String> = TEMPLATE_WORDS.iter().map(|w| w.to_string()).collect();
        for t in texts {
            words.extend(split(t.as_ref()));
        }
        for s in SPECIALS {
            words.remove(s);
        }
        Self::from_vocab(SPECIALS.iter().map(|s| s.to_string()).chain(words).collect())
    }

    fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        Self { vocab, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.vocab.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_tokens(&split(text))
    }

    /// Joins the non-special tokens of `ids`, stopping at the first EOS.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let tokens: Vec<&str> = ids
            .iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id))
            .collect();
        join(&tokens)
    }
}

impl Serialize for Tokenizer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.vocab.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tokenizer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let vocab = Vec::<String>::deserialize(d)?;
        if vocab.len() < SPECIALS.len() || vocab.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(serde::de::Error::custom("vocabulary must start with the special tokens"));
        }
        Ok(Self::from_vocab(vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(split("What is the area of Hotel?"), ["what", "is", "the", "area", "of", "hotel", "?"]);
        assert_eq!(split("leave at 7:30, (please)."), ["leave", "at", "7:30", ",", "(", "please", ")", "."]);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let t = Tokenizer::build(["red blue"]);
        assert_eq!(t.encode("red purple"), vec![t.id("red"), UNK]);
        assert_eq!(t.decode(&[t.id("red"), EOS, t.id("blue")]), "red");
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let a = Tokenizer::build(["b a c", "a"]);
        let b = Tokenizer::build(["a", "c b a"]);
        assert_eq!(a, b);
        assert_eq!(a.token(0), "<pad>");
    }

    fn canonical_text() -> impl Strategy<Value = String> {
        let word = "[a-z0-9][a-z0-9':-]{0,6}[a-z0-9]|[a-z]";
        let piece = (prop::bool::weighted(0.1), word, prop::sample::select(vec!["", "", "", ".", ",", "?", ")"]));
        prop::collection::vec(piece, 1..12).prop_map(|pieces| {
            pieces
                .into_iter()
                .map(|(open, w, close)| format!("{}{w}{close}", if open { "(" } else { "" }))
                .collect::<Vec<_>>()
                .join(" ")
        })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode_on_canonical_text(text in canonical_text()) {
            let tok = Tokenizer::build([text.as_str()]);
            prop_assert_eq!(tok.decode(&tok.encode(&text)), text);
        }
    }
}
