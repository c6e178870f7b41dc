//! Word-level tokenizer for the builtin toy model.
//!
//! The vocabulary is fixed at 64 entries: two specials, punctuation,
//! digits, the letters a..j, and a small word list. Unknown words map to
//! `<unk>`. Detokenization renders canonical whitespace: single spaces
//! between words, digit runs joined, punctuation attached to its
//! neighbour.

use crate::model::TokenId;
use std::collections::HashMap;

pub const EOS: TokenId = 0;
pub const UNK: TokenId = 1;

/// Entries 0 and 1 are special; everything else is renderable text.
const VOCAB: [&str; 64] = [
    "<eos>", "<unk>", ".", ",", "(", ")", "?", "$", // 0..8
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", // 8..18
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r",
    "s", "t", "u", "v", "w", "x", "y", "z", // 18..44
    "use", "proper", "logical", "reasoning", "and", "think", "step", "by", "finally", "give",
    "the", "actual", "correct", "answer", // 44..58
    "therefore", "final", "is", // 58..61
    "say", "then", "of", // 61..64
];

#[derive(Debug, Clone)]
pub struct ToyTokenizer {
    lookup: HashMap<&'static str, TokenId>,
}

impl Default for ToyTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyTokenizer {
    pub fn new() -> Self {
        let lookup = VOCAB
            .iter()
            .enumerate()
            .map(|(id, s)| (*s, id as TokenId))
            .collect();
        Self { lookup }
    }

    pub fn vocab_size(&self) -> usize {
        VOCAB.len()
    }

    pub fn token_text(&self, id: TokenId) -> &'static str {
        VOCAB[id as usize]
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == EOS || id == UNK
    }

    /// Lowercases, splits into words / digit characters / punctuation.
    /// Empty input yields an empty list.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<TokenId>| {
            if !word.is_empty() {
                out.push(*self.lookup.get(word.as_str()).unwrap_or(&UNK));
                word.clear();
            }
        };
        for ch in lower.chars() {
            if ch.is_whitespace() {
                flush(&mut word, &mut out);
            } else if ch.is_ascii_digit() {
                flush(&mut word, &mut out);
                let mut buf = [0u8; 4];
                out.push(*self.lookup.get(ch.encode_utf8(&mut buf) as &str).unwrap());
            } else if ch.is_alphabetic() {
                word.push(ch);
            } else {
                flush(&mut word, &mut out);
                let mut buf = [0u8; 4];
                let s: &str = ch.encode_utf8(&mut buf);
                out.push(*self.lookup.get(s).unwrap_or(&UNK));
            }
        }
        flush(&mut word, &mut out);
        out
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev: Option<TokenId> = None;
        for &id in ids {
            if id == EOS {
                continue;
            }
            let text = self.token_text(id);
            let no_space_before = matches!(text, "." | "," | ")" | "?")
                || (is_digit_tok(id) && prev.map(is_digit_tok).unwrap_or(false));
            let no_space_after_prev = matches!(prev.map(|p| self.token_text(p)), Some("(" | "$"));
            if !out.is_empty() && !no_space_before && !no_space_after_prev {
                out.push(' ');
            }
            out.push_str(text);
            prev = Some(id);
        }
        out
    }
}

fn is_digit_tok(id: TokenId) -> bool {
    (8..18).contains(&id)
}

/// Single-letter tokens a..z.
pub fn is_letter_tok(id: TokenId) -> bool {
    (18..44).contains(&id)
}
