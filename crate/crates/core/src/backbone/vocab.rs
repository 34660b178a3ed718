use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: usize = 0;

const BUILTIN: &str = include_str!("../../data/vocab.txt");

/// Closed word list; the line number of a token in the vocabulary file is its index.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// A tokenized prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextPrompt {
    pub tokens: Vec<usize>,
    pub raw: String,
}

impl Vocabulary {
    /// Parses a vocabulary file: one token per line, line 0 is the unknown-word token.
    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(|l| l.trim().to_lowercase()).collect();
        if tokens.is_empty() {
            return Err(Error::data("vocabulary file is empty"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Parse { line: i + 1, message: "blank vocabulary entry".into() });
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Parse { line: i + 1, message: format!("duplicate token {tok:?}") });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// The vocabulary shipped with the crate (64 action and activity words).
    pub fn builtin() -> Self {
        Self::from_text(BUILTIN).expect("builtin vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, idx: usize) -> Option<&str> {
        self.tokens.get(idx).map(String::as_str)
    }

    /// Lowercases, splits on anything that is not alphanumeric, and maps each
    /// word through the vocabulary (unknown words become [`UNK`]).
    pub fn tokenize(&self, raw: &str) -> Result<TextPrompt> {
        let tokens: Vec<usize> = raw
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| self.index_of(w))
            .collect();
        if tokens.is_empty() {
            return Err(Error::data(format!("prompt {raw:?} contains no words")));
        }
        Ok(TextPrompt { tokens, raw: raw.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_64_words_and_unk_first() {
        let v = Vocabulary::builtin();
        assert_eq!(v.len(), 64);
        assert_eq!(v.token(UNK), Some("<unk>"));
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::builtin();
        assert_eq!(v.tokenize("spiking").unwrap().tokens, vec![v.index_of("spiking")]);
        assert_eq!(v.tokenize("left spike").unwrap().tokens, vec![v.index_of("left"), v.index_of("spike")]);
        assert_eq!(v.tokenize("zzzz").unwrap().tokens, vec![UNK]);
        assert_eq!(v.tokenize("Left-SPIKE!").unwrap().tokens, vec![v.index_of("left"), v.index_of("spike")]);
    }

    #[test]
    fn empty_prompt_is_a_data_error() {
        let v = Vocabulary::builtin();
        assert!(matches!(v.tokenize(""), Err(Error::Data(_))));
        assert!(matches!(v.tokenize("  ,. "), Err(Error::Data(_))));
    }

    #[test]
    fn duplicate_lines_are_rejected_with_line_number() {
        let err = Vocabulary::from_text("<unk>\nspike\nspike\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
