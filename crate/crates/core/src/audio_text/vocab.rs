use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PUNCTUATION: &str = "!'\"(),-.:;?";

/// Character inventory: pad (id 0), space, lowercase letters, digits and
/// punctuation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolVocab {
    symbols: Vec<char>,
}

/// Symbol ids plus how many input characters had no symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolSequence {
    pub ids: Vec<usize>,
    pub dropped: usize,
}

pub const PAD_ID: usize = 0;
const PAD_CHAR: char = '\0';

impl Default for SymbolVocab {
    fn default() -> Self {
        let mut symbols = vec![PAD_CHAR, ' '];
        symbols.extend('a'..='z');
        symbols.extend('0'..='9');
        symbols.extend(PUNCTUATION.chars());
        SymbolVocab { symbols }
    }
}

impl SymbolVocab {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, c: char) -> Option<usize> {
        if c == PAD_CHAR {
            return None;
        }
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        self.symbols.get(id).copied().filter(|_| id != PAD_ID)
    }

    /// Lowercases and maps each character; characters outside the inventory
    /// are dropped and counted.
    pub fn tokenize(&self, text: &str) -> Result<SymbolSequence> {
        let mut ids = Vec::with_capacity(text.len());
        let mut dropped = 0;
        for c in text.chars().flat_map(char::to_lowercase) {
            match self.id(c) {
                Some(id) => ids.push(id),
                None => dropped += 1,
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} characters without a symbol from {text:?}");
        }
        if ids.is_empty() {
            return Err(Error::Tokenizer(format!("no known symbols in {text:?}")));
        }
        Ok(SymbolSequence { ids, dropped })
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.symbol(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn pad_is_zero_and_ids_contiguous() {
        let v = SymbolVocab::default();
        assert_eq!(v.symbol(PAD_ID), None);
        for id in 1..v.len() {
            let c = v.symbol(id).unwrap();
            assert_eq!(v.id(c), Some(id));
        }
    }

    #[test]
    fn tokenize_examples() {
        let v = SymbolVocab::default();
        let s = v.tokenize("Hi!").unwrap();
        assert_eq!(s.ids, vec![v.id('h').unwrap(), v.id('i').unwrap(), v.id('!').unwrap()]);
        let s = v.tokenize("A  b").unwrap();
        assert_eq!(s.ids.len(), 4);
        assert_eq!(s.ids[1], v.id(' ').unwrap());
        assert_eq!(s.ids[2], v.id(' ').unwrap());
        let s = v.tokenize("a\u{3b1}b").unwrap();
        assert_eq!((s.ids.len(), s.dropped), (2, 1));
        assert!(matches!(v.tokenize("\u{3b1}\u{3b2}"), Err(Error::Tokenizer(_))));
        assert!(v.tokenize("").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_lowercases(s in "[a-zA-Z0-9 !'(),.:;?-]{1,40}") {
            let v = SymbolVocab::default();
            let seq = v.tokenize(&s).unwrap();
            prop_assert_eq!(v.detokenize(&seq.ids), s.to_lowercase());
            prop_assert_eq!(v.tokenize(&s.to_lowercase()).unwrap(), seq);
        }
    }
}
