//! Char-level text tokens over a fixed alphabet.
//!
//! Bijective by construction: every grammar output stays in-vocabulary,
//! and any out-of-alphabet character is a tokenization error.

use crate::error::{Error, Result};

/// 71 symbols: letters, digits, space, and grammar punctuation.
pub const ALPHABET: &str =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,?!'-:;";

pub fn alphabet_size() -> usize {
    ALPHABET.chars().count()
}

pub fn text_tokenize(s: &str) -> Result<Vec<u32>> {
    s.chars()
        .map(|c| {
            ALPHABET
                .chars()
                .position(|a| a == c)
                .map(|i| i as u32)
                .ok_or(Error::Tokenize(c))
        })
        .collect()
}

pub fn text_detokenize(ids: &[u32]) -> Result<String> {
    let chars: Vec<char> = ALPHABET.chars().collect();
    ids.iter()
        .map(|&i| {
            chars
                .get(i as usize)
                .copied()
                .ok_or_else(|| Error::contract(format!("text id {i} out of alphabet")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{caption, qa_pair, sample_scene};
    use crate::rng::Pcg32;

    #[test]
    fn roundtrip_and_empty() {
        let s = "a red circle in the top left";
        assert_eq!(text_detokenize(&text_tokenize(s).unwrap()).unwrap(), s);
        assert!(text_tokenize("").unwrap().is_empty());
    }

    #[test]
    fn out_of_alphabet_error() {
        assert!(matches!(text_tokenize("héllo"), Err(Error::Tokenize('é'))));
    }

    #[test]
    fn grammar_outputs_are_covered() {
        let mut rng = Pcg32::new(606, 0);
        for _ in 0..2000 {
            let s = sample_scene(&mut rng);
            let c = caption(&s, &mut rng);
            text_tokenize(&c).unwrap_or_else(|e| panic!("caption {c:?}: {e}"));
            let qa = qa_pair(&s, &mut rng);
            text_tokenize(&qa.question).unwrap();
            text_tokenize(&qa.answer).unwrap();
        }
    }

    #[test]
    fn alphabet_size_is_71() {
        assert_eq!(alphabet_size(), 71);
    }
}
