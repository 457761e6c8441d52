//! Decoder-only transformer over a joint text+image vocabulary.
//!
//! Token ids partition into char-level text ids, FSQ codebook ids, and
//! five specials. Sequences may interleave continuous-embedding spans
//! (understanding inputs) with tokens; spans never carry loss.

mod generate;
mod model;
mod sequences;

pub use generate::{
    answer_question, generate_image_tokens, sample_from_logits, Sampler, ANSWER_CAP,
};
pub use model::{
    combine_losses, unified_loss, unified_loss_weighted, DecoderModel, LossParts,
    IMAGE_LOSS_WEIGHT, TEXT_LOSS_WEIGHT,
};
pub use sequences::{
    build_generation_sequence, build_text_sequence, build_understanding_sequence,
};

use serde::{Deserialize, Serialize};

use crate::data::alphabet_size;
use crate::error::{Error, Result};

pub const N_SPECIALS: u32 = 5;

/// Joint vocabulary layout: [0, v_text) chars, [v_text, v_text+k) image
/// codes, then PAD, BOS, EOS, BOI, EOI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub v_text: u32,
    pub k_image: u32,
}

impl Vocabulary {
    pub fn joint(k_image: u32) -> Self {
        Vocabulary {
            v_text: alphabet_size() as u32,
            k_image,
        }
    }

    pub fn text_only() -> Self {
        Vocabulary::joint(0)
    }

    pub fn total(&self) -> u32 {
        self.v_text + self.k_image + N_SPECIALS
    }

    pub fn pad(&self) -> u32 {
        self.v_text + self.k_image
    }

    pub fn bos(&self) -> u32 {
        self.v_text + self.k_image + 1
    }

    pub fn eos(&self) -> u32 {
        self.v_text + self.k_image + 2
    }

    pub fn boi(&self) -> u32 {
        self.v_text + self.k_image + 3
    }

    pub fn eoi(&self) -> u32 {
        self.v_text + self.k_image + 4
    }

    /// Token id for an image code: the fixed-offset bijection.
    pub fn image_id(&self, code: u32) -> Result<u32> {
        if code >= self.k_image {
            return Err(Error::contract(format!(
                "image code {code} out of codebook 0..{}",
                self.k_image
            )));
        }
        Ok(self.v_text + code)
    }

    pub fn code_of(&self, id: u32) -> Option<u32> {
        (id >= self.v_text && id < self.v_text + self.k_image).then(|| id - self.v_text)
    }

    pub fn is_image_id(&self, id: u32) -> bool {
        self.code_of(id).is_some()
    }

    pub fn is_char_id(&self, id: u32) -> bool {
        id < self.v_text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeqElem {
    Token(u32),
    /// Continuous-embedding span; the rows arrive at embed time.
    Span { len: usize },
}

/// One training/inference sequence: tokens and spans in causal order,
/// with per-position targets, loss mask, and modality tags.
#[derive(Debug, Clone)]
pub struct MixedSequence {
    pub elems: Vec<SeqElem>,
    pub targets: Vec<Option<u32>>,
    pub loss_mask: Vec<f32>,
    pub modality: Vec<Modality>,
}

impl MixedSequence {
    pub fn len(&self) -> usize {
        self.elems
            .iter()
            .map(|e| match e {
                SeqElem::Token(_) => 1,
                SeqElem::Span { len } => *len,
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn span_count(&self) -> usize {
        self.elems
            .iter()
            .filter(|e| matches!(e, SeqElem::Span { .. }))
            .count()
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let n = self.len();
        if self.targets.len() != n || self.loss_mask.len() != n || self.modality.len() != n {
            return Err(Error::contract(format!(
                "sequence bookkeeping lengths disagree with {n} positions"
            )));
        }
        for e in &self.elems {
            if let SeqElem::Token(id) = e {
                if *id >= vocab.total() {
                    return Err(Error::contract(format!("token id {id} out of vocabulary")));
                }
            }
        }
        // Span positions are inputs only.
        let mut pos = 0;
        for e in &self.elems {
            match e {
                SeqElem::Token(_) => pos += 1,
                SeqElem::Span { len } => {
                    // every span position except the last must carry no loss;
                    // the last may target the next token but stays maskable.
                    for p in pos..pos + len - 1 {
                        if self.loss_mask[p] != 0.0 {
                            return Err(Error::contract(
                                "interior span position carries loss",
                            ));
                        }
                    }
                    pos += len;
                }
            }
        }
        for (i, (&m, t)) in self.loss_mask.iter().zip(&self.targets).enumerate() {
            if m != 0.0 && t.is_none() {
                return Err(Error::contract(format!(
                    "masked-in position {i} lacks a target"
                )));
            }
            if let Some(t) = t {
                if *t >= vocab.total() {
                    return Err(Error::contract(format!("target id {t} out of vocabulary")));
                }
            }
        }
        Ok(())
    }
}

/// Decoder size; presets S/M/L/XL vary depth only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub max_seq_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_model: 128,
            depth: 4,
            heads: 4,
            max_seq_len: 96,
        }
    }
}

pub const SIZE_PRESETS: [(&str, usize); 4] = [("S", 2), ("M", 4), ("L", 6), ("XL", 8)];

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::contract("d_model not divisible by heads"));
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let depth = SIZE_PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, d)| *d)
            .ok_or_else(|| Error::contract(format!("unknown decoder preset {name:?}")))?;
        Ok(DecoderConfig {
            depth,
            ..DecoderConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_partition() {
        let v = Vocabulary::joint(125);
        assert_eq!(v.total(), 71 + 125 + 5);
        assert_eq!(v.image_id(0).unwrap(), 71);
        assert_eq!(v.code_of(71), Some(0));
        assert_eq!(v.code_of(70), None);
        assert_eq!(v.code_of(71 + 125), None); // PAD
        assert!(v.image_id(125).is_err());
        // id ranges disjoint
        assert!(v.is_char_id(70));
        assert!(!v.is_char_id(71));
        assert_eq!(v.eoi(), v.total() - 1);
    }

    #[test]
    fn presets() {
        assert_eq!(DecoderConfig::preset("S").unwrap().depth, 2);
        assert_eq!(DecoderConfig::preset("m").unwrap().depth, 4);
        assert_eq!(DecoderConfig::preset("L").unwrap().depth, 6);
        assert_eq!(DecoderConfig::preset("XL").unwrap().depth, 8);
        assert!(DecoderConfig::preset("XXL").is_err());
    }
}
