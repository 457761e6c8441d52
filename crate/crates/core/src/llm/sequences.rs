//! Sequence builders for the three task formats.
//!
//! Understanding: [BOS, span, Q, A, EOS], loss on answer + EOS (text).
//! Generation:    [BOS, caption, BOI, codes row-major, EOI], loss on the
//!                image ids + EOI (image); caption positions carry none.
//! Text-only:     [BOS, chars, EOS], loss on every char + EOS (text).

use super::{MixedSequence, Modality, SeqElem, Vocabulary};
use crate::tokenizer::DiscreteCodes;

struct SeqBuilder {
    elems: Vec<SeqElem>,
    targets: Vec<Option<u32>>,
    loss_mask: Vec<f32>,
    modality: Vec<Modality>,
}

impl SeqBuilder {
    fn new() -> Self {
        SeqBuilder {
            elems: Vec::new(),
            targets: Vec::new(),
            loss_mask: Vec::new(),
            modality: Vec::new(),
        }
    }

    fn token(&mut self, id: u32) {
        self.elems.push(SeqElem::Token(id));
        self.targets.push(None);
        self.loss_mask.push(0.0);
        self.modality.push(Modality::Text);
    }

    fn span(&mut self, len: usize) {
        self.elems.push(SeqElem::Span { len });
        for _ in 0..len {
            self.targets.push(None);
            self.loss_mask.push(0.0);
            self.modality.push(Modality::Text);
        }
    }

    /// Set the target of the position *preceding* the given position index.
    fn set_target(&mut self, pos: usize, target: u32, masked: bool, modality: Modality) {
        self.targets[pos] = Some(target);
        self.loss_mask[pos] = if masked { 1.0 } else { 0.0 };
        self.modality[pos] = modality;
    }

    fn finish(self) -> MixedSequence {
        MixedSequence {
            elems: self.elems,
            targets: self.targets,
            loss_mask: self.loss_mask,
            modality: self.modality,
        }
    }
}

/// Next-token targets: position i predicts the id at position i+1. Only
/// positions whose next id is in `masked` ranges carry loss.
fn wire_targets(
    seq: &mut SeqBuilder,
    ids_at: &[Option<u32>],
    masked_from: usize,
    modality_of: impl Fn(u32) -> Modality,
) {
    for i in 0..ids_at.len().saturating_sub(1) {
        if let Some(next) = ids_at[i + 1] {
            let masked = i + 1 >= masked_from;
            seq.set_target(i, next, masked, modality_of(next));
        }
    }
}

/// [BOS, continuous span, question, answer, EOS]; loss on answer + EOS.
pub fn build_understanding_sequence(
    span_len: usize,
    question_ids: &[u32],
    answer_ids: &[u32],
    vocab: &Vocabulary,
) -> MixedSequence {
    let mut b = SeqBuilder::new();
    b.token(vocab.bos());
    b.span(span_len);
    for &q in question_ids {
        b.token(q);
    }
    for &a in answer_ids {
        b.token(a);
    }
    b.token(vocab.eos());

    // Flat id layout for target wiring (span rows have no id).
    let mut ids_at: Vec<Option<u32>> = Vec::new();
    ids_at.push(Some(vocab.bos()));
    ids_at.extend(std::iter::repeat(None).take(span_len));
    ids_at.extend(question_ids.iter().map(|&q| Some(q)));
    ids_at.extend(answer_ids.iter().map(|&a| Some(a)));
    ids_at.push(Some(vocab.eos()));

    // Loss starts where the answer starts: 1 + span + |Q|.
    let answer_start = 1 + span_len + question_ids.len();
    wire_targets(&mut b, &ids_at, answer_start, |_| Modality::Text);
    b.finish()
}

/// [BOS, caption, BOI, image ids row-major, EOI]; loss on image ids + EOI.
pub fn build_generation_sequence(
    caption_ids: &[u32],
    codes: &DiscreteCodes,
    vocab: &Vocabulary,
) -> MixedSequence {
    let mut b = SeqBuilder::new();
    b.token(vocab.bos());
    for &c in caption_ids {
        b.token(c);
    }
    b.token(vocab.boi());
    let image_ids: Vec<u32> = codes
        .indices
        .iter()
        .map(|&c| vocab.image_id(c).expect("code within codebook"))
        .collect();
    for &id in &image_ids {
        b.token(id);
    }
    b.token(vocab.eoi());

    let mut ids_at: Vec<Option<u32>> = Vec::new();
    ids_at.push(Some(vocab.bos()));
    ids_at.extend(caption_ids.iter().map(|&c| Some(c)));
    ids_at.push(Some(vocab.boi()));
    ids_at.extend(image_ids.iter().map(|&i| Some(i)));
    ids_at.push(Some(vocab.eoi()));

    // Loss starts at the first image id: position of BOI predicts it.
    let first_image = 1 + caption_ids.len() + 1;
    wire_targets(&mut b, &ids_at, first_image, |_| Modality::Image);
    b.finish()
}

/// [BOS, chars, EOS]; loss on every char + EOS.
pub fn build_text_sequence(char_ids: &[u32], vocab: &Vocabulary) -> MixedSequence {
    let mut b = SeqBuilder::new();
    b.token(vocab.bos());
    for &c in char_ids {
        b.token(c);
    }
    b.token(vocab.eos());

    let mut ids_at: Vec<Option<u32>> = vec![Some(vocab.bos())];
    ids_at.extend(char_ids.iter().map(|&c| Some(c)));
    ids_at.push(Some(vocab.eos()));
    wire_targets(&mut b, &ids_at, 1, |_| Modality::Text);
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Modality;

    fn vocab() -> Vocabulary {
        Vocabulary::joint(125)
    }

    #[test]
    fn understanding_masks_answer_only() {
        let v = vocab();
        let q = [1u32, 2, 3];
        let a = [4u32, 5];
        let seq = build_understanding_sequence(16, &q, &a, &v);
        seq.validate(&v).unwrap();
        assert_eq!(seq.len(), 1 + 16 + 3 + 2 + 1);
        // no image-tagged loss positions
        let image_loss = seq
            .loss_mask
            .iter()
            .zip(&seq.modality)
            .filter(|(&m, &mo)| m != 0.0 && mo == Modality::Image)
            .count();
        assert_eq!(image_loss, 0);
        // masked count = |A| + 1 (answer chars + EOS)
        let masked: f32 = seq.loss_mask.iter().sum();
        assert_eq!(masked, 3.0);
        // the masked targets are exactly A then EOS
        let targets: Vec<u32> = seq
            .targets
            .iter()
            .zip(&seq.loss_mask)
            .filter(|(_, &m)| m != 0.0)
            .map(|(t, _)| t.unwrap())
            .collect();
        assert_eq!(targets, vec![4, 5, v.eos()]);
    }

    #[test]
    fn generation_masks_images_and_eoi() {
        let v = vocab();
        let codes = DiscreteCodes {
            side: 2,
            indices: vec![10, 11, 12, 13],
        };
        let seq = build_generation_sequence(&[1, 2], &codes, &v);
        seq.validate(&v).unwrap();
        // exactly side^2 + 1 masked positions, all image-tagged
        let masked: Vec<(&f32, &Modality)> = seq
            .loss_mask
            .iter()
            .zip(&seq.modality)
            .filter(|(&m, _)| m != 0.0)
            .collect();
        assert_eq!(masked.len(), 5);
        assert!(masked.iter().all(|(_, &m)| m == Modality::Image));
        // row-major code order as ids
        let targets: Vec<u32> = seq
            .targets
            .iter()
            .zip(&seq.loss_mask)
            .filter(|(_, &m)| m != 0.0)
            .map(|(t, _)| t.unwrap())
            .collect();
        assert_eq!(
            targets,
            vec![
                v.image_id(10).unwrap(),
                v.image_id(11).unwrap(),
                v.image_id(12).unwrap(),
                v.image_id(13).unwrap(),
                v.eoi()
            ]
        );
        // caption positions carry no loss
        assert_eq!(seq.loss_mask[0], 0.0);
        assert_eq!(seq.loss_mask[1], 0.0);
        assert_eq!(seq.loss_mask[2], 0.0);
    }

    #[test]
    fn text_sequence_masks_everything_after_bos() {
        let v = vocab();
        let seq = build_text_sequence(&[7, 8, 9], &v);
        seq.validate(&v).unwrap();
        let masked: f32 = seq.loss_mask.iter().sum();
        assert_eq!(masked, 4.0); // 3 chars + EOS
    }
}
