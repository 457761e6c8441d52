//! Tokenizer pre-alignment: a small text decoder is attached behind the
//! two adapters; per sample one adapter is drawn at random (p = 0.5) and
//! its embeddings prefix the text, trained with next-token loss. All
//! parameters, encoder included, receive gradients. The small decoder is
//! discarded after this stage.

use super::HybridTokenizer;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::llm::{build_understanding_sequence, unified_loss, DecoderModel};
use crate::rng::Pcg32;
use crate::tensor::{Graph, Params};

/// Small decoder defaults: 2 blocks at the shared model width.
pub type SmallDecoder = DecoderModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterChoice {
    Continuous,
    Discrete,
}

/// Uniform adapter draw.
pub fn pick_adapter(rng: &mut Pcg32) -> AdapterChoice {
    if rng.next_f32() < 0.5 {
        AdapterChoice::Continuous
    } else {
        AdapterChoice::Discrete
    }
}

/// One training sample: an image plus text, split into a context part
/// (no loss; empty for captions) and a target part (carries loss).
#[derive(Debug, Clone)]
pub struct TokenizerBatchItem {
    pub image: Image,
    pub context_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
}

/// Forward/backward over one batch; gradients accumulate into `ps` and
/// the caller applies the optimizer step. Returns the mean loss and the
/// adapter drawn per sample.
pub fn tokenizer_train_step(
    ps: &mut Params,
    tok: &HybridTokenizer,
    dec: &SmallDecoder,
    batch: &[TokenizerBatchItem],
    rng: &mut Pcg32,
) -> Result<(f32, Vec<AdapterChoice>)> {
    if batch.is_empty() {
        return Err(Error::contract("empty tokenizer batch"));
    }
    let scale = 1.0 / batch.len() as f32;
    let mut total = 0.0f32;
    let mut picks = Vec::with_capacity(batch.len());
    for item in batch {
        let choice = pick_adapter(rng);
        picks.push(choice);
        let mut g = Graph::new();
        let (post, side) = tok.encode(&mut g, ps, &item.image)?;
        let span = match choice {
            AdapterChoice::Continuous => tok.continuous_from(&mut g, ps, post)?,
            AdapterChoice::Discrete => tok.discrete_from(&mut g, ps, post, side)?.1,
        };
        let span_len = side * side;
        let seq = build_understanding_sequence(
            span_len,
            &item.context_ids,
            &item.target_ids,
            &dec.vocab,
        );
        let emb = dec.embed_mixed(&mut g, ps, &seq, &[span])?;
        let logits = dec.forward_embedded(&mut g, ps, emb)?;
        let (loss, _) = unified_loss(&mut g, logits, &seq)?;
        let scaled = g.scale(loss, scale)?;
        total += g.scalar(loss);
        g.backward(scaled, ps)?;
    }
    Ok((total * scale, picks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{render, sample_scene, text_tokenize};
    use crate::llm::{DecoderConfig, Vocabulary};
    use crate::tensor::{AdamW, AdamWConfig};
    use crate::tokenizer::{TokenizerConfig, ViTConfig};

    #[test]
    fn adapter_draw_is_balanced_and_reproducible() {
        let mut rng = Pcg32::new(123, 0);
        let n = 10_000;
        let picks: Vec<AdapterChoice> = (0..n).map(|_| pick_adapter(&mut rng)).collect();
        let frac = picks
            .iter()
            .filter(|&&c| c == AdapterChoice::Continuous)
            .count() as f64
            / n as f64;
        assert!((0.48..=0.52).contains(&frac), "continuous fraction {frac}");

        let mut rng2 = Pcg32::new(123, 0);
        let again: Vec<AdapterChoice> = (0..n).map(|_| pick_adapter(&mut rng2)).collect();
        assert_eq!(picks, again);
    }

    #[test]
    fn step_trains_all_components() {
        let mut rng = Pcg32::new(321, 0);
        let mut ps = Params::new();
        let cfg = TokenizerConfig {
            vit: ViTConfig {
                image_size: 48,
                patch_size: 4,
                d_vit: 16,
                depth: 1,
                heads: 2,
            },
            fsq_levels: vec![5, 5, 5],
            d_model: 32,
        };
        let tok = HybridTokenizer::new(&mut ps, cfg, &mut rng).unwrap();
        let dec = DecoderModel::new(
            &mut ps,
            "tok.dec",
            Vocabulary::text_only(),
            DecoderConfig {
                d_model: 32,
                depth: 1,
                heads: 2,
                max_seq_len: 80,
            },
            &mut rng,
        )
        .unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), &ps, ps.trainable_ids());

        let scene = sample_scene(&mut rng);
        let batch: Vec<TokenizerBatchItem> = (0..4)
            .map(|_| TokenizerBatchItem {
                image: render(&scene, 48).unwrap(),
                context_ids: vec![],
                target_ids: text_tokenize("a red circle").unwrap(),
            })
            .collect();

        let before_vit = ps.hash_by_prefix("tok.vit.");
        let before_cont = ps.hash_by_prefix("tok.cont.");
        let before_disc = ps.hash_by_prefix("tok.disc.");
        let before_dec = ps.hash_by_prefix("tok.dec.");
        // Run enough steps that both adapters get drawn.
        for _ in 0..4 {
            let (loss, picks) =
                tokenizer_train_step(&mut ps, &tok, &dec, &batch, &mut rng).unwrap();
            assert!(loss.is_finite());
            assert_eq!(picks.len(), 4);
            opt.step(&mut ps).unwrap();
        }
        assert_ne!(before_vit, ps.hash_by_prefix("tok.vit."), "encoder frozen");
        assert_ne!(before_cont, ps.hash_by_prefix("tok.cont."));
        assert_ne!(before_disc, ps.hash_by_prefix("tok.disc."));
        assert_ne!(before_dec, ps.hash_by_prefix("tok.dec."));
    }

    #[test]
    fn empty_batch_is_contract_error() {
        let mut rng = Pcg32::new(5, 0);
        let mut ps = Params::new();
        let cfg = TokenizerConfig {
            vit: ViTConfig {
                image_size: 48,
                patch_size: 4,
                d_vit: 16,
                depth: 1,
                heads: 2,
            },
            fsq_levels: vec![5, 5, 5],
            d_model: 32,
        };
        let tok = HybridTokenizer::new(&mut ps, cfg, &mut rng).unwrap();
        let dec = DecoderModel::new(
            &mut ps,
            "tok.dec",
            Vocabulary::text_only(),
            DecoderConfig {
                d_model: 32,
                depth: 1,
                heads: 2,
                max_seq_len: 80,
            },
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            tokenizer_train_step(&mut ps, &tok, &dec, &[], &mut rng),
            Err(Error::Contract(_))
        ));
    }
}
