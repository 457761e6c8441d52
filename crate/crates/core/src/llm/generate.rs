//! Constrained decoding.
//!
//! Image generation masks logits to the image-id range and emits exactly
//! grid_side^2 tokens between BOI and a forced EOI. Understanding decodes
//! greedily over text ids + EOS only.

use super::{DecoderModel, MixedSequence, Modality, SeqElem};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::tensor::{Graph, Params, Var};
use crate::tokenizer::{DiscreteCodes, HybridTokenizer};

#[derive(Debug, Clone, Copy)]
pub struct Sampler {
    /// 0 means greedy argmax.
    pub temperature: f32,
    pub top_k: usize,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler {
            temperature: 1.0,
            top_k: 50,
        }
    }
}

impl Sampler {
    pub fn greedy() -> Self {
        Sampler {
            temperature: 0.0,
            top_k: 1,
        }
    }
}

/// Sample an index from `allowed` according to its logits.
pub fn sample_from_logits(
    logits: &[f32],
    allowed: &[u32],
    sampler: Sampler,
    rng: &mut Pcg32,
) -> u32 {
    assert!(!allowed.is_empty());
    if sampler.temperature <= 0.0 {
        return allowed
            .iter()
            .copied()
            .max_by(|&a, &b| {
                logits[a as usize]
                    .partial_cmp(&logits[b as usize])
                    .unwrap()
                    .then(b.cmp(&a)) // deterministic tie-break: lowest id
            })
            .unwrap();
    }
    let k = sampler.top_k.max(1).min(allowed.len());
    let mut ranked: Vec<u32> = allowed.to_vec();
    ranked.sort_by(|&a, &b| {
        logits[b as usize]
            .partial_cmp(&logits[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    ranked.truncate(k);
    let scaled: Vec<f64> = ranked
        .iter()
        .map(|&i| (logits[i as usize] / sampler.temperature) as f64)
        .collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.next_f64() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return ranked[i];
        }
    }
    *ranked.last().unwrap()
}

/// Autoregressive image-token generation with hard range masking.
/// Returns the codes and the full emitted id sequence
/// [BOS, prompt, BOI, image ids, EOI].
pub fn generate_image_tokens(
    ps: &Params,
    model: &DecoderModel,
    prompt_ids: &[u32],
    grid_side: usize,
    sampler: Sampler,
    rng: &mut Pcg32,
) -> Result<(DiscreteCodes, Vec<u32>)> {
    let v = &model.vocab;
    if v.k_image == 0 {
        return Err(Error::contract("vocabulary has no image tokens"));
    }
    let n_tokens = grid_side * grid_side;
    if prompt_ids.len() + n_tokens + 3 > model.cfg.max_seq_len {
        return Err(Error::contract(format!(
            "prompt of {} tokens leaves no room for {} image tokens",
            prompt_ids.len(),
            n_tokens
        )));
    }
    let allowed: Vec<u32> = (0..v.k_image).map(|c| v.v_text + c).collect();
    let mut ids = Vec::with_capacity(prompt_ids.len() + n_tokens + 3);
    ids.push(v.bos());
    ids.extend_from_slice(prompt_ids);
    ids.push(v.boi());
    for _ in 0..n_tokens {
        let mut g = Graph::new();
        let logits = model.forward_tokens(&mut g, ps, &ids)?;
        let cols = g.shape(logits)[1];
        let last = &g.value(logits)[(ids.len() - 1) * cols..];
        let id = sample_from_logits(last, &allowed, sampler, rng);
        ids.push(id);
    }
    ids.push(v.eoi());
    let indices: Vec<u32> = ids[ids.len() - 1 - n_tokens..ids.len() - 1]
        .iter()
        .map(|&id| v.code_of(id).expect("masked to image range"))
        .collect();
    Ok((
        DiscreteCodes {
            side: grid_side,
            indices,
        },
        ids,
    ))
}

pub const ANSWER_CAP: usize = 32;

/// Greedy QA: encode the image through the continuous path once, then
/// decode text ids until EOS or the length cap.
pub fn answer_question(
    ps: &Params,
    model: &DecoderModel,
    tokenizer: &HybridTokenizer,
    image: &Image,
    question_ids: &[u32],
) -> Result<Vec<u32>> {
    // Span embeddings are fixed during decoding; compute once, detached.
    let span_data = {
        let mut g = Graph::new();
        let (post, _) = tokenizer.encode(&mut g, ps, image)?;
        let cont = tokenizer.continuous_from(&mut g, ps, post)?;
        (g.value(cont).to_vec(), g.shape(cont).to_vec())
    };
    let span_len = span_data.1[0];
    let v = &model.vocab;
    let allowed: Vec<u32> = (0..v.v_text).chain(std::iter::once(v.eos())).collect();

    let mut answer: Vec<u32> = Vec::new();
    loop {
        let n = 1 + span_len + question_ids.len() + answer.len();
        if n + 1 > model.cfg.max_seq_len || answer.len() >= ANSWER_CAP {
            break;
        }
        let mut elems = vec![SeqElem::Token(v.bos()), SeqElem::Span { len: span_len }];
        elems.extend(question_ids.iter().map(|&q| SeqElem::Token(q)));
        elems.extend(answer.iter().map(|&a| SeqElem::Token(a)));
        let seq = MixedSequence {
            elems,
            targets: vec![None; n],
            loss_mask: vec![0.0; n],
            modality: vec![Modality::Text; n],
        };
        let mut g = Graph::new();
        let span: Var = g.input(span_data.1.clone(), span_data.0.clone());
        let emb = model.embed_mixed(&mut g, ps, &seq, &[span])?;
        let logits = model.forward_embedded(&mut g, ps, emb)?;
        let cols = g.shape(logits)[1];
        let last = &g.value(logits)[(n - 1) * cols..];
        let id = sample_from_logits(last, &allowed, Sampler::greedy(), &mut Pcg32::new(0, 0));
        if id == v.eos() {
            break;
        }
        answer.push(id);
    }
    Ok(answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{DecoderConfig, Vocabulary};

    fn model_with_images() -> (Params, DecoderModel) {
        let mut rng = Pcg32::new(99, 0);
        let mut ps = Params::new();
        let cfg = DecoderConfig {
            d_model: 16,
            depth: 1,
            heads: 2,
            max_seq_len: 64,
        };
        let m = DecoderModel::new(&mut ps, "llm", Vocabulary::joint(125), cfg, &mut rng).unwrap();
        (ps, m)
    }

    #[test]
    fn generation_is_constrained_and_sized() {
        let (ps, model) = model_with_images();
        let mut rng = Pcg32::new(1, 1);
        let (codes, ids) =
            generate_image_tokens(&ps, &model, &[3, 4, 5], 4, Sampler::default(), &mut rng)
                .unwrap();
        assert_eq!(codes.indices.len(), 16);
        let v = &model.vocab;
        assert_eq!(ids[0], v.bos());
        assert_eq!(ids[4], v.boi());
        assert_eq!(*ids.last().unwrap(), v.eoi());
        for &id in &ids[5..ids.len() - 1] {
            assert!(v.is_image_id(id), "id {id} outside image range");
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let (ps, model) = model_with_images();
        let s = Sampler::greedy();
        let mut r1 = Pcg32::new(2, 2);
        let mut r2 = Pcg32::new(3, 3);
        let (a, _) = generate_image_tokens(&ps, &model, &[1], 4, s, &mut r1).unwrap();
        let (b, _) = generate_image_tokens(&ps, &model, &[1], 4, s, &mut r2).unwrap();
        assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn context_overflow_is_contract_error() {
        let (ps, model) = model_with_images();
        let prompt = vec![1u32; 60];
        let mut rng = Pcg32::new(4, 4);
        assert!(matches!(
            generate_image_tokens(&ps, &model, &prompt, 4, Sampler::default(), &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sampler_respects_allowed_set() {
        let logits = vec![0.0f32; 10];
        let allowed = [2u32, 5, 7];
        let mut rng = Pcg32::new(5, 5);
        for _ in 0..100 {
            let s = sample_from_logits(&logits, &allowed, Sampler::default(), &mut rng);
            assert!(allowed.contains(&s));
        }
    }
}
