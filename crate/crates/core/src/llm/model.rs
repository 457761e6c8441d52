//! Decoder model: mixed embedding, causal forward, and the weighted
//! two-term loss (text 1.0, image 0.5).

use super::{MixedSequence, Modality, SeqElem, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{Block, Linear, PosEmbedding, RmsNorm};
use crate::rng::Pcg32;
use crate::tensor::{Graph, ParamId, Params, Tensor, Var};

pub const TEXT_LOSS_WEIGHT: f32 = 1.0;
pub const IMAGE_LOSS_WEIGHT: f32 = 0.5;

pub struct DecoderModel {
    pub cfg: super::DecoderConfig,
    pub vocab: Vocabulary,
    pub tok_emb: ParamId,
    pos: PosEmbedding,
    blocks: Vec<Block>,
    final_norm: RmsNorm,
    head: Linear,
}

impl DecoderModel {
    pub fn new(
        ps: &mut Params,
        prefix: &str,
        vocab: Vocabulary,
        cfg: super::DecoderConfig,
        rng: &mut Pcg32,
    ) -> Result<Self> {
        cfg.validate()?;
        let tok_emb = ps.register(
            format!("{prefix}.tok_emb"),
            Tensor::randn(vec![vocab.total() as usize, cfg.d_model], 0.02, rng),
        );
        let pos = PosEmbedding::new(
            ps,
            &format!("{prefix}.pos"),
            cfg.max_seq_len,
            cfg.d_model,
            rng,
        );
        let blocks = (0..cfg.depth)
            .map(|i| {
                Block::new(
                    ps,
                    &format!("{prefix}.block{i}"),
                    cfg.d_model,
                    cfg.heads,
                    true,
                    rng,
                )
            })
            .collect();
        let final_norm = RmsNorm::new(ps, &format!("{prefix}.final_norm"), cfg.d_model);
        let head = Linear::new(
            ps,
            &format!("{prefix}.head"),
            cfg.d_model,
            vocab.total() as usize,
            rng,
        );
        Ok(DecoderModel {
            cfg,
            vocab,
            tok_emb,
            pos,
            blocks,
            final_norm,
            head,
        })
    }

    /// Embed a mixed sequence: table lookup for token ids, passthrough for
    /// span rows, concatenated in order, plus positional embedding.
    pub fn embed_mixed(
        &self,
        g: &mut Graph,
        ps: &Params,
        seq: &MixedSequence,
        spans: &[Var],
    ) -> Result<Var> {
        seq.validate(&self.vocab)?;
        if seq.span_count() != spans.len() {
            return Err(Error::contract(format!(
                "sequence declares {} spans, {} provided",
                seq.span_count(),
                spans.len()
            )));
        }
        let table = g.param(ps, self.tok_emb);
        let mut parts: Vec<Var> = Vec::new();
        let mut run: Vec<usize> = Vec::new();
        let mut span_iter = spans.iter();
        for e in &seq.elems {
            match e {
                SeqElem::Token(id) => run.push(*id as usize),
                SeqElem::Span { len } => {
                    if !run.is_empty() {
                        parts.push(g.gather_rows(table, &run)?);
                        run.clear();
                    }
                    let span = *span_iter.next().unwrap();
                    let shape = g.shape(span);
                    if shape != [*len, self.cfg.d_model] {
                        return Err(Error::dim(format!(
                            "span shape {shape:?}, expected [{len}, {}]",
                            self.cfg.d_model
                        )));
                    }
                    parts.push(span);
                }
            }
        }
        if !run.is_empty() {
            parts.push(g.gather_rows(table, &run)?);
        }
        let emb = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };
        self.pos.add_to(g, ps, emb)
    }

    /// Causal blocks + final norm + vocabulary projection.
    pub fn forward_embedded(&self, g: &mut Graph, ps: &Params, emb: Var) -> Result<Var> {
        if g.shape(emb)[0] > self.cfg.max_seq_len {
            return Err(Error::contract(format!(
                "sequence length {} exceeds max_seq_len {}",
                g.shape(emb)[0],
                self.cfg.max_seq_len
            )));
        }
        let mut x = emb;
        for b in &self.blocks {
            x = b.forward(g, ps, x)?;
        }
        let x = self.final_norm.forward(g, ps, x)?;
        self.head.forward(g, ps, x)
    }

    /// Convenience forward for an all-token sequence.
    pub fn forward_tokens(&self, g: &mut Graph, ps: &Params, ids: &[u32]) -> Result<Var> {
        let table = g.param(ps, self.tok_emb);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.total()) {
            return Err(Error::contract(format!("token id {bad} out of vocabulary")));
        }
        let emb = g.gather_rows(table, &idx)?;
        let emb = self.pos.add_to(g, ps, emb)?;
        self.forward_embedded(g, ps, emb)
    }
}

/// Per-modality components of the combined loss, for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub text: Option<f32>,
    pub image: Option<f32>,
}

/// Weighted sum of per-modality cross entropies:
/// w_text * CE(text positions) + w_image * CE(image positions).
/// A term with an empty mask is omitted; both empty is a degenerate loss.
pub fn unified_loss_weighted(
    g: &mut Graph,
    logits: Var,
    seq: &MixedSequence,
    w_text: f32,
    w_image: f32,
) -> Result<(Var, LossParts)> {
    let n = seq.len();
    if g.shape(logits)[0] != n {
        return Err(Error::dim(format!(
            "{} logit rows for {} positions",
            g.shape(logits)[0],
            n
        )));
    }
    let mut text_mask = vec![0.0f32; n];
    let mut image_mask = vec![0.0f32; n];
    let mut targets = vec![0u32; n];
    for i in 0..n {
        if let Some(t) = seq.targets[i] {
            targets[i] = t;
        }
        if seq.loss_mask[i] != 0.0 {
            match seq.modality[i] {
                Modality::Text => text_mask[i] = seq.loss_mask[i],
                Modality::Image => image_mask[i] = seq.loss_mask[i],
            }
        }
    }
    let has_text = text_mask.iter().any(|&m| m != 0.0);
    let has_image = image_mask.iter().any(|&m| m != 0.0);
    if !has_text && !has_image {
        return Err(Error::DegenerateLoss);
    }
    let mut parts = LossParts::default();
    let mut total: Option<Var> = None;
    if has_text {
        let ce = g.masked_cross_entropy(logits, &targets, &text_mask)?;
        parts.text = Some(g.scalar(ce));
        let w = g.scale(ce, w_text)?;
        total = Some(w);
    }
    if has_image {
        let ce = g.masked_cross_entropy(logits, &targets, &image_mask)?;
        parts.image = Some(g.scalar(ce));
        let w = g.scale(ce, w_image)?;
        total = Some(match total {
            Some(t) => g.add(t, w)?,
            None => w,
        });
    }
    Ok((total.unwrap(), parts))
}

/// The fixed 1:0.5 text:image mix.
pub fn unified_loss(
    g: &mut Graph,
    logits: Var,
    seq: &MixedSequence,
) -> Result<(Var, LossParts)> {
    unified_loss_weighted(g, logits, seq, TEXT_LOSS_WEIGHT, IMAGE_LOSS_WEIGHT)
}

/// Combine already-computed per-modality scalars with the 1:0.5 weights.
pub fn combine_losses(
    g: &mut Graph,
    l_text: Option<Var>,
    l_image: Option<Var>,
) -> Result<Var> {
    match (l_text, l_image) {
        (Some(t), Some(i)) => {
            let wi = g.scale(i, IMAGE_LOSS_WEIGHT)?;
            g.add(t, wi)
        }
        (Some(t), None) => Ok(t),
        (None, Some(i)) => g.scale(i, IMAGE_LOSS_WEIGHT),
        (None, None) => Err(Error::DegenerateLoss),
    }
}
