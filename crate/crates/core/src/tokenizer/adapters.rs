//! The two adapter heads over the shared encoder.
//!
//! Continuous: MLP projection of post-STC features into the decoder
//! dimension, used as understanding inputs. Discrete: linear head to the
//! FSQ channels, quantize, then MLP the lattice vector into the decoder
//! dimension; the codes are the generation targets and the embeddings
//! condition the pixel decoder.

use super::fsq::{self, FsqConfig};
use super::DiscreteCodes;
use crate::error::Result;
use crate::nn::{Linear, Mlp};
use crate::rng::Pcg32;
use crate::tensor::{Graph, Params, Var};

#[derive(Debug, Clone)]
pub struct ContinuousAdapter {
    mlp: Mlp,
}

impl ContinuousAdapter {
    pub fn new(
        ps: &mut Params,
        prefix: &str,
        in_dim: usize,
        d_model: usize,
        rng: &mut Pcg32,
    ) -> Self {
        ContinuousAdapter {
            mlp: Mlp::new(ps, &format!("{prefix}.mlp"), in_dim, d_model, d_model, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &Params, post_stc: Var) -> Result<Var> {
        self.mlp.forward(g, ps, post_stc)
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteAdapter {
    pub fsq: FsqConfig,
    head: Linear,
    mlp: Mlp,
}

impl DiscreteAdapter {
    pub fn new(
        ps: &mut Params,
        prefix: &str,
        in_dim: usize,
        d_model: usize,
        fsq: FsqConfig,
        rng: &mut Pcg32,
    ) -> Self {
        let head = Linear::new(ps, &format!("{prefix}.head"), in_dim, fsq.channels(), rng);
        let mlp = Mlp::new(
            ps,
            &format!("{prefix}.mlp"),
            fsq.channels(),
            d_model,
            d_model,
            rng,
        );
        DiscreteAdapter { fsq, head, mlp }
    }

    /// Quantize post-STC features and embed the lattice vectors.
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Params,
        post_stc: Var,
        grid_side: usize,
    ) -> Result<(DiscreteCodes, Var)> {
        let z = self.head.forward(g, ps, post_stc)?;
        let (digit_rows, quantized) = fsq::fsq_quantize(g, z, &self.fsq)?;
        let mut indices = Vec::with_capacity(digit_rows.len());
        for digits in &digit_rows {
            indices.push(fsq::code_to_index(digits, &self.fsq)?);
        }
        let emb = self.mlp.forward(g, ps, quantized)?;
        Ok((
            DiscreteCodes {
                side: grid_side,
                indices,
            },
            emb,
        ))
    }

    /// Embed code indices directly (no image), for decoder conditioning on
    /// generated tokens. Matches the quantized-path embedding exactly.
    pub fn embed_codes(&self, g: &mut Graph, ps: &Params, codes: &DiscreteCodes) -> Result<Var> {
        let c = self.fsq.channels();
        let mut lattice = Vec::with_capacity(codes.indices.len() * c);
        for &idx in &codes.indices {
            let digits = fsq::index_to_code(idx, &self.fsq)?;
            lattice.extend(fsq::codes_to_lattice(&digits, &self.fsq)?);
        }
        let q = g.input(vec![codes.indices.len(), c], lattice);
        self.mlp.forward(g, ps, q)
    }
}
