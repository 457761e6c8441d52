//! Layers shared by the vision encoder, both language decoders, and the
//! pixel decoder: linear, gelu MLP, RMSNorm, and causal/bidirectional
//! multi-head attention in pre-norm blocks.

use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::tensor::{Graph, ParamId, Params, Tensor, Var};

pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut Params,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Pcg32,
    ) -> Self {
        let w = ps.register(
            format!("{name}.w"),
            Tensor::randn(vec![in_dim, out_dim], INIT_STD, rng),
        );
        let b = ps.register(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        Linear {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    /// Zero-initialized weights and bias (adaLN-zero style heads).
    pub fn new_zero(ps: &mut Params, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = ps.register(format!("{name}.w"), Tensor::zeros(vec![in_dim, out_dim]));
        let b = ps.register(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        Linear {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &Params, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let mut y = g.matmul(x, w)?;
        if let Some(b) = self.b {
            let bv = g.param(ps, b);
            y = g.add(y, bv)?;
        }
        Ok(y)
    }
}

/// Two-layer gelu MLP.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(
        ps: &mut Params,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut Pcg32,
    ) -> Self {
        Mlp {
            fc1: Linear::new(ps, &format!("{name}.fc1"), in_dim, hidden, rng),
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &Params, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, ps, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, ps, h)
    }
}

#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub gain: ParamId,
}

impl RmsNorm {
    pub fn new(ps: &mut Params, name: &str, dim: usize) -> Self {
        RmsNorm {
            gain: ps.register(format!("{name}.gain"), Tensor::full(vec![dim], 1.0)),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &Params, x: Var) -> Result<Var> {
        let gain = g.param(ps, self.gain);
        g.rmsnorm(x, gain)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub causal: bool,
}

impl Attention {
    pub fn new(
        ps: &mut Params,
        name: &str,
        dim: usize,
        heads: usize,
        causal: bool,
        rng: &mut Pcg32,
    ) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        Attention {
            wq: Linear::new(ps, &format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(ps, &format!("{name}.wo"), dim, dim, rng),
            heads,
            causal,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &Params, x: Var) -> Result<Var> {
        let dim = self.wq.out_dim;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let q = self.wq.forward(g, ps, x)?;
        let k = self.wk.forward(g, ps, x)?;
        let v = self.wv.forward(g, ps, x)?;
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let probs = g.softmax_rows(scores, self.causal)?;
            head_outs.push(g.matmul(probs, vh)?);
        }
        let merged = g.concat_cols(&head_outs)?;
        self.wo.forward(g, ps, merged)
    }
}

/// Pre-norm transformer block: x + attn(norm(x)); x + mlp(norm(x)).
#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: RmsNorm,
    pub attn: Attention,
    pub norm2: RmsNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(
        ps: &mut Params,
        name: &str,
        dim: usize,
        heads: usize,
        causal: bool,
        rng: &mut Pcg32,
    ) -> Self {
        Block {
            norm1: RmsNorm::new(ps, &format!("{name}.norm1"), dim),
            attn: Attention::new(ps, &format!("{name}.attn"), dim, heads, causal, rng),
            norm2: RmsNorm::new(ps, &format!("{name}.norm2"), dim),
            mlp: Mlp::new(ps, &format!("{name}.mlp"), dim, 4 * dim, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &Params, x: Var) -> Result<Var> {
        let n = self.norm1.forward(g, ps, x)?;
        let a = self.attn.forward(g, ps, n)?;
        let x = g.add(x, a)?;
        let n = self.norm2.forward(g, ps, x)?;
        let m = self.mlp.forward(g, ps, n)?;
        g.add(x, m)
    }
}

/// Learned positional embedding table; forward takes the first n rows.
#[derive(Debug, Clone)]
pub struct PosEmbedding {
    pub table: ParamId,
    pub max_len: usize,
}

impl PosEmbedding {
    pub fn new(ps: &mut Params, name: &str, max_len: usize, dim: usize, rng: &mut Pcg32) -> Self {
        PosEmbedding {
            table: ps.register(name, Tensor::randn(vec![max_len, dim], INIT_STD, rng)),
            max_len,
        }
    }

    pub fn add_to(&self, g: &mut Graph, ps: &Params, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        if n > self.max_len {
            return Err(Error::contract(format!(
                "sequence length {n} exceeds max {}",
                self.max_len
            )));
        }
        let table = g.param(ps, self.table);
        let rows = g.slice_rows(table, 0, n)?;
        g.add(x, rows)
    }
}
