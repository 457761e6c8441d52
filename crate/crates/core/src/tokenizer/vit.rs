//! Vision transformer encoder trained from scratch.
//!
//! Patch embedding + learned positional embedding + pre-norm blocks.
//! Output is the full token grid (no class token).

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::nn::{Block, Linear, PosEmbedding, RmsNorm};
use crate::rng::Pcg32;
use crate::tensor::{Graph, Params, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d_vit: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        ViTConfig {
            image_size: 48,
            patch_size: 4,
            d_vit: 64,
            depth: 4,
            heads: 4,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size % self.patch_size != 0 {
            return Err(Error::contract(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.grid_side() % 3 != 0 {
            return Err(Error::contract(format!(
                "token grid side {} not divisible by the STC block",
                self.grid_side()
            )));
        }
        if self.d_vit % self.heads != 0 {
            return Err(Error::contract("d_vit not divisible by heads"));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

/// Flatten an image into row-major patch vectors [n_patches, patch_dim].
pub fn image_to_patches(img: &Image, cfg: &ViTConfig) -> Result<Vec<f32>> {
    if img.width != cfg.image_size || img.height != cfg.image_size {
        return Err(Error::dim(format!(
            "expected {0}x{0} image, got {1}x{2}",
            cfg.image_size, img.width, img.height
        )));
    }
    let side = cfg.grid_side();
    let p = cfg.patch_size;
    let mut out = Vec::with_capacity(side * side * cfg.patch_dim());
    for py in 0..side {
        for px in 0..side {
            for dy in 0..p {
                for dx in 0..p {
                    let pix = img.pixel(px * p + dx, py * p + dy);
                    out.extend_from_slice(&pix);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ViT {
    pub cfg: ViTConfig,
    patch_proj: Linear,
    pos: PosEmbedding,
    blocks: Vec<Block>,
    final_norm: RmsNorm,
}

impl ViT {
    pub fn new(ps: &mut Params, prefix: &str, cfg: ViTConfig, rng: &mut Pcg32) -> Result<Self> {
        cfg.validate()?;
        let n_tokens = cfg.grid_side() * cfg.grid_side();
        let patch_proj = Linear::new(
            ps,
            &format!("{prefix}.patch"),
            cfg.patch_dim(),
            cfg.d_vit,
            rng,
        );
        let pos = PosEmbedding::new(ps, &format!("{prefix}.pos"), n_tokens, cfg.d_vit, rng);
        let blocks = (0..cfg.depth)
            .map(|i| {
                Block::new(
                    ps,
                    &format!("{prefix}.block{i}"),
                    cfg.d_vit,
                    cfg.heads,
                    false,
                    rng,
                )
            })
            .collect();
        let final_norm = RmsNorm::new(ps, &format!("{prefix}.final_norm"), cfg.d_vit);
        Ok(ViT {
            cfg,
            patch_proj,
            pos,
            blocks,
            final_norm,
        })
    }

    /// Encode an image to its token grid [grid_side^2, d_vit].
    pub fn encode(&self, g: &mut Graph, ps: &Params, img: &Image) -> Result<Var> {
        let patches = image_to_patches(img, &self.cfg)?;
        let n = self.cfg.grid_side() * self.cfg.grid_side();
        let x = g.input(vec![n, self.cfg.patch_dim()], patches);
        self.encode_patches(g, ps, x)
    }

    /// Encode pre-flattened patch vectors (the permutation test feeds
    /// these directly).
    pub fn encode_patches(&self, g: &mut Graph, ps: &Params, patches: Var) -> Result<Var> {
        let mut x = self.patch_proj.forward(g, ps, patches)?;
        x = self.pos.add_to(g, ps, x)?;
        for b in &self.blocks {
            x = b.forward(g, ps, x)?;
        }
        self.final_norm.forward(g, ps, x)
    }

    /// Name of the positional-embedding parameter (tests zero it).
    pub fn pos_param(&self) -> crate::tensor::ParamId {
        self.pos.table
    }
}
