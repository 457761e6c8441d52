//! Hybrid image tokenizer: one ViT encoder, two adapters.
//!
//! The continuous adapter feeds understanding; the discrete adapter
//! (STC + FSQ + MLP) yields generation token ids and pixel-decoder
//! conditioning. Both consume the identical post-STC encoder output.

mod adapters;
mod fsq;
mod stc;
mod train;
mod vit;

pub use adapters::{ContinuousAdapter, DiscreteAdapter};
pub use fsq::{
    code_to_index, codes_to_lattice, fsq_bound, fsq_quantize, index_to_code, FsqConfig,
};
pub use stc::{stc_apply, stc_invert, stc_permutation, stc_rearrange, STC_BLOCK};
pub use train::{
    pick_adapter, tokenizer_train_step, AdapterChoice, SmallDecoder, TokenizerBatchItem,
};
pub use vit::{image_to_patches, ViT, ViTConfig};

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::Result;
use crate::rng::Pcg32;
use crate::tensor::{Graph, Params, Var};

/// Detached grid of feature rows (side^2 rows of width dim).
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    pub side: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn tokens(&self) -> usize {
        self.side * self.side
    }
}

/// Grid of discrete codebook indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteCodes {
    pub side: usize,
    pub indices: Vec<u32>,
}

impl DiscreteCodes {
    pub fn tokens(&self) -> usize {
        self.side * self.side
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub vit: ViTConfig,
    pub fsq_levels: Vec<u32>,
    pub d_model: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vit: ViTConfig::default(),
            fsq_levels: FsqConfig::toy().levels,
            d_model: 128,
        }
    }
}

impl TokenizerConfig {
    pub fn fsq(&self) -> Result<FsqConfig> {
        FsqConfig::new(self.fsq_levels.clone())
    }

    /// Token grid side after STC.
    pub fn code_grid_side(&self) -> usize {
        self.vit.grid_side() / STC_BLOCK
    }

    pub fn code_tokens(&self) -> usize {
        self.code_grid_side() * self.code_grid_side()
    }
}

pub struct HybridTokenizer {
    pub cfg: TokenizerConfig,
    pub vit: ViT,
    pub cont: ContinuousAdapter,
    pub disc: DiscreteAdapter,
}

pub const VIT_PREFIX: &str = "tok.vit.";
pub const CONT_PREFIX: &str = "tok.cont.";
pub const DISC_PREFIX: &str = "tok.disc.";

impl HybridTokenizer {
    pub fn new(ps: &mut Params, cfg: TokenizerConfig, rng: &mut Pcg32) -> Result<Self> {
        let fsq = cfg.fsq()?;
        let vit = ViT::new(ps, "tok.vit", cfg.vit.clone(), rng)?;
        let stc_dim = 9 * cfg.vit.d_vit;
        let cont = ContinuousAdapter::new(ps, "tok.cont", stc_dim, cfg.d_model, rng);
        let disc = DiscreteAdapter::new(ps, "tok.disc", stc_dim, cfg.d_model, fsq, rng);
        Ok(HybridTokenizer {
            cfg,
            vit,
            cont,
            disc,
        })
    }

    /// ViT + STC. Both adapters consume this identical output.
    pub fn encode(&self, g: &mut Graph, ps: &Params, img: &Image) -> Result<(Var, usize)> {
        let grid = self.vit.encode(g, ps, img)?;
        stc_rearrange(g, grid, self.cfg.vit.grid_side())
    }

    pub fn continuous_from(&self, g: &mut Graph, ps: &Params, post_stc: Var) -> Result<Var> {
        self.cont.forward(g, ps, post_stc)
    }

    pub fn discrete_from(
        &self,
        g: &mut Graph,
        ps: &Params,
        post_stc: Var,
        side: usize,
    ) -> Result<(DiscreteCodes, Var)> {
        self.disc.forward(g, ps, post_stc, side)
    }

    /// Detached post-STC features, for caching when the encoder is frozen.
    pub fn encode_detached(&self, ps: &Params, img: &Image) -> Result<FeatureGrid> {
        let mut g = Graph::new();
        let (post, side) = self.encode(&mut g, ps, img)?;
        Ok(FeatureGrid {
            side,
            dim: 9 * self.cfg.vit.d_vit,
            data: g.value(post).to_vec(),
        })
    }

    /// Detached discrete codes for an image.
    pub fn codes_for_image(&self, ps: &Params, img: &Image) -> Result<DiscreteCodes> {
        let mut g = Graph::new();
        let (post, side) = self.encode(&mut g, ps, img)?;
        let (codes, _) = self.disc.forward(&mut g, ps, post, side)?;
        Ok(codes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{render, sample_scene};

    fn small_tokenizer() -> (Params, HybridTokenizer, Pcg32) {
        let mut rng = Pcg32::new(77, 0);
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
        (ps, tok, rng)
    }

    #[test]
    fn shapes_and_ranges() {
        let (ps, tok, mut rng) = small_tokenizer();
        let img = render(&sample_scene(&mut rng), 48).unwrap();
        let mut g = Graph::new();
        let (post, side) = tok.encode(&mut g, &ps, &img).unwrap();
        assert_eq!(side, 4);
        assert_eq!(g.shape(post), &[16, 144]); // 9 * d_vit
        let cont = tok.continuous_from(&mut g, &ps, post).unwrap();
        assert_eq!(g.shape(cont), &[16, 32]);
        let (codes, emb) = tok.discrete_from(&mut g, &ps, post, side).unwrap();
        assert_eq!(codes.indices.len(), 16);
        assert!(codes.indices.iter().all(|&i| i < 125));
        assert_eq!(g.shape(emb), &[16, 32]);
    }

    #[test]
    fn identical_images_identical_codes() {
        let (ps, tok, mut rng) = small_tokenizer();
        let scene = sample_scene(&mut rng);
        let img = render(&scene, 48).unwrap();
        let a = tok.codes_for_image(&ps, &img).unwrap();
        let b = tok.codes_for_image(&ps, &img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shared_encoder_feeds_both_adapters() {
        // Zeroing the encoder output changes both paths identically: feed
        // the adapters a zero grid and check both produce their zero-input
        // embedding regardless of the image.
        let (ps, tok, mut rng) = small_tokenizer();
        let img = render(&sample_scene(&mut rng), 48).unwrap();
        let mut g = Graph::new();
        let (post, side) = tok.encode(&mut g, &ps, &img).unwrap();
        // Both adapters consume the same Var: mutating upstream is
        // impossible by construction, so assert both read `post`.
        let c = tok.continuous_from(&mut g, &ps, post).unwrap();
        let (_, d) = tok.discrete_from(&mut g, &ps, post, side).unwrap();
        assert_eq!(g.shape(c), g.shape(d));
    }
}
