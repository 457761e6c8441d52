//! Finite scalar quantization.
//!
//! Each channel is bounded to (-floor(L/2), floor(L/2)) by a scaled tanh,
//! rounded to the integer lattice, and shifted to a digit in [0, L). The
//! cartesian product of levels forms an implicit codebook; digits pack
//! into a flat index in mixed radix. Rounding is straight-through: its
//! backward is the identity on the bounded value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsqConfig {
    pub levels: Vec<u32>,
}

impl FsqConfig {
    /// All levels must be odd and >= 3 so zero sits at a lattice point and
    /// no half-integer offset is needed.
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::contract("FSQ needs at least one level"));
        }
        if levels.iter().any(|&l| l < 3 || l % 2 == 0) {
            return Err(Error::contract(format!(
                "FSQ levels must be odd and >= 3, got {levels:?}"
            )));
        }
        Ok(FsqConfig { levels })
    }

    /// Desk-scale default: 3 channels of 5 levels, K = 125.
    pub fn toy() -> Self {
        FsqConfig::new(vec![5, 5, 5]).unwrap()
    }

    /// Large-codebook preset: 5 channels of 9 levels, K = 59049 (the
    /// nearest odd-level lattice to a 64K codebook).
    pub fn large() -> Self {
        FsqConfig::new(vec![9, 9, 9, 9, 9]).unwrap()
    }

    pub fn channels(&self) -> usize {
        self.levels.len()
    }

    pub fn codebook_size(&self) -> u32 {
        self.levels.iter().product()
    }

    pub fn half_levels(&self) -> Vec<f32> {
        self.levels.iter().map(|&l| (l / 2) as f32).collect()
    }
}

/// Bound each channel into its lattice range: floor(L/2) * tanh(z).
pub fn fsq_bound(g: &mut Graph, z: Var, cfg: &FsqConfig) -> Result<Var> {
    let c = cfg.channels();
    let cols = *g.shape(z).last().unwrap();
    if cols != c {
        return Err(Error::dim(format!(
            "fsq input has {cols} channels, config has {c}"
        )));
    }
    let t = g.tanh(z)?;
    let bounds = g.input(vec![c], cfg.half_levels());
    g.mul_rowvec(t, bounds)
}

/// Quantize: round the bounded value (straight-through backward) and read
/// the integer digits out as codes in [0, L) per channel.
pub fn fsq_quantize(g: &mut Graph, z: Var, cfg: &FsqConfig) -> Result<(Vec<Vec<u32>>, Var)> {
    let bounded = fsq_bound(g, z, cfg)?;
    let quantized = g.ste_round(bounded)?;
    let c = cfg.channels();
    let half = cfg.half_levels();
    let rows = g.value(quantized).len() / c;
    let mut codes = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &g.value(quantized)[r * c..(r + 1) * c];
        codes.push(
            row.iter()
                .enumerate()
                .map(|(i, &v)| (v + half[i]) as u32)
                .collect(),
        );
    }
    Ok((codes, quantized))
}

/// Lattice values for a digit vector: code - floor(L/2) per channel.
pub fn codes_to_lattice(codes: &[u32], cfg: &FsqConfig) -> Result<Vec<f32>> {
    if codes.len() != cfg.channels() {
        return Err(Error::dim("code length != channel count"));
    }
    Ok(codes
        .iter()
        .zip(&cfg.levels)
        .map(|(&c, &l)| c as f32 - (l / 2) as f32)
        .collect())
}

/// Mixed-radix packing: idx = sum_i codes[i] * prod_{j<i} levels[j].
pub fn code_to_index(codes: &[u32], cfg: &FsqConfig) -> Result<u32> {
    if codes.len() != cfg.channels() {
        return Err(Error::contract(format!(
            "expected {} digits, got {}",
            cfg.channels(),
            codes.len()
        )));
    }
    let mut idx = 0u32;
    let mut base = 1u32;
    for (&c, &l) in codes.iter().zip(&cfg.levels) {
        if c >= l {
            return Err(Error::contract(format!("digit {c} out of range 0..{l}")));
        }
        idx += c * base;
        base *= l;
    }
    Ok(idx)
}

pub fn index_to_code(idx: u32, cfg: &FsqConfig) -> Result<Vec<u32>> {
    if idx >= cfg.codebook_size() {
        return Err(Error::contract(format!(
            "index {idx} out of codebook 0..{}",
            cfg.codebook_size()
        )));
    }
    let mut rem = idx;
    let mut out = Vec::with_capacity(cfg.channels());
    for &l in &cfg.levels {
        out.push(rem % l);
        rem /= l;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Params;

    #[test]
    fn config_contract() {
        assert!(FsqConfig::new(vec![5, 5, 5]).is_ok());
        assert!(FsqConfig::new(vec![4, 5]).is_err());
        assert!(FsqConfig::new(vec![1]).is_err());
        assert!(FsqConfig::new(vec![]).is_err());
        assert_eq!(FsqConfig::toy().codebook_size(), 125);
        assert_eq!(FsqConfig::large().codebook_size(), 59049);
    }

    #[test]
    fn bound_limits() {
        let cfg = FsqConfig::new(vec![5, 3]).unwrap();
        let mut g = Graph::new();
        let z = g.input(vec![2, 2], vec![0.0, 0.0, 10.0, -10.0]);
        let b = fsq_bound(&mut g, z, &cfg).unwrap();
        let v = g.value(b);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 2.0).abs() < 1e-4); // 2*tanh(10) ~ 2
        assert!((v[3] + 1.0).abs() < 1e-4); // 1*tanh(-10) ~ -1
    }

    #[test]
    fn quantize_center_and_idempotence() {
        let cfg = FsqConfig::toy();
        let mut g = Graph::new();
        let z = g.input(vec![1, 3], vec![0.0, 0.0, 0.0]);
        let (codes, q) = fsq_quantize(&mut g, z, &cfg).unwrap();
        assert_eq!(codes[0], vec![2, 2, 2]); // floor(5/2) = center
        assert_eq!(g.value(q), &[0.0, 0.0, 0.0]);

        // Re-quantizing the dequantized lattice point of every code returns
        // the same code. The lattice point is the rounded tanh-bounded value,
        // so feed its exact preimage atanh(v / half).
        for idx in 0..cfg.codebook_size() {
            let code = index_to_code(idx, &cfg).unwrap();
            let lattice = codes_to_lattice(&code, &cfg).unwrap();
            let z: Vec<f32> = lattice
                .iter()
                .zip(cfg.half_levels())
                .map(|(&v, h)| (v / h).clamp(-0.999_999, 0.999_999).atanh())
                .collect();
            let mut g = Graph::new();
            let zv = g.input(vec![1, 3], z);
            let (codes, _) = fsq_quantize(&mut g, zv, &cfg).unwrap();
            assert_eq!(codes[0], code, "code {idx} did not roundtrip");
        }
    }

    #[test]
    fn straight_through_gradient_identity() {
        // d sum(quantized) / dz equals d sum(bound) / dz exactly.
        let zdata = vec![0.3, -1.2, 2.4];
        let cfg = FsqConfig::toy();

        let mut ps = Params::new();
        let mut g = Graph::new();
        let z = g.input_grad(vec![1, 3], zdata.clone());
        let (_, q) = fsq_quantize(&mut g, z, &cfg).unwrap();
        let s = g.sum_all(q).unwrap();
        let grads = g.backward(s, &mut ps).unwrap();
        let grad_q = grads.get(z).unwrap().to_vec();

        let mut g = Graph::new();
        let z = g.input_grad(vec![1, 3], zdata);
        let b = fsq_bound(&mut g, z, &cfg).unwrap();
        let s = g.sum_all(b).unwrap();
        let grads = g.backward(s, &mut ps).unwrap();
        let grad_b = grads.get(z).unwrap().to_vec();

        assert_eq!(grad_q, grad_b);
    }

    #[test]
    fn index_packing_bijection() {
        let cfg = FsqConfig::toy();
        assert_eq!(code_to_index(&[0, 0, 0], &cfg).unwrap(), 0);
        assert_eq!(code_to_index(&[2, 1, 0], &cfg).unwrap(), 7);
        for idx in 0..cfg.codebook_size() {
            let code = index_to_code(idx, &cfg).unwrap();
            assert_eq!(code_to_index(&code, &cfg).unwrap(), idx);
        }
        assert!(code_to_index(&[5, 0, 0], &cfg).is_err());
        assert!(index_to_code(125, &cfg).is_err());
    }

    #[test]
    fn lattice_membership() {
        let cfg = FsqConfig::toy();
        let mut rng = crate::rng::Pcg32::new(9, 9);
        let z: Vec<f32> = (0..60).map(|_| rng.next_gaussian() * 3.0).collect();
        let mut g = Graph::new();
        let zv = g.input(vec![20, 3], z);
        let (_, q) = fsq_quantize(&mut g, zv, &cfg).unwrap();
        for &v in g.value(q) {
            assert!(v >= -2.0 && v <= 2.0 && v.fract() == 0.0, "off-lattice {v}");
        }
    }
}
