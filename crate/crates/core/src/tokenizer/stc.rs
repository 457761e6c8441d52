//! Spatial-to-Channel rearrangement.
//!
//! Folds each 3x3 block of grid tokens into one token with 9x the channel
//! width: token count drops by exactly 9, no parameters. Block cells are
//! taken in row-major order and each cell's channels stay contiguous.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

pub const STC_BLOCK: usize = 3;

/// Row order that groups each 3x3 spatial block into 9 consecutive rows.
pub fn stc_permutation(side: usize) -> Result<Vec<usize>> {
    if side % STC_BLOCK != 0 {
        return Err(Error::dim(format!(
            "grid side {side} not divisible by {STC_BLOCK}"
        )));
    }
    let out_side = side / STC_BLOCK;
    let mut perm = Vec::with_capacity(side * side);
    for bi in 0..out_side {
        for bj in 0..out_side {
            for r in 0..STC_BLOCK {
                for c in 0..STC_BLOCK {
                    perm.push((bi * STC_BLOCK + r) * side + bj * STC_BLOCK + c);
                }
            }
        }
    }
    Ok(perm)
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// In-graph STC: [side^2, d] -> [(side/3)^2, 9d].
pub fn stc_rearrange(g: &mut Graph, x: Var, side: usize) -> Result<(Var, usize)> {
    let d = *g.shape(x).last().unwrap();
    let rows = g.shape(x)[0];
    if rows != side * side {
        return Err(Error::dim(format!(
            "expected {side}x{side} grid rows, got {rows}"
        )));
    }
    let perm = stc_permutation(side)?;
    let permuted = g.permute_rows(x, &perm)?;
    let out_side = side / STC_BLOCK;
    let out = g.reshape(permuted, vec![out_side * out_side, 9 * d])?;
    Ok((out, out_side))
}

/// Detached STC on raw row-major data.
pub fn stc_apply(data: &[f32], side: usize, d: usize) -> Result<Vec<f32>> {
    if data.len() != side * side * d {
        return Err(Error::dim("stc data length mismatch"));
    }
    let perm = stc_permutation(side)?;
    let mut out = Vec::with_capacity(data.len());
    for &p in &perm {
        out.extend_from_slice(&data[p * d..(p + 1) * d]);
    }
    Ok(out)
}

/// Inverse rearrangement: [(side/3)^2, 9d] back to [side^2, d].
pub fn stc_invert(data: &[f32], out_side: usize, d: usize) -> Result<Vec<f32>> {
    let side = out_side * STC_BLOCK;
    if data.len() != side * side * d {
        return Err(Error::dim("stc inverse data length mismatch"));
    }
    let perm = stc_permutation(side)?;
    let inv = invert(&perm);
    let mut out = Vec::with_capacity(data.len());
    for &p in &inv {
        out.extend_from_slice(&data[p * d..(p + 1) * d]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_block_ordering() {
        // 3x3 grid of scalars 1..9 folds to one token [1..9].
        let data: Vec<f32> = (1..=9).map(|i| i as f32).collect();
        let out = stc_apply(&data, 3, 1).unwrap();
        assert_eq!(out, data); // row-major block order over one block is identity
        let mut g = Graph::new();
        let x = g.input(vec![9, 1], (1..=9).map(|i| i as f32).collect());
        let (y, side) = stc_rearrange(&mut g, x, 3).unwrap();
        assert_eq!(side, 1);
        assert_eq!(g.shape(y), &[1, 9]);
        assert_eq!(g.value(y), (1..=9).map(|i| i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn toy_shape() {
        let mut g = Graph::new();
        let x = g.input(vec![144, 64], vec![0.0; 144 * 64]);
        let (y, side) = stc_rearrange(&mut g, x, 12).unwrap();
        assert_eq!(side, 4);
        assert_eq!(g.shape(y), &[16, 576]);
    }

    #[test]
    fn bijection_roundtrip() {
        let mut rng = crate::rng::Pcg32::new(12, 0);
        let side = 6;
        let d = 5;
        let data: Vec<f32> = (0..side * side * d).map(|_| rng.next_gaussian()).collect();
        let folded = stc_apply(&data, side, d).unwrap();
        let back = stc_invert(&folded, side / 3, d).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn indivisible_side_errors() {
        assert!(stc_permutation(4).is_err());
        let mut g = Graph::new();
        let x = g.input(vec![16, 2], vec![0.0; 32]);
        assert!(stc_rearrange(&mut g, x, 4).is_err());
    }

    #[test]
    fn nine_fold_token_reduction() {
        for side in [3usize, 6, 12] {
            let perm = stc_permutation(side).unwrap();
            assert_eq!(perm.len(), side * side);
            assert_eq!(perm.len() / ((side / 3) * (side / 3)), 9);
        }
    }
}
