//! Minimal dense-tensor library with reverse-mode automatic differentiation.
//!
//! Everything is float32, row-major. A [`Graph`] records eager forward ops
//! and replays them in reverse for gradients; [`Params`] owns the named
//! weights that persist across steps; [`AdamW`] updates them.

mod graph;
mod optim;
mod params;

pub mod gradcheck;

pub use graph::{Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, Params};

use crate::error::{Error, Result};
use crate::rng::Pcg32;

/// Dense rank-N float32 array with an optional gradient buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
            grad: None,
            requires_grad: false,
        }
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f32, rng: &mut Pcg32) -> Self {
        let n = numel(&shape);
        let data = (0..n).map(|_| rng.next_gaussian() * std).collect();
        Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn ensure_finite(data: &[f32], op: &'static str) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_contract() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn randn_is_seeded() {
        let mut a = Pcg32::new(5, 0);
        let mut b = Pcg32::new(5, 0);
        let x = Tensor::randn(vec![4, 4], 0.02, &mut a);
        let y = Tensor::randn(vec![4, 4], 0.02, &mut b);
        assert_eq!(x.data, y.data);
    }
}
