//! Finite-difference gradient oracle.
//!
//! Analytic gradients from one backward pass are compared against central
//! finite differences of the loss. The differences are evaluated by an
//! independent f64 interpreter of the recorded graph ([`Graph::replay_f64`]),
//! so the oracle is immune to f32 forward rounding and shares no code with
//! the backward pass it checks. Test support; nothing in the library
//! depends on it.

use std::collections::BTreeMap;

use super::{Graph, ParamId, Params, Var};
use crate::error::Result;

/// Default step matching the checks' h = 1e-3 contract.
pub const DEFAULT_H: f64 = 1e-3;

#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f32,
    pub checked: usize,
    pub within_tol: usize,
}

impl GradCheckReport {
    pub fn fraction_within(&self) -> f32 {
        if self.checked == 0 {
            1.0
        } else {
            self.within_tol as f32 / self.checked as f32
        }
    }
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f32, b: f32) -> f32 {
    (a - b).abs() / f32::max(a.abs().max(b.abs()), 1e-2)
}

/// Check analytic gradients of `build` against central finite differences
/// for every coordinate of every parameter in `ids`.
///
/// `build` must construct the loss deterministically from the current
/// parameter values (fixed inputs, fixed rng draws).
pub fn check<F>(
    ps: &mut Params,
    ids: &[ParamId],
    build: F,
    h: f64,
    tol: f32,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Params) -> Result<Var>,
{
    ps.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, ps)?;
    g.backward(loss, ps)?;
    let analytic: Vec<Vec<f32>> = ids
        .iter()
        .map(|&id| ps.get(id).grad.clone().expect("gradcheck on frozen param"))
        .collect();
    ps.zero_grads();

    // Rebuild once; finite differences replay this graph in f64.
    let mut g = Graph::new();
    let loss = build(&mut g, ps)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        within_tol: 0,
    };
    for (slot, &id) in ids.iter().enumerate() {
        let base: Vec<f64> = ps.get(id).data.iter().map(|&x| x as f64).collect();
        for i in 0..base.len() {
            let mut overrides: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let mut plus = base.clone();
            plus[i] += h;
            overrides.insert(raw(id), plus);
            let lp = g.replay_f64(&overrides, loss)[0];
            let mut minus = base.clone();
            minus[i] -= h;
            overrides.insert(raw(id), minus);
            let lm = g.replay_f64(&overrides, loss)[0];
            let fd = ((lp - lm) / (2.0 * h)) as f32;
            let err = rel_err(fd, analytic[slot][i]);
            report.checked += 1;
            if err <= tol {
                report.within_tol += 1;
            }
            if err > report.max_rel_err {
                report.max_rel_err = err;
            }
        }
    }
    Ok(report)
}

fn raw(id: ParamId) -> usize {
    // ParamId is an index newtype; the replay override map is keyed by it.
    id.index()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;
    use crate::tensor::Tensor;

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = Pcg32::new(17, 0);
        let mut ps = Params::new();
        let a = ps.register("a", Tensor::randn(vec![4, 3], 1.0, &mut rng));
        let b = ps.register("b", Tensor::randn(vec![3, 5], 1.0, &mut rng));
        let probe: Vec<f32> = (0..20).map(|_| rng.next_gaussian()).collect();
        let report = check(
            &mut ps,
            &[a, b],
            |g, ps| {
                let av = g.param(ps, a);
                let bv = g.param(ps, b);
                let c = g.matmul(av, bv)?;
                let p = g.input(vec![4, 5], probe.clone());
                let weighted = g.mul(c, p)?;
                g.sum_all(weighted)
            },
            DEFAULT_H,
            1e-3,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn tanh_gradient_at_half() {
        let mut ps = Params::new();
        let x = ps.register("x", Tensor::full(vec![1], 0.5));
        let report = check(
            &mut ps,
            &[x],
            |g, ps| {
                let xv = g.param(ps, x);
                let y = g.tanh(xv)?;
                g.sum_all(y)
            },
            DEFAULT_H,
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-3);
    }

    #[test]
    fn rmsnorm_gradient_on_random_input() {
        let mut rng = Pcg32::new(23, 1);
        let mut ps = Params::new();
        let x = ps.register("x", Tensor::randn(vec![2, 8], 1.0, &mut rng));
        let gain = ps.register("gain", Tensor::randn(vec![8], 0.5, &mut rng));
        let probe: Vec<f32> = (0..16).map(|_| rng.next_gaussian()).collect();
        let report = check(
            &mut ps,
            &[x, gain],
            |g, ps| {
                let xv = g.param(ps, x);
                let gv = g.param(ps, gain);
                let y = g.rmsnorm(xv, gv)?;
                let p = g.input(vec![2, 8], probe.clone());
                let w = g.mul(y, p)?;
                g.sum_all(w)
            },
            DEFAULT_H,
            1e-3,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn two_layer_mlp_against_finite_differences() {
        let mut rng = Pcg32::new(29, 2);
        let mut ps = Params::new();
        let w1 = ps.register("w1", Tensor::randn(vec![6, 8], 0.5, &mut rng));
        let b1 = ps.register("b1", Tensor::randn(vec![8], 0.1, &mut rng));
        let w2 = ps.register("w2", Tensor::randn(vec![8, 4], 0.5, &mut rng));
        let b2 = ps.register("b2", Tensor::randn(vec![4], 0.1, &mut rng));
        let input: Vec<f32> = (0..18).map(|_| rng.next_gaussian()).collect();
        let targets = [1u32, 3, 0];
        let report = check(
            &mut ps,
            &[w1, b1, w2, b2],
            |g, ps| {
                let x = g.input(vec![3, 6], input.clone());
                let w1v = g.param(ps, w1);
                let b1v = g.param(ps, b1);
                let w2v = g.param(ps, w2);
                let b2v = g.param(ps, b2);
                let h = g.matmul(x, w1v)?;
                let h = g.add(h, b1v)?;
                let h = g.gelu(h)?;
                let o = g.matmul(h, w2v)?;
                let o = g.add(o, b2v)?;
                g.masked_cross_entropy(o, &targets, &[1.0, 1.0, 1.0])
            },
            DEFAULT_H,
            1e-3,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {}",
            report.max_rel_err
        );
        assert_eq!(report.fraction_within(), 1.0);
    }
}
