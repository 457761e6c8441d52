//! Eager tape: ops execute at record time, backward replays in reverse.
//!
//! Tensors inside a graph are rank-1 or rank-2 (sequences of feature rows).
//! Scalars are shape [1]. A graph lives for one forward/backward and is
//! consumed by [`Graph::backward`], so no state leaks across steps.

use rayon::prelude::*;

use super::params::{ParamId, Params};
use super::{ensure_finite, numel};
use crate::error::{Error, Result};

/// Tanh-approximation constant sqrt(2/pi) used by gelu.
pub const GELU_C: f32 = 0.7978845608;
const GELU_CUBIC: f32 = 0.044715;
const RMSNORM_EPS: f32 = 1e-5;

/// Row count below which matmul stays single-threaded.
const PAR_MIN_WORK: usize = 1 << 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    AddRowVec { x: Var, v: Var },
    Mul { a: Var, b: Var },
    MulRowVec { x: Var, v: Var },
    Neg { x: Var },
    Scale { x: Var, c: f32 },
    AddConst { x: Var, c: f32 },
    Gelu { x: Var },
    Tanh { x: Var },
    RmsNorm { x: Var, gain: Var },
    SoftmaxRows { x: Var, causal: bool },
    MaskedCe { logits: Var, targets: Vec<u32>, mask: Vec<f32>, probs: Vec<f32> },
    MeanSqDiff { a: Var, b: Var },
    SumAll { x: Var },
    SteRound { x: Var },
    GatherRows { table: Var, ids: Vec<usize> },
    PermuteRows { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of non-parameter leaves, returned by backward for inspection.
pub struct LeafGrads {
    grads: Vec<Option<Vec<f32>>>,
}

impl LeafGrads {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("rank-{} tensor where rank<=2 expected", shape.len()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f32 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// True if any recorded op is a straight-through rounding (FSQ path).
    pub fn contains_ste_round(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.op, Op::SteRound { .. }))
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            op,
            shape,
            data,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        op: Op,
        opname: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
    ) -> Result<Var> {
        ensure_finite(&data, opname)?;
        Ok(self.push(op, shape, data, requires_grad))
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Constant input (no gradient).
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Var {
        assert_eq!(numel(&shape), data.len());
        self.push(Op::Leaf { param: None }, shape, data, false)
    }

    /// Input that collects a gradient, readable from [`LeafGrads`].
    pub fn input_grad(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Var {
        assert_eq!(numel(&shape), data.len());
        self.push(Op::Leaf { param: None }, shape, data, true)
    }

    /// Import a registered parameter. Gradients flow back into the store
    /// unless the parameter is frozen.
    pub fn param(&mut self, ps: &Params, id: ParamId) -> Var {
        let t = ps.get(id);
        self.push(
            Op::Leaf { param: Some(id) },
            t.shape.clone(),
            t.data.clone(),
            t.requires_grad,
        )
    }

    pub fn scalar_input(&mut self, value: f32) -> Var {
        self.input(vec![1], vec![value])
    }

    // ── Ops ──────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = rows_cols(self.shape(a));
        let (kb, n) = rows_cols(self.shape(b));
        if ka != kb {
            return Err(Error::dim(format!(
                "matmul {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = mm_nn(self.value(a), self.value(b), m, ka, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked(Op::Matmul { a, b }, "matmul", vec![m, n], out, rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(x));
        let out = transpose_raw(self.value(x), m, n);
        let rg = self.requires_grad(x);
        self.push_checked(Op::Transpose { x }, "transpose", vec![n, m], out, rg)
    }

    /// Elementwise sum; also accepts [n,d] + [d] (row-vector broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) == self.shape(b) {
            let out: Vec<f32> = self
                .value(a)
                .iter()
                .zip(self.value(b))
                .map(|(x, y)| x + y)
                .collect();
            let rg = self.requires_grad(a) || self.requires_grad(b);
            let shape = self.shape(a).to_vec();
            return self.push_checked(Op::Add { a, b }, "add", shape, out, rg);
        }
        self.add_rowvec(a, b)
    }

    fn broadcast_check(&self, x: Var, v: Var, opname: &str) -> Result<(usize, usize)> {
        let (n, d) = rows_cols(self.shape(x));
        let (vr, vd) = rows_cols(self.shape(v));
        if vr != 1 || vd != d {
            return Err(Error::dim(format!(
                "{opname}: {:?} with {:?} is not broadcastable",
                self.shape(x),
                self.shape(v)
            )));
        }
        Ok((n, d))
    }

    /// x[n,d] + v[d] broadcast over rows.
    pub fn add_rowvec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (n, d) = self.broadcast_check(x, v, "add")?;
        let mut out = self.value(x).to_vec();
        let vv = self.value(v).to_vec();
        for r in 0..n {
            for (o, y) in out[r * d..(r + 1) * d].iter_mut().zip(&vv) {
                *o += y;
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(v);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::AddRowVec { x, v }, "add", shape, out, rg)
    }

    /// Hadamard product; also accepts [n,d] * [d] (row-vector broadcast).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) == self.shape(b) {
            let out: Vec<f32> = self
                .value(a)
                .iter()
                .zip(self.value(b))
                .map(|(x, y)| x * y)
                .collect();
            let rg = self.requires_grad(a) || self.requires_grad(b);
            let shape = self.shape(a).to_vec();
            return self.push_checked(Op::Mul { a, b }, "mul", shape, out, rg);
        }
        self.mul_rowvec(a, b)
    }

    /// x[n,d] * v[d] broadcast over rows.
    pub fn mul_rowvec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (n, d) = self.broadcast_check(x, v, "mul")?;
        let mut out = self.value(x).to_vec();
        let vv = self.value(v).to_vec();
        for r in 0..n {
            for (o, y) in out[r * d..(r + 1) * d].iter_mut().zip(&vv) {
                *o *= y;
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(v);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::MulRowVec { x, v }, "mul", shape, out, rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f32> = self.value(x).iter().map(|v| -v).collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::Neg { x }, "neg", shape, out, rg)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let out: Vec<f32> = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::Scale { x, c }, "scale", shape, out, rg)
    }

    pub fn add_const(&mut self, x: Var, c: f32) -> Result<Var> {
        let out: Vec<f32> = self.value(x).iter().map(|v| v + c).collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::AddConst { x, c }, "add_const", shape, out, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f32> = self.value(x).iter().map(|&v| gelu_fwd(v)).collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::Gelu { x }, "gelu", shape, out, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f32> = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::Tanh { x }, "tanh", shape, out, rg)
    }

    /// Row-wise RMS normalization scaled by a gain vector:
    /// y = x / sqrt(mean(x^2) + eps) * gain.
    pub fn rmsnorm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (n, d) = rows_cols(self.shape(x));
        let (gr, gd) = rows_cols(self.shape(gain));
        if gr != 1 || gd != d {
            return Err(Error::dim(format!(
                "rmsnorm gain {:?} for input {:?}",
                self.shape(gain),
                self.shape(x)
            )));
        }
        let gv = self.value(gain).to_vec();
        let xv = self.value(x);
        let mut out = vec![0.0f32; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f32>() / d as f32;
            let inv = 1.0 / (ms + RMSNORM_EPS).sqrt();
            for j in 0..d {
                out[r * d + j] = row[j] * inv * gv[j];
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(gain);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::RmsNorm { x, gain }, "rmsnorm", shape, out, rg)
    }

    /// Row-wise softmax; with `causal`, entry (i, j) for j > i is masked out.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Result<Var> {
        let (n, d) = rows_cols(self.shape(x));
        if causal && n != d {
            return Err(Error::dim("causal softmax requires a square matrix"));
        }
        let xv = self.value(x);
        let mut out = vec![0.0f32; n * d];
        for r in 0..n {
            let limit = if causal { r + 1 } else { d };
            let row = &xv[r * d..r * d + limit];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for j in 0..limit {
                let e = (row[j] - max).exp();
                out[r * d + j] = e;
                sum += e;
            }
            for j in 0..limit {
                out[r * d + j] /= sum;
            }
        }
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::SoftmaxRows { x, causal }, "softmax", shape, out, rg)
    }

    /// Masked mean cross-entropy over rows of logits:
    /// sum_i mask_i * CE_i / sum_i mask_i.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[f32],
    ) -> Result<Var> {
        let (n, v) = rows_cols(self.shape(logits));
        if targets.len() != n || mask.len() != n {
            return Err(Error::dim(format!(
                "cross entropy: {n} logit rows, {} targets, {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        if targets.iter().any(|&t| t as usize >= v) {
            return Err(Error::contract("cross entropy target out of range"));
        }
        let mask_sum: f32 = mask.iter().sum();
        if mask_sum <= 0.0 {
            return Err(Error::DegenerateLoss);
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0f32; n * v];
        let mut loss = 0.0f64;
        for r in 0..n {
            let row = &lv[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[r * v + j] = e;
                sum += e;
            }
            for j in 0..v {
                probs[r * v + j] /= sum;
            }
            if mask[r] != 0.0 {
                let lse = sum.ln() + max;
                let ce = lse - row[targets[r] as usize];
                loss += (mask[r] * ce) as f64;
            }
        }
        let loss = (loss / mask_sum as f64) as f32;
        let rg = self.requires_grad(logits);
        self.push_checked(
            Op::MaskedCe {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            "cross_entropy",
            vec![1],
            vec![loss],
            rg,
        )
    }

    /// Mean squared difference over all elements.
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "mean_sq_diff {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = self.value(a).len();
        let loss = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked(
            Op::MeanSqDiff { a, b },
            "mean_sq_diff",
            vec![1],
            vec![loss as f32],
            rg,
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f32 = self.value(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push_checked(Op::SumAll { x }, "sum", vec![1], vec![s], rg)
    }

    /// Round to nearest integer; backward is the identity (straight-through).
    pub fn ste_round(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f32> = self.value(x).iter().map(|v| v.round()).collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push_checked(Op::SteRound { x }, "ste_round", shape, out, rg)
    }

    /// Embedding lookup: out row r = table row ids[r].
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = rows_cols(self.shape(table));
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range 0..{n}"
            )));
        }
        let tv = self.value(table);
        let mut out = vec![0.0f32; ids.len() * d];
        for (r, &i) in ids.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad(table);
        self.push_checked(
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            "gather_rows",
            vec![ids.len(), d],
            out,
            rg,
        )
    }

    /// Row gather by permutation: out row r = x row perm[r].
    pub fn permute_rows(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let (n, d) = rows_cols(self.shape(x));
        if let Some(&bad) = perm.iter().find(|&&i| i >= n) {
            return Err(Error::dim(format!("permutation index {bad} out of {n}")));
        }
        let xv = self.value(x);
        let mut out = vec![0.0f32; perm.len() * d];
        for (r, &i) in perm.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&xv[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad(x);
        self.push_checked(
            Op::PermuteRows {
                x,
                perm: perm.to_vec(),
            },
            "permute_rows",
            vec![perm.len(), d],
            out,
            rg,
        )
    }

    /// Reinterpret the flat row-major buffer under a new shape.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {:?}",
                self.shape(x),
                shape
            )));
        }
        let data = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(Op::Reshape { x }, shape, data, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = rows_cols(self.shape(x));
        if start + len > n {
            return Err(Error::dim(format!(
                "slice_rows {start}..{} of {n} rows",
                start + len
            )));
        }
        let data = self.value(x)[start * d..(start + len) * d].to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(Op::SliceRows { x, start }, vec![len, d], data, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = rows_cols(self.shape(x));
        if start + len > d {
            return Err(Error::dim(format!(
                "slice_cols {start}..{} of {d} cols",
                start + len
            )));
        }
        let xv = self.value(x);
        let mut out = vec![0.0f32; n * len];
        for r in 0..n {
            out[r * len..(r + 1) * len].copy_from_slice(&xv[r * d + start..r * d + start + len]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Op::SliceCols { x, start }, vec![n, len], out, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero parts"));
        }
        let (_, d) = rows_cols(self.shape(parts[0]));
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for &p in parts {
            let (pr, pd) = rows_cols(self.shape(p));
            if pd != d {
                return Err(Error::dim("concat_rows column mismatch"));
            }
            data.extend_from_slice(self.value(p));
            rows += pr;
            rg |= self.requires_grad(p);
        }
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            vec![rows, d],
            data,
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero parts"));
        }
        let (n, _) = rows_cols(self.shape(parts[0]));
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| rows_cols(self.shape(p)).1)
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0f32; n * total];
        let mut rg = false;
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let (pr, _) = rows_cols(self.shape(p));
            if pr != n {
                return Err(Error::dim("concat_cols row mismatch"));
            }
            let pv = self.value(p);
            for r in 0..n {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            rg |= self.requires_grad(p);
            off += w;
        }
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            vec![n, total],
            data,
            rg,
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Consumes the graph;
    /// parameter gradients accumulate into `ps`, leaf gradients are
    /// returned for inspection.
    pub fn backward(self, loss: Var, ps: &mut Params) -> Result<LeafGrads> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract("backward requires a scalar loss"));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n_nodes];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n_nodes).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let gout = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &gout, &mut grads);
            // Leaf grads are kept for param flush / inspection.
            if matches!(self.nodes[i].op, Op::Leaf { .. }) {
                grads[i] = Some(gout);
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads[i] {
                    ps.accumulate_grad(id, g)?;
                }
            }
        }
        Ok(LeafGrads { grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<f32>>], v: Var, delta: &[f32]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        match slot {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn backprop_node(&self, i: usize, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Matmul { a, b } => {
                let (m, k) = rows_cols(self.shape(*a));
                let (_, n) = rows_cols(self.shape(*b));
                if self.requires_grad(*a) {
                    let da = mm_nt(gout, self.value(*b), m, n, k);
                    self.accum(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let db = mm_tn(self.value(*a), gout, m, k, n);
                    self.accum(grads, *b, &db);
                }
            }
            Op::Transpose { x } => {
                let (m, n) = rows_cols(self.shape(*x));
                // node is [n, m]; transpose gout back to [m, n]
                let dx = transpose_raw(gout, n, m);
                self.accum(grads, *x, &dx);
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, gout);
                self.accum(grads, *b, gout);
            }
            Op::AddRowVec { x, v } => {
                self.accum(grads, *x, gout);
                if self.requires_grad(*v) {
                    let (n, d) = rows_cols(&node.shape);
                    let mut dv = vec![0.0f32; d];
                    for r in 0..n {
                        for j in 0..d {
                            dv[j] += gout[r * d + j];
                        }
                    }
                    self.accum(grads, *v, &dv);
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad(*a) {
                    let da: Vec<f32> = gout
                        .iter()
                        .zip(self.value(*b))
                        .map(|(g, y)| g * y)
                        .collect();
                    self.accum(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let db: Vec<f32> = gout
                        .iter()
                        .zip(self.value(*a))
                        .map(|(g, x)| g * x)
                        .collect();
                    self.accum(grads, *b, &db);
                }
            }
            Op::MulRowVec { x, v } => {
                let (n, d) = rows_cols(&node.shape);
                let vv = self.value(*v);
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0f32; n * d];
                    for r in 0..n {
                        for j in 0..d {
                            dx[r * d + j] = gout[r * d + j] * vv[j];
                        }
                    }
                    self.accum(grads, *x, &dx);
                }
                if self.requires_grad(*v) {
                    let xv = self.value(*x);
                    let mut dv = vec![0.0f32; d];
                    for r in 0..n {
                        for j in 0..d {
                            dv[j] += gout[r * d + j] * xv[r * d + j];
                        }
                    }
                    self.accum(grads, *v, &dv);
                }
            }
            Op::Neg { x } => {
                let dx: Vec<f32> = gout.iter().map(|g| -g).collect();
                self.accum(grads, *x, &dx);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f32> = gout.iter().map(|g| g * c).collect();
                self.accum(grads, *x, &dx);
            }
            Op::AddConst { x, .. } => {
                self.accum(grads, *x, gout);
            }
            Op::Gelu { x } => {
                let dx: Vec<f32> = gout
                    .iter()
                    .zip(self.value(*x))
                    .map(|(g, &v)| g * gelu_bwd(v))
                    .collect();
                self.accum(grads, *x, &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<f32> = gout
                    .iter()
                    .zip(&node.data)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accum(grads, *x, &dx);
            }
            Op::RmsNorm { x, gain } => {
                let (n, d) = rows_cols(&node.shape);
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let mut dx = vec![0.0f32; n * d];
                let mut dg = vec![0.0f32; d];
                for r in 0..n {
                    let row = &xv[r * d..(r + 1) * d];
                    let go = &gout[r * d..(r + 1) * d];
                    let ms = row.iter().map(|v| v * v).sum::<f32>() / d as f32;
                    let rms = (ms + RMSNORM_EPS).sqrt();
                    let inv = 1.0 / rms;
                    // s = sum_j gout_j * gain_j * x_j
                    let s: f32 = (0..d).map(|j| go[j] * gv[j] * row[j]).sum();
                    let coeff = s * inv * inv * inv / d as f32;
                    for j in 0..d {
                        dx[r * d + j] = go[j] * gv[j] * inv - row[j] * coeff;
                        dg[j] += go[j] * row[j] * inv;
                    }
                }
                self.accum(grads, *x, &dx);
                if self.requires_grad(*gain) {
                    self.accum(grads, *gain, &dg);
                }
            }
            Op::SoftmaxRows { x, .. } => {
                let (n, d) = rows_cols(&node.shape);
                let y = &node.data;
                let mut dx = vec![0.0f32; n * d];
                for r in 0..n {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gout[r * d..(r + 1) * d];
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(grads, *x, &dx);
            }
            Op::MaskedCe {
                logits,
                targets,
                mask,
                probs,
            } => {
                let (n, v) = rows_cols(self.shape(*logits));
                let mask_sum: f32 = mask.iter().sum();
                let g = gout[0] / mask_sum;
                let mut dl = vec![0.0f32; n * v];
                for r in 0..n {
                    if mask[r] == 0.0 {
                        continue;
                    }
                    let w = g * mask[r];
                    for j in 0..v {
                        dl[r * v + j] = w * probs[r * v + j];
                    }
                    dl[r * v + targets[r] as usize] -= w;
                }
                self.accum(grads, *logits, &dl);
            }
            Op::MeanSqDiff { a, b } => {
                let n = self.value(*a).len() as f32;
                let g = gout[0] * 2.0 / n;
                if self.requires_grad(*a) {
                    let da: Vec<f32> = self
                        .value(*a)
                        .iter()
                        .zip(self.value(*b))
                        .map(|(x, y)| g * (x - y))
                        .collect();
                    self.accum(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let db: Vec<f32> = self
                        .value(*a)
                        .iter()
                        .zip(self.value(*b))
                        .map(|(x, y)| -g * (x - y))
                        .collect();
                    self.accum(grads, *b, &db);
                }
            }
            Op::SumAll { x } => {
                let dx = vec![gout[0]; self.value(*x).len()];
                self.accum(grads, *x, &dx);
            }
            Op::SteRound { x } => {
                self.accum(grads, *x, gout);
            }
            Op::GatherRows { table, ids } => {
                if self.requires_grad(*table) {
                    let (n, d) = rows_cols(self.shape(*table));
                    let mut dt = vec![0.0f32; n * d];
                    for (r, &idx) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[idx * d + j] += gout[r * d + j];
                        }
                    }
                    self.accum(grads, *table, &dt);
                }
            }
            Op::PermuteRows { x, perm } => {
                let (n, d) = rows_cols(self.shape(*x));
                let mut dx = vec![0.0f32; n * d];
                for (r, &idx) in perm.iter().enumerate() {
                    for j in 0..d {
                        dx[idx * d + j] += gout[r * d + j];
                    }
                }
                self.accum(grads, *x, &dx);
            }
            Op::Reshape { x } => {
                self.accum(grads, *x, gout);
            }
            Op::SliceRows { x, start } => {
                let (n, d) = rows_cols(self.shape(*x));
                let (len, _) = rows_cols(&node.shape);
                let mut dx = vec![0.0f32; n * d];
                dx[start * d..(start + len) * d].copy_from_slice(gout);
                self.accum(grads, *x, &dx);
            }
            Op::SliceCols { x, start } => {
                let (n, d) = rows_cols(self.shape(*x));
                let (_, len) = rows_cols(&node.shape);
                let mut dx = vec![0.0f32; n * d];
                for r in 0..n {
                    dx[r * d + start..r * d + start + len]
                        .copy_from_slice(&gout[r * len..(r + 1) * len]);
                }
                self.accum(grads, *x, &dx);
            }
            Op::ConcatRows { parts } => {
                let (_, d) = rows_cols(&node.shape);
                let mut off = 0;
                for &p in parts {
                    let (pr, _) = rows_cols(self.shape(p));
                    self.accum(grads, p, &gout[off * d..(off + pr) * d]);
                    off += pr;
                }
            }
            Op::ConcatCols { parts } => {
                let (n, total) = rows_cols(&node.shape);
                let mut off = 0;
                for &p in parts {
                    let (_, w) = rows_cols(self.shape(p));
                    if self.requires_grad(p) {
                        let mut dp = vec![0.0f32; n * w];
                        for r in 0..n {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&gout[r * total + off..r * total + off + w]);
                        }
                        self.accum(grads, p, &dp);
                    }
                    off += w;
                }
            }
        }
    }
}

// ── f64 replay ──────────────────────────────────────────────────────

impl Graph {
    /// Re-evaluate the recorded program in f64, substituting data for
    /// parameter-bound leaves from `overrides`. This is an independent
    /// forward interpreter used by the finite-difference oracle; op
    /// metadata (targets, masks, permutations) is structural, so the
    /// replay only depends on leaf values.
    pub fn replay_f64(
        &self,
        overrides: &std::collections::BTreeMap<usize, Vec<f64>>,
        target: Var,
    ) -> Vec<f64> {
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let out: Vec<f64> = match &node.op {
                Op::Leaf { param } => {
                    let key = param.map(|p| p.0).unwrap_or(usize::MAX);
                    match overrides.get(&key) {
                        Some(v) => v.clone(),
                        None => node.data.iter().map(|&x| x as f64).collect(),
                    }
                }
                Op::Matmul { a, b } => {
                    let (m, k) = rows_cols(self.shape(*a));
                    let (_, n) = rows_cols(self.shape(*b));
                    let (av, bv) = (&vals[a.0], &vals[b.0]);
                    let mut c = vec![0.0f64; m * n];
                    for r in 0..m {
                        for p in 0..k {
                            let ap = av[r * k + p];
                            for j in 0..n {
                                c[r * n + j] += ap * bv[p * n + j];
                            }
                        }
                    }
                    c
                }
                Op::Transpose { x } => {
                    let (m, n) = rows_cols(self.shape(*x));
                    let xv = &vals[x.0];
                    let mut out = vec![0.0f64; m * n];
                    for r in 0..m {
                        for j in 0..n {
                            out[j * m + r] = xv[r * n + j];
                        }
                    }
                    out
                }
                Op::Add { a, b } => vals[a.0]
                    .iter()
                    .zip(&vals[b.0])
                    .map(|(x, y)| x + y)
                    .collect(),
                Op::AddRowVec { x, v } => {
                    let (n, d) = rows_cols(&node.shape);
                    let (xv, vv) = (&vals[x.0], &vals[v.0]);
                    (0..n * d).map(|i| xv[i] + vv[i % d]).collect()
                }
                Op::Mul { a, b } => vals[a.0]
                    .iter()
                    .zip(&vals[b.0])
                    .map(|(x, y)| x * y)
                    .collect(),
                Op::MulRowVec { x, v } => {
                    let (n, d) = rows_cols(&node.shape);
                    let (xv, vv) = (&vals[x.0], &vals[v.0]);
                    (0..n * d).map(|i| xv[i] * vv[i % d]).collect()
                }
                Op::Neg { x } => vals[x.0].iter().map(|v| -v).collect(),
                Op::Scale { x, c } => vals[x.0].iter().map(|v| v * *c as f64).collect(),
                Op::AddConst { x, c } => vals[x.0].iter().map(|v| v + *c as f64).collect(),
                Op::Gelu { x } => vals[x.0]
                    .iter()
                    .map(|&v| {
                        let u = GELU_C as f64 * (v + GELU_CUBIC as f64 * v * v * v);
                        0.5 * v * (1.0 + u.tanh())
                    })
                    .collect(),
                Op::Tanh { x } => vals[x.0].iter().map(|v| v.tanh()).collect(),
                Op::RmsNorm { x, gain } => {
                    let (n, d) = rows_cols(&node.shape);
                    let (xv, gv) = (&vals[x.0], &vals[gain.0]);
                    let mut out = vec![0.0f64; n * d];
                    for r in 0..n {
                        let row = &xv[r * d..(r + 1) * d];
                        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
                        let inv = 1.0 / (ms + RMSNORM_EPS as f64).sqrt();
                        for j in 0..d {
                            out[r * d + j] = row[j] * inv * gv[j];
                        }
                    }
                    out
                }
                Op::SoftmaxRows { x, causal } => {
                    let (n, d) = rows_cols(&node.shape);
                    let xv = &vals[x.0];
                    let mut out = vec![0.0f64; n * d];
                    for r in 0..n {
                        let limit = if *causal { r + 1 } else { d };
                        let row = &xv[r * d..r * d + limit];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for j in 0..limit {
                            let e = (row[j] - max).exp();
                            out[r * d + j] = e;
                            sum += e;
                        }
                        for j in 0..limit {
                            out[r * d + j] /= sum;
                        }
                    }
                    out
                }
                Op::MaskedCe {
                    logits,
                    targets,
                    mask,
                    ..
                } => {
                    let (n, v) = rows_cols(self.shape(*logits));
                    let lv = &vals[logits.0];
                    let mask_sum: f64 = mask.iter().map(|&m| m as f64).sum();
                    let mut loss = 0.0f64;
                    for r in 0..n {
                        if mask[r] == 0.0 {
                            continue;
                        }
                        let row = &lv[r * v..(r + 1) * v];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse =
                            row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
                        loss += mask[r] as f64 * (lse - row[targets[r] as usize]);
                    }
                    vec![loss / mask_sum]
                }
                Op::MeanSqDiff { a, b } => {
                    let n = vals[a.0].len();
                    let s: f64 = vals[a.0]
                        .iter()
                        .zip(&vals[b.0])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    vec![s / n as f64]
                }
                Op::SumAll { x } => vec![vals[x.0].iter().sum()],
                Op::SteRound { x } => vals[x.0].iter().map(|v| v.round()).collect(),
                Op::GatherRows { table, ids } => {
                    let (_, d) = rows_cols(self.shape(*table));
                    let tv = &vals[table.0];
                    let mut out = vec![0.0f64; ids.len() * d];
                    for (r, &idx) in ids.iter().enumerate() {
                        out[r * d..(r + 1) * d].copy_from_slice(&tv[idx * d..(idx + 1) * d]);
                    }
                    out
                }
                Op::PermuteRows { x, perm } => {
                    let (_, d) = rows_cols(self.shape(*x));
                    let xv = &vals[x.0];
                    let mut out = vec![0.0f64; perm.len() * d];
                    for (r, &idx) in perm.iter().enumerate() {
                        out[r * d..(r + 1) * d].copy_from_slice(&xv[idx * d..(idx + 1) * d]);
                    }
                    out
                }
                Op::Reshape { x } => vals[x.0].clone(),
                Op::SliceRows { x, start } => {
                    let (_, d) = rows_cols(self.shape(*x));
                    let (len, _) = rows_cols(&node.shape);
                    vals[x.0][start * d..(start + len) * d].to_vec()
                }
                Op::SliceCols { x, start } => {
                    let (n, d) = rows_cols(self.shape(*x));
                    let (_, len) = rows_cols(&node.shape);
                    let xv = &vals[x.0];
                    let mut out = vec![0.0f64; n * len];
                    for r in 0..n {
                        out[r * len..(r + 1) * len]
                            .copy_from_slice(&xv[r * d + start..r * d + start + len]);
                    }
                    out
                }
                Op::ConcatRows { parts } => {
                    let mut out = Vec::new();
                    for &p in parts {
                        out.extend_from_slice(&vals[p.0]);
                    }
                    out
                }
                Op::ConcatCols { parts } => {
                    let (n, total) = rows_cols(&node.shape);
                    let mut out = vec![0.0f64; n * total];
                    let mut off = 0;
                    for &p in parts {
                        let (_, w) = rows_cols(self.shape(p));
                        let pv = &vals[p.0];
                        for r in 0..n {
                            out[r * total + off..r * total + off + w]
                                .copy_from_slice(&pv[r * w..(r + 1) * w]);
                        }
                        off += w;
                    }
                    out
                }
            };
            debug_assert_eq!(out.len(), numel(&self.nodes[i].shape));
            vals.push(out);
        }
        vals[target.0].clone()
    }

    /// Leaf node ids bound to each imported parameter, in record order.
    pub fn param_leaf_ids(&self) -> Vec<(ParamId, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, i)),
                _ => None,
            })
            .collect()
    }
}

fn gelu_fwd(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_bwd(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

// ── Raw kernels ─────────────────────────────────────────────────────
//
// Each output row is produced independently, so the parallel split is
// bit-identical to the serial one.

fn mm_row_nn(arow: &[f32], b: &[f32], n: usize, crow: &mut [f32]) {
    crow.iter_mut().for_each(|v| *v = 0.0);
    for (p, &ap) in arow.iter().enumerate() {
        let brow = &b[p * n..(p + 1) * n];
        for (cv, &bv) in crow.iter_mut().zip(brow) {
            *cv += ap * bv;
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n]
pub(crate) fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    if m * k * n >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, crow)| mm_row_nn(&a[i * k..(i + 1) * k], b, n, crow));
    } else {
        for i in 0..m {
            mm_row_nn(&a[i * k..(i + 1) * k], b, n, &mut c[i * n..(i + 1) * n]);
        }
    }
    c
}

fn mm_row_nt(arow: &[f32], b: &[f32], k: usize, n: usize, crow: &mut [f32]) {
    for j in 0..n {
        let brow = &b[j * k..(j + 1) * k];
        crow[j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
    }
}

/// C[m,n] = A[m,k] * B[n,k]^T
pub(crate) fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    if m * k * n >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, crow)| mm_row_nt(&a[i * k..(i + 1) * k], b, k, n, crow));
    } else {
        for i in 0..m {
            mm_row_nt(&a[i * k..(i + 1) * k], b, k, n, &mut c[i * n..(i + 1) * n]);
        }
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n]
pub(crate) fn mm_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; k * n];
    for p in 0..m {
        let brow = &b[p * n..(p + 1) * n];
        let arow = &a[p * k..(p + 1) * k];
        for (i, &ap) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += ap * bv;
            }
        }
    }
    c
}

pub(crate) fn transpose_raw(x: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn graph_with(data: Vec<f32>, shape: Vec<usize>) -> (Graph, Var) {
        let mut g = Graph::new();
        let v = g.input_grad(shape, data);
        (g, v)
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.input(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let a = g.input(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_annihilating() {
        let mut g = Graph::new();
        let a = g.input(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let b = g.input(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.input(vec![2, 3], vec![0.0; 6]);
        let b = g.input(vec![2, 3], vec![0.0; 6]);
        assert!(matches!(g.matmul(a, b), Err(Error::Dim(_))));
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let x = g.input(vec![3], vec![0.0, 0.5, -1.0]);
        let t = g.tanh(x).unwrap();
        assert_eq!(g.value(t)[0], 0.0);
        let e = g.gelu(x).unwrap();
        assert_eq!(g.value(e)[0], 0.0);
    }

    #[test]
    fn rmsnorm_ones_and_zeros() {
        let mut g = Graph::new();
        let ones = g.input(vec![1, 4], vec![1.0; 4]);
        let gain = g.input(vec![4], vec![1.0; 4]);
        let y = g.rmsnorm(ones, gain).unwrap();
        for v in g.value(y) {
            assert!((v - 1.0).abs() < 1e-4);
        }
        let zeros = g.input(vec![1, 4], vec![0.0; 4]);
        let z = g.rmsnorm(zeros, gain).unwrap();
        assert_eq!(g.value(z), &[0.0; 4]);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut g = Graph::new();
        let logits = g.input(vec![1, 4], vec![0.0; 4]);
        let l = g.masked_cross_entropy(logits, &[2], &[1.0]).unwrap();
        assert!((g.scalar(l) - 4.0f32.ln()).abs() < 1e-6);

        let mut g = Graph::new();
        let mut row = vec![0.0f32; 4];
        row[1] = 20.0;
        let logits = g.input(vec![1, 4], row);
        let l = g.masked_cross_entropy(logits, &[1], &[1.0]).unwrap();
        assert!(g.scalar(l) < 1e-6);
    }

    #[test]
    fn cross_entropy_direct_formula_oracle() {
        // Random 3x7 case vs a straight log-sum-exp evaluation.
        let mut rng = crate::rng::Pcg32::new(11, 3);
        let data: Vec<f32> = (0..21).map(|_| rng.next_gaussian()).collect();
        let targets = [4u32, 0, 6];
        let mask = [1.0f32, 0.0, 1.0];
        let mut expected = 0.0f64;
        for r in 0..3 {
            if mask[r] == 0.0 {
                continue;
            }
            let row = &data[r * 7..(r + 1) * 7];
            let lse = row.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln();
            expected += lse - row[targets[r] as usize] as f64;
        }
        expected /= 2.0;
        let mut g = Graph::new();
        let logits = g.input(vec![3, 7], data);
        let l = g.masked_cross_entropy(logits, &targets, &mask).unwrap();
        assert!((g.scalar(l) as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_empty_mask_is_degenerate() {
        let mut g = Graph::new();
        let logits = g.input(vec![2, 3], vec![0.0; 6]);
        assert!(matches!(
            g.masked_cross_entropy(logits, &[0, 1], &[0.0, 0.0]),
            Err(Error::DegenerateLoss)
        ));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut ps = Params::new();
        let (mut g, x) = graph_with(vec![1.0, 2.0, 3.0], vec![3]);
        let s = g.sum_all(x).unwrap();
        let grads = g.backward(s, &mut ps).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut ps = Params::new();
        let (g, x) = graph_with(vec![1.0, 2.0], vec![2]);
        assert!(matches!(
            g.backward(x, &mut ps),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unused_param_grad_stays_zero() {
        let mut ps = Params::new();
        let used = ps.register("used", Tensor::full(vec![2], 1.0));
        let unused = ps.register("unused", Tensor::full(vec![2], 1.0));
        let mut g = Graph::new();
        let u = g.param(&ps, used);
        let _nu = g.param(&ps, unused);
        let s = g.sum_all(u).unwrap();
        g.backward(s, &mut ps).unwrap();
        assert_eq!(ps.get(used).grad.as_ref().unwrap(), &vec![1.0, 1.0]);
        assert_eq!(ps.get(unused).grad.as_ref().unwrap(), &vec![0.0, 0.0]);
    }

    #[test]
    fn two_branch_accumulation() {
        // y = sum(x*x) + sum(x) => dy/dx = 2x + 1
        let mut ps = Params::new();
        let (mut g, x) = graph_with(vec![1.0, -2.0, 3.0], vec![3]);
        let sq = g.mul(x, x).unwrap();
        let s1 = g.sum_all(sq).unwrap();
        let s2 = g.sum_all(x).unwrap();
        let tot = g.add(s1, s2).unwrap();
        let grads = g.backward(tot, &mut ps).unwrap();
        let got = grads.get(x).unwrap();
        let want = [3.0, -3.0, 7.0];
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let x = g.input(vec![3, 3], vec![1.0; 9]);
        let y = g.softmax_rows(x, true).unwrap();
        let v = g.value(y);
        assert_eq!(v[1], 0.0); // row 0 sees only col 0
        assert_eq!(v[2], 0.0);
        assert!((v[0] - 1.0).abs() < 1e-6);
        assert!((v[3] - 0.5).abs() < 1e-6);
        // rows sum to one
        for r in 0..3 {
            let s: f32 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn ste_round_passes_gradient_through() {
        let mut ps = Params::new();
        let (mut g, x) = graph_with(vec![0.4, 1.6, -0.7], vec![3]);
        let y = g.ste_round(x).unwrap();
        assert_eq!(g.value(y), &[0.0, 2.0, -1.0]);
        let s = g.sum_all(y).unwrap();
        let grads = g.backward(s, &mut ps).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gather_rows_accumulates_repeats() {
        let mut ps = Params::new();
        let table = ps.register("t", Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let mut g = Graph::new();
        let tv = g.param(&ps, table);
        let got = g.gather_rows(tv, &[1, 1, 0]).unwrap();
        assert_eq!(g.value(got), &[3., 4., 3., 4., 1., 2.]);
        let s = g.sum_all(got).unwrap();
        g.backward(s, &mut ps).unwrap();
        // row 1 used twice
        assert_eq!(
            ps.get(table).grad.as_ref().unwrap(),
            &vec![1.0, 1.0, 2.0, 2.0, 0.0, 0.0]
        );
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut g = Graph::new();
        let x = g.input(vec![2, 4], (0..8).map(|i| i as f32).collect());
        let a = g.slice_cols(x, 0, 2).unwrap();
        let b = g.slice_cols(x, 2, 2).unwrap();
        let back = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(back), g.value(x));
        let r0 = g.slice_rows(x, 0, 1).unwrap();
        let r1 = g.slice_rows(x, 1, 1).unwrap();
        let back = g.concat_rows(&[r0, r1]).unwrap();
        assert_eq!(g.value(back), g.value(x));
    }

    #[test]
    fn nonfinite_forward_is_error() {
        let mut g = Graph::new();
        let x = g.input(vec![1], vec![1e38]);
        let y = g.mul(x, x);
        assert!(matches!(y, Err(Error::NonFinite(_))));
    }

    #[test]
    fn mm_kernels_agree() {
        let mut rng = crate::rng::Pcg32::new(2, 2);
        let (m, k, n) = (5, 7, 6);
        let a: Vec<f32> = (0..m * k).map(|_| rng.next_gaussian()).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.next_gaussian()).collect();
        let c = mm_nn(&a, &b, m, k, n);
        let bt = transpose_raw(&b, k, n);
        let c2 = mm_nt(&a, &bt, m, k, n);
        let at = transpose_raw(&a, m, k);
        let c3 = mm_tn(&at, &b, k, m, n);
        for i in 0..m * n {
            assert!((c[i] - c2[i]).abs() < 1e-5);
            assert!((c[i] - c3[i]).abs() < 1e-5);
        }
    }
}
