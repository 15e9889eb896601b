//! Tape-based reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Graph`] records every forward op in creation order, which is already
//! a topological order, so the backward sweep is a single reverse pass.
//! All reductions run in a fixed index order: identical inputs produce
//! bit-identical outputs and gradients.

use crate::error::{Error, Result};
use crate::tensor::{self, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

enum Op<S: Scalar> {
    Leaf,
    MatMul,
    Bmm { transpose_b: bool },
    Add,
    Sub,
    Mul,
    AddBias,
    Scale(S),
    Softmax,
    RmsNorm { inv_rms: Vec<S> },
    Silu,
    Sigmoid,
    Abs,
    Embedding { indices: Vec<usize> },
    Concat { axis: usize, parts: Vec<usize> },
    Slice { axis: usize, start: usize },
    Reshape,
    Permute { perm: Vec<usize> },
    Rope { positions: Vec<usize>, theta: f64 },
    SumAll,
    MeanAll,
    AttnPool { scale: S, weights: Tensor<S> },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    inputs: Vec<NodeId>,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a node, materializing zeros for parameters the loss
    /// never touched.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: &[usize]) -> Tensor<S> {
        self.grads
            .get_mut(id.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient in backward.
    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, vec![], true)
    }

    /// Non-trainable leaf (inputs, masks, targets).
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, vec![], false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: Vec<NodeId>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, inputs, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<S>, op: Op<S>, inputs: Vec<NodeId>) -> NodeId {
        let needs = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.push(value, op, inputs, needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(v, Op::MatMul, vec![a, b]))
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let v = tensor::bmm(self.value(a), self.value(b), transpose_b)?;
        Ok(self.push_op(v, Op::Bmm { transpose_b }, vec![a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push_op(v, Op::Add, vec![a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push_op(v, Op::Sub, vec![a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push_op(v, Op::Mul, vec![a, b]))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = tensor::add_bias(self.value(a), self.value(bias))?;
        Ok(self.push_op(v, Op::AddBias, vec![a, bias]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = S::from_f64(c);
        let v = self.value(a).map(|x| x * c);
        self.push_op(v, Op::Scale(c), vec![a])
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = tensor::softmax_last(self.value(a));
        self.push_op(v, Op::Softmax, vec![a])
    }

    pub fn rmsnorm(&mut self, x: NodeId, gain: NodeId, eps: f64) -> Result<NodeId> {
        let (v, inv_rms) = tensor::rmsnorm_rows(self.value(x), self.value(gain), S::from_f64(eps))?;
        Ok(self.push_op(v, Op::RmsNorm { inv_rms }, vec![x, gain]))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = tensor::silu(self.value(a));
        self.push_op(v, Op::Silu, vec![a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = tensor::sigmoid(self.value(a));
        self.push_op(v, Op::Sigmoid, vec![a])
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.abs());
        self.push_op(v, Op::Abs, vec![a])
    }

    /// Row lookup into a (vocab, dim) table.
    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                detail: format!("table must be rank 2, got {:?}", t.shape()),
            });
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                detail: format!("index {} out of range for table of {} rows", bad, vocab),
            });
        }
        let mut out = Tensor::zeros(&[indices.len(), dim]);
        for (row, &idx) in indices.iter().enumerate() {
            out.data_mut()[row * dim..(row + 1) * dim]
                .copy_from_slice(&t.data()[idx * dim..(idx + 1) * dim]);
        }
        Ok(self.push_op(out, Op::Embedding { indices: indices.to_vec() }, vec![table]))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat(&tensors, axis)?;
        let sizes = parts.iter().map(|&p| self.value(p).shape()[axis]).collect();
        Ok(self.push_op(v, Op::Concat { axis, parts: sizes }, parts.to_vec()))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let v = tensor::slice(self.value(a), axis, start, len)?;
        Ok(self.push_op(v, Op::Slice { axis, start }, vec![a]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshaped(shape)?;
        Ok(self.push_op(v, Op::Reshape, vec![a]))
    }

    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let v = tensor::permute(self.value(a), perm)?;
        Ok(self.push_op(v, Op::Permute { perm: perm.to_vec() }, vec![a]))
    }

    pub fn rope(&mut self, a: NodeId, positions: &[usize], theta: f64) -> Result<NodeId> {
        let v = tensor::rope(self.value(a), positions, theta, false)?;
        Ok(self.push_op(v, Op::Rope { positions: positions.to_vec(), theta }, vec![a]))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(tensor::sum_all(self.value(a)));
        self.push_op(v, Op::SumAll, vec![a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel().max(1);
        let v = Tensor::scalar(tensor::sum_all(self.value(a)) * S::from_f64(1.0 / n as f64));
        self.push_op(v, Op::MeanAll, vec![a])
    }

    /// Cross-attention pooling of a value set onto shared learned queries:
    /// `q` is (nq, d), `k` and `v` are (batch, nk, d); output is (batch, nq, d).
    ///
    /// The softmax and weighted-value reductions run in a canonical order
    /// derived from the key/value contents, so permuting the kv set leaves
    /// the output bit-identical.
    pub fn attn_pool(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
        let (qs, ks, vs) = (self.value(q).shape(), self.value(k).shape(), self.value(v).shape());
        let ok = qs.len() == 2 && ks.len() == 3 && ks == vs && qs[1] == ks[2];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "attn_pool",
                detail: format!("q {:?}, k {:?}, v {:?}", qs, ks, vs),
            });
        }
        let d = qs[1];
        let scale = S::from_f64(1.0 / (d as f64).sqrt());
        let (out, weights) = tensor::attn_pool_forward(self.value(q), self.value(k), self.value(v))?;
        Ok(self.push_op(out, Op::AttnPool { scale, weights }, vec![q, k, v]))
    }

    /// Reverse-mode sweep from a scalar loss. Returns one gradient slot per
    /// node; parameters never touched by the loss read back as zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 || !lt.shape().is_empty() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::ONE));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads)?;
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], id: NodeId, contrib: Tensor<S>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(
        &self,
        id: usize,
        g: &Tensor<S>,
        grads: &mut Vec<Option<Tensor<S>>>,
    ) -> Result<()> {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (self.value(ins[0]), self.value(ins[1]));
                if self.nodes[ins[0].0].needs_grad {
                    self.accumulate(grads, ins[0], tensor::matmul_nt(g, b)?);
                }
                if self.nodes[ins[1].0].needs_grad {
                    self.accumulate(grads, ins[1], tensor::matmul_tn(a, g)?);
                }
            }
            Op::Bmm { transpose_b } => {
                let (a, b) = (self.value(ins[0]), self.value(ins[1]));
                let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let n = g.shape()[2];
                if self.nodes[ins[0].0].needs_grad {
                    let mut da: Tensor<S> = Tensor::zeros(a.shape());
                    for i in 0..batch {
                        unsafe {
                            // dA = dC * B^T (or dC * B' when transpose_b)
                            let (rsb, csb) =
                                if *transpose_b { (k as isize, 1) } else { (1, n as isize) };
                            S::gemm(
                                m,
                                n,
                                k,
                                S::ONE,
                                g.data().as_ptr().add(i * m * n),
                                n as isize,
                                1,
                                b.data().as_ptr().add(i * n * k),
                                rsb,
                                csb,
                                S::ZERO,
                                da.data_mut().as_mut_ptr().add(i * m * k),
                                k as isize,
                                1,
                            );
                        }
                    }
                    self.accumulate(grads, ins[0], da);
                }
                if self.nodes[ins[1].0].needs_grad {
                    let mut db: Tensor<S> = Tensor::zeros(b.shape());
                    for i in 0..batch {
                        unsafe {
                            if *transpose_b {
                                // dB' = dC^T * A : (n,m)x(m,k) -> (n,k)
                                S::gemm(
                                    n,
                                    m,
                                    k,
                                    S::ONE,
                                    g.data().as_ptr().add(i * m * n),
                                    1,
                                    n as isize,
                                    a.data().as_ptr().add(i * m * k),
                                    k as isize,
                                    1,
                                    S::ZERO,
                                    db.data_mut().as_mut_ptr().add(i * n * k),
                                    k as isize,
                                    1,
                                );
                            } else {
                                // dB = A^T * dC : (k,m)x(m,n) -> (k,n)
                                S::gemm(
                                    k,
                                    m,
                                    n,
                                    S::ONE,
                                    a.data().as_ptr().add(i * m * k),
                                    1,
                                    k as isize,
                                    g.data().as_ptr().add(i * m * n),
                                    n as isize,
                                    1,
                                    S::ZERO,
                                    db.data_mut().as_mut_ptr().add(i * k * n),
                                    n as isize,
                                    1,
                                );
                            }
                        }
                    }
                    self.accumulate(grads, ins[1], db);
                }
            }
            Op::Add => {
                self.accumulate(grads, ins[0], g.clone());
                self.accumulate(grads, ins[1], g.clone());
            }
            Op::Sub => {
                self.accumulate(grads, ins[0], g.clone());
                self.accumulate(grads, ins[1], g.map(|x| -x));
            }
            Op::Mul => {
                let (a, b) = (self.value(ins[0]), self.value(ins[1]));
                if self.nodes[ins[0].0].needs_grad {
                    self.accumulate(grads, ins[0], tensor::mul(g, b)?);
                }
                if self.nodes[ins[1].0].needs_grad {
                    self.accumulate(grads, ins[1], tensor::mul(g, a)?);
                }
            }
            Op::AddBias => {
                self.accumulate(grads, ins[0], g.clone());
                if self.nodes[ins[1].0].needs_grad {
                    let n = self.value(ins[1]).shape()[0];
                    let mut db = Tensor::zeros(&[n]);
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, ins[1], db);
                }
            }
            Op::Scale(c) => {
                let c = *c;
                self.accumulate(grads, ins[0], g.map(|x| x * c));
            }
            Op::Softmax => {
                let y = &node.value;
                let (_, n) = y.rows();
                let mut dx = g.clone();
                for (dr, yr) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let mut dot = S::ZERO;
                    for (d, &yv) in dr.iter().zip(yr) {
                        dot += *d * yv;
                    }
                    for (d, &yv) in dr.iter_mut().zip(yr) {
                        *d = yv * (*d - dot);
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::RmsNorm { inv_rms } => {
                let x = self.value(ins[0]);
                let gain = self.value(ins[1]);
                let (_, n) = x.rows();
                let nf = S::from_f64(n as f64);
                if self.nodes[ins[0].0].needs_grad {
                    let mut dx = Tensor::zeros(x.shape());
                    for (ri, ((dxr, xr), gr)) in dx
                        .data_mut()
                        .chunks_mut(n)
                        .zip(x.data().chunks(n))
                        .zip(g.data().chunks(n))
                        .enumerate()
                    {
                        let r = inv_rms[ri];
                        let mut dot = S::ZERO;
                        for ((&gv, &xv), &ga) in gr.iter().zip(xr).zip(gain.data()) {
                            dot += ga * gv * xv;
                        }
                        let c = r * r * r / nf * dot;
                        for ((d, &xv), (&gv, &ga)) in
                            dxr.iter_mut().zip(xr).zip(gr.iter().zip(gain.data()))
                        {
                            *d = ga * gv * r - xv * c;
                        }
                    }
                    self.accumulate(grads, ins[0], dx);
                }
                if self.nodes[ins[1].0].needs_grad {
                    let mut dg = Tensor::zeros(&[n]);
                    for (ri, (xr, gr)) in x.data().chunks(n).zip(g.data().chunks(n)).enumerate() {
                        let r = inv_rms[ri];
                        for ((d, &xv), &gv) in dg.data_mut().iter_mut().zip(xr).zip(gr) {
                            *d += gv * xv * r;
                        }
                    }
                    self.accumulate(grads, ins[1], dg);
                }
            }
            Op::Silu => {
                let x = self.value(ins[0]);
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    let s = tensor::sigmoid_s(xv);
                    *d = *d * (s * (S::ONE + xv * (S::ONE - s)));
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::Sigmoid => {
                let y = &node.value;
                let mut dx = g.clone();
                for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                    *d = *d * yv * (S::ONE - yv);
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::Abs => {
                let x = self.value(ins[0]);
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    let s = if xv > S::ZERO {
                        S::ONE
                    } else if xv < S::ZERO {
                        -S::ONE
                    } else {
                        S::ZERO
                    };
                    *d = *d * s;
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::Embedding { indices } => {
                let table = self.value(ins[0]);
                let dim = table.shape()[1];
                let mut dt = Tensor::zeros(table.shape());
                for (row, &idx) in indices.iter().enumerate() {
                    let src = &g.data()[row * dim..(row + 1) * dim];
                    let dst = &mut dt.data_mut()[idx * dim..(idx + 1) * dim];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                }
                self.accumulate(grads, ins[0], dt);
            }
            Op::Concat { axis, parts } => {
                let mut start = 0;
                for (pi, &len) in parts.iter().enumerate() {
                    if self.nodes[ins[pi].0].needs_grad {
                        let piece = tensor::slice(g, *axis, start, len)?;
                        self.accumulate(grads, ins[pi], piece);
                    }
                    start += len;
                }
            }
            Op::Slice { axis, start } => {
                let input_shape = self.value(ins[0]).shape().to_vec();
                let len = node.value.shape()[*axis];
                let outer: usize = input_shape[..*axis].iter().product();
                let inner: usize = input_shape[*axis + 1..].iter().product();
                let full_axis = input_shape[*axis];
                let mut dx = Tensor::zeros(&input_shape);
                for o in 0..outer {
                    let dst_start = (o * full_axis + start) * inner;
                    let src_start = o * len * inner;
                    dx.data_mut()[dst_start..dst_start + len * inner]
                        .copy_from_slice(&g.data()[src_start..src_start + len * inner]);
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::Reshape => {
                let input_shape = self.value(ins[0]).shape().to_vec();
                self.accumulate(grads, ins[0], g.reshaped(&input_shape)?);
            }
            Op::Permute { perm } => {
                let mut inverse = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                self.accumulate(grads, ins[0], tensor::permute(g, &inverse)?);
            }
            Op::Rope { positions, theta } => {
                self.accumulate(grads, ins[0], tensor::rope(g, positions, *theta, true)?);
            }
            Op::SumAll => {
                let v = g.scalar_value();
                let shape = self.value(ins[0]).shape().to_vec();
                self.accumulate(grads, ins[0], Tensor::filled(&shape, v));
            }
            Op::MeanAll => {
                let shape = self.value(ins[0]).shape().to_vec();
                let n: usize = shape.iter().product();
                let v = g.scalar_value() * S::from_f64(1.0 / n.max(1) as f64);
                self.accumulate(grads, ins[0], Tensor::filled(&shape, v));
            }
            Op::AttnPool { scale, weights } => {
                let (q, k, v) = (self.value(ins[0]), self.value(ins[1]), self.value(ins[2]));
                let (nq, d) = (q.shape()[0], q.shape()[1]);
                let (b, nk) = (k.shape()[0], k.shape()[1]);
                let mut dq = Tensor::zeros(q.shape());
                let mut dk = Tensor::zeros(k.shape());
                let mut dv = Tensor::zeros(v.shape());
                let s = *scale;
                for bi in 0..b {
                    let kv_base = bi * nk * d;
                    for qi in 0..nq {
                        let w_row = &weights.data()[(bi * nq + qi) * nk..(bi * nq + qi + 1) * nk];
                        let go = &g.data()[(bi * nq + qi) * d..(bi * nq + qi + 1) * d];
                        // dw and the softmax Jacobian contraction
                        let mut dw = vec![S::ZERO; nk];
                        let mut dot = S::ZERO;
                        for j in 0..nk {
                            let vrow = &v.data()[kv_base + j * d..kv_base + (j + 1) * d];
                            let mut acc = S::ZERO;
                            for (a, b) in go.iter().zip(vrow) {
                                acc += *a * *b;
                            }
                            dw[j] = acc;
                            dot += acc * w_row[j];
                            // dV_j += w_j * dO
                            let dvrow = &mut dv.data_mut()[kv_base + j * d..kv_base + (j + 1) * d];
                            for (dst, &a) in dvrow.iter_mut().zip(go) {
                                *dst += w_row[j] * a;
                            }
                        }
                        let qrow = &q.data()[qi * d..(qi + 1) * d];
                        for j in 0..nk {
                            let dl = w_row[j] * (dw[j] - dot) * s;
                            let krow = &k.data()[kv_base + j * d..kv_base + (j + 1) * d];
                            let dqrow = &mut dq.data_mut()[qi * d..(qi + 1) * d];
                            for (dst, &kv) in dqrow.iter_mut().zip(krow) {
                                *dst += dl * kv;
                            }
                            let dkrow = &mut dk.data_mut()[kv_base + j * d..kv_base + (j + 1) * d];
                            for (dst, &qv) in dkrow.iter_mut().zip(qrow) {
                                *dst += dl * qv;
                            }
                        }
                    }
                }
                self.accumulate(grads, ins[0], dq);
                self.accumulate(grads, ins[1], dk);
                self.accumulate(grads, ins[2], dv);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let loss = g.sum_all(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Tensor::filled(&[2, 3], 1.0));
    }

    #[test]
    fn backward_half_norm_squared_is_identity() {
        // loss = 0.5 * sum(p^2) -> grad = p
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_vec(&[4], vec![0.5, -1.5, 2.0, 0.25]).unwrap();
        let p = g.param(t.clone());
        let sq = g.mul(p, p).unwrap();
        let s = g.sum_all(sq);
        let loss = g.scale(s, 0.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &t);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::zeros(&[3]));
        let err = g.backward(p).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss(_)));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let used = g.param(Tensor::filled(&[2], 3.0));
        let unused = g.param(Tensor::filled(&[5], 1.0));
        let loss = g.sum_all(used);
        let mut grads = g.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.take_or_zeros(unused, &[5]), Tensor::zeros(&[5]));
    }

    #[test]
    fn attn_pool_permutation_bit_identical() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = 8;
        let nk = 9;
        let q = Tensor::<f32>::from_fn(&[3, d], |_| rng.random_range(-1.0..1.0));
        let k = Tensor::<f32>::from_fn(&[2, nk, d], |_| rng.random_range(-1.0..1.0));
        let v = Tensor::<f32>::from_fn(&[2, nk, d], |_| rng.random_range(-1.0..1.0));

        let mut g1 = Graph::new();
        let (qa, ka, va) = (g1.constant(q.clone()), g1.constant(k.clone()), g1.constant(v.clone()));
        let o1 = g1.attn_pool(qa, ka, va).unwrap();

        // permute the kv set within each batch
        let perm: Vec<usize> = vec![4, 0, 8, 2, 6, 1, 5, 3, 7];
        let permute_kv = |t: &Tensor<f32>| {
            let mut out = t.clone();
            for b in 0..2 {
                for (dst, &src) in perm.iter().enumerate() {
                    let s = &t.data()[(b * nk + src) * d..(b * nk + src + 1) * d].to_vec();
                    out.data_mut()[(b * nk + dst) * d..(b * nk + dst + 1) * d].copy_from_slice(s);
                }
            }
            out
        };
        let mut g2 = Graph::new();
        let (qb, kb, vb) = (g2.constant(q), g2.constant(permute_kv(&k)), g2.constant(permute_kv(&v)));
        let o2 = g2.attn_pool(qb, kb, vb).unwrap();
        assert_eq!(g1.value(o1), g2.value(o2));
    }

    #[test]
    fn attn_pool_uniform_logits_give_mean_of_values() {
        // zero queries -> equal logits -> output is the mean of value rows
        let nk = 5;
        let d = 4;
        let q = Tensor::<f64>::zeros(&[1, d]);
        let k = Tensor::<f64>::from_fn(&[1, nk, d], |i| (i as f64 * 0.37).sin());
        let v = Tensor::<f64>::from_fn(&[1, nk, d], |i| i as f64);
        let mut g = Graph::new();
        let (qa, ka, va) = (g.constant(q), g.constant(k), g.constant(v.clone()));
        let o = g.attn_pool(qa, ka, va).unwrap();
        for c in 0..d {
            let mean: f64 = (0..nk).map(|j| v.data()[j * d + c]).sum::<f64>() / nk as f64;
            assert!((g.value(o).data()[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_in_graph_convex_combination() {
        // one vision token + one extra key: output of a 2-key softmax row is on the simplex
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[1, 2], vec![0.3, -1.2]).unwrap());
        let y = g.softmax(x);
        let v = g.value(y);
        assert!((v.data()[0] + v.data()[1] - 1.0).abs() < 1e-15);
        assert!(v.data().iter().all(|&w| w >= 0.0));
    }
}
