//! Eager reverse-mode autograd tape.
//!
//! A [`Graph`] is a flat arena of nodes created in topological order; every
//! insertion validates shapes, runs the forward kernel immediately, and
//! records what backward needs. [`Graph::backward`] walks the tape in
//! reverse, accumulating (never overwriting) gradients, so a leaf feeding
//! several consumers receives the sum of its per-use gradients.
//!
//! Tensors are immutable once inserted; a graph belongs to one logical
//! execution context. Independent graphs may run in parallel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvGeom,
};
use crate::error::{Error, Result};
use crate::matmul::{matmul_nn_acc, matmul_nt_acc, transpose};
use crate::tensor::{Element, Tensor};
use crate::EPS_NORM;

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum OpKind<T: Element> {
    Leaf,
    Conv2d { stride: usize },
    Deconv2d { stride: usize },
    FullyConnected,
    Relu,
    Sigmoid,
    Square,
    SqrtSafe,
    AffineMap { mul: T },
    Add,
    Sub,
    Mul,
    Div,
    Softmax { axis: usize },
    ReduceSum { axis: usize },
    ReduceMean { axis: usize },
    SumAll,
    Reshape,
    MulBcastLast,
    CapsPredict,
    CapsWeightedSum,
    CapsAgreement,
    CapsFromConv { types: usize },
    MaskClassDependent { targets: Vec<usize> },
    MaskClassIndependent { targets: Vec<usize> },
}

#[derive(Debug)]
struct Node<T: Element> {
    op: OpKind<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

/// Recording tape plus its stored activations and gradients.
#[derive(Debug, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a node, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_vec(node.value.shape(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, op: OpKind<T>, inputs: Vec<Var>, value: Tensor<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, inputs, value, grad: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    // ---- leaves ---------------------------------------------------------

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: OpKind::Leaf,
            inputs: Vec::new(),
            value,
            grad: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    // ---- structured layers ----------------------------------------------

    /// Valid (no-padding) cross-correlation of [b,c,h,w] with [o,c,k,k].
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let geom = ConvGeom::for_conv(
            self.value(input).shape(),
            self.value(kernel).shape(),
            stride,
        )?;
        let bshape = self.value(bias).shape();
        if bshape != [geom.out_c] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {bshape:?} does not match {} output channels", geom.out_c),
            ));
        }
        let out = conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let shape = [geom.batch, geom.out_c, geom.out_h, geom.out_w];
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(OpKind::Conv2d { stride }, vec![input, kernel, bias], value))
    }

    /// Transposed convolution of [b,c,h,w] with [c,o,k,k]; the exact adjoint
    /// of `conv2d` with the same kernel buffer.
    pub fn deconv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let geom = ConvGeom::for_deconv(
            self.value(input).shape(),
            self.value(kernel).shape(),
            stride,
        )?;
        let bshape = self.value(bias).shape();
        if bshape != [geom.out_c] {
            return Err(Error::shape(
                "deconv2d",
                format!("bias shape {bshape:?} does not match {} output channels", geom.out_c),
            ));
        }
        let out = deconv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let shape = [geom.batch, geom.out_c, geom.out_h, geom.out_w];
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(OpKind::Deconv2d { stride }, vec![input, kernel, bias], value))
    }

    /// Affine map [b,n] x [n,m] + [m].
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(Error::shape(
                "fully_connected",
                format!("expected ranks 2/2/1, got {xs:?}/{ws:?}/{bs:?}"),
            ));
        }
        if xs[1] != ws[0] {
            return Err(Error::shape(
                "fully_connected",
                format!("inner dims disagree: input {:?} vs weight {:?}", xs, ws),
            ));
        }
        if bs[0] != ws[1] {
            return Err(Error::shape(
                "fully_connected",
                format!("bias {:?} vs weight {:?}", bs, ws),
            ));
        }
        let (b, n, m) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); b * m];
        for row in out.chunks_exact_mut(m) {
            row.copy_from_slice(self.value(bias).data());
        }
        matmul_nn_acc(self.value(input).data(), self.value(weight).data(), &mut out, b, n, m);
        let value = Tensor::from_vec(&[b, m], out)?;
        Ok(self.push(OpKind::FullyConnected, vec![input, weight, bias], value))
    }

    // ---- elementwise -----------------------------------------------------

    fn unary(&mut self, op: OpKind<T>, x: Var, f: impl Fn(T) -> T) -> Var {
        let value = Tensor::from_vec(
            self.value(x).shape(),
            self.value(x).data().iter().map(|&v| f(v)).collect(),
        )
        .expect("unary preserves shape");
        self.push(op, vec![x], value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(OpKind::Relu, x, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(OpKind::Sigmoid, x, |v| {
            // Evaluate with a non-positive exponent for stability.
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(OpKind::Square, x, |v| v * v)
    }

    /// sqrt(x + eps_norm); differentiable at zero by construction.
    pub fn sqrt_safe(&mut self, x: Var) -> Var {
        let eps = T::from_f64(EPS_NORM);
        self.unary(OpKind::SqrtSafe, x, |v| (v + eps).sqrt())
    }

    /// Elementwise mul*x + add with scalar coefficients.
    pub fn affine_map(&mut self, x: Var, mul: T, add: T) -> Var {
        self.unary(OpKind::AffineMap { mul }, x, |v| mul * v + add)
    }

    fn binary(&mut self, op: OpKind<T>, name: &'static str, x: Var, y: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        if self.value(x).shape() != self.value(y).shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.value(x).shape(), self.value(y).shape()),
            ));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(self.value(y).data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(op, vec![x, y], value))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(OpKind::Add, "add", x, y, |a, b| a + b)
    }

    pub fn sub(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(OpKind::Sub, "sub", x, y, |a, b| a - b)
    }

    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(OpKind::Mul, "mul", x, y, |a, b| a * b)
    }

    pub fn div(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(OpKind::Div, "div", x, y, |a, b| a / b)
    }

    // ---- softmax / reductions ---------------------------------------------

    /// Shift-invariant softmax along `axis`; slices sum to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, e, inner) = Tensor::<T>::axis_runs(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * e * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..e {
                    let v = src[base + j * inner];
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = T::zero();
                for j in 0..e {
                    let v = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = v;
                    sum = sum + v;
                }
                for j in 0..e {
                    out[base + j * inner] = out[base + j * inner] / sum;
                }
            }
        }
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(OpKind::Softmax { axis }, vec![x], value))
    }

    fn reduce(&mut self, op: OpKind<T>, name: &'static str, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                name,
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, e, inner) = Tensor::<T>::axis_runs(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..e {
                let base = (o * e + j) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d = *d + s;
                }
            }
        }
        if mean {
            let scale = T::one() / T::from_f64(e as f64);
            for v in out.iter_mut() {
                *v = *v * scale;
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.push(op, vec![x], value))
    }

    /// Sum along `axis`; the output shape drops that axis.
    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(OpKind::ReduceSum { axis }, "reduce_sum", x, axis, false)
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(OpKind::ReduceMean { axis }, "reduce_mean", x, axis, true)
    }

    /// Scalar sum of every element.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = T::zero();
        for &v in self.value(x).data() {
            s = s + v;
        }
        self.push(OpKind::SumAll, vec![x], Tensor::scalar(s))
    }

    /// L2 norm along `axis`, guarded by eps_norm so it stays differentiable
    /// at the origin: sqrt(sum(x^2) + eps).
    pub fn l2_norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sq = self.square(x);
        let s = self.reduce_sum(sq, axis)?;
        Ok(self.sqrt_safe(s))
    }

    // ---- shape ------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(OpKind::Reshape, vec![x], value))
    }

    /// x[.., d] scaled per-slice by w[..]; w's shape is x's without the last
    /// axis.
    pub fn mul_bcast_last(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != ws.len() + 1 || xs[..ws.len()] != ws[..] {
            return Err(Error::shape(
                "mul_bcast_last",
                format!("{xs:?} cannot be scaled by {ws:?}"),
            ));
        }
        let d = xs[xs.len() - 1];
        let src = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); src.len()];
        for (o, &scale) in wv.iter().enumerate() {
            let base = o * d;
            for l in 0..d {
                out[base + l] = src[base + l] * scale;
            }
        }
        let value = Tensor::from_vec(&xs, out)?;
        Ok(self.push(OpKind::MulBcastLast, vec![x, w], value))
    }

    // ---- capsule-specific kernels ------------------------------------------

    /// Prediction transform: u[b,i,:] through each W[i,j] giving [b,N,M,out].
    pub fn caps_predict(&mut self, u: Var, w: Var) -> Result<Var> {
        let us = self.value(u).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if us.len() != 3 || ws.len() != 4 || us[1] != ws[0] || us[2] != ws[2] {
            return Err(Error::shape(
                "caps_predict",
                format!("capsules {us:?} vs transform bank {ws:?}"),
            ));
        }
        let (b, n, din) = (us[0], us[1], us[2]);
        let (m, dout) = (ws[1], ws[3]);
        let uv = self.value(u).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); b * n * m * dout];
        for bi in 0..b {
            for i in 0..n {
                let u_vec = &uv[(bi * n + i) * din..(bi * n + i + 1) * din];
                for j in 0..m {
                    let w_mat = &wv[((i * m + j) * din) * dout..((i * m + j) * din + din) * dout];
                    let o_vec = &mut out[((bi * n + i) * m + j) * dout..((bi * n + i) * m + j + 1) * dout];
                    for (d, &coef) in u_vec.iter().enumerate() {
                        let w_row = &w_mat[d * dout..(d + 1) * dout];
                        for (ov, &wvv) in o_vec.iter_mut().zip(w_row) {
                            *ov = *ov + coef * wvv;
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[b, n, m, dout], out)?;
        Ok(self.push(OpKind::CapsPredict, vec![u, w], value))
    }

    /// s[b,j,:] = sum_i c[b,i,j] * u_hat[b,i,j,:], without materializing the
    /// weighted predictions.
    pub fn caps_weighted_sum(&mut self, u_hat: Var, c: Var) -> Result<Var> {
        let us = self.value(u_hat).shape().to_vec();
        let cs = self.value(c).shape().to_vec();
        if us.len() != 4 || cs.len() != 3 || us[..3] != cs[..] {
            return Err(Error::shape(
                "caps_weighted_sum",
                format!("predictions {us:?} vs couplings {cs:?}"),
            ));
        }
        let (b, n, m, d) = (us[0], us[1], us[2], us[3]);
        let uv = self.value(u_hat).data();
        let cv = self.value(c).data();
        let mut out = vec![T::zero(); b * m * d];
        for bi in 0..b {
            for i in 0..n {
                for j in 0..m {
                    let weight = cv[(bi * n + i) * m + j];
                    let u_row = &uv[((bi * n + i) * m + j) * d..((bi * n + i) * m + j + 1) * d];
                    let s_row = &mut out[(bi * m + j) * d..(bi * m + j + 1) * d];
                    for (s, &u) in s_row.iter_mut().zip(u_row) {
                        *s = *s + weight * u;
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[b, m, d], out)?;
        Ok(self.push(OpKind::CapsWeightedSum, vec![u_hat, c], value))
    }

    /// a[b,i,j] = <u_hat[b,i,j,:], v[b,j,:]> — the routing agreement.
    pub fn caps_agreement(&mut self, u_hat: Var, v: Var) -> Result<Var> {
        let us = self.value(u_hat).shape().to_vec();
        let vs = self.value(v).shape().to_vec();
        if us.len() != 4 || vs.len() != 3 || us[0] != vs[0] || us[2] != vs[1] || us[3] != vs[2] {
            return Err(Error::shape(
                "caps_agreement",
                format!("predictions {us:?} vs outputs {vs:?}"),
            ));
        }
        let (b, n, m, d) = (us[0], us[1], us[2], us[3]);
        let uv = self.value(u_hat).data();
        let vv = self.value(v).data();
        let mut out = vec![T::zero(); b * n * m];
        for bi in 0..b {
            for i in 0..n {
                for j in 0..m {
                    let u_row = &uv[((bi * n + i) * m + j) * d..((bi * n + i) * m + j + 1) * d];
                    let v_row = &vv[(bi * m + j) * d..(bi * m + j + 1) * d];
                    let mut s = T::zero();
                    for (&a, &bv) in u_row.iter().zip(v_row) {
                        s = s + a * bv;
                    }
                    out[(bi * n + i) * m + j] = s;
                }
            }
        }
        let value = Tensor::from_vec(&[b, n, m], out)?;
        Ok(self.push(OpKind::CapsAgreement, vec![u_hat, v], value))
    }

    /// [b, dim*types, h, w] -> [b, types*h*w, dim]: consecutive channel
    /// groups of `dim` become one capsule per grid cell.
    pub fn caps_from_conv(&mut self, x: Var, types: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || types == 0 || !xs[1].is_multiple_of(types) {
            return Err(Error::shape(
                "caps_from_conv",
                format!("cannot split {xs:?} into {types} capsule types"),
            ));
        }
        let (b, ch, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let dim = ch / types;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let plane = h * w;
        for bi in 0..b {
            for t in 0..types {
                for dd in 0..dim {
                    let src_plane = &src[(bi * ch + t * dim + dd) * plane..(bi * ch + t * dim + dd + 1) * plane];
                    for p in 0..plane {
                        out[((bi * types * plane) + t * plane + p) * dim + dd] = src_plane[p];
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[b, types * plane, dim], out)?;
        Ok(self.push(OpKind::CapsFromConv { types }, vec![x], value))
    }

    // ---- masking -----------------------------------------------------------

    fn check_mask(&self, name: &'static str, caps: Var, targets: &[usize]) -> Result<(usize, usize, usize)> {
        let cs = self.value(caps).shape();
        if cs.len() != 3 {
            return Err(Error::shape(name, format!("expected [b,k,d], got {cs:?}")));
        }
        let (b, k, d) = (cs[0], cs[1], cs[2]);
        if targets.len() != b {
            return Err(Error::contract(
                name,
                format!("{} targets for batch of {b}", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::contract(name, format!("target {bad} out of range for {k} classes")));
        }
        Ok((b, k, d))
    }

    /// Flattens [b,k,d] to [b,k*d] with every non-target capsule zeroed.
    pub fn mask_class_dependent(&mut self, caps: Var, targets: &[usize]) -> Result<Var> {
        let (b, k, d) = self.check_mask("mask_class_dependent", caps, targets)?;
        let src = self.value(caps).data();
        let mut out = vec![T::zero(); b * k * d];
        for (bi, &t) in targets.iter().enumerate() {
            let base = (bi * k + t) * d;
            out[base..base + d].copy_from_slice(&src[base..base + d]);
        }
        let value = Tensor::from_vec(&[b, k * d], out)?;
        Ok(self.push(
            OpKind::MaskClassDependent { targets: targets.to_vec() },
            vec![caps],
            value,
        ))
    }

    /// Keeps only the selected capsule: [b,k,d] -> [b,d]. No class position
    /// survives in the output.
    pub fn mask_class_independent(&mut self, caps: Var, targets: &[usize]) -> Result<Var> {
        let (b, k, d) = self.check_mask("mask_class_independent", caps, targets)?;
        let src = self.value(caps).data();
        let mut out = vec![T::zero(); b * d];
        for (bi, &t) in targets.iter().enumerate() {
            out[bi * d..(bi + 1) * d].copy_from_slice(&src[(bi * k + t) * d..(bi * k + t + 1) * d]);
        }
        let value = Tensor::from_vec(&[b, d], out)?;
        Ok(self.push(
            OpKind::MaskClassIndependent { targets: targets.to_vec() },
            vec![caps],
            value,
        ))
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse pass from a scalar root. Populates the gradient of every
    /// reachable node with `requires_grad`, leaves included.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("root must be scalar, got shape {:?}", self.nodes[root.0].value.shape()),
            ));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![T::one()]);
        for idx in (0..=root.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            self.backward_node(idx);
        }
        Ok(())
    }

    fn backward_node(&mut self, idx: usize) {
        let (prior, rest) = self.nodes.split_at_mut(idx);
        let node = &rest[0];
        let g = node.grad.as_deref().expect("grad present");
        let inputs = node.inputs.clone();
        let need: Vec<bool> = inputs.iter().map(|v| prior[v.0].requires_grad).collect();
        if !need.iter().any(|&b| b) {
            return;
        }
        let val = |v: Var| -> &Tensor<T> { &prior[v.0].value };

        // Phase 1: compute contributions (read-only).
        let mut contribs: Vec<(Var, Vec<T>)> = Vec::new();
        match &node.op {
            OpKind::Leaf => {}
            OpKind::Conv2d { stride } => {
                let geom = ConvGeom::for_conv(
                    val(inputs[0]).shape(),
                    val(inputs[1]).shape(),
                    *stride,
                )
                .expect("validated at insertion");
                let grads = conv2d_backward(
                    g,
                    val(inputs[0]).data(),
                    val(inputs[1]).data(),
                    &geom,
                    need[0],
                    need[1],
                    need[2],
                );
                if let Some(d) = grads.input {
                    contribs.push((inputs[0], d));
                }
                if let Some(d) = grads.kernel {
                    contribs.push((inputs[1], d));
                }
                if let Some(d) = grads.bias {
                    contribs.push((inputs[2], d));
                }
            }
            OpKind::Deconv2d { stride } => {
                let geom = ConvGeom::for_deconv(
                    val(inputs[0]).shape(),
                    val(inputs[1]).shape(),
                    *stride,
                )
                .expect("validated at insertion");
                let grads = deconv2d_backward(
                    g,
                    val(inputs[0]).data(),
                    val(inputs[1]).data(),
                    &geom,
                    need[0],
                    need[1],
                    need[2],
                );
                if let Some(d) = grads.input {
                    contribs.push((inputs[0], d));
                }
                if let Some(d) = grads.kernel {
                    contribs.push((inputs[1], d));
                }
                if let Some(d) = grads.bias {
                    contribs.push((inputs[2], d));
                }
            }
            OpKind::FullyConnected => {
                let x = val(inputs[0]);
                let w = val(inputs[1]);
                let (b, n, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                if need[0] {
                    let mut dx = vec![T::zero(); b * n];
                    matmul_nt_acc(g, w.data(), &mut dx, b, m, n);
                    contribs.push((inputs[0], dx));
                }
                if need[1] {
                    let xt = transpose(x.data(), b, n);
                    let mut dw = vec![T::zero(); n * m];
                    matmul_nn_acc(&xt, g, &mut dw, n, b, m);
                    contribs.push((inputs[1], dw));
                }
                if need[2] {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks_exact(m) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    contribs.push((inputs[2], db));
                }
            }
            OpKind::Relu => {
                let x = val(inputs[0]).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                contribs.push((inputs[0], d));
            }
            OpKind::Sigmoid => {
                let y = node.value.data();
                let d = g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::one() - yv)).collect();
                contribs.push((inputs[0], d));
            }
            OpKind::Square => {
                let x = val(inputs[0]).data();
                let two = T::from_f64(2.0);
                let d = g.iter().zip(x).map(|(&gv, &xv)| two * xv * gv).collect();
                contribs.push((inputs[0], d));
            }
            OpKind::SqrtSafe => {
                let y = node.value.data();
                let half = T::from_f64(0.5);
                let d = g.iter().zip(y).map(|(&gv, &yv)| half * gv / yv).collect();
                contribs.push((inputs[0], d));
            }
            OpKind::AffineMap { mul, .. } => {
                let m = *mul;
                let d = g.iter().map(|&gv| m * gv).collect();
                contribs.push((inputs[0], d));
            }
            OpKind::Add => {
                if need[0] {
                    contribs.push((inputs[0], g.to_vec()));
                }
                if need[1] {
                    contribs.push((inputs[1], g.to_vec()));
                }
            }
            OpKind::Sub => {
                if need[0] {
                    contribs.push((inputs[0], g.to_vec()));
                }
                if need[1] {
                    contribs.push((inputs[1], g.iter().map(|&v| -v).collect()));
                }
            }
            OpKind::Mul => {
                if need[0] {
                    let y = val(inputs[1]).data();
                    contribs.push((inputs[0], g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect()));
                }
                if need[1] {
                    let x = val(inputs[0]).data();
                    contribs.push((inputs[1], g.iter().zip(x).map(|(&gv, &xv)| gv * xv).collect()));
                }
            }
            OpKind::Div => {
                let x = val(inputs[0]).data();
                let y = val(inputs[1]).data();
                if need[0] {
                    contribs.push((inputs[0], g.iter().zip(y).map(|(&gv, &yv)| gv / yv).collect()));
                }
                if need[1] {
                    let d = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&gv, (&xv, &yv))| -gv * xv / (yv * yv))
                        .collect();
                    contribs.push((inputs[1], d));
                }
            }
            OpKind::Softmax { axis } => {
                let y = node.value.data();
                let (outer, e, inner) = Tensor::<T>::axis_runs(node.value.shape(), *axis);
                let mut d = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * e * inner + i;
                        let mut dot = T::zero();
                        for j in 0..e {
                            let ix = base + j * inner;
                            dot = dot + g[ix] * y[ix];
                        }
                        for j in 0..e {
                            let ix = base + j * inner;
                            d[ix] = y[ix] * (g[ix] - dot);
                        }
                    }
                }
                contribs.push((inputs[0], d));
            }
            OpKind::ReduceSum { axis } | OpKind::ReduceMean { axis } => {
                let in_shape = val(inputs[0]).shape();
                let (outer, e, inner) = Tensor::<T>::axis_runs(in_shape, *axis);
                let scale = if matches!(node.op, OpKind::ReduceMean { .. }) {
                    T::one() / T::from_f64(e as f64)
                } else {
                    T::one()
                };
                let mut d = vec![T::zero(); outer * e * inner];
                for o in 0..outer {
                    let g_row = &g[o * inner..(o + 1) * inner];
                    for j in 0..e {
                        let base = (o * e + j) * inner;
                        for (dd, &gv) in d[base..base + inner].iter_mut().zip(g_row) {
                            *dd = gv * scale;
                        }
                    }
                }
                contribs.push((inputs[0], d));
            }
            OpKind::SumAll => {
                let gv = g[0];
                contribs.push((inputs[0], vec![gv; val(inputs[0]).numel()]));
            }
            OpKind::Reshape => {
                contribs.push((inputs[0], g.to_vec()));
            }
            OpKind::MulBcastLast => {
                let xs = val(inputs[0]);
                let x = xs.data();
                let w = val(inputs[1]).data();
                let d_last = xs.shape()[xs.shape().len() - 1];
                if need[0] {
                    let mut d = vec![T::zero(); x.len()];
                    for (o, &scale) in w.iter().enumerate() {
                        let base = o * d_last;
                        for l in 0..d_last {
                            d[base + l] = g[base + l] * scale;
                        }
                    }
                    contribs.push((inputs[0], d));
                }
                if need[1] {
                    let mut d = vec![T::zero(); w.len()];
                    for (o, dv) in d.iter_mut().enumerate() {
                        let base = o * d_last;
                        let mut s = T::zero();
                        for l in 0..d_last {
                            s = s + g[base + l] * x[base + l];
                        }
                        *dv = s;
                    }
                    contribs.push((inputs[1], d));
                }
            }
            OpKind::CapsPredict => {
                let u = val(inputs[0]);
                let w = val(inputs[1]);
                let (b, n, din) = (u.shape()[0], u.shape()[1], u.shape()[2]);
                let (m, dout) = (w.shape()[1], w.shape()[3]);
                let uv = u.data();
                let wv = w.data();
                if need[0] {
                    let mut du = vec![T::zero(); uv.len()];
                    for bi in 0..b {
                        for i in 0..n {
                            let du_vec = &mut du[(bi * n + i) * din..(bi * n + i + 1) * din];
                            for j in 0..m {
                                let g_vec = &g[((bi * n + i) * m + j) * dout..((bi * n + i) * m + j + 1) * dout];
                                let w_mat = &wv[((i * m + j) * din) * dout..((i * m + j) * din + din) * dout];
                                for (d, duv) in du_vec.iter_mut().enumerate() {
                                    let w_row = &w_mat[d * dout..(d + 1) * dout];
                                    let mut s = T::zero();
                                    for (&gv, &wvv) in g_vec.iter().zip(w_row) {
                                        s = s + gv * wvv;
                                    }
                                    *duv = *duv + s;
                                }
                            }
                        }
                    }
                    contribs.push((inputs[0], du));
                }
                if need[1] {
                    let mut dw = vec![T::zero(); wv.len()];
                    for bi in 0..b {
                        for i in 0..n {
                            let u_vec = &uv[(bi * n + i) * din..(bi * n + i + 1) * din];
                            for j in 0..m {
                                let g_vec = &g[((bi * n + i) * m + j) * dout..((bi * n + i) * m + j + 1) * dout];
                                let w_mat = &mut dw[((i * m + j) * din) * dout..((i * m + j) * din + din) * dout];
                                for (d, &coef) in u_vec.iter().enumerate() {
                                    let w_row = &mut w_mat[d * dout..(d + 1) * dout];
                                    for (wvv, &gv) in w_row.iter_mut().zip(g_vec) {
                                        *wvv = *wvv + coef * gv;
                                    }
                                }
                            }
                        }
                    }
                    contribs.push((inputs[1], dw));
                }
            }
            OpKind::CapsWeightedSum => {
                let u = val(inputs[0]);
                let c = val(inputs[1]);
                let (b, n, m, d) = (u.shape()[0], u.shape()[1], u.shape()[2], u.shape()[3]);
                let uv = u.data();
                let cv = c.data();
                if need[0] {
                    let mut du = vec![T::zero(); uv.len()];
                    for bi in 0..b {
                        for i in 0..n {
                            for j in 0..m {
                                let weight = cv[(bi * n + i) * m + j];
                                let g_row = &g[(bi * m + j) * d..(bi * m + j + 1) * d];
                                let du_row = &mut du[((bi * n + i) * m + j) * d..((bi * n + i) * m + j + 1) * d];
                                for (dv, &gv) in du_row.iter_mut().zip(g_row) {
                                    *dv = *dv + weight * gv;
                                }
                            }
                        }
                    }
                    contribs.push((inputs[0], du));
                }
                if need[1] {
                    let mut dc = vec![T::zero(); cv.len()];
                    for bi in 0..b {
                        for i in 0..n {
                            for j in 0..m {
                                let g_row = &g[(bi * m + j) * d..(bi * m + j + 1) * d];
                                let u_row = &uv[((bi * n + i) * m + j) * d..((bi * n + i) * m + j + 1) * d];
                                let mut s = T::zero();
                                for (&gv, &uvv) in g_row.iter().zip(u_row) {
                                    s = s + gv * uvv;
                                }
                                dc[(bi * n + i) * m + j] = dc[(bi * n + i) * m + j] + s;
                            }
                        }
                    }
                    contribs.push((inputs[1], dc));
                }
            }
            OpKind::CapsAgreement => {
                let u = val(inputs[0]);
                let v = val(inputs[1]);
                let (b, n, m, d) = (u.shape()[0], u.shape()[1], u.shape()[2], u.shape()[3]);
                let uv = u.data();
                let vv = v.data();
                if need[0] {
                    let mut du = vec![T::zero(); uv.len()];
                    for bi in 0..b {
                        for i in 0..n {
                            for j in 0..m {
                                let gv = g[(bi * n + i) * m + j];
                                let v_row = &vv[(bi * m + j) * d..(bi * m + j + 1) * d];
                                let du_row = &mut du[((bi * n + i) * m + j) * d..((bi * n + i) * m + j + 1) * d];
                                for (dv, &vvv) in du_row.iter_mut().zip(v_row) {
                                    *dv = *dv + gv * vvv;
                                }
                            }
                        }
                    }
                    contribs.push((inputs[0], du));
                }
                if need[1] {
                    let mut dv = vec![T::zero(); vv.len()];
                    for bi in 0..b {
                        for i in 0..n {
                            for j in 0..m {
                                let gv = g[(bi * n + i) * m + j];
                                let u_row = &uv[((bi * n + i) * m + j) * d..((bi * n + i) * m + j + 1) * d];
                                let dv_row = &mut dv[(bi * m + j) * d..(bi * m + j + 1) * d];
                                for (dvv, &uvv) in dv_row.iter_mut().zip(u_row) {
                                    *dvv = *dvv + gv * uvv;
                                }
                            }
                        }
                    }
                    contribs.push((inputs[1], dv));
                }
            }
            OpKind::CapsFromConv { types } => {
                let xs = val(inputs[0]).shape();
                let (b, ch, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let types = *types;
                let dim = ch / types;
                let plane = h * w;
                let mut d = vec![T::zero(); b * ch * plane];
                for bi in 0..b {
                    for t in 0..types {
                        for dd in 0..dim {
                            let dst = &mut d[(bi * ch + t * dim + dd) * plane..(bi * ch + t * dim + dd + 1) * plane];
                            for p in 0..plane {
                                dst[p] = g[((bi * types * plane) + t * plane + p) * dim + dd];
                            }
                        }
                    }
                }
                contribs.push((inputs[0], d));
            }
            OpKind::MaskClassDependent { targets } => {
                let cs = val(inputs[0]).shape();
                let (k, d) = (cs[1], cs[2]);
                let mut dc = vec![T::zero(); val(inputs[0]).numel()];
                for (bi, &t) in targets.iter().enumerate() {
                    let base = (bi * k + t) * d;
                    dc[base..base + d].copy_from_slice(&g[base..base + d]);
                }
                contribs.push((inputs[0], dc));
            }
            OpKind::MaskClassIndependent { targets } => {
                let cs = val(inputs[0]).shape();
                let (k, d) = (cs[1], cs[2]);
                let mut dc = vec![T::zero(); val(inputs[0]).numel()];
                for (bi, &t) in targets.iter().enumerate() {
                    dc[(bi * k + t) * d..(bi * k + t + 1) * d].copy_from_slice(&g[bi * d..(bi + 1) * d]);
                }
                contribs.push((inputs[0], dc));
            }
        }

        // Phase 2: accumulate.
        for (var, contrib) in contribs {
            let node = &mut prior[var.0];
            if !node.requires_grad {
                continue;
            }
            let buf = node
                .grad
                .get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
            for (a, b) in buf.iter_mut().zip(&contrib) {
                *a = *a + *b;
            }
        }
    }
}
