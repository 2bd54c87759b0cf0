//! Capsule math: squash activation, affine prediction transform, dynamic
//! routing by agreement, and both primary-capsule constructors.
//!
//! A capsule pack lives in the graph as a rank-3 tensor
//! `[batch, num_capsules, capsule_dim]`; the routing weights are created
//! fresh (all zeros) on every forward pass, and gradients flow through the
//! fully unrolled routing loop.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Element;

/// Default number of routing iterations, matching the baseline lineage.
pub const DEFAULT_ROUTING_ITERATIONS: usize = 3;

/// Per-forward routing bookkeeping: the logits and couplings of every
/// iteration, inspectable through [`Graph::value`].
#[derive(Debug, Clone)]
pub struct RoutingState {
    pub logits: Vec<Var>,
    pub couplings: Vec<Var>,
    pub iterations: usize,
}

/// v = (|s|^2 / (1 + |s|^2)) * (s / |s|), applied along the trailing axis.
/// Norms come out strictly below one and the direction is preserved.
pub fn squash<T: Element>(g: &mut Graph<T>, pack: Var) -> Result<Var> {
    let rank = g.value(pack).shape().len();
    if rank < 2 {
        return Err(Error::shape("squash", "capsule pack must have at least rank 2"));
    }
    let last = rank - 1;
    let sq = g.square(pack);
    let norm_sq = g.reduce_sum(sq, last)?;
    let norm = g.sqrt_safe(norm_sq);
    let one_plus = g.affine_map(norm_sq, T::one(), T::one());
    let denom = g.mul(one_plus, norm)?;
    let factor = g.div(norm_sq, denom)?;
    g.mul_bcast_last(pack, factor)
}

/// Capsule predictions: u_hat[b,i,j] = W[i,j]^T u[b,i].
pub fn predict<T: Element>(g: &mut Graph<T>, pack: Var, bank: Var) -> Result<Var> {
    g.caps_predict(pack, bank)
}

/// Routing by agreement over `iterations` rounds. Couplings are the softmax
/// of the logits over the output-capsule axis; the agreement update is
/// skipped on the final iteration. Returns the squashed output capsules and
/// the per-iteration routing state.
pub fn dynamic_routing<T: Element>(
    g: &mut Graph<T>,
    predictions: Var,
    iterations: usize,
) -> Result<(Var, RoutingState)> {
    if iterations == 0 {
        return Err(Error::contract("dynamic_routing", "iterations must be >= 1"));
    }
    let shape = g.value(predictions).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(
            "dynamic_routing",
            alloc::format!("predictions must be [b,N,M,d], got {shape:?}"),
        ));
    }
    let (b, n, m) = (shape[0], shape[1], shape[2]);

    let mut state = RoutingState {
        logits: Vec::with_capacity(iterations),
        couplings: Vec::with_capacity(iterations),
        iterations,
    };
    let mut logits = g.constant(crate::tensor::Tensor::zeros(&[b, n, m]));
    let mut output = None;
    for iter in 0..iterations {
        let couplings = g.softmax(logits, 2)?;
        let pooled = g.caps_weighted_sum(predictions, couplings)?;
        let v = squash(g, pooled)?;
        state.logits.push(logits);
        state.couplings.push(couplings);
        output = Some(v);
        if iter + 1 < iterations {
            let agreement = g.caps_agreement(predictions, v)?;
            logits = g.add(logits, agreement)?;
        }
    }
    Ok((output.expect("iterations >= 1"), state))
}

/// Convolutional primary capsules: conv2d (k=9, stride 2, 8*types channels)
/// then regrouping into `types * h' * w'` capsules of dim 8, squashed.
pub fn conv_primary_caps<T: Element>(
    g: &mut Graph<T>,
    features: Var,
    kernel: Var,
    bias: Var,
    types: usize,
) -> Result<Var> {
    let conv = g.conv2d(features, kernel, bias, 2)?;
    let caps = g.caps_from_conv(conv, types)?;
    squash(g, caps)
}

/// Fully-connected primary capsules: flatten features, one affine layer to
/// `dim * pc_count` outputs (bias, no intermediate nonlinearity), reshape to
/// `[b, pc_count, dim]`, squash.
pub fn fc_primary_caps<T: Element>(
    g: &mut Graph<T>,
    features: Var,
    weight: Var,
    bias: Var,
    pc_count: usize,
) -> Result<Var> {
    let fs = g.value(features).shape().to_vec();
    if fs.len() != 4 {
        return Err(Error::shape(
            "fc_primary_caps",
            alloc::format!("features must be [b,c,h,w], got {fs:?}"),
        ));
    }
    let b = fs[0];
    let flat = fs[1] * fs[2] * fs[3];
    let dim_total = g.value(weight).shape()[1];
    if pc_count == 0 || !dim_total.is_multiple_of(pc_count) {
        return Err(Error::shape(
            "fc_primary_caps",
            alloc::format!("{dim_total} outputs cannot form {pc_count} capsules"),
        ));
    }
    let dim = dim_total / pc_count;
    let x = g.reshape(features, &[b, flat])?;
    let y = g.fully_connected(x, weight, bias)?;
    let caps = g.reshape(y, &[b, pc_count, dim])?;
    squash(g, caps)
}
