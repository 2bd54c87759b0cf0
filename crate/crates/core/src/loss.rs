//! Margin loss, reconstruction loss, and their combination.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Element, Tensor};

/// Margin-loss constants: per-class hinge-squared with an upper margin for
/// the present class, a lower margin for absent ones, and a down-weighting
/// factor for the absent-class terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossParams {
    pub m_plus: f32,
    pub m_minus: f32,
    pub lambda_down: f32,
}

impl Default for MarginLossParams {
    fn default() -> Self {
        MarginLossParams { m_plus: 0.9, m_minus: 0.1, lambda_down: 0.5 }
    }
}

impl MarginLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) {
            return Err(Error::config(format!(
                "margin params require 0 < m_minus < m_plus < 1, got {self:?}"
            )));
        }
        if self.lambda_down <= 0.0 {
            return Err(Error::config("lambda_down must be positive"));
        }
        Ok(())
    }
}

fn check_one_hot<T: Element>(labels: &Tensor<T>) -> Result<()> {
    if labels.shape().len() != 2 {
        return Err(Error::contract(
            "margin_loss",
            format!("labels must be [b,K] one-hot, got {:?}", labels.shape()),
        ));
    }
    let k = labels.shape()[1];
    for row in labels.data().chunks_exact(k) {
        let mut ones = 0usize;
        for &v in row {
            if v == T::one() {
                ones += 1;
            } else if v != T::zero() {
                return Err(Error::contract("margin_loss", "labels not one-hot"));
            }
        }
        if ones != 1 {
            return Err(Error::contract("margin_loss", "labels not one-hot"));
        }
    }
    Ok(())
}

/// Mean over the batch of
/// `sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2`.
pub fn margin_loss<T: Element>(
    g: &mut Graph<T>,
    lengths: Var,
    labels_one_hot: &Tensor<T>,
    params: &MarginLossParams,
) -> Result<Var> {
    params.validate()?;
    check_one_hot(labels_one_hot)?;
    if g.value(lengths).shape() != labels_one_hot.shape() {
        return Err(Error::shape(
            "margin_loss",
            format!(
                "lengths {:?} vs labels {:?}",
                g.value(lengths).shape(),
                labels_one_hot.shape()
            ),
        ));
    }
    let lam = T::from_f64(params.lambda_down as f64);
    let present = g.constant(labels_one_hot.clone());
    let absent_scaled: Vec<T> = labels_one_hot
        .data()
        .iter()
        .map(|&t| lam * (T::one() - t))
        .collect();
    let absent = {
        let t = Tensor::from_vec(labels_one_hot.shape(), absent_scaled)?;
        g.constant(t)
    };

    let m_plus = T::from_f64(params.m_plus as f64);
    let m_minus = T::from_f64(params.m_minus as f64);

    let under = g.affine_map(lengths, -T::one(), m_plus);
    let under_hinge = g.relu(under);
    let under_sq = g.square(under_hinge);
    let present_term = g.mul(present, under_sq)?;

    let over = g.affine_map(lengths, T::one(), -m_minus);
    let over_hinge = g.relu(over);
    let over_sq = g.square(over_hinge);
    let absent_term = g.mul(absent, over_sq)?;

    let per_class = g.add(present_term, absent_term)?;
    let per_sample = g.reduce_sum(per_class, 1)?;
    g.reduce_mean(per_sample, 0)
}

/// `weight *` sum of squared differences per sample, averaged over the
/// batch. Shapes must agree exactly.
pub fn reconstruction_loss<T: Element>(
    g: &mut Graph<T>,
    reconstruction: Var,
    target: Var,
    weight: f32,
) -> Result<Var> {
    let rs = g.value(reconstruction).shape().to_vec();
    let ts = g.value(target).shape().to_vec();
    if rs != ts {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("reconstruction {rs:?} vs target {ts:?}"),
        ));
    }
    if rs.is_empty() {
        return Err(Error::shape("reconstruction_loss", "inputs must be batched"));
    }
    let b = rs[0];
    let per: usize = rs[1..].iter().product();
    let diff = g.sub(reconstruction, target)?;
    let sq = g.square(diff);
    let flat = g.reshape(sq, &[b, per])?;
    let per_sample = g.reduce_sum(flat, 1)?;
    let mean = g.reduce_mean(per_sample, 0)?;
    Ok(g.affine_map(mean, T::from_f64(weight as f64), T::zero()))
}

/// margin_loss + weighted reconstruction loss.
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    lengths: Var,
    labels_one_hot: &Tensor<T>,
    margin: &MarginLossParams,
    reconstruction: Var,
    target: Var,
    recon_weight: f32,
) -> Result<Var> {
    let m = margin_loss(g, lengths, labels_one_hot, margin)?;
    let r = reconstruction_loss(g, reconstruction, target, recon_weight)?;
    g.add(m, r)
}
