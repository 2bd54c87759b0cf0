//! Central-difference gradient oracle.
//!
//! Everything inside this module runs in 64-bit regardless of model
//! precision; 32-bit central differences are dominated by rounding. The
//! oracle never touches an implementation's backward path when producing its
//! numeric side — it only re-evaluates the forward function.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Compares the analytic gradient of `build` (a scalar-valued function of
/// the given leaves) against central differences at `points`.
///
/// Returns the max over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(build: F, points: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    // Analytic side.
    let mut graph = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| graph.leaf(p.clone(), true)).collect();
    let root = build(&mut graph, &vars)?;
    if graph.value(root).numel() != 1 {
        return Err(Error::contract(
            "grad_check",
            "function under test must produce a scalar",
        ));
    }
    graph.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| graph.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    drop(graph);

    let eval = |pts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = pts.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let r = build(&mut g, &vs)?;
        Ok(g.value(r).item())
    };

    let mut work: Vec<Tensor<f64>> = points.to_vec();
    let mut max_rel: f64 = 0.0;
    #[allow(clippy::needless_range_loop)]
    for ti in 0..work.len() {
        for ci in 0..work[ti].numel() {
            let orig = work[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + step;
            let f_plus = eval(&work)?;
            work[ti].data_mut()[ci] = orig - step;
            let f_minus = eval(&work)?;
            work[ti].data_mut()[ci] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let ana = analytic[ti][ci];
            let denom = 1.0f64.max(ana.abs()).max(numeric.abs());
            let rel = (ana - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let point = Tensor::from_vec(&[3], alloc::vec![0.3f64, -1.2, 2.5]).unwrap();
        let err = grad_check(
            |g, vars| {
                let sq = g.square(vars[0]);
                Ok(g.sum_all(sq))
            },
            &[point],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }
}
