//! The squashing nonlinearity `v = (‖s‖² / (1 + ‖s‖²)) · s / ‖s‖`.
//!
//! Computed as `v = s · ‖s‖ / (1 + ‖s‖²)`, which has the same value, needs no
//! division by `‖s‖`, and yields `v = 0` at `s = 0`. The Jacobian at the
//! origin is zero (the analytic limit).

use crate::tensor::{Graph, NodeId, Result, Tensor, TensorError};

/// Squashes one vector into `out`.
pub fn squash_into(s: &[f64], out: &mut [f64]) {
    let norm_sq: f64 = s.iter().map(|x| x * x).sum();
    let norm = norm_sq.sqrt();
    let scale = norm / (1.0 + norm_sq);
    for (o, &x) in out.iter_mut().zip(s) {
        *o = x * scale;
    }
}

pub fn squash_vec(s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    squash_into(s, &mut out);
    out
}

/// Squashes every vector along the final axis.
pub fn squash(s: &Tensor) -> Result<Tensor> {
    let dim = *s.shape().last().ok_or_else(|| TensorError::Dimension { op: "squash", detail: "rank-0 input".into() })?;
    let mut out = vec![0.0; s.len()];
    for (src, dst) in s.data().chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        squash_into(src, dst);
    }
    Tensor::new(s.shape().to_vec(), out)
}

/// Vector-Jacobian product for one vector.
///
/// With `g(n) = n / (1 + n²)`: `∂v/∂s = g·I + (g'(n)/n)·s sᵀ` and
/// `g'(n) = (1 − n²) / (1 + n²)²`.
fn squash_vjp(s: &[f64], grad: &[f64], out: &mut [f64]) {
    let norm_sq: f64 = s.iter().map(|x| x * x).sum();
    if norm_sq == 0.0 {
        out.fill(0.0);
        return;
    }
    let norm = norm_sq.sqrt();
    let denom = 1.0 + norm_sq;
    let g = norm / denom;
    let radial = (1.0 - norm_sq) / (denom * denom * norm);
    let dot: f64 = s.iter().zip(grad).map(|(a, b)| a * b).sum();
    for ((o, &x), &gv) in out.iter_mut().zip(s).zip(grad) {
        *o = g * gv + radial * dot * x;
    }
}

/// Graph node squashing along the final axis.
pub fn squash_node(g: &mut Graph, s: NodeId) -> Result<NodeId> {
    let out = squash(g.value(s))?;
    Ok(g.custom(
        "squash",
        &[s],
        out,
        Box::new(|ctx| {
            let s = ctx.inputs[0];
            let dim = *s.shape().last().expect("checked in forward");
            let mut gs = vec![0.0; s.len()];
            for ((src, gv), dst) in s.data().chunks_exact(dim).zip(ctx.grad.data().chunks_exact(dim)).zip(gs.chunks_exact_mut(dim)) {
                squash_vjp(src, gv, dst);
            }
            vec![Some(Tensor::new(s.shape().to_vec(), gs).expect("same shape as input"))]
        }),
    ))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
