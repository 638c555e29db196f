//! Central-difference gradient checking.

use super::{Graph, NodeId, Result, Tensor, TensorError};

/// Denominator guard in the relative error `|analytic − numeric| / (|numeric| + 1e-8)`.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// Outcome of a gradient check.
///
/// Errors are measured per parameter tensor, with `|·|` the Euclidean norm
/// over the compared coordinates. The per-coordinate maximum is kept as a
/// diagnostic: coordinates whose true gradient is near the floor are
/// dominated by rounding noise of the forward pass and say little about
/// the correctness of the backward rules.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over parameters of `‖a − n‖ / (‖n‖ + 1e-8)`.
    pub max_relative_error: f64,
    /// Per-parameter relative errors, in `point` order.
    pub per_parameter: Vec<f64>,
    /// Max over coordinates of `|a − n| / (|n| + 1e-8)`.
    pub max_coordinate_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a ±eps probe crossed a relu kink.
    pub excluded: usize,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences at `point`.
///
/// `build` receives one node per tensor in `point` and must return a
/// one-element loss. Coordinates where the relu activation pattern differs
/// between the base point and either probe are excluded rather than failed.
pub fn grad_check<F>(build: F, point: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(TensorError::contract("grad_check", format!("eps must be positive, got {eps}")));
    }

    let mut g = Graph::new();
    let ids: Vec<NodeId> = point.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let base_pattern = g.relu_pattern();
    let mut grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.take(id).expect("leaf gradient")).collect();
    drop(g);

    let evaluate = |values: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        let value = g.value(loss).item().ok_or_else(|| TensorError::contract("grad_check", "loss must be scalar"))?;
        Ok((value, g.relu_pattern()))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        per_parameter: Vec::with_capacity(point.len()),
        max_coordinate_error: 0.0,
        checked: 0,
        excluded: 0,
        worst: None,
    };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (p, tensor) in point.iter().enumerate() {
        let (mut diff_sq, mut numeric_sq) = (0.0, 0.0);
        for k in 0..tensor.len() {
            let original = tensor.data()[k];
            probe[p].data_mut()[k] = original + eps;
            let (plus, plus_pattern) = evaluate(&probe)?;
            probe[p].data_mut()[k] = original - eps;
            let (minus, minus_pattern) = evaluate(&probe)?;
            probe[p].data_mut()[k] = original;

            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let diff = analytic[p].data()[k] - numeric;
            diff_sq += diff * diff;
            numeric_sq += numeric * numeric;
            let err = diff.abs() / (numeric.abs() + RELATIVE_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_coordinate_error {
                report.max_coordinate_error = err;
                report.worst = Some((p, k));
            }
        }
        let err = diff_sq.sqrt() / (numeric_sq.sqrt() + RELATIVE_FLOOR);
        report.per_parameter.push(err);
        report.max_relative_error = report.max_relative_error.max(err);
    }
    Ok(report)
}
