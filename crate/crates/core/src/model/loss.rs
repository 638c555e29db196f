//! Margin loss on class-capsule lengths and the reconstruction penalty.

use crate::tensor::{Graph, NodeId, ReduceKind, Result, Tensor, TensorError};

pub const MARGIN_PRESENT: f64 = 0.9;
pub const MARGIN_ABSENT: f64 = 0.1;
pub const ABSENT_WEIGHT: f64 = 0.5;
/// Weight of the reconstruction term in the training objective.
pub const RECONSTRUCTION_SCALE: f64 = 0.0005;

fn check_label(op: &'static str, label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(TensorError::Contract { op, detail: format!("label {label} outside [0, {classes})") });
    }
    Ok(())
}

/// `Σ_j T_j max(0, m⁺ − ‖v_j‖)² + λ (1 − T_j) max(0, ‖v_j‖ − m⁻)²`.
pub fn margin_loss(lengths: &[f64], label: usize) -> Result<f64> {
    check_label("margin_loss", label, lengths.len())?;
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(j, &len)| {
            if j == label {
                let d = (MARGIN_PRESENT - len).max(0.0);
                d * d
            } else {
                let d = (len - MARGIN_ABSENT).max(0.0);
                ABSENT_WEIGHT * d * d
            }
        })
        .sum())
}

/// Unscaled sum of squared errors.
pub fn reconstruction_loss(input: &[f64], recon: &[f64]) -> f64 {
    debug_assert_eq!(input.len(), recon.len());
    input.iter().zip(recon).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Batch-mean margin loss from `[B, M]` lengths.
pub fn margin_loss_node(g: &mut Graph, lengths: NodeId, labels: &[usize]) -> Result<NodeId> {
    let shape = g.value(lengths).shape().to_vec();
    let (batch, classes) = match shape[..] {
        [b, m] if b == labels.len() => (b, m),
        _ => return Err(TensorError::Dimension { op: "margin_loss", detail: format!("lengths {shape:?} for {} labels", labels.len()) }),
    };
    let mut present = vec![0.0; batch * classes];
    let mut absent = vec![ABSENT_WEIGHT; batch * classes];
    for (b, &label) in labels.iter().enumerate() {
        check_label("margin_loss", label, classes)?;
        present[b * classes + label] = 1.0;
        absent[b * classes + label] = 0.0;
    }
    let present = g.constant(Tensor::new(shape.clone(), present)?);
    let absent = g.constant(Tensor::new(shape, absent)?);

    let short = g.affine(lengths, -1.0, MARGIN_PRESENT);
    let short = g.relu(short);
    let short = g.square(short);
    let short = g.mul(short, present)?;
    let long = g.affine(lengths, 1.0, -MARGIN_ABSENT);
    let long = g.relu(long);
    let long = g.square(long);
    let long = g.mul(long, absent)?;
    let total = g.add(short, long)?;
    let total = g.sum(total);
    Ok(g.affine(total, 1.0 / batch as f64, 0.0))
}

/// Batch-mean sum of squared errors between `[B, P]` tensors.
pub fn reconstruction_loss_node(g: &mut Graph, input: NodeId, recon: NodeId) -> Result<NodeId> {
    let batch = g.value(input).shape()[0];
    let diff = g.sub(recon, input)?;
    let sq = g.square(diff);
    let total = g.reduce(ReduceKind::Sum, sq, None)?;
    Ok(g.affine(total, 1.0 / batch as f64, 0.0))
}
