//! Dynamic routing by agreement between primary and class capsules.
//!
//! Logits start at zero. Each iteration normalizes them into couplings,
//! forms `s_j = Σ_i c_ij û_{j|i}`, squashes to `v_j`, and raises the logits
//! by the agreement `û_{j|i} · v_j`. The iteration is recorded into the
//! graph as ordinary nodes, so training differentiates through every step.

use std::sync::atomic::{AtomicU64, Ordering};

use super::config::NormAxis;
use super::squash::{norm, squash_node};
use crate::tensor::{Graph, NodeId, Result, Tensor, TensorError};

/// Tolerance on the coupling sums along the normalization axis.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

static NORMALIZATION_CHECKS: AtomicU64 = AtomicU64::new(0);
static NORMALIZATION_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// `(checked coupling tensors, violations)` across every routing call in
/// this process.
pub fn normalization_stats() -> (u64, u64) {
    (NORMALIZATION_CHECKS.load(Ordering::Relaxed), NORMALIZATION_VIOLATIONS.load(Ordering::Relaxed))
}

/// Coupling coefficients `c[i, j]` and the logits `b[i, j]` they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub c: Tensor,
    pub b: Tensor,
}

impl CouplingMatrix {
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.c.at(&[i, j])
    }

    /// Largest deviation from unit sum along `axis`.
    pub fn normalization_error(&self, axis: NormAxis) -> f64 {
        let (n, m) = (self.c.shape()[0], self.c.shape()[1]);
        let data = self.c.data();
        match axis {
            NormAxis::OverParents => (0..n).map(|i| (data[i * m..(i + 1) * m].iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max),
            NormAxis::OverChildren => (0..m).map(|j| ((0..n).map(|i| data[i * m + j]).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max),
        }
    }
}

/// Class capsule vectors `v[j, :]` and their lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCapsuleOutput {
    pub v: Tensor,
    pub lengths: Vec<f64>,
}

impl ClassCapsuleOutput {
    pub fn from_vectors(v: Tensor) -> Self {
        let r = v.shape()[1];
        let lengths = v.data().chunks_exact(r).map(norm).collect();
        ClassCapsuleOutput { v, lengths }
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        let r = self.v.shape()[1];
        &self.v.data()[j * r..(j + 1) * r]
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.lengths)
    }

    /// Class ids ordered by decreasing length, lower id first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        rank_desc(&self.lengths)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices sorted by decreasing value, ascending index on ties.
pub fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Result of routing one vote tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutcome {
    pub class: ClassCapsuleOutput,
    /// Pre-squash class inputs `s_j` of the final iteration, `[M, R]`.
    pub preactivation: Tensor,
    /// Couplings of every iteration; the last entry is the final coupling.
    pub history: Vec<CouplingMatrix>,
}

impl RoutingOutcome {
    pub fn coupling(&self) -> &CouplingMatrix {
        self.history.last().expect("at least one iteration")
    }
}

/// Graph nodes of a batched routing run.
#[derive(Debug, Clone)]
pub struct RoutingNodes {
    /// `[B, M, R]`
    pub v: NodeId,
    /// `[B, M, R]`, final iteration
    pub s: NodeId,
    /// Per iteration: (couplings, logits), each `[B, N1, M]`.
    pub history: Vec<(NodeId, NodeId)>,
}

fn check_votes(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [b, n, m, r] => Ok((b, n, m, r)),
        _ => Err(TensorError::Dimension { op, detail: format!("votes must be [B,N1,M,R], got {shape:?}") }),
    }
}

/// `s[b, j, :] = Σ_i c[b, i, j] · û[b, i, j, :]`.
pub fn weighted_votes(g: &mut Graph, c: NodeId, votes: NodeId) -> Result<NodeId> {
    let (batch, n, m, r) = check_votes("weighted_votes", g.value(votes).shape())?;
    if g.value(c).shape() != [batch, n, m] {
        return Err(TensorError::Dimension {
            op: "weighted_votes",
            detail: format!("couplings {:?} do not match votes {:?}", g.value(c).shape(), g.value(votes).shape()),
        });
    }
    let (cd, ud) = (g.value(c).data(), g.value(votes).data());
    let mut s = vec![0.0; batch * m * r];
    for b in 0..batch {
        for i in 0..n {
            for j in 0..m {
                let cij = cd[(b * n + i) * m + j];
                let vote = &ud[((b * n + i) * m + j) * r..][..r];
                let dst = &mut s[(b * m + j) * r..][..r];
                for k in 0..r {
                    dst[k] += cij * vote[k];
                }
            }
        }
    }
    let out = Tensor::new(vec![batch, m, r], s)?;
    Ok(g.custom(
        "weighted_votes",
        &[c, votes],
        out,
        Box::new(move |ctx| {
            let (cd, ud, gs) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let gc = ctx.needs[0].then(|| {
                let mut gc = vec![0.0; batch * n * m];
                for b in 0..batch {
                    for i in 0..n {
                        for j in 0..m {
                            let vote = &ud[((b * n + i) * m + j) * r..][..r];
                            let go = &gs[(b * m + j) * r..][..r];
                            gc[(b * n + i) * m + j] = vote.iter().zip(go).map(|(a, b)| a * b).sum();
                        }
                    }
                }
                Tensor::new(vec![batch, n, m], gc).expect("coupling shape")
            });
            let gu = ctx.needs[1].then(|| {
                let mut gu = vec![0.0; ud.len()];
                for b in 0..batch {
                    for i in 0..n {
                        for j in 0..m {
                            let cij = cd[(b * n + i) * m + j];
                            let go = &gs[(b * m + j) * r..][..r];
                            let dst = &mut gu[((b * n + i) * m + j) * r..][..r];
                            for k in 0..r {
                                dst[k] = cij * go[k];
                            }
                        }
                    }
                }
                Tensor::new(vec![batch, n, m, r], gu).expect("vote shape")
            });
            vec![gc, gu]
        }),
    ))
}

/// `a[b, i, j] = û[b, i, j, :] · v[b, j, :]`.
pub fn agreement(g: &mut Graph, votes: NodeId, v: NodeId) -> Result<NodeId> {
    let (batch, n, m, r) = check_votes("agreement", g.value(votes).shape())?;
    if g.value(v).shape() != [batch, m, r] {
        return Err(TensorError::Dimension {
            op: "agreement",
            detail: format!("class vectors {:?} do not match votes {:?}", g.value(v).shape(), g.value(votes).shape()),
        });
    }
    let (ud, vd) = (g.value(votes).data(), g.value(v).data());
    let mut a = vec![0.0; batch * n * m];
    for b in 0..batch {
        for i in 0..n {
            for j in 0..m {
                let vote = &ud[((b * n + i) * m + j) * r..][..r];
                let vj = &vd[(b * m + j) * r..][..r];
                a[(b * n + i) * m + j] = vote.iter().zip(vj).map(|(x, y)| x * y).sum();
            }
        }
    }
    let out = Tensor::new(vec![batch, n, m], a)?;
    Ok(g.custom(
        "agreement",
        &[votes, v],
        out,
        Box::new(move |ctx| {
            let (ud, vd, ga) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let gu = ctx.needs[0].then(|| {
                let mut gu = vec![0.0; ud.len()];
                for b in 0..batch {
                    for i in 0..n {
                        for j in 0..m {
                            let go = ga[(b * n + i) * m + j];
                            let vj = &vd[(b * m + j) * r..][..r];
                            let dst = &mut gu[((b * n + i) * m + j) * r..][..r];
                            for k in 0..r {
                                dst[k] = go * vj[k];
                            }
                        }
                    }
                }
                Tensor::new(vec![batch, n, m, r], gu).expect("vote shape")
            });
            let gv = ctx.needs[1].then(|| {
                let mut gv = vec![0.0; batch * m * r];
                for b in 0..batch {
                    for i in 0..n {
                        for j in 0..m {
                            let go = ga[(b * n + i) * m + j];
                            let vote = &ud[((b * n + i) * m + j) * r..][..r];
                            let dst = &mut gv[(b * m + j) * r..][..r];
                            for k in 0..r {
                                dst[k] += go * vote[k];
                            }
                        }
                    }
                }
                Tensor::new(vec![batch, m, r], gv).expect("class shape")
            });
            vec![gu, gv]
        }),
    ))
}

fn record_normalization(c: &Tensor, axis: NormAxis) {
    let (batch, n, m) = (c.shape()[0], c.shape()[1], c.shape()[2]);
    let mut worst: f64 = 0.0;
    for b in 0..batch {
        let slice = &c.data()[b * n * m..(b + 1) * n * m];
        match axis {
            NormAxis::OverParents => {
                for row in slice.chunks_exact(m) {
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
            NormAxis::OverChildren => {
                for j in 0..m {
                    worst = worst.max(((0..n).map(|i| slice[i * m + j]).sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    NORMALIZATION_CHECKS.fetch_add(1, Ordering::Relaxed);
    if !(worst <= NORMALIZATION_TOLERANCE) {
        NORMALIZATION_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
}

/// Records `iterations` routing steps on batched votes `[B, N1, M, R]`.
pub fn route_nodes(g: &mut Graph, votes: NodeId, iterations: usize, axis: NormAxis) -> Result<RoutingNodes> {
    if iterations < 1 {
        return Err(TensorError::Contract { op: "route", detail: "at least one routing iteration required".into() });
    }
    let (batch, n, m, _) = check_votes("route", g.value(votes).shape())?;
    let mut logits = g.constant(Tensor::zeros(&[batch, n, m]));
    let mut history = Vec::with_capacity(iterations);
    let mut v = None;
    let mut s = None;
    for it in 0..iterations {
        let c = g.softmax(logits, axis.softmax_axis())?;
        record_normalization(g.value(c), axis);
        history.push((c, logits));
        let sj = weighted_votes(g, c, votes)?;
        let vj = squash_node(g, sj)?;
        if it + 1 < iterations {
            let a = agreement(g, votes, vj)?;
            logits = g.add(logits, a)?;
        }
        s = Some(sj);
        v = Some(vj);
    }
    Ok(RoutingNodes { v: v.expect("iterations >= 1"), s: s.expect("iterations >= 1"), history })
}

/// Slices sample `b` out of a `[B, ...]` tensor.
pub(crate) fn sample_slice(t: &Tensor, b: usize) -> Tensor {
    let inner: usize = t.shape()[1..].iter().product();
    Tensor::new(t.shape()[1..].to_vec(), t.data()[b * inner..(b + 1) * inner].to_vec()).expect("slice of valid tensor")
}

/// Collects sample `b` of a batched routing run.
pub fn outcome_for_sample(g: &Graph, nodes: &RoutingNodes, b: usize) -> RoutingOutcome {
    RoutingOutcome {
        class: ClassCapsuleOutput::from_vectors(sample_slice(g.value(nodes.v), b)),
        preactivation: sample_slice(g.value(nodes.s), b),
        history: nodes
            .history
            .iter()
            .map(|&(c, logits)| CouplingMatrix { c: sample_slice(g.value(c), b), b: sample_slice(g.value(logits), b) })
            .collect(),
    }
}

/// Routes a single vote tensor `[N1, M, R]`.
pub fn route(votes: &Tensor, iterations: usize, axis: NormAxis) -> Result<RoutingOutcome> {
    let shape = votes.shape();
    if shape.len() != 3 {
        return Err(TensorError::Dimension { op: "route", detail: format!("votes must be [N1,M,R], got {shape:?}") });
    }
    let mut batched = vec![1];
    batched.extend_from_slice(shape);
    let mut g = Graph::new();
    let u = g.constant(votes.clone().reshape(&batched)?);
    let nodes = route_nodes(&mut g, u, iterations, axis)?;
    Ok(outcome_for_sample(&g, &nodes, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(n: usize, m: usize, r: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![n, m, r], data).unwrap()
    }

    #[test]
    fn two_identical_votes_over_parents() {
        let out = route(&votes(2, 1, 2, vec![1.0, 0.0, 1.0, 0.0]), 3, NormAxis::OverParents).unwrap();
        assert_eq!(out.coupling().c.data(), &[1.0, 1.0]);
        let v = out.class.vector(0);
        assert!((v[0] - 0.8).abs() < 1e-12 && v[1] == 0.0);
    }

    #[test]
    fn two_identical_votes_over_children() {
        let out = route(&votes(2, 1, 2, vec![1.0, 0.0, 1.0, 0.0]), 3, NormAxis::OverChildren).unwrap();
        for &c in out.coupling().c.data() {
            assert!((c - 0.5).abs() < 1e-15);
        }
        let v = out.class.vector(0);
        assert!((v[0] - 0.5).abs() < 1e-12 && v[1] == 0.0);
    }

    #[test]
    fn history_length_and_iteration_contract() {
        let u = votes(3, 2, 2, (0..12).map(|x| x as f64 * 0.1 - 0.5).collect());
        for iters in 1..5 {
            assert_eq!(route(&u, iters, NormAxis::OverParents).unwrap().history.len(), iters);
        }
        assert!(matches!(route(&u, 0, NormAxis::OverParents), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn first_iteration_is_uniform() {
        let u = votes(4, 3, 2, (0..24).map(|x| (x as f64).sin()).collect());
        let out = route(&u, 3, NormAxis::OverParents).unwrap();
        assert!(out.history[0].c.data().iter().all(|&c| (c - 1.0 / 3.0).abs() < 1e-15));
        assert!(out.history[0].b.data().iter().all(|&b| b == 0.0));
        for cm in &out.history {
            assert!(cm.normalization_error(NormAxis::OverParents) <= NORMALIZATION_TOLERANCE);
        }
    }

    #[test]
    fn ranking_ties_prefer_lower_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
        assert_eq!(rank_desc(&[0.1, 0.3, 0.3, 0.0]), vec![1, 2, 0, 3]);
    }
}
