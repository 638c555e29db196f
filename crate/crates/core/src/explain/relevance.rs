//! Relevance paths: which primary capsules carried a class capsule, scored by
//! coupling times agreement.

use std::fmt::Write as _;

use super::ExplainError;
use crate::model::routing::rank_desc;
use crate::model::{CapsuleCoords, CapsuleLayout, ForwardTrace, RoutingOutcome};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceEntry {
    pub id: usize,
    pub coords: Option<CapsuleCoords>,
    /// Final-iteration coupling `c_ij`.
    pub coupling: f64,
    /// `û_{j|i} · v_j`
    pub agreement: f64,
    /// `c_ij · (û_{j|i} · v_j)`
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockContribution {
    pub block: usize,
    pub score: f64,
    pub capsules: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevancePath {
    pub class: usize,
    /// Top entries by score, descending; lower id first on ties.
    pub entries: Vec<RelevanceEntry>,
    /// Score sums over all capsules of each block, in block order.
    pub blocks: Vec<BlockContribution>,
    /// Number of primary capsules scored.
    pub candidates: usize,
}

impl RelevancePath {
    pub fn to_text(&self) -> String {
        let mut out = format!("class={} candidates={} returned={}\n", self.class, self.candidates, self.entries.len());
        for (rank, e) in self.entries.iter().enumerate() {
            let _ = write!(out, "rank={} id={}", rank + 1, e.id);
            if let Some(c) = e.coords {
                let _ = write!(out, " block={} row={} col={}", c.block, c.row, c.col);
            }
            let _ = writeln!(out, " coupling={:.6} agreement={:.6} score={:.6}", e.coupling, e.agreement, e.score);
        }
        for b in &self.blocks {
            let _ = writeln!(out, "block={} capsules={} score_sum={:.6}", b.block, b.capsules, b.score);
        }
        out
    }
}

/// Relevance path for class `class` of a recorded forward pass.
pub fn extract_relevance_path(trace: &ForwardTrace, class: usize, k: usize) -> Result<RelevancePath, ExplainError> {
    relevance_path(&trace.votes, &trace.routing, Some(trace.primary.layout), class, k)
}

/// Relevance path from votes `[N1, M, R]` and their routing outcome. Without
/// a layout every capsule counts as block 0.
pub fn relevance_path(
    votes: &Tensor,
    routing: &RoutingOutcome,
    layout: Option<CapsuleLayout>,
    class: usize,
    k: usize,
) -> Result<RelevancePath, ExplainError> {
    const OP: &str = "extract_relevance_path";
    let [n, m, r] = *votes.shape() else {
        return Err(ExplainError::contract(OP, format!("votes must be [N1, M, R], got {:?}", votes.shape())));
    };
    if class >= m {
        return Err(ExplainError::contract(OP, format!("class {class} outside [0, {m})")));
    }
    let coupling = routing.coupling();
    if coupling.c.shape() != [n, m] || routing.class.v.shape() != [m, r] {
        return Err(ExplainError::contract(OP, "routing outcome does not match the votes"));
    }
    if let Some(l) = layout {
        if l.len() != n {
            return Err(ExplainError::contract(OP, format!("layout describes {} capsules, votes hold {n}", l.len())));
        }
    }

    let v = routing.class.vector(class);
    let scored: Vec<RelevanceEntry> = (0..n)
        .map(|i| {
            let u = &votes.data()[(i * m + class) * r..(i * m + class + 1) * r];
            let agreement: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let c = coupling.coupling(i, class);
            RelevanceEntry { id: i, coords: layout.map(|l| l.coords(i)), coupling: c, agreement, score: c * agreement }
        })
        .collect();

    let blocks_count = layout.map_or(1, |l| l.blocks);
    let mut blocks: Vec<BlockContribution> = (0..blocks_count).map(|block| BlockContribution { block, score: 0.0, capsules: 0 }).collect();
    for e in &scored {
        let b = &mut blocks[e.coords.map_or(0, |c| c.block)];
        b.score += e.score;
        b.capsules += 1;
    }

    let scores: Vec<f64> = scored.iter().map(|e| e.score).collect();
    let entries = rank_desc(&scores).into_iter().take(k).map(|i| scored[i].clone()).collect();
    Ok(RelevancePath { class, entries, blocks, candidates: n })
}

/// `Σ_i c_ij · û_{j|i}` from final-iteration couplings; equals the class
/// pre-activation `s_j` when the path decomposes it exactly.
pub fn weighted_vote_sum(votes: &Tensor, routing: &RoutingOutcome, class: usize) -> Vec<f64> {
    let [n, m, r] = *votes.shape() else { panic!("votes must be [N1, M, R]") };
    let c = &routing.coupling().c;
    let mut s = vec![0.0; r];
    for i in 0..n {
        let cij = c.at(&[i, class]);
        for (q, acc) in s.iter_mut().enumerate() {
            *acc += cij * votes.data()[(i * m + class) * r + q];
        }
    }
    s
}
