//! Capsule explanation sets: likelihood plus instantiation parameters.

use std::fmt::{self, Write as _};

use crate::model::routing::rank_desc;
use crate::model::{CapsuleCoords, ForwardTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Primary,
    Class,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Primary => "primary",
            Layer::Class => "class",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One capsule's explanation: how likely its entity is present and the
/// pose vector describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleExplanationSet {
    pub id: usize,
    pub layer: Layer,
    /// Euclidean norm of `pose`, in `[0, 1)`.
    pub likelihood: f64,
    pub pose: Vec<f64>,
    /// Block and grid position, for primary capsules.
    pub coords: Option<CapsuleCoords>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleReport {
    pub layer: Layer,
    pub sets: Vec<CapsuleExplanationSet>,
    pub requested: usize,
    /// `requested` exceeded the layer's capsule count and was reduced.
    pub clipped: bool,
}

impl CapsuleReport {
    /// One `key=value` line per capsule, ranked by likelihood.
    pub fn to_text(&self) -> String {
        let mut out = format!("layer={} requested={} returned={} clipped={}\n", self.layer, self.requested, self.sets.len(), self.clipped);
        for (rank, s) in self.sets.iter().enumerate() {
            let _ = write!(out, "rank={} id={}", rank + 1, s.id);
            if let Some(c) = s.coords {
                let _ = write!(out, " block={} row={} col={}", c.block, c.row, c.col);
            }
            let pose: Vec<String> = s.pose.iter().map(|p| format!("{p:.6}")).collect();
            let _ = writeln!(out, " likelihood={:.6} pose={}", s.likelihood, pose.join(","));
        }
        out
    }
}

/// The `top_k` most likely capsules of `layer`, ranked by likelihood with
/// the lower id first on ties. A `top_k` beyond the capsule count is clipped
/// and flagged.
pub fn capsule_report(trace: &ForwardTrace, layer: Layer, top_k: usize) -> CapsuleReport {
    let (lengths, dim, data, layout) = match layer {
        Layer::Primary => (trace.primary.lengths(), trace.primary.u.shape()[1], trace.primary.u.data(), Some(trace.primary.layout)),
        Layer::Class => {
            let class = trace.class_output();
            (class.lengths.clone(), class.v.shape()[1], class.v.data(), None)
        }
    };
    let count = lengths.len();
    let sets = rank_desc(&lengths)
        .into_iter()
        .take(top_k)
        .map(|id| CapsuleExplanationSet {
            id,
            layer,
            likelihood: lengths[id],
            pose: data[id * dim..(id + 1) * dim].to_vec(),
            coords: layout.map(|l| l.coords(id)),
        })
        .collect();
    CapsuleReport { layer, sets, requested: top_k, clipped: top_k > count }
}
