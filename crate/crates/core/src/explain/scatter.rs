//! Two-dimensional class capsule outputs of the detected digit, with
//! per-class centroids to surface overlapping classes.

use std::fmt::Write as _;

use super::ExplainError;
use crate::model::CapsNet;
use crate::train::{MnistDataset, EVAL_BATCH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRecord {
    /// Source id of the sample.
    pub id: usize,
    pub true_label: usize,
    pub predicted: usize,
    /// Predicted class capsule vector.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterExport {
    pub records: Vec<ScatterRecord>,
    /// Mean `(x, y)` of the records of each true class; `None` when absent.
    pub centroids: Vec<Option<(f64, f64)>>,
    /// Euclidean distances between centroids; NaN where a class is absent.
    pub distances: Vec<Vec<f64>>,
}

pub const CSV_HEADER: &str = "id,true_label,predicted_label,x,y";

impl ScatterExport {
    /// Class pairs `(a, b, distance)` with `a < b`, closest first, ties by pair.
    pub fn closest_pairs(&self, n: usize) -> Vec<(usize, usize, f64)> {
        let mut pairs = Vec::new();
        for a in 0..self.distances.len() {
            for b in a + 1..self.distances.len() {
                let d = self.distances[a][b];
                if d.is_finite() {
                    pairs.push((a, b, d));
                }
            }
        }
        pairs.sort_by(|p, q| p.2.total_cmp(&q.2).then((p.0, p.1).cmp(&(q.0, q.1))));
        pairs.truncate(n);
        pairs
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{:.9},{:.9}", r.id, r.true_label, r.predicted, r.x, r.y);
        }
        out
    }

    /// Centroids, distance matrix and the closest pairs as `key=value` lines.
    pub fn summary(&self, closest: usize) -> String {
        let mut out = format!("records={}\n", self.records.len());
        for (c, centroid) in self.centroids.iter().enumerate() {
            match centroid {
                Some((x, y)) => {
                    let count = self.records.iter().filter(|r| r.true_label == c).count();
                    let _ = writeln!(out, "centroid class={c} count={count} x={x:.6} y={y:.6}");
                }
                None => {
                    let _ = writeln!(out, "centroid class={c} count=0");
                }
            }
        }
        for (a, row) in self.distances.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|d| format!("{d:.6}")).collect();
            let _ = writeln!(out, "distance_row class={a} {}", cells.join(","));
        }
        for (rank, (a, b, d)) in self.closest_pairs(closest).into_iter().enumerate() {
            let _ = writeln!(out, "closest rank={} pair={a}/{b} distance={d:.6}", rank + 1);
        }
        out
    }
}

/// One record per sample of `dataset`, in dataset order.
pub fn export_class_outputs(model: &CapsNet, dataset: &MnistDataset) -> Result<ScatterExport, ExplainError> {
    let cfg = model.config();
    if cfg.class_dim != 2 {
        return Err(ExplainError::Unsupported(format!(
            "scatter export is defined only for 2-D class capsules, model has R = {}",
            cfg.class_dim
        )));
    }
    let mut records = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for batch in indices.chunks(EVAL_BATCH) {
        let (images, labels) = dataset.batch(batch);
        for ((out, &i), label) in model.classify(&images)?.iter().zip(batch).zip(labels) {
            let predicted = out.predicted();
            let v = out.vector(predicted);
            records.push(ScatterRecord { id: dataset.id(i), true_label: label, predicted, x: v[0], y: v[1] });
        }
    }

    let classes = cfg.classes;
    let mut sums = vec![(0.0, 0.0, 0usize); classes];
    for r in &records {
        if let Some(s) = sums.get_mut(r.true_label) {
            s.0 += r.x;
            s.1 += r.y;
            s.2 += 1;
        }
    }
    let centroids: Vec<Option<(f64, f64)>> = sums.iter().map(|&(x, y, n)| (n > 0).then(|| (x / n as f64, y / n as f64))).collect();
    let distances = (0..classes)
        .map(|a| {
            (0..classes)
                .map(|b| match (centroids[a], centroids[b]) {
                    (Some(p), Some(q)) => ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt(),
                    _ => f64::NAN,
                })
                .collect()
        })
        .collect();
    Ok(ScatterExport { records, centroids, distances })
}
