//! Reconstructions of misclassified samples from the predicted, runner-up
//! and true class capsules.

use std::fmt::Write as _;

use super::image::{render_image_grid, GrayImage, GridLayout};
use super::ExplainError;
use crate::model::routing::rank_desc;
use crate::model::CapsNet;
use crate::tensor::Tensor;
use crate::train::{MnistDataset, EVAL_BATCH};

#[derive(Debug, Clone, PartialEq)]
pub struct MisclassReport {
    /// Position in the evaluated dataset.
    pub index: usize,
    /// Source id of the sample.
    pub id: usize,
    /// `[1, H, W]`
    pub image: Tensor,
    pub predicted: usize,
    pub second: usize,
    pub true_label: usize,
    /// Flattened reconstructions masked to each of the three classes.
    pub predicted_reconstruction: Tensor,
    pub second_reconstruction: Tensor,
    pub true_reconstruction: Tensor,
    /// `(class, ‖v_j‖)` by decreasing length, lower class first on ties.
    pub ranking: Vec<(usize, f64)>,
    /// 1-based position of the true class in `ranking`.
    pub true_rank: usize,
}

impl MisclassReport {
    /// Difference between the third and fourth largest lengths.
    pub fn third_fourth_gap(&self) -> Option<f64> {
        Some(self.ranking.get(2)?.1 - self.ranking.get(3)?.1)
    }

    /// Four rows: input, then the predicted, runner-up and true reconstructions.
    pub fn panel(&self, scale: usize) -> Result<GrayImage, ExplainError> {
        let (h, w) = (self.image.shape()[1], self.image.shape()[2]);
        let tiles = [
            self.image.clone(),
            self.predicted_reconstruction.clone().reshape(&[h, w])?,
            self.second_reconstruction.clone().reshape(&[h, w])?,
            self.true_reconstruction.clone().reshape(&[h, w])?,
        ];
        render_image_grid(&tiles, GridLayout { rows: 4, cols: 1 }, scale)
    }

    pub fn to_text(&self) -> String {
        let ranked: Vec<String> = self.ranking.iter().map(|(c, l)| format!("{c}:{l:.6}")).collect();
        let gap = self.third_fourth_gap().map_or("nan".to_string(), |g| format!("{g:.6}"));
        format!(
            "id={} index={} true={} predicted={} second={} true_rank={} gap_3_4={} ranking={}",
            self.id,
            self.index,
            self.true_label,
            self.predicted,
            self.second,
            self.true_rank,
            gap,
            ranked.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisclassSummary {
    pub evaluated: usize,
    pub reports: Vec<MisclassReport>,
}

impl MisclassSummary {
    /// Fraction of misclassifications whose true class ranks first or second.
    pub fn top2_fraction(&self) -> Option<f64> {
        if self.reports.is_empty() {
            return None;
        }
        Some(self.reports.iter().filter(|r| r.true_rank <= 2).count() as f64 / self.reports.len() as f64)
    }

    pub fn mean_third_fourth_gap(&self) -> Option<f64> {
        let gaps: Vec<f64> = self.reports.iter().filter_map(MisclassReport::third_fourth_gap).collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    /// Per-sample lines followed by the aggregate record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            let _ = writeln!(out, "{}", r.to_text());
        }
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        let rank_counts: Vec<String> = (1..=self.reports.iter().map(|r| r.true_rank).max().unwrap_or(0))
            .map(|k| format!("{k}:{}", self.reports.iter().filter(|r| r.true_rank == k).count()))
            .collect();
        let _ = writeln!(
            out,
            "evaluated={} misclassified={} top2_fraction={} mean_gap_3_4={} true_rank_counts={}",
            self.evaluated,
            self.reports.len(),
            fmt(self.top2_fraction()),
            fmt(self.mean_third_fourth_gap()),
            rank_counts.join(",")
        );
        out
    }
}

/// Reports for every sample of `dataset` whose predicted class differs from
/// its label.
pub fn explain_misclassification(model: &CapsNet, dataset: &MnistDataset) -> Result<MisclassSummary, ExplainError> {
    let classes = model.config().classes;
    let mut reports = Vec::new();
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for batch in indices.chunks(EVAL_BATCH) {
        let (images, labels) = dataset.batch(batch);
        let outputs = model.classify(&images)?;
        for ((out, &index), true_label) in outputs.iter().zip(batch).zip(labels) {
            if true_label >= classes {
                return Err(ExplainError::contract("explain_misclassification", format!("label {true_label} outside the model's classes")));
            }
            let order = rank_desc(&out.lengths);
            let predicted = order[0];
            if predicted == true_label {
                continue;
            }
            let second = order[1];
            let targets = [predicted, second, true_label];
            let mut v = Vec::with_capacity(3 * out.v.len());
            for _ in 0..3 {
                v.extend_from_slice(out.v.data());
            }
            let mut shape = vec![3];
            shape.extend_from_slice(out.v.shape());
            let mut recon = model.decode_batch(&Tensor::new(shape, v)?, &targets)?.into_iter();
            reports.push(MisclassReport {
                index,
                id: dataset.id(index),
                image: dataset.image(index),
                predicted,
                second,
                true_label,
                predicted_reconstruction: recon.next().expect("three reconstructions"),
                second_reconstruction: recon.next().expect("three reconstructions"),
                true_reconstruction: recon.next().expect("three reconstructions"),
                ranking: order.iter().map(|&c| (c, out.lengths[c])).collect(),
                true_rank: order.iter().position(|&c| c == true_label).expect("label is a class") + 1,
            });
        }
    }
    Ok(MisclassSummary { evaluated: dataset.len(), reports })
}
