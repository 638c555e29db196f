//! Perturbation sweeps over two dimensions of a class capsule's vector,
//! decoded without re-running routing.

use super::image::{render_image_grid, GrayImage, GridLayout};
use super::ExplainError;
use crate::model::{CapsNet, ForwardTrace};
use crate::tensor::Tensor;

pub const DEFAULT_LO: f64 = -0.25;
pub const DEFAULT_HI: f64 = 0.25;
pub const DEFAULT_STEP: f64 = 0.1;

/// Slack for the last offset when `hi - lo` is a multiple of `step` up to
/// rounding.
const GRID_SLACK: f64 = 1e-9;

/// Offsets `lo + k·step` for every `k ≥ 0` that stays within `hi`.
pub fn sweep_offsets(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, ExplainError> {
    const OP: &str = "perturbation_sweep";
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
        return Err(ExplainError::contract(OP, "range and step must be finite"));
    }
    if !(lo < hi) {
        return Err(ExplainError::contract(OP, format!("need lo < hi, got {lo} and {hi}")));
    }
    if !(step > 0.0) {
        return Err(ExplainError::contract(OP, format!("step must be positive, got {step}")));
    }
    let count = ((hi - lo) / step + GRID_SLACK).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    /// Class whose capsule was perturbed.
    pub class: usize,
    /// Class the decoder was masked to.
    pub mask_class: usize,
    /// `(d1, d2)`: `d1` varies down the rows, `d2` across the columns.
    pub dims: (usize, usize),
    pub offsets: Vec<f64>,
    /// Class capsule vectors `[M, R]` before perturbation.
    pub base: Tensor,
    /// Unperturbed reconstruction, flattened.
    pub baseline: Tensor,
    /// `cells[a][b]` decodes offset `(offsets[a], offsets[b])`, flattened.
    pub cells: Vec<Vec<Tensor>>,
}

impl SweepGrid {
    /// Grid position of the `(0, 0)` offset, when the grid contains it.
    pub fn zero_cell(&self) -> Option<(usize, usize)> {
        let z = self.offsets.iter().position(|&o| o == 0.0)?;
        Some((z, z))
    }

    /// Tiles in row-major order, reshaped to `[H, W]`.
    pub fn tiles(&self, height: usize, width: usize) -> Result<Vec<Tensor>, ExplainError> {
        self.cells.iter().flatten().map(|t| Ok(t.clone().reshape(&[height, width])?)).collect()
    }

    pub fn render(&self, height: usize, width: usize, scale: usize) -> Result<GrayImage, ExplainError> {
        let n = self.offsets.len();
        render_image_grid(&self.tiles(height, width)?, GridLayout { rows: n, cols: n }, scale)
    }

    /// Axis description: one line per axis naming the dimension and offsets.
    pub fn axes_text(&self) -> String {
        let offsets: Vec<String> = self.offsets.iter().map(|o| format!("{o:.6}")).collect();
        format!(
            "class={} mask_class={}\nrows=dim{} offsets={}\ncols=dim{} offsets={}\n",
            self.class,
            self.mask_class,
            self.dims.0,
            offsets.join(","),
            self.dims.1,
            offsets.join(",")
        )
    }
}

/// Sweeps the detected class capsule of `image` (`[1, H, W]`).
pub fn perturbation_sweep(
    model: &CapsNet,
    image: &Tensor,
    dims: (usize, usize),
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<SweepGrid, ExplainError> {
    let trace = model.forward(image, None)?;
    sweep_trace(model, &trace, trace.predicted, trace.predicted, dims, lo, hi, step)
}

/// Perturbs class `class` of a recorded pass and decodes every cell masked
/// to `mask_class`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_trace(
    model: &CapsNet,
    trace: &ForwardTrace,
    class: usize,
    mask_class: usize,
    dims: (usize, usize),
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<SweepGrid, ExplainError> {
    const OP: &str = "perturbation_sweep";
    let cfg = model.config();
    let r = cfg.class_dim;
    if dims.0 >= r || dims.1 >= r {
        return Err(ExplainError::contract(OP, format!("dims {dims:?} outside [0, {r})")));
    }
    if class >= cfg.classes || mask_class >= cfg.classes {
        return Err(ExplainError::contract(OP, format!("class outside [0, {})", cfg.classes)));
    }
    let offsets = sweep_offsets(lo, hi, step)?;
    let base = trace.class_output().v.clone();
    let baseline = model.decode(&base, mask_class)?;

    let n = offsets.len();
    let mut batch = Vec::with_capacity(n * n * base.len());
    for &d1 in &offsets {
        for &d2 in &offsets {
            let mut v = base.data().to_vec();
            v[class * r + dims.0] += d1;
            v[class * r + dims.1] += d2;
            batch.extend(v);
        }
    }
    let batch = Tensor::new(vec![n * n, cfg.classes, r], batch)?;
    let mut flat = model.decode_batch(&batch, &vec![mask_class; n * n])?.into_iter();
    let cells = (0..n).map(|_| flat.by_ref().take(n).collect()).collect();
    Ok(SweepGrid { class, mask_class, dims, offsets, base, baseline, cells })
}
