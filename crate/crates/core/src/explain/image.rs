//! Grayscale panels as binary PGM (P5, maxval 255).

use super::ExplainError;
use crate::tensor::Tensor;

/// Value of the 1-pixel separators and the outer border.
pub const SEPARATOR: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// P5 encoding: `P5\n<width> <height>\n255\n` followed by row-major bytes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Tiles per row and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

/// `[0, 1] → [0, 255]`, clamped, rounding half up; NaN maps to 0.
pub fn to_byte(value: f64) -> u8 {
    if value.is_nan() {
        return 0;
    }
    (value.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn tile_dims(t: &Tensor) -> Option<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return None;
    }
    Some((s[s.len() - 2], s[s.len() - 1]))
}

/// Places `images` row-major on a `layout` grid, each pixel repeated
/// `scale x scale`, with 1-pixel separators between and around tiles.
/// Grid cells beyond the image count stay black.
///
/// Every image must have shape `[.., H, W]` with leading dimensions of 1.
pub fn render_image_grid(images: &[Tensor], layout: GridLayout, scale: usize) -> Result<GrayImage, ExplainError> {
    const OP: &str = "render_image_grid";
    let first = images.first().ok_or_else(|| ExplainError::contract(OP, "no images to render"))?;
    let (h, w) =
        tile_dims(first).ok_or_else(|| ExplainError::contract(OP, format!("image shape {:?} is not [.., H, W]", first.shape())))?;
    if images.iter().any(|t| tile_dims(t) != Some((h, w))) {
        return Err(ExplainError::contract(OP, "all images must share one shape"));
    }
    if scale == 0 || layout.rows == 0 || layout.cols == 0 {
        return Err(ExplainError::contract(OP, "scale and layout must be positive"));
    }
    if images.len() > layout.rows * layout.cols {
        return Err(ExplainError::contract(OP, format!("{} images do not fit a {}x{} grid", images.len(), layout.rows, layout.cols)));
    }

    let (th, tw) = (h * scale, w * scale);
    let width = layout.cols * (tw + 1) + 1;
    let height = layout.rows * (th + 1) + 1;
    let mut pixels = vec![SEPARATOR; width * height];
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            let (x0, y0) = (c * (tw + 1) + 1, r * (th + 1) + 1);
            let tile = images.get(r * layout.cols + c);
            for y in 0..th {
                let row = &mut pixels[(y0 + y) * width + x0..(y0 + y) * width + x0 + tw];
                for (x, px) in row.iter_mut().enumerate() {
                    *px = tile.map_or(0, |t| to_byte(t.data()[(y / scale) * w + x / scale]));
                }
            }
        }
    }
    Ok(GrayImage { width, height, pixels })
}
