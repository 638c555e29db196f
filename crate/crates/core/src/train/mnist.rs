//! MNIST in the IDX container: big-endian magic, dimension records, raw bytes.

use std::fmt;
use std::path::Path;

use super::TrainError;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of digit classes.
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// Conventional `(images, labels)` file names.
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

/// Raw `u8` images with labels; pixels are normalized to `[0, 1]` on access.
///
/// `ids` are positions in the source files, preserved by [`MnistDataset::select`]
/// so that reports can name samples after subsetting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistDataset {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    ids: Vec<usize>,
    split: Split,
}

impl MnistDataset {
    /// Builds a dataset from raw parts, enforcing the count and label invariants.
    pub fn from_raw(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>, split: Split) -> Result<Self, TrainError> {
        let size = rows * cols;
        if size == 0 || !pixels.len().is_multiple_of(size) {
            return Err(TrainError::Consistency(format!("{} pixel bytes do not form {rows}x{cols} images", pixels.len())));
        }
        let count = pixels.len() / size;
        if count != labels.len() {
            return Err(TrainError::Consistency(format!("{count} images but {} labels", labels.len())));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= CLASSES) {
            return Err(TrainError::Consistency(format!("label {} at index {i} is not a digit", labels[i])));
        }
        Ok(MnistDataset { rows, cols, pixels, labels, ids: (0..count).collect(), split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Raw bytes of sample `i`.
    pub fn raw_image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| l as usize)
    }

    /// Source-file position of sample `i`.
    pub fn id(&self, i: usize) -> usize {
        self.ids[i]
    }

    /// Sample `i` as a `[1, H, W]` tensor in `[0, 1]`.
    pub fn image(&self, i: usize) -> Tensor {
        Tensor::new(vec![1, self.rows, self.cols], normalize(self.raw_image(i))).expect("image shape")
    }

    /// Samples at `indices` as a `[B, 1, H, W]` tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.rows * self.cols);
        for &i in indices {
            data.extend(self.raw_image(i).iter().map(|&p| f64::from(p) / 255.0));
        }
        let images = Tensor::new(vec![indices.len(), 1, self.rows, self.cols], data).expect("batch shape");
        (images, indices.iter().map(|&i| self.label(i)).collect())
    }

    /// New dataset with the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> MnistDataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.rows * self.cols);
        for &i in indices {
            pixels.extend_from_slice(self.raw_image(i));
        }
        MnistDataset {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            split: self.split,
        }
    }

    /// First `n` samples (all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> MnistDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

fn normalize(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&p| f64::from(p) / 255.0).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32, TrainError> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| TrainError::Format {
            file: self.what,
            offset: self.bytes.len(),
            detail: format!("truncated header: need {end} bytes"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }
}

fn check_magic(r: &mut Reader<'_>, expected: u32) -> Result<(), TrainError> {
    let magic = r.u32()?;
    if magic != expected {
        return Err(TrainError::Format { file: r.what, offset: 0, detail: format!("magic {magic:#010x}, expected {expected:#010x}") });
    }
    Ok(())
}

fn payload<'a>(r: &Reader<'a>, len: usize) -> Result<&'a [u8], TrainError> {
    let end = r.pos + len;
    if r.bytes.len() < end {
        return Err(TrainError::Format {
            file: r.what,
            offset: r.bytes.len(),
            detail: format!("truncated payload: need {end} bytes, file has {}", r.bytes.len()),
        });
    }
    if r.bytes.len() > end {
        return Err(TrainError::Format { file: r.what, offset: end, detail: format!("{} trailing bytes", r.bytes.len() - end) });
    }
    Ok(&r.bytes[r.pos..end])
}

/// Parses an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), TrainError> {
    let mut r = Reader { bytes, pos: 0, what: "images" };
    check_magic(&mut r, IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(TrainError::Format { file: "images", offset: 8, detail: format!("degenerate image size {rows}x{cols}") });
    }
    let data = payload(&r, count * rows * cols)?;
    Ok((count, rows, cols, data.to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, TrainError> {
    let mut r = Reader { bytes, pos: 0, what: "labels" };
    check_magic(&mut r, LABELS_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(payload(&r, count)?.to_vec())
}

/// Serializes images in the IDX layout (used for fixtures).
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Serializes labels in the IDX layout.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads a matching pair of IDX files.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<MnistDataset, TrainError> {
    let read = |p: &Path| std::fs::read(p).map_err(|source| TrainError::Io { path: p.to_path_buf(), source });
    let (count, rows, cols, pixels) = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    if count != labels.len() {
        return Err(TrainError::Consistency(format!(
            "{} holds {count} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    MnistDataset::from_raw(rows, cols, pixels, labels, split)
}

/// Loads `split` from a directory holding the conventional file names.
pub fn load_split(dir: &Path, split: Split) -> Result<MnistDataset, TrainError> {
    let (images, labels) = split.file_names();
    load_mnist_idx(&dir.join(images), &dir.join(labels), split)
}
