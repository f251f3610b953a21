//! IDX files (the MNIST container format).
//!
//! Big-endian `u32` magic, big-endian `u32` dimension sizes, then an
//! unsigned-byte payload. Only the two layouts used for classification data
//! are accepted: 3-D images (`0x00000803`) and 1-D labels (`0x00000801`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::stream::{Dataset, Sample, Split};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw images, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.pos, "file truncated inside header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n);
        let slice = end.and_then(|e| self.bytes.get(self.pos..e)).ok_or_else(|| {
            self.err(
                self.bytes.len(),
                format!("payload truncated: expected {n} bytes from offset {}", self.pos),
            )
        })?;
        self.pos += n;
        Ok(slice)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let magic = cur.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(cur.err(0, format!("bad image magic {magic:#010x}")));
    }
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let size = rows * cols;
    let pixels = (0..count)
        .map(|_| cur.take(size).map(<[u8]>::to_vec))
        .collect::<Result<_>>()?;
    if cur.pos != bytes.len() {
        return Err(cur.err(cur.pos, "trailing bytes after image payload"));
    }
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let magic = cur.u32()?;
    if magic != LABELS_MAGIC {
        return Err(cur.err(0, format!("bad label magic {magic:#010x}")));
    }
    let count = cur.u32()? as usize;
    let labels = cur.take(count)?.to_vec();
    if cur.pos != bytes.len() {
        return Err(cur.err(cur.pos, "trailing bytes after label payload"));
    }
    Ok(labels)
}

pub fn read_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    parse_images(path, &read_file(path)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_labels(path, &read_file(path)?)
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]`; the class
/// count is `max label + 1` unless `num_classes` is given.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    num_classes: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let img = read_images(&images)?;
    let lab = read_labels(&labels)?;
    if img.pixels.len() != lab.len() {
        return Err(Error::Format {
            path: PathBuf::from(labels.as_ref()),
            offset: 4,
            message: format!(
                "{} labels for {} images in {}",
                lab.len(),
                img.pixels.len(),
                images.as_ref().display()
            ),
        });
    }
    let classes = num_classes.unwrap_or_else(|| lab.iter().map(|&l| l as usize + 1).max().unwrap_or(1));
    let samples = img
        .pixels
        .iter()
        .zip(&lab)
        .enumerate()
        .map(|(i, (px, &l))| {
            Sample::new(
                i as u64,
                px.iter().map(|&b| f64::from(b) / 255.0).collect(),
                l as usize,
            )
        })
        .collect();
    Dataset::new(samples, classes, split)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len() * images.rows * images.cols);
    for v in [
        IMAGES_MAGIC,
        images.pixels.len() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for p in &images.pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes a dataset of square `side × side` images as an IDX pair,
/// quantizing features in `[0, 1]` to bytes.
pub fn write_idx(
    dataset: &Dataset,
    side: usize,
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<()> {
    if dataset.dim() != side * side {
        return Err(Error::input(format!(
            "features of dimension {} are not {side}x{side} images",
            dataset.dim()
        )));
    }
    if dataset.samples.iter().any(|s| s.label > u8::MAX as usize) {
        return Err(Error::input("IDX labels must fit in one byte"));
    }
    let raw = IdxImages {
        rows: side,
        cols: side,
        pixels: dataset
            .samples
            .iter()
            .map(|s| {
                s.features
                    .iter()
                    .map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect()
            })
            .collect(),
    };
    let lab: Vec<u8> = dataset.samples.iter().map(|s| s.label as u8).collect();
    let img_path = images.as_ref();
    fs::write(img_path, encode_images(&raw)).map_err(|e| Error::io(img_path, e))?;
    let lab_path = labels.as_ref();
    fs::write(lab_path, encode_labels(&lab)).map_err(|e| Error::io(lab_path, e))?;
    Ok(())
}
