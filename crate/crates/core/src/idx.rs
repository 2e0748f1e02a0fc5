//! Reading and writing the big-endian IDX image/label container
//! (magic 0x00000803 for u8 image tensors, 0x00000801 for u8 labels).
//! Parse failures report the byte offset where the file went wrong.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::Sample;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: dimensions plus one flat `[0, 1]` vector per image.
#[derive(Debug, Clone)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.path.display().to_string(),
            offset: self.pos as u64,
            msg: msg.into(),
        })
    }

    fn read_u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.data.len() {
            return self.fail("truncated while reading a u32 header field");
        }
        let bytes: [u8; 4] = self.data[self.pos..self.pos + 4].try_into().unwrap();
        self.pos += 4;
        Ok(u32::from_be_bytes(bytes))
    }

    fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return self.fail(format!(
                "truncated: need {n} more bytes, file has {}",
                self.data.len() - self.pos
            ));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn expect_end(&mut self) -> Result<()> {
        if self.pos != self.data.len() {
            return self.fail(format!(
                "{} trailing bytes after payload",
                self.data.len() - self.pos
            ));
        }
        Ok(())
    }
}

/// Loads an IDX image file; pixel bytes are scaled to `[0, 1]` by `/255`.
pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    let data = std::fs::read(path)?;
    let mut r = Reader {
        data: &data,
        pos: 0,
        path,
    };
    let magic = r.read_u32()?;
    if magic != IMAGES_MAGIC {
        r.pos = 0;
        return r.fail(format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"));
    }
    let count = r.read_u32()? as usize;
    let rows = r.read_u32()? as usize;
    let cols = r.read_u32()? as usize;
    if rows == 0 || cols == 0 {
        return r.fail("image dimensions must be positive");
    }
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let bytes = r.read_bytes(rows * cols)?;
        images.push(bytes.iter().map(|&b| b as f64 / 255.0).collect());
    }
    r.expect_end()?;
    Ok(IdxImages { rows, cols, images })
}

/// Loads an IDX label file; labels are raw bytes.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let data = std::fs::read(path)?;
    let mut r = Reader {
        data: &data,
        pos: 0,
        path,
    };
    let magic = r.read_u32()?;
    if magic != LABELS_MAGIC {
        r.pos = 0;
        return r.fail(format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"));
    }
    let count = r.read_u32()? as usize;
    let labels = r.read_bytes(count)?.iter().map(|&b| b as usize).collect();
    r.expect_end()?;
    Ok(labels)
}

/// Loads a matching image/label pair into labelled samples.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.images.len() != labels.len() {
        return Err(Error::Format {
            path: labels_path.display().to_string(),
            offset: 4,
            msg: format!(
                "label count {} does not match image count {}",
                labels.len(),
                images.images.len()
            ),
        });
    }
    images
        .images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| Sample::labelled(pixels, label))
        .collect()
}

fn to_byte(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes images as an IDX u8 tensor (values quantized to bytes).
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[Vec<f64>]) -> Result<()> {
    for (i, img) in images.iter().enumerate() {
        if img.len() != rows * cols {
            return Err(Error::Input(format!(
                "image {i} has {} pixels, expected {rows}x{cols}",
                img.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        out.extend(img.iter().map(|&p| to_byte(p)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    for (i, &l) in labels.iter().enumerate() {
        if l > 255 {
            return Err(Error::Input(format!("label {l} at index {i} exceeds one byte")));
        }
    }
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes one image as a binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Input(format!(
            "pixel count {} != {width}x{height}",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| to_byte(p)));
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_images() -> Vec<Vec<f64>> {
        (0..10)
            .map(|i| (0..28 * 28).map(|j| ((i * 7 + j) % 256) as f64 / 255.0).collect())
            .collect()
    }

    #[test]
    fn round_trip_well_formed_pair() {
        let dir = tempdir().unwrap();
        let ip = dir.path().join("imgs.idx");
        let lp = dir.path().join("lbls.idx");
        let images = tiny_images();
        let labels: Vec<usize> = (0..10).map(|i| i % 10).collect();
        write_idx_images(&ip, 28, 28, &images).unwrap();
        write_idx_labels(&lp, &labels).unwrap();

        let samples = load_idx(&ip, &lp).unwrap();
        assert_eq!(samples.len(), 10);
        for (s, l) in samples.iter().zip(&labels) {
            assert_eq!(s.pixels.len(), 784);
            assert_eq!(s.label, Some(*l));
        }
        // Byte 255 maps to exactly 1.0.
        let full = vec![vec![1.0; 4]];
        let fp = dir.path().join("full.idx");
        write_idx_images(&fp, 2, 2, &full).unwrap();
        let back = load_idx_images(&fp).unwrap();
        assert_eq!(back.images[0], vec![1.0; 4]);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.idx");
        let mut data = 0x0000_0802u32.to_be_bytes().to_vec();
        data.extend_from_slice(&1u32.to_be_bytes());
        std::fs::write(&p, data).unwrap();
        match load_idx_images(&p) {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset, 0);
                assert!(msg.contains("magic"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("trunc.idx");
        let mut data = IMAGES_MAGIC.to_be_bytes().to_vec();
        data.extend_from_slice(&2u32.to_be_bytes()); // two images promised
        data.extend_from_slice(&2u32.to_be_bytes());
        data.extend_from_slice(&2u32.to_be_bytes());
        data.extend_from_slice(&[1, 2, 3]); // only 3 of 8 payload bytes
        std::fs::write(&p, data).unwrap();
        match load_idx_images(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let ip = dir.path().join("i.idx");
        let lp = dir.path().join("l.idx");
        write_idx_images(&ip, 2, 2, &[vec![0.0; 4], vec![0.5; 4]]).unwrap();
        write_idx_labels(&lp, &[0, 1, 0]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_header_is_well_formed() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        write_pgm(&p, 3, 2, &[0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        let data = std::fs::read(&p).unwrap();
        assert!(data.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(data.len(), 11 + 6);
    }
}
