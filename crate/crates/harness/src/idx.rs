//! IDX files: a big-endian magic number `0x000008nn` (unsigned bytes, `nn`
//! dimensions), one `u32` size per dimension, then the payload.

use lidcert_core::nn::Dataset;

use crate::error::{HarnessError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_err(offset: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Idx {
        offset,
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            idx_err(self.pos, format!("truncated {what}: need 4 bytes, {} left", self.bytes.len() - self.pos))
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }
}

/// Reads the header, checks the magic and returns `(dims, payload offset)`.
fn header(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let actual = r.u32("magic number")?;
    if actual != magic {
        return Err(idx_err(0, format!("bad magic: expected 0x{magic:08x}, found 0x{actual:08x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|k| r.u32(&format!("size of dimension {k}")).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let want = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let start = r.pos;
    let have = bytes.len() - start;
    match want {
        Some(n) if n > have => Err(idx_err(bytes.len(), format!("truncated payload: header declares {n} bytes, found {have}"))),
        Some(n) if n < have => Err(idx_err(start + n, format!("dimension mismatch: header declares {n} bytes, found {have}"))),
        Some(_) => Ok((dims, start)),
        None => Err(idx_err(4, "declared dimensions overflow")),
    }
}

/// Images as `count × rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// Pixel `(r, c)` of image `i`, scaled to `[0, 1]`.
    pub fn scaled(&self, i: usize, r: usize, c: usize) -> f64 {
        f64::from(self.pixels[(i * self.rows + r) * self.cols + c]) / 255.0
    }

    /// All pixels scaled to `[0, 1]`, row-major per image.
    pub fn to_features(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    /// Block-averages every image down to `side × side`. Each output pixel
    /// averages the input pixels whose centers fall in its cell.
    pub fn downsample(&self, side: usize) -> Result<Vec<f64>> {
        if side == 0 || side > self.rows || side > self.cols {
            return Err(HarnessError::config(format!(
                "cannot downsample {}×{} images to {side}×{side}",
                self.rows, self.cols
            )));
        }
        let mut out = Vec::with_capacity(self.count * side * side);
        for i in 0..self.count {
            for br in 0..side {
                let (r0, r1) = (br * self.rows / side, (br + 1) * self.rows / side);
                for bc in 0..side {
                    let (c0, c1) = (bc * self.cols / side, (bc + 1) * self.cols / side);
                    let mut sum = 0.0;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            sum += self.scaled(i, r, c);
                        }
                    }
                    out.push(sum / ((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
        Ok(out)
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let (dims, start) = header(bytes, IMAGES_MAGIC)?;
    Ok(IdxImages {
        count: dims[0],
        rows: dims[1],
        cols: dims[2],
        pixels: bytes[start..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, start) = header(bytes, LABELS_MAGIC)?;
    Ok(bytes[start..].iter().map(|&b| usize::from(b)).collect())
}

/// A labelled dataset from an image/label file pair, optionally downsampled.
pub fn load_idx_pair(images: &[u8], labels: &[u8], side: Option<usize>) -> Result<Dataset> {
    let img = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if img.count != lab.len() {
        return Err(idx_err(
            4,
            format!("{} images but {} labels", img.count, lab.len()),
        ));
    }
    let (features, width) = match side {
        Some(s) if s != img.rows || s != img.cols => (img.downsample(s)?, s * s),
        _ => (img.to_features(), img.rows * img.cols),
    };
    Ok(Dataset::new(features, width, lab)?)
}

/// Serializes images in IDX form.
pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_of(e: HarnessError) -> usize {
        match e {
            HarnessError::Idx { offset, .. } => offset,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn two_by_two_images_byte_by_byte() {
        let bytes = [
            0x00, 0x00, 0x08, 0x03, // magic
            0x00, 0x00, 0x00, 0x02, // count
            0x00, 0x00, 0x00, 0x02, // rows
            0x00, 0x00, 0x00, 0x02, // cols
            0x00, 0xff, 0x80, 0x01, // image 0
            0x10, 0x20, 0x30, 0x40, // image 1
        ];
        let img = parse_idx_images(&bytes).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (2, 2, 2));
        assert_eq!(img.scaled(0, 0, 1), 1.0);
        assert_eq!(img.scaled(0, 1, 0), 128.0 / 255.0);
        assert_eq!(img.scaled(1, 1, 1), 64.0 / 255.0);
        assert_eq!(encode_idx_images(&img), bytes.to_vec());
        let down = img.downsample(1).unwrap();
        assert_eq!(down[1], (16.0 + 32.0 + 48.0 + 64.0) / 4.0 / 255.0);
    }

    #[test]
    fn three_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn wrong_magic_names_both() {
        let e = parse_idx_labels(&[0, 0, 8, 3, 0, 0, 0, 0]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("0x00000801") && msg.contains("0x00000803"), "{msg}");
        assert_eq!(offset_of(e), 0);
    }

    #[test]
    fn truncation_and_mismatch_offsets() {
        assert_eq!(offset_of(parse_idx_labels(&[0, 0, 8]).unwrap_err()), 0);
        assert_eq!(offset_of(parse_idx_labels(&[0, 0, 8, 1, 0, 0]).unwrap_err()), 4);
        // declares 3 labels, has 2
        assert_eq!(offset_of(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]).unwrap_err()), 10);
        // declares 1 label, has 2
        assert_eq!(offset_of(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 1, 1, 2]).unwrap_err()), 9);
        let e = load_idx_pair(
            &encode_idx_images(&IdxImages { count: 1, rows: 1, cols: 1, pixels: vec![3] }),
            &encode_idx_labels(&[1, 2]),
            None,
        )
        .unwrap_err();
        assert!(e.to_string().contains("1 images but 2 labels"));
    }
}
