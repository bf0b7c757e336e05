//! Packed dataset container.
//!
//! ```text
//! "BDND" | version u16 | count u32 | height u16 | width u16 | channels u8
//! count × ( label u8 | height·width·channels pixel bytes )
//! ```
//!
//! All integers are little-endian. Pixels are interleaved row-major, as in
//! [`RawImage`].

use std::path::Path;

use super::image::RawImage;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BDND";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 15;

/// Equally sized labelled images, stored contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedDataset {
    height: usize,
    width: usize,
    channels: usize,
    labels: Vec<u8>,
    pixels: Vec<u8>,
}

impl PackedDataset {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || height > u16::MAX as usize || width > u16::MAX as usize {
            return Err(Error::Input(format!(
                "packed image size {height}x{width} out of range"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!(
                "packed images have 1 or 3 channels, got {channels}"
            )));
        }
        Ok(PackedDataset {
            height,
            width,
            channels,
            labels: Vec::new(),
            pixels: Vec::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn sample_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Pixels of sample `i`.
    pub fn pixels(&self, i: usize) -> &[u8] {
        let n = self.sample_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, label: u8, img: &RawImage) -> Result<()> {
        if (img.height(), img.width(), img.channels()) != (self.height, self.width, self.channels) {
            return Err(Error::Input(format!(
                "image is {}x{}x{}, container holds {}x{}x{}",
                img.height(),
                img.width(),
                img.channels(),
                self.height,
                self.width,
                self.channels
            )));
        }
        if self.labels.len() == u32::MAX as usize {
            return Err(Error::Input("packed container is full".into()));
        }
        self.labels.push(label);
        self.pixels.extend_from_slice(img.pixels());
        Ok(())
    }

    pub fn get(&self, i: usize) -> Result<(u8, RawImage)> {
        let label = *self.labels.get(i).ok_or_else(|| {
            Error::Input(format!("sample {i} out of range ({} samples)", self.len()))
        })?;
        let img = RawImage::new(
            self.width,
            self.height,
            self.channels,
            self.pixels(i).to_vec(),
        )?;
        Ok((label, img))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (1 + self.sample_len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.push(self.channels as u8);
        for i in 0..self.len() {
            out.push(self.labels[i]);
            out.extend_from_slice(self.pixels(i));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::Format { offset, msg };
        if bytes.len() < HEADER_LEN {
            return Err(fail(
                bytes.len(),
                format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            ));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail(0, "bad magic, expected BDND".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
        let version = u16_at(4);
        if version != VERSION as usize {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let (height, width, channels) = (u16_at(10), u16_at(12), bytes[14] as usize);
        let mut out =
            PackedDataset::new(height, width, channels).map_err(|e| fail(10, e.to_string()))?;
        let record = 1 + out.sample_len();
        let expected = count
            .checked_mul(record)
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or_else(|| fail(6, "sample count overflows".into()))?;
        if bytes.len() < expected {
            let whole = (bytes.len() - HEADER_LEN) / record;
            return Err(fail(
                HEADER_LEN + whole * record,
                format!("truncated: {whole} of {count} samples present"),
            ));
        }
        if bytes.len() > expected {
            return Err(fail(expected, "trailing bytes after last sample".into()));
        }
        out.labels.reserve(count);
        out.pixels.reserve(count * out.sample_len());
        for rec in bytes[HEADER_LEN..].chunks_exact(record) {
            out.labels.push(rec[0]);
            out.pixels.extend_from_slice(&rec[1..]);
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PackedDataset {
        let mut p = PackedDataset::new(2, 3, 1).unwrap();
        p.push(4, &RawImage::new(3, 2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap())
            .unwrap();
        p.push(9, &RawImage::new(3, 2, 1, vec![6, 5, 4, 3, 2, 1]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn layout() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..4], b"BDND");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..15], &[2, 0, 3, 0, 1]);
        assert_eq!(&bytes[15..22], &[4, 1, 2, 3, 4, 5, 6]);
        assert_eq!(bytes.len(), 15 + 2 * 7);
    }

    #[test]
    fn round_trip() {
        let p = sample();
        assert_eq!(PackedDataset::decode(&p.encode()).unwrap(), p);
        let (label, img) = p.get(1).unwrap();
        assert_eq!(label, 9);
        assert_eq!(img.pixels(), &[6, 5, 4, 3, 2, 1]);
    }

    #[test]
    fn rejects_truncation_and_trailing() {
        let bytes = sample().encode();
        match PackedDataset::decode(&bytes[..bytes.len() - 1]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 22),
            other => panic!("{other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            PackedDataset::decode(&long),
            Err(Error::Format { offset: 29, .. })
        ));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(
            PackedDataset::decode(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn shape_mismatch_on_push() {
        let mut p = PackedDataset::new(2, 2, 1).unwrap();
        assert!(p
            .push(0, &RawImage::new(2, 2, 3, vec![0; 12]).unwrap())
            .is_err());
    }
}
