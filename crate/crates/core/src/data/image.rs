//! 8-bit raster images and the binary netpbm codecs (P5 gray, P6 RGB).

use std::fmt;
use std::str::FromStr;

use super::packed::PackedDataset;
use crate::error::{Error, Result};

/// Row-major interleaved 8-bit image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("degenerate image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Input(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

/// On-disk encodings understood by [`decode_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
    /// A packed dataset container holding exactly one sample.
    Packed,
}

impl ImageFormat {
    /// Guess the format from the leading magic bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        match bytes.get(..2)? {
            b"P5" => Some(ImageFormat::Pgm),
            b"P6" => Some(ImageFormat::Ppm),
            _ if bytes.starts_with(super::packed::MAGIC) => Some(ImageFormat::Packed),
            _ => None,
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(ImageFormat::Pgm),
            "ppm" => Ok(ImageFormat::Ppm),
            "packed" => Ok(ImageFormat::Packed),
            other => Err(Error::Config(format!(
                "unknown image format {other:?} (expected pgm, ppm or packed)"
            ))),
        }
    }
}

impl fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Ppm => "ppm",
            ImageFormat::Packed => "packed",
        })
    }
}

/// Decode `bytes` stored in `format`. Pixels are returned exactly as stored.
pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<RawImage> {
    match format {
        ImageFormat::Pgm => decode_netpbm(bytes, b"P5", 1),
        ImageFormat::Ppm => decode_netpbm(bytes, b"P6", 3),
        ImageFormat::Packed => {
            let packed = PackedDataset::decode(bytes)?;
            if packed.len() != 1 {
                return Err(Error::Format {
                    offset: 6,
                    msg: format!("packed image must hold one sample, found {}", packed.len()),
                });
            }
            let (_, image) = packed.get(0)?;
            Ok(image)
        }
    }
}

/// Encode as binary P5 (1 channel) or P6 (3 channels) with maxval 255.
pub fn encode_netpbm(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Skip whitespace and `#` comments running to end of line.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

fn decode_netpbm(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<RawImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.get(..2) != Some(&magic[..]) {
        return Err(cur.err(format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("degenerate size {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("maxval {maxval} unsupported (1..=255)"),
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected one whitespace byte before the raster")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| cur.err("image size overflows"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("truncated raster: {} of {need} bytes", raster.len()),
        });
    }
    RawImage::new(width, height, channels, raster[..need].to_vec())
}
