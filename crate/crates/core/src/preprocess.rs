//! 8-bit grayscale images, binary PGM (P5) IO, and global per-image
//! histogram equalization.

use std::fs;
use std::path::Path;

use crate::error::{Error, PgmError, Result};
use crate::numerics::Tensor;

pub const LEVELS: usize = 256;

/// Single-channel 8-bit image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dims must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn histogram(&self) -> [usize; LEVELS] {
        let mut hist = [0usize; LEVELS];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        hist
    }

    /// Pixels scaled into `[0, 1]` as a `1 × 1 × H × W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Tensor::new([1, 1, self.height, self.width], data).expect("dims match pixel count")
    }

    /// Encodes the image as a binary PGM with maxval 255.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self, PgmError> {
        parse_pgm(bytes)
    }
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

/// Global histogram equalization.
///
/// `out(v) = round((cdf(v) − cdf_min) / (N − cdf_min) · 255)` where `cdf_min`
/// is the smallest non-zero CDF value. A constant image has a zero
/// denominator and is returned unchanged.
pub fn equalize_histogram(img: &Image) -> Image {
    let lut = equalization_lut(img);
    match lut {
        None => img.clone(),
        Some(lut) => Image {
            width: img.width,
            height: img.height,
            pixels: img.pixels.iter().map(|&p| lut[p as usize]).collect(),
        },
    }
}

fn equalization_lut(img: &Image) -> Option<[u8; LEVELS]> {
    let hist = img.histogram();
    let n = img.pixels.len();
    let mut cdf = [0usize; LEVELS];
    let mut acc = 0;
    for (c, &h) in cdf.iter_mut().zip(&hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0)?;
    if n == cdf_min {
        return None;
    }
    let denom = (n - cdf_min) as u64;
    let mut lut = [0u8; LEVELS];
    for (l, &c) in lut.iter_mut().zip(&cdf) {
        // Levels below the first occupied one never appear in the image.
        let num = c.saturating_sub(cdf_min) as u64 * 255;
        // round half up in exact integer arithmetic
        *l = ((2 * num + denom) / (2 * denom)) as u8;
    }
    Some(lut)
}

/// Equalizes and scales to `[0, 1]`: the network's input transform.
pub fn prepare_input(img: &Image) -> Tensor {
    equalize_histogram(img).to_tensor()
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_pgm(&bytes)?)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.to_pgm_bytes()).map_err(|e| Error::io(path, e))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PgmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::MalformedHeader {
                offset: start,
                reason: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::MalformedHeader {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<Image, PgmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PgmError::MalformedHeader {
            offset: 0,
            reason: "missing `P` magic".into(),
        });
    }
    if bytes[1] != b'5' {
        return Err(PgmError::UnsupportedFormat {
            magic: String::from_utf8_lossy(&bytes[..2]).into_owned(),
        });
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    if !r.bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(PgmError::MalformedHeader {
            offset: 2,
            reason: "expected whitespace after magic".into(),
        });
    }
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader {
            offset: maxval_at,
            reason: format!("zero image dimension {width}x{height}"),
        });
    }
    if maxval != 255 {
        return Err(PgmError::MalformedHeader {
            offset: maxval_at,
            reason: format!("maxval {maxval} unsupported (only 255)"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    if !r.bytes.get(r.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PgmError::MalformedHeader {
            offset: r.pos,
            reason: "expected single whitespace before raster".into(),
        });
    }
    let start = r.pos + 1;
    let expected = width * height;
    let found = bytes.len() - start;
    if found < expected {
        return Err(PgmError::Truncated {
            offset: bytes.len(),
            expected,
            found,
        });
    }
    Ok(Image {
        width,
        height,
        pixels: bytes[start..start + expected].to_vec(),
    })
}
