//! Binary 8-bit PGM (P5) reading and writing.
//!
//! Frames and segmentation masks are exchanged as P5 files with a maxval of
//! at most 255. Header comments (`#` to end of line) are skipped.

use std::io;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a binary PGM (expected magic P5, found {0:?})")]
    BadMagic(String),
    #[error("malformed PGM header: {0}")]
    Header(String),
    #[error("unsupported maxval {0} (only 8-bit PGM is supported)")]
    MaxVal(u32),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// A row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, pixels: vec![0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

struct HeaderReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.data.len() {
            let c = self.data[self.pos];
            if c == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&[u8], PgmError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::Header("unexpected end of header".into()));
        }
        Ok(&self.data[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32, PgmError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::Header(format!("invalid {what}: {:?}", String::from_utf8_lossy(tok))))
    }
}

pub fn decode(data: &[u8]) -> Result<GrayImage, PgmError> {
    let mut r = HeaderReader { data, pos: 0 };
    let magic = r.token().map_err(|_| PgmError::BadMagic(String::new()))?;
    if magic != b"P5" {
        return Err(PgmError::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::MaxVal(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    if r.pos >= data.len() || !data[r.pos].is_ascii_whitespace() {
        return Err(PgmError::Header("missing separator after maxval".into()));
    }
    let start = r.pos + 1;
    let expected = width * height;
    let found = data.len().saturating_sub(start);
    if found < expected {
        return Err(PgmError::Truncated { expected, found });
    }
    Ok(GrayImage { width, height, pixels: data[start..start + expected].to_vec() })
}

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read(path: &Path) -> Result<GrayImage, PgmError> {
    decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, img: &GrayImage) -> Result<(), PgmError> {
    std::fs::write(path, encode(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_with_comments() {
        let mut data = b"P5\n# a comment\n3 2\n# another\n255\n".to_vec();
        data.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&data).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.get(2, 1), 6);
    }

    #[test]
    fn encode_decode_identity() {
        let mut img = GrayImage::new(4, 3);
        img.set(1, 2, 9);
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn rejects_ascii_and_truncated() {
        assert!(matches!(decode(b"P2\n1 1\n255\n0"), Err(PgmError::BadMagic(_))));
        assert!(matches!(decode(b"P5\n2 2\n255\n\x01"), Err(PgmError::Truncated { expected: 4, found: 1 })));
        assert!(matches!(decode(b"P5\n1 1\n65535\n\x00\x00"), Err(PgmError::MaxVal(65535))));
    }
}
