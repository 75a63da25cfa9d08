use std::fs;
use std::path::Path;

use super::{GreyImage, ImageError};

/// Serializes as binary PGM: `P5\n<w> <h>\n255\n` followed by `w*h` bytes.
pub fn encode_pgm(img: &GreyImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.pixels());
    out
}

pub fn save_pgm(img: &GreyImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GreyImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pgm(&bytes)
}

/// Parses a binary (`P5`) PGM with maxval 255. Header comments are accepted.
pub fn decode_pgm(bytes: &[u8]) -> Result<GreyImage, ImageError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(cur.error("expected magic \"P5\" (binary greyscale PGM)"));
    }
    cur.pos = 2;
    let width = cur.header_number("width")?;
    let height = cur.header_number("height")?;
    let maxval = cur.header_number("maxval")?;
    if maxval != 255 {
        return Err(cur.error(format!("unsupported maxval {maxval}, only 255 is supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.error("expected a single whitespace byte after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(cur.error("zero image dimension"));
    }
    let need = width * height;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(ImageError::Format {
            offset: bytes.len(),
            reason: format!("truncated raster: expected {need} bytes, found {have}"),
        });
    }
    GreyImage::new(width, height, bytes[cur.pos..cur.pos + need].to_vec())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn error(&self, reason: impl Into<String>) -> ImageError {
        ImageError::Format {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn header_number(&mut self, field: &str) -> Result<usize, ImageError> {
        let start_ws = self.pos;
        self.skip_separators();
        if self.pos == start_ws {
            return Err(self.error(format!("expected whitespace before {field}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::Format {
                offset: start,
                reason: format!("expected decimal {field}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Format {
                offset: start,
                reason: format!("{field} out of range"),
            })
    }
}
