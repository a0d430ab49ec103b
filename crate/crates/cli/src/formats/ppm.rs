//! Binary PPM (P6) images.
//!
//! The corpus and the external-SUT adapter exchange images as 8-bit P6
//! files: the magic `P6`, then width, height, and maxval as decimal
//! tokens separated by whitespace (with `#`-to-end-of-line comments
//! allowed anywhere between tokens), one final whitespace byte, then
//! exactly width × height RGB triples. Only maxval 255 is accepted.

use std::fs;
use std::path::Path;

use morphic_core::relations::RasterImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
}

impl PpmError {
    fn bad(path: &Path, reason: impl Into<String>) -> Self {
        PpmError::Malformed {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// Serialises an image as a P6 file body.
pub fn encode_ppm(image: &RasterImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(image.pixels());
    out
}

/// Writes `image` to `path` in P6 form.
pub fn write_ppm(path: &Path, image: &RasterImage) -> Result<(), PpmError> {
    fs::write(path, encode_ppm(image)).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a P6 file from disk.
pub fn read_ppm(path: &Path) -> Result<RasterImage, PpmError> {
    let bytes = fs::read(path).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_ppm(&bytes, path)
}

/// Parses a P6 body; `path` only labels error messages.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RasterImage, PpmError> {
    let mut cursor = Cursor { bytes, at: 0 };
    let magic = cursor
        .token()
        .ok_or_else(|| PpmError::bad(path, "missing P6 magic"))?;
    if magic != b"P6" {
        return Err(PpmError::bad(
            path,
            format!("expected P6 magic, found {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let width = cursor.decimal(path, "width")?;
    let height = cursor.decimal(path, "height")?;
    let maxval = cursor.decimal(path, "maxval")?;
    if maxval != 255 {
        return Err(PpmError::bad(path, format!("maxval must be 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match cursor.next_byte() {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(PpmError::bad(path, "missing whitespace after maxval")),
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| PpmError::bad(path, "image dimensions overflow"))?;
    let raster = &cursor.bytes[cursor.at..];
    if raster.len() != expected {
        return Err(PpmError::bad(
            path,
            format!("expected {expected} raster bytes, found {}", raster.len()),
        ));
    }
    RasterImage::new(width, height, raster.to_vec())
        .map_err(|e| PpmError::bad(path, format!("{e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn next_byte(&mut self) -> Option<u8> {
        let b = self.bytes.get(self.at).copied();
        if b.is_some() {
            self.at += 1;
        }
        b
    }

    /// Skips whitespace and `#` comments between header tokens.
    fn skip_filler(&mut self) {
        while let Some(&b) = self.bytes.get(self.at) {
            if b.is_ascii_whitespace() {
                self.at += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.at) {
                    self.at += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// The next whitespace/comment-delimited token, if any.
    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_filler();
        let start = self.at;
        while let Some(&b) = self.bytes.get(self.at) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.at += 1;
        }
        (self.at > start).then(|| &self.bytes[start..self.at])
    }

    fn decimal(&mut self, path: &Path, what: &str) -> Result<u32, PpmError> {
        let token = self
            .token()
            .ok_or_else(|| PpmError::bad(path, format!("missing {what}")))?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| {
                PpmError::bad(
                    path,
                    format!("{what} is not a decimal integer: {:?}", String::from_utf8_lossy(token)),
                )
            })
    }
}
