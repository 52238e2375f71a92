//! Binary netpbm image files: P6 (RGB) and P5 (grayscale), maxval 255.
//!
//! Images travel through the crate as `[C,H,W]` tensors with values in
//! `[0,1]`; this module quantizes to bytes on the way out (`round(v·255)`,
//! clamped) and divides by 255 on the way in. Values that are already
//! multiples of `1/255` therefore survive a write/read cycle bit-exactly,
//! which the synthetic scene generator relies on.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

/// Byte value for an intensity in `[0,1]`; out-of-range values saturate.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Write a `[1,H,W]` tensor as P5 or a `[3,H,W]` tensor as P6.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    assert_eq!(image.rank(), 3, "expected [C,H,W] image, got {:?}", image.shape());
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    assert!(c == 1 || c == 3, "netpbm supports 1 or 3 channels, got {c}");

    let magic = if c == 3 { "P6" } else { "P5" };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(c * h * w);
    let data = image.data();
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..c {
            bytes.push(quantize(data[ch * plane + i]));
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a P5 file into a `[1,H,W]` tensor or a P6 file into `[3,H,W]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_image(&bytes)
}

/// Decode netpbm bytes; split out from [`read_image`] for testability.
pub fn parse_image(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let channels = match (cursor.next_byte(), cursor.next_byte()) {
        (Some(b'P'), Some(b'6')) => 3,
        (Some(b'P'), Some(b'5')) => 1,
        _ => {
            return Err(Error::MalformedHeader(
                "not a binary netpbm file (expected P5 or P6 magic)".into(),
            ))
        }
    };
    let w = cursor.next_uint("width")?;
    let h = cursor.next_uint("height")?;
    let maxval = cursor.next_uint("maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::MalformedHeader(format!("zero image dimension {w}x{h}")));
    }
    if maxval != 255 {
        return Err(Error::MalformedHeader(format!(
            "unsupported maxval {maxval} (only 255 is handled)"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match cursor.next_byte() {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => {
            return Err(Error::MalformedHeader(
                "missing whitespace between header and pixel data".into(),
            ))
        }
    }

    let expected = w * h * channels;
    let payload = &cursor.bytes[cursor.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after pixel data",
            payload.len() - expected
        )));
    }

    // Interleaved bytes to planar [C,H,W] floats.
    let plane = w * h;
    let mut data = vec![0.0; channels * plane];
    for i in 0..plane {
        for ch in 0..channels {
            data[ch * plane + i] = payload[i * channels + ch] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(vec![channels, h, w], data))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn next_byte(&mut self) -> Option<u8> {
        let b = self.bytes.get(self.pos).copied();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    /// Skip whitespace and `#` comment lines, then parse a decimal integer.
    fn next_uint(&mut self, what: &str) -> Result<usize> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::MalformedHeader(format!("expected {what} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("unreadable {what} in header")))
    }
}
