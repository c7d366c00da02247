//! Binary 8-bit PGM (`P5`) and PPM (`P6`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        reason: reason.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
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
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| parse_err(start, format!("{what} out of range")))
    }
}

/// Decodes a P5/P6 image into `[H, W, 1]` or `[H, W, 3]` with values `byte / 255`.
pub fn decode_pnm<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(parse_err(0, "expected magic P5 or P6")),
    };
    let mut hd = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(parse_err(2, "missing whitespace after magic"));
    }
    let width = hd.number("width")?;
    let height = hd.number("height")?;
    hd.skip_space();
    let max_at = hd.pos;
    let maxval = hd.number("maxval")?;
    if maxval != 255 {
        return Err(parse_err(max_at, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(max_at, "zero image extent"));
    }
    if !bytes.get(hd.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err(hd.pos, "missing whitespace after maxval"));
    }
    let start = hd.pos + 1;
    let n = width * height * channels;
    let body = &bytes[start..];
    if body.len() < n {
        return Err(parse_err(bytes.len(), format!("pixel data truncated: {} of {n} bytes", body.len())));
    }
    if body.len() > n {
        return Err(parse_err(start + n, "trailing bytes after pixel data"));
    }
    let data = body.iter().map(|&b| T::from_f64_lossy(b as f64 / 255.0)).collect();
    Tensor::new(&[height, width, channels], data)
}

/// Maps `[0, 1]` to a byte, rounding half up and clamping.
pub fn to_byte(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes `[H, W, 1]` as P5 or `[H, W, 3]` as P6.
pub fn encode_pnm<T: Real>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w, c) = match *image.shape() {
        [h, w, c @ (1 | 3)] => (h, w, c),
        ref s => return Err(Error::dim("encode_pnm", format!("expected H×W×1 or H×W×3, got {s:?}"))),
    };
    image.ensure_finite("encode_pnm")?;
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| to_byte(v.as_f64())));
    Ok(out)
}

pub fn read_image<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_image<T: Real>(path: impl AsRef<Path>, image: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode_pnm(image)?)?;
    Ok(())
}
