//! Binary PPM (P6) and PGM (P5) images with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::NdArray;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
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
        self.skip_space_and_comments();
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
                message: format!("{what} out of range"),
            })
    }
}

/// Decodes P5/P6 bytes to `[H, W, 3]` values in `[0, 1]`; grey is replicated.
pub fn decode_pnm(bytes: &[u8]) -> Result<NdArray> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(cur.err("expected magic P5 or P6")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("maxval {maxval} at byte {maxval_at}; only 255 is supported")));
    }
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.err("expected whitespace after maxval"));
    }
    cur.pos += 1;
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: maxval_at,
            message: format!("empty image {width}x{height}"),
        });
    }
    let need = width * height * channels;
    let pixels = &bytes[cur.pos..];
    if pixels.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("pixel data truncated: {} of {need} bytes", pixels.len()),
        });
    }
    let data = (0..width * height * 3)
        .map(|i| {
            let src = if channels == 3 { i } else { i / 3 };
            f64::from(pixels[src]) / 255.0
        })
        .collect();
    NdArray::new(&[height, width, 3], data)
}

/// Encodes `[H, W, 3]` values in `[0, 1]` as P6, rounding to the nearest level.
pub fn encode_ppm(image: &NdArray) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape("encode_ppm", s, &[0, 0, 3]));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<NdArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn save_ppm(path: impl AsRef<Path>, image: &NdArray) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_p6() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([255u8; 12]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.shape(), [2, 2, 3]);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grey_is_replicated() {
        let bytes = b"P5 # comment\n3 1 255\n\x00\x80\xff".to_vec();
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.shape(), [1, 3, 3]);
        for c in 0..3 {
            let px = &img.data()[c * 3..c * 3 + 3];
            assert!(px.iter().all(|&v| v == px[0]));
        }
        assert_eq!(img.get(&[0, 1, 2]), 128.0 / 255.0);
    }

    #[test]
    fn header_errors_carry_offset() {
        let err = decode_pnm(b"P6\n2 x\n255\n").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 5, .. }), "{err}");
        let err = decode_pnm(b"P3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");
        let err = decode_pnm(b"P6\n1 1\n255\n\x00").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 12, .. }), "{err}");
    }

    #[test]
    fn sixteen_bit_rejected() {
        let err = decode_pnm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn encode_decode_levels() {
        let img = NdArray::from_fn(&[4, 5, 3], |i| ((i * 37) % 256) as f64 / 255.0);
        assert_eq!(decode_pnm(&encode_ppm(&img).unwrap()).unwrap(), img);
    }
}
