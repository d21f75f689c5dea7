//! Binary portable pixmap reader/writer (P5 grayscale, P6 color, maxval 255).
//!
//! Pixels map to `[0, 1]` by dividing by 255; writing rounds half-up, so
//! `write(read(f))` is byte-identical for canonical files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::num::Scalar;

struct Lexer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos, message: message.into() }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skip whitespace and `#` comments (comments run to end of line).
    fn skip_space(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(b) = self.peek() {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(self.fail("unexpected end of header")),
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_space()?;
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() {
                value = value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((b - b'0') as usize))
                    .ok_or_else(|| self.fail(format!("{what} overflows")))?;
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.fail(format!("expected {what}")));
        }
        Ok(value)
    }
}

/// Decode a P5/P6 buffer into an image.
pub fn decode_pnm<T: Scalar>(bytes: &[u8]) -> Result<Image<T>> {
    if bytes.len() < 2 {
        return Err(Error::Parse { offset: 0, message: "file too short for magic".into() });
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            })
        }
    };
    let mut lex = Lexer { bytes, pos: 2 };
    let width = lex.read_uint("width")?;
    let height = lex.read_uint("height")?;
    let maxval = lex.read_uint("maxval")?;
    if maxval != 255 {
        return Err(lex.fail(format!("unsupported maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match lex.peek() {
        Some(b) if b.is_ascii_whitespace() => lex.pos += 1,
        _ => return Err(lex.fail("expected single whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(lex.fail("zero image dimension"));
    }
    let expected = width * height * channels;
    let payload = &bytes[lex.pos..];
    if payload.len() < expected {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "truncated payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        });
    }
    if payload.len() > expected {
        return Err(Error::Parse {
            offset: lex.pos + expected,
            message: "trailing data after payload".into(),
        });
    }
    let scale = T::from_config(1.0 / 255.0);
    let pixels = payload
        .iter()
        .map(|&b| T::from_u8(b).expect("u8 fits any float") * scale)
        .collect();
    Image::new(height, width, channels, pixels)
}

/// Encode an image as canonical P5/P6 bytes (values rounded half-up).
pub fn encode_pnm<T: Scalar>(image: &Image<T>) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.pixels().iter().map(|&v| {
        let scaled = v.to_report() * 255.0 + 0.5;
        scaled.floor().clamp(0.0, 255.0) as u8
    }));
    out
}

pub fn read_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let bytes = std::fs::read(path)?;
    decode_pnm(&bytes)
}

pub fn write_image<T: Scalar>(image: &Image<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pnm(image))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_pixel_reads_as_one() {
        let img: Image<f64> = decode_pnm(b"P5\n1 1\n255\n\xff").unwrap();
        assert_eq!(img.pixels(), &[1.0]);
        assert_eq!(img.channels(), 1);
    }

    #[test]
    fn p6_round_trip_is_byte_identical() {
        let bytes = b"P6\n2 2\n255\n\x00\x01\x02\x03\x04\x05\x06\x07\x08\x09\x0a\x0b";
        let img: Image<f32> = decode_pnm(bytes).unwrap();
        assert_eq!(encode_pnm(&img), bytes.to_vec());
    }

    #[test]
    fn unsupported_magic_is_named() {
        let err = decode_pnm::<f64>(b"P7\n1 1\n255\n\x00").unwrap_err();
        match err {
            Error::Parse { offset, message } => {
                assert_eq!(offset, 0);
                assert!(message.contains("P7"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let err = decode_pnm::<f64>(b"P5\n2 2\n255\n\x00\x01").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let img: Image<f64> = decode_pnm(b"P5 # comment\n2 1 # another\n255\n\x00\xff").unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.pixels()[1], 1.0);
    }

    #[test]
    fn wrong_maxval_rejected() {
        let err = decode_pnm::<f64>(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
    }

    #[test]
    fn every_byte_value_round_trips() {
        let bytes: Vec<u8> = (0..=255).collect();
        let mut file = b"P5\n16 16\n255\n".to_vec();
        file.extend(&bytes);
        let img: Image<f32> = decode_pnm(&file).unwrap();
        assert_eq!(encode_pnm(&img), file);
    }
}
