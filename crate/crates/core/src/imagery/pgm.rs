//! Binary PGM (P5) read/write.
//!
//! 8-bit files store `round(clamp(v, 0, 255))`. 16-bit files map [0, 255]
//! onto [0, 65535] with a factor of 257 so fractional intensities survive a
//! round trip to about 1/257 of a gray level; sample bytes are big-endian
//! per the PGM convention.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::imagery::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

pub fn write_pgm(image: &GrayImage, depth: PgmDepth, mut out: impl Write) -> Result<()> {
    let maxval = match depth {
        PgmDepth::Eight => 255u32,
        PgmDepth::Sixteen => 65535u32,
    };
    write!(out, "P5\n{} {}\n{}\n", image.width(), image.height(), maxval)?;
    match depth {
        PgmDepth::Eight => {
            let bytes: Vec<u8> = image
                .pixels()
                .iter()
                .map(|v| v.clamp(0.0, 255.0).round() as u8)
                .collect();
            out.write_all(&bytes)?;
        }
        PgmDepth::Sixteen => {
            let mut bytes = Vec::with_capacity(image.pixels().len() * 2);
            for v in image.pixels() {
                let q = (v.clamp(0.0, 255.0) * 257.0).round() as u16;
                bytes.extend_from_slice(&q.to_be_bytes());
            }
            out.write_all(&bytes)?;
        }
    }
    Ok(())
}

pub fn read_pgm(mut input: impl Read) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let magic = take_token(&bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Parse("not a binary PGM (missing P5 magic)".into()));
    }
    let width: usize = parse_number(take_token(&bytes, &mut pos)?)?;
    let height: usize = parse_number(take_token(&bytes, &mut pos)?)?;
    let maxval: usize = parse_number(take_token(&bytes, &mut pos)?)?;
    if width == 0 || height == 0 {
        return Err(Error::Parse("PGM dimensions must be positive".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("unsupported PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;

    let n = width * height;
    let pixels: Vec<f64> = if maxval < 256 {
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Parse("truncated PGM raster".into()))?;
        raster
            .iter()
            .map(|&b| b as f64 * 255.0 / maxval as f64)
            .collect()
    } else {
        let raster = bytes
            .get(pos..pos + 2 * n)
            .ok_or_else(|| Error::Parse("truncated PGM raster".into()))?;
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * 255.0 / maxval as f64)
            .collect()
    };
    GrayImage::new(height, width, pixels)
}

fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    // Skip whitespace and `#` comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("invalid number in PGM header".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> GrayImage {
        let pixels = (0..h * w).map(|i| (i % 256) as f64).collect();
        GrayImage::new(h, w, pixels).unwrap()
    }

    #[test]
    fn eight_bit_round_trip() {
        let img = ramp(8, 16);
        let mut buf = Vec::new();
        write_pgm(&img, PgmDepth::Eight, &mut buf).unwrap();
        let back = read_pgm(buf.as_slice()).unwrap();
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn sixteen_bit_preserves_fractions() {
        let img = GrayImage::new(1, 4, vec![0.0, 100.25, 200.5, 255.0]).unwrap();
        let mut buf = Vec::new();
        write_pgm(&img, PgmDepth::Sixteen, &mut buf).unwrap();
        let back = read_pgm(buf.as_slice()).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1.0 / 257.0 + 1e-9);
        }
    }

    #[test]
    fn truncated_raster_rejected() {
        let img = ramp(4, 4);
        let mut buf = Vec::new();
        write_pgm(&img, PgmDepth::Eight, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_pgm(buf.as_slice()).is_err());
    }

    #[test]
    fn comments_in_header_skipped() {
        let data = b"P5\n# a comment\n2 1\n255\n\x10\x20".to_vec();
        let img = read_pgm(data.as_slice()).unwrap();
        assert_eq!(img.pixels(), &[16.0, 32.0]);
    }
}
