//! Bit-exact coefficient container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "JCOF"
//! 4       1     version (1)
//! 5       1     quality hint (0 = absent)
//! 6       4     blocks_h (u32)
//! 10      4     blocks_w (u32)
//! 14      128   quantization steps, 64 x u16, row-major
//! 142     ...   coefficients, blocks_h*blocks_w*64 x i16, block-major
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::jpegcodec::{JpegCoeffs, QuantTable};

const MAGIC: &[u8; 4] = b"JCOF";
const VERSION: u8 = 1;

pub fn write_container(coeffs: &JpegCoeffs, mut out: impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION, coeffs.quant().quality_hint().unwrap_or(0)])?;
    out.write_all(&(coeffs.blocks_h() as u32).to_le_bytes())?;
    out.write_all(&(coeffs.blocks_w() as u32).to_le_bytes())?;
    for r in 0..8 {
        for c in 0..8 {
            out.write_all(&coeffs.quant().step(r, c).to_le_bytes())?;
        }
    }
    for &v in coeffs.coeffs() {
        let narrow = i16::try_from(v).map_err(|_| {
            Error::invalid(format!("coefficient {v} does not fit the 16-bit container"))
        })?;
        out.write_all(&narrow.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_container(mut input: impl Read) -> Result<JpegCoeffs> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 142 {
        return Err(Error::Parse("container truncated before header end".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Parse("bad container magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Parse(format!("unsupported container version {}", bytes[4])));
    }
    let quality_hint = match bytes[5] {
        0 => None,
        q => Some(q),
    };
    let blocks_h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let blocks_w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;

    let mut steps = [[0u16; 8]; 8];
    for r in 0..8 {
        for c in 0..8 {
            let off = 14 + (r * 8 + c) * 2;
            steps[r][c] = u16::from_le_bytes([bytes[off], bytes[off + 1]]);
        }
    }
    let quant = QuantTable::new(steps, quality_hint)?;

    let n = blocks_h
        .checked_mul(blocks_w)
        .and_then(|b| b.checked_mul(64))
        .ok_or_else(|| Error::Parse("container dimensions overflow".into()))?;
    let body = bytes
        .get(142..142 + 2 * n)
        .ok_or_else(|| Error::Parse("container coefficient payload truncated".into()))?;
    let coeffs: Vec<i32> = body
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
        .collect();
    JpegCoeffs::new(blocks_h, blocks_w, coeffs, quant)
}
