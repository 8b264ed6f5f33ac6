//! Minimal baseline JFIF reader and writer for single-component (grayscale)
//! streams with the standard Annex-K Huffman tables.
//!
//! Supported: SOI / APPn / COM / DQT (8- and 16-bit) / SOF0 with one
//! component / DHT / SOS / EOI, dimensions that are multiples of 8.
//! Everything else (progressive or extended SOF, arithmetic coding, restart
//! intervals, multi-component scans) is rejected with the offending marker
//! named in the error.

use crate::error::{Error, Result};
use crate::jpegcodec::{JpegCoeffs, QuantTable};

/// Natural-order index for each zigzag position.
fn zigzag_order() -> [usize; 64] {
    let mut order = [0usize; 64];
    let mut pos = 0;
    for s in 0..=14usize {
        let lo = s.saturating_sub(7);
        let hi = s.min(7);
        if s % 2 == 0 {
            // Even diagonals run bottom-left to top-right.
            for r in (lo..=hi).rev() {
                order[pos] = r * 8 + (s - r);
                pos += 1;
            }
        } else {
            for r in lo..=hi {
                order[pos] = r * 8 + (s - r);
                pos += 1;
            }
        }
    }
    order
}

const DC_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const DC_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

const AC_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
#[rustfmt::skip]
const AC_VALS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

/// Canonical Huffman code set built from (BITS, HUFFVAL).
struct HuffTable {
    /// Encoder view: symbol -> (code, length).
    codes: Vec<Option<(u16, u8)>>,
    /// Decoder view per code length 1..=16.
    min_code: [i32; 17],
    max_code: [i32; 17],
    val_ptr: [usize; 17],
    vals: Vec<u8>,
}

impl HuffTable {
    fn new(bits: &[u8; 16], vals: &[u8]) -> Self {
        let mut codes = vec![None; 256];
        let mut min_code = [0i32; 17];
        let mut max_code = [-1i32; 17];
        let mut val_ptr = [0usize; 17];

        let mut code: u16 = 0;
        let mut k = 0usize;
        for len in 1..=16usize {
            val_ptr[len] = k;
            min_code[len] = code as i32;
            for _ in 0..bits[len - 1] {
                codes[vals[k] as usize] = Some((code, len as u8));
                code += 1;
                k += 1;
            }
            max_code[len] = code as i32 - 1;
            if bits[len - 1] == 0 {
                max_code[len] = -1;
                min_code[len] = code as i32;
            }
            code <<= 1;
        }
        HuffTable {
            codes,
            min_code,
            max_code,
            val_ptr,
            vals: vals.to_vec(),
        }
    }

    fn dc() -> Self {
        HuffTable::new(&DC_BITS, &DC_VALS)
    }

    fn ac() -> Self {
        HuffTable::new(&AC_BITS, &AC_VALS)
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter {
            out: Vec::new(),
            acc: 0,
            nbits: 0,
        }
    }

    fn put(&mut self, value: u32, len: u32) {
        debug_assert!(len <= 16);
        self.acc = (self.acc << len) | (value & ((1u32 << len) - 1).max(0));
        self.nbits += len;
        while self.nbits >= 8 {
            let byte = ((self.acc >> (self.nbits - 8)) & 0xff) as u8;
            self.out.push(byte);
            if byte == 0xff {
                self.out.push(0x00);
            }
            self.nbits -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put(0xff, pad);
        }
        self.out
    }
}

/// Category (bit length) of a coefficient magnitude plus its bit pattern.
fn magnitude_bits(v: i32) -> (u32, u32) {
    if v == 0 {
        return (0, 0);
    }
    let abs = v.unsigned_abs();
    let cat = 32 - abs.leading_zeros();
    let bits = if v < 0 {
        (v + (1i32 << cat) - 1) as u32
    } else {
        v as u32
    };
    (cat, bits)
}

/// Writes quantized grayscale coefficients as a baseline JFIF stream.
pub fn write_jpeg_grayscale(coeffs: &JpegCoeffs) -> Result<Vec<u8>> {
    let zz = zigzag_order();
    let height = coeffs.blocks_h() * 8;
    let width = coeffs.blocks_w() * 8;
    if height > 65535 || width > 65535 {
        return Err(Error::invalid("image too large for JFIF dimensions"));
    }

    let mut out = Vec::new();
    out.extend_from_slice(&[0xff, 0xd8]); // SOI

    // APP0 / JFIF 1.1
    out.extend_from_slice(&[0xff, 0xe0, 0x00, 0x10]);
    out.extend_from_slice(b"JFIF\0");
    out.extend_from_slice(&[0x01, 0x01, 0x00, 0x00, 0x01, 0x00, 0x01, 0x00, 0x00]);

    // DQT
    let sixteen_bit = (0..8).any(|r| (0..8).any(|c| coeffs.quant().step(r, c) > 255));
    let entry = if sixteen_bit { 2 } else { 1 };
    let len = 2 + 1 + 64 * entry;
    out.extend_from_slice(&[0xff, 0xdb]);
    out.extend_from_slice(&(len as u16).to_be_bytes());
    out.push(if sixteen_bit { 0x10 } else { 0x00 });
    for &nat in zz.iter() {
        let q = coeffs.quant().step(nat / 8, nat % 8);
        if sixteen_bit {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }

    // SOF0, one component.
    out.extend_from_slice(&[0xff, 0xc0, 0x00, 0x0b, 0x08]);
    out.extend_from_slice(&(height as u16).to_be_bytes());
    out.extend_from_slice(&(width as u16).to_be_bytes());
    out.extend_from_slice(&[0x01, 0x01, 0x11, 0x00]);

    // DHT: DC then AC.
    for (class, bits, vals) in [(0u8, &DC_BITS, &DC_VALS[..]), (1u8, &AC_BITS, &AC_VALS[..])] {
        let len = 2 + 1 + 16 + vals.len();
        out.extend_from_slice(&[0xff, 0xc4]);
        out.extend_from_slice(&(len as u16).to_be_bytes());
        out.push(class << 4);
        out.extend_from_slice(bits);
        out.extend_from_slice(vals);
    }

    // SOS
    out.extend_from_slice(&[0xff, 0xda, 0x00, 0x08, 0x01, 0x01, 0x00, 0x00, 0x3f, 0x00]);

    // Entropy-coded data.
    let dc_table = HuffTable::dc();
    let ac_table = HuffTable::ac();
    let mut bits_out = BitWriter::new();
    let mut pred: i32 = 0;
    for br in 0..coeffs.blocks_h() {
        for bc in 0..coeffs.blocks_w() {
            let block = coeffs.block(br, bc);
            let diff = block[0] - pred;
            pred = block[0];
            let (cat, bits) = magnitude_bits(diff);
            let (code, len) = dc_table.codes[cat as usize]
                .ok_or_else(|| Error::invalid(format!("DC category {cat} not encodable")))?;
            bits_out.put(code as u32, len as u32);
            if cat > 0 {
                bits_out.put(bits, cat);
            }

            let mut run = 0u32;
            for &nat in &zz[1..] {
                let v = block[nat];
                if v == 0 {
                    run += 1;
                    continue;
                }
                while run > 15 {
                    let (code, len) = ac_table.codes[0xf0].unwrap();
                    bits_out.put(code as u32, len as u32);
                    run -= 16;
                }
                let (cat, bits) = magnitude_bits(v);
                if cat > 10 {
                    return Err(Error::invalid(format!(
                        "AC coefficient {v} outside the baseline range"
                    )));
                }
                let symbol = ((run as usize) << 4) | cat as usize;
                let (code, len) = ac_table.codes[symbol]
                    .ok_or_else(|| Error::invalid(format!("AC symbol {symbol:#x} not encodable")))?;
                bits_out.put(code as u32, len as u32);
                bits_out.put(bits, cat);
                run = 0;
            }
            if run > 0 {
                let (code, len) = ac_table.codes[0x00].unwrap();
                bits_out.put(code as u32, len as u32);
            }
        }
    }
    out.extend_from_slice(&bits_out.finish());
    out.extend_from_slice(&[0xff, 0xd9]); // EOI
    Ok(out)
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        BitReader {
            data,
            pos,
            acc: 0,
            nbits: 0,
        }
    }

    fn next_bit(&mut self) -> Result<u32> {
        if self.nbits == 0 {
            let byte = *self
                .data
                .get(self.pos)
                .ok_or_else(|| Error::Parse("entropy data truncated".into()))?;
            self.pos += 1;
            if byte == 0xff {
                let next = *self
                    .data
                    .get(self.pos)
                    .ok_or_else(|| Error::Parse("entropy data truncated after 0xFF".into()))?;
                if next == 0x00 {
                    self.pos += 1;
                } else {
                    return Err(Error::Parse(format!(
                        "unexpected marker 0xFF{next:02X} inside entropy data"
                    )));
                }
            }
            self.acc = byte as u32;
            self.nbits = 8;
        }
        self.nbits -= 1;
        Ok((self.acc >> self.nbits) & 1)
    }

    fn receive(&mut self, n: u32) -> Result<u32> {
        let mut v = 0;
        for _ in 0..n {
            v = (v << 1) | self.next_bit()?;
        }
        Ok(v)
    }

    fn decode_symbol(&mut self, table: &HuffTable) -> Result<u8> {
        let mut code: i32 = 0;
        for len in 1..=16usize {
            code = (code << 1) | self.next_bit()? as i32;
            if table.max_code[len] >= 0 && code <= table.max_code[len] && code >= table.min_code[len]
            {
                let idx = table.val_ptr[len] + (code - table.min_code[len]) as usize;
                return Ok(table.vals[idx]);
            }
        }
        Err(Error::Parse("invalid Huffman code".into()))
    }
}

fn extend(bits: u32, cat: u32) -> i32 {
    if cat == 0 {
        return 0;
    }
    if bits < (1 << (cat - 1)) {
        bits as i32 - (1i32 << cat) + 1
    } else {
        bits as i32
    }
}

fn marker_name(m: u8) -> &'static str {
    match m {
        0xc1 => "SOF1 (extended sequential)",
        0xc2 => "SOF2 (progressive)",
        0xc3 => "SOF3 (lossless)",
        0xc5 => "SOF5",
        0xc6 => "SOF6",
        0xc7 => "SOF7",
        0xc9 => "SOF9 (arithmetic)",
        0xca => "SOF10 (arithmetic progressive)",
        0xcb => "SOF11",
        0xcc => "DAC (arithmetic conditioning)",
        0xcd => "SOF13",
        0xce => "SOF14",
        0xcf => "SOF15",
        0xdd => "DRI (restart interval)",
        0xdc => "DNL",
        _ => "unknown",
    }
}

/// Parses a baseline grayscale JFIF stream into quantized coefficients and
/// the quantization table used.
pub fn parse_jpeg_grayscale(bytes: &[u8]) -> Result<JpegCoeffs> {
    let zz = zigzag_order();
    if bytes.len() < 4 || bytes[0] != 0xff || bytes[1] != 0xd8 {
        return Err(Error::Parse("missing SOI marker".into()));
    }
    let mut pos = 2usize;
    let mut quant_tables: [Option<[[u16; 8]; 8]>; 4] = [None, None, None, None];
    let mut dc_table: Option<HuffTable> = None;
    let mut ac_table: Option<HuffTable> = None;
    let mut frame: Option<(usize, usize, u8)> = None; // height, width, quant id

    let read_u16 = |bytes: &[u8], at: usize| -> Result<usize> {
        bytes
            .get(at..at + 2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as usize)
            .ok_or_else(|| Error::Parse("stream truncated in segment header".into()))
    };

    loop {
        if pos + 2 > bytes.len() {
            return Err(Error::Parse("stream truncated before SOS".into()));
        }
        if bytes[pos] != 0xff {
            return Err(Error::Parse(format!(
                "expected marker at offset {pos}, found {:#04x}",
                bytes[pos]
            )));
        }
        let marker = bytes[pos + 1];
        pos += 2;
        match marker {
            0xd8 => {} // stray SOI
            0xd9 => return Err(Error::Parse("EOI before scan data".into())),
            0xe0..=0xef | 0xfe => {
                let len = read_u16(bytes, pos)?;
                pos += len;
            }
            0xdb => {
                let len = read_u16(bytes, pos)?;
                let mut t = pos + 2;
                let end = pos + len;
                while t < end {
                    let pq_tq = *bytes
                        .get(t)
                        .ok_or_else(|| Error::Parse("DQT truncated".into()))?;
                    t += 1;
                    let precision = pq_tq >> 4;
                    let id = (pq_tq & 0x0f) as usize;
                    if id > 3 {
                        return Err(Error::Parse(format!("DQT table id {id} invalid")));
                    }
                    let mut steps = [[0u16; 8]; 8];
                    for &nat in zz.iter() {
                        let q = if precision == 0 {
                            let v = *bytes
                                .get(t)
                                .ok_or_else(|| Error::Parse("DQT truncated".into()))?
                                as u16;
                            t += 1;
                            v
                        } else {
                            let v = read_u16(bytes, t)? as u16;
                            t += 2;
                            v
                        };
                        steps[nat / 8][nat % 8] = q;
                    }
                    quant_tables[id] = Some(steps);
                }
                pos = end;
            }
            0xc4 => {
                let len = read_u16(bytes, pos)?;
                let mut t = pos + 2;
                let end = pos + len;
                while t < end {
                    let tc_th = *bytes
                        .get(t)
                        .ok_or_else(|| Error::Parse("DHT truncated".into()))?;
                    t += 1;
                    let class = tc_th >> 4;
                    let mut bits = [0u8; 16];
                    let src = bytes
                        .get(t..t + 16)
                        .ok_or_else(|| Error::Parse("DHT truncated".into()))?;
                    bits.copy_from_slice(src);
                    t += 16;
                    let nvals: usize = bits.iter().map(|&b| b as usize).sum();
                    let vals = bytes
                        .get(t..t + nvals)
                        .ok_or_else(|| Error::Parse("DHT truncated".into()))?
                        .to_vec();
                    t += nvals;
                    let table = HuffTable::new(&bits, &vals);
                    if class == 0 {
                        dc_table = Some(table);
                    } else {
                        ac_table = Some(table);
                    }
                }
                pos = end;
            }
            0xc0 => {
                let len = read_u16(bytes, pos)?;
                let seg = bytes
                    .get(pos + 2..pos + len)
                    .ok_or_else(|| Error::Parse("SOF0 truncated".into()))?;
                if seg[0] != 8 {
                    return Err(Error::UnsupportedJpeg(format!(
                        "sample precision {} (only 8-bit supported)",
                        seg[0]
                    )));
                }
                let height = u16::from_be_bytes([seg[1], seg[2]]) as usize;
                let width = u16::from_be_bytes([seg[3], seg[4]]) as usize;
                let ncomp = seg[5] as usize;
                if ncomp != 1 {
                    return Err(Error::UnsupportedJpeg(format!(
                        "{ncomp} components (only single-component grayscale supported)"
                    )));
                }
                if seg[7] != 0x11 {
                    return Err(Error::UnsupportedJpeg(
                        "subsampled component (only 1x1 sampling supported)".into(),
                    ));
                }
                frame = Some((height, width, seg[8]));
                pos += len;
            }
            0xc1..=0xc3 | 0xc5..=0xc7 | 0xc9..=0xcb | 0xcd..=0xcf | 0xcc | 0xdd | 0xdc => {
                return Err(Error::UnsupportedJpeg(format!(
                    "marker 0xFF{marker:02X} {}",
                    marker_name(marker)
                )));
            }
            0xda => {
                let len = read_u16(bytes, pos)?;
                let seg = bytes
                    .get(pos + 2..pos + len)
                    .ok_or_else(|| Error::Parse("SOS truncated".into()))?;
                if seg[0] != 1 {
                    return Err(Error::UnsupportedJpeg(
                        "multi-component scan not supported".into(),
                    ));
                }
                pos += len;
                break;
            }
            other => {
                return Err(Error::Parse(format!(
                    "unexpected marker 0xFF{other:02X} before scan"
                )));
            }
        }
    }

    let (height, width, quant_id) =
        frame.ok_or_else(|| Error::Parse("missing SOF0 before SOS".into()))?;
    if height % 8 != 0 || width % 8 != 0 {
        return Err(Error::UnsupportedJpeg(format!(
            "dimensions {height}x{width} not multiples of 8"
        )));
    }
    let steps = quant_tables[quant_id as usize]
        .ok_or_else(|| Error::Parse(format!("quantization table {quant_id} not defined")))?;
    let quant = QuantTable::new(steps, None)?;
    let dc_table = dc_table.ok_or_else(|| Error::Parse("missing DC Huffman table".into()))?;
    let ac_table = ac_table.ok_or_else(|| Error::Parse("missing AC Huffman table".into()))?;

    let blocks_h = height / 8;
    let blocks_w = width / 8;
    let mut coeffs = vec![0i32; blocks_h * blocks_w * 64];
    let mut reader = BitReader::new(bytes, pos);
    let mut pred: i32 = 0;
    for b in 0..blocks_h * blocks_w {
        let block = &mut coeffs[b * 64..(b + 1) * 64];
        let cat = reader.decode_symbol(&dc_table)? as u32;
        let bits = reader.receive(cat)?;
        pred += extend(bits, cat);
        block[0] = pred;

        let mut k = 1usize;
        while k < 64 {
            let symbol = reader.decode_symbol(&ac_table)?;
            if symbol == 0x00 {
                break; // EOB
            }
            if symbol == 0xf0 {
                k += 16;
                continue;
            }
            let run = (symbol >> 4) as usize;
            let cat = (symbol & 0x0f) as u32;
            k += run;
            if k >= 64 {
                return Err(Error::Parse("AC run overflows block".into()));
            }
            let bits = reader.receive(cat)?;
            block[zz[k]] = extend(bits, cat);
            k += 1;
        }
    }

    JpegCoeffs::new(blocks_h, blocks_w, coeffs, quant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::GrayImage;
    use crate::jpegcodec::compress_hard;

    fn zigzag_reference() -> [usize; 64] {
        // Spot values from the published zigzag sequence.
        let zz = zigzag_order();
        assert_eq!(zz[0], 0);
        assert_eq!(zz[1], 1);
        assert_eq!(zz[2], 8);
        assert_eq!(zz[3], 16);
        assert_eq!(zz[4], 9);
        assert_eq!(zz[5], 2);
        assert_eq!(zz[35], 56);
        assert_eq!(zz[62], 62);
        assert_eq!(zz[63], 63);
        zz
    }

    fn textured_image(h: usize, w: usize) -> GrayImage {
        let mut img = GrayImage::constant(h, w, 0.0);
        for r in 0..h {
            for c in 0..w {
                let v = 128.0
                    + 55.0 * ((r as f64) * 0.37).sin() * ((c as f64) * 0.21).cos()
                    + ((r * 31 + c * 53) % 17) as f64;
                img.set(r, c, v.clamp(0.0, 255.0));
            }
        }
        img
    }

    #[test]
    fn zigzag_covers_all_positions() {
        let zz = zigzag_reference();
        let mut seen = [false; 64];
        for &i in zz.iter() {
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn write_parse_round_trip_exact() {
        let img = textured_image(24, 32);
        let quant = QuantTable::from_quality(85).unwrap();
        let coeffs = compress_hard(&img, &quant).unwrap();
        let bytes = write_jpeg_grayscale(&coeffs).unwrap();
        let parsed = parse_jpeg_grayscale(&bytes).unwrap();
        assert_eq!(parsed.coeffs(), coeffs.coeffs());
        assert_eq!(parsed.quant().steps(), quant.steps());

        // parse -> write -> parse is a fixed point.
        let bytes2 = write_jpeg_grayscale(&parsed).unwrap();
        let parsed2 = parse_jpeg_grayscale(&bytes2).unwrap();
        assert_eq!(parsed2.coeffs(), parsed.coeffs());
        assert_eq!(parsed2.quant().steps(), parsed.quant().steps());
    }

    #[test]
    fn truncated_stream_rejected() {
        let img = textured_image(16, 16);
        let coeffs = compress_hard(&img, &QuantTable::from_quality(85).unwrap()).unwrap();
        let bytes = write_jpeg_grayscale(&coeffs).unwrap();
        for cut in [10, bytes.len() / 2, bytes.len() - 3] {
            assert!(
                parse_jpeg_grayscale(&bytes[..cut]).is_err(),
                "truncation at {cut} accepted"
            );
        }
    }

    #[test]
    fn unsupported_markers_named() {
        // Fake a progressive stream: SOI + SOF2.
        let bytes = [0xff, 0xd8, 0xff, 0xc2, 0x00, 0x04, 0x00, 0x00];
        let err = parse_jpeg_grayscale(&bytes).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("SOF2"), "message was {msg}");
        assert!(msg.contains("progressive"), "message was {msg}");
    }
}
