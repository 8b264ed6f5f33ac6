//! Interoperability of the baseline JFIF writer with an independent decoder
//! and bit-exactness of the coefficient container.

use tada_core::imagery::GrayImage;
use tada_core::jpegcodec::{
    compress_hard, decompress_clipped, parse_jpeg_grayscale, read_container, write_container,
    write_jpeg_grayscale, QuantTable,
};

fn textured(h: usize, w: usize, seed: u64) -> GrayImage {
    let mut img = GrayImage::constant(h, w, 0.0);
    let mut state = seed;
    for r in 0..h {
        for c in 0..w {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let noise = (state >> 40) as f64 / 16777216.0;
            let v = 128.0
                + 60.0 * ((r as f64 * 0.11).sin() + (c as f64 * 0.07).cos())
                + 20.0 * (noise - 0.5);
            img.set(r, c, v.clamp(0.0, 255.0));
        }
    }
    img
}

#[test]
fn independent_decoder_agrees_with_ours() {
    let img = textured(64, 80, 99);
    let quant = QuantTable::from_quality(85).unwrap();
    let coeffs = compress_hard(&img, &quant).unwrap();
    let bytes = write_jpeg_grayscale(&coeffs).unwrap();

    // Parse with our reader: exact coefficient and table recovery.
    let parsed = parse_jpeg_grayscale(&bytes).unwrap();
    assert_eq!(parsed.coeffs(), coeffs.coeffs());
    assert_eq!(parsed.quant().steps(), quant.steps());

    // Decode with the independent `image` crate decoder and compare pixels
    // against our own reconstruction (allow 1 gray level for IDCT variance).
    let decoded = image::load_from_memory(&bytes).expect("external decoder accepts our stream");
    let gray = decoded.to_luma8();
    assert_eq!((gray.height(), gray.width()), (64, 80));
    let ours = decompress_clipped(&coeffs);
    let mut max_diff = 0i32;
    for r in 0..64 {
        for c in 0..80 {
            let a = gray.get_pixel(c as u32, r as u32).0[0] as i32;
            let b = ours.get(r, c) as i32;
            max_diff = max_diff.max((a - b).abs());
        }
    }
    assert!(max_diff <= 1, "decoder disagreement of {max_diff} gray levels");
}

#[test]
fn sixteen_bit_quant_tables_survive_the_stream() {
    // Steps above 255 force the 16-bit DQT form.
    let mut steps = QuantTable::from_quality(50).unwrap().steps();
    steps[7][7] = 400;
    steps[6][7] = 300;
    let quant = QuantTable::new(steps, None).unwrap();
    let img = textured(16, 16, 3);
    let coeffs = compress_hard(&img, &quant).unwrap();
    let bytes = write_jpeg_grayscale(&coeffs).unwrap();
    let parsed = parse_jpeg_grayscale(&bytes).unwrap();
    assert_eq!(parsed.quant().steps(), steps);
    assert_eq!(parsed.coeffs(), coeffs.coeffs());
}

#[test]
fn container_and_jfif_round_trips_compose() {
    let img = textured(40, 24, 17);
    let quant = QuantTable::from_quality(93).unwrap();
    let coeffs = compress_hard(&img, &quant).unwrap();

    let mut buf = Vec::new();
    write_container(&coeffs, &mut buf).unwrap();
    let from_container = read_container(buf.as_slice()).unwrap();

    let jfif = write_jpeg_grayscale(&from_container).unwrap();
    let from_jfif = parse_jpeg_grayscale(&jfif).unwrap();
    assert_eq!(from_jfif.coeffs(), coeffs.coeffs());
    assert_eq!(from_jfif.quant().steps(), quant.steps());
}
