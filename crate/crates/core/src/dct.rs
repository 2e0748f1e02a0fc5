//! 8x8 orthonormal DCT-II and the quality-scaled luminance
//! quantization table used by the JPEG-style distortion.

use std::f64::consts::PI;
use std::sync::OnceLock;

pub(crate) const BLOCK: usize = 8;

/// Standard luminance quantization table (row-major).
const BASE_LUMA: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Quantization table for a quality factor in [1, 100] using the common
/// libjpeg mapping: scale = 5000/Q below 50, 200 - 2Q at or above, entries
/// rounded and clamped to [1, 255]. Quality 100 collapses to all ones.
pub(crate) fn quant_table(quality: u32) -> [f64; 64] {
    debug_assert!((1..=100).contains(&quality));
    let scale = if quality < 50 {
        5000.0 / quality as f64
    } else {
        200.0 - 2.0 * quality as f64
    };
    let mut table = [0.0; 64];
    for (t, b) in table.iter_mut().zip(BASE_LUMA) {
        *t = (b * scale / 100.0).round().clamp(1.0, 255.0);
    }
    table
}

/// cos((2x+1) u pi / 16) indexed as [x][u].
fn cos_table() -> &'static [[f64; BLOCK]; BLOCK] {
    static TABLE: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; BLOCK]; BLOCK];
        for (x, row) in t.iter_mut().enumerate() {
            for (u, v) in row.iter_mut().enumerate() {
                *v = ((2 * x + 1) as f64 * u as f64 * PI / (2.0 * BLOCK as f64)).cos();
            }
        }
        t
    })
}

fn alpha(u: usize) -> f64 {
    if u == 0 {
        (1.0 / BLOCK as f64).sqrt()
    } else {
        (2.0 / BLOCK as f64).sqrt()
    }
}

fn dct_1d(input: &[f64; BLOCK]) -> [f64; BLOCK] {
    let cos = cos_table();
    let mut out = [0.0; BLOCK];
    for (u, o) in out.iter_mut().enumerate() {
        let sum: f64 = (0..BLOCK).map(|x| input[x] * cos[x][u]).sum();
        *o = alpha(u) * sum;
    }
    out
}

fn idct_1d(input: &[f64; BLOCK]) -> [f64; BLOCK] {
    let cos = cos_table();
    let mut out = [0.0; BLOCK];
    for (x, o) in out.iter_mut().enumerate() {
        *o = (0..BLOCK).map(|u| alpha(u) * input[u] * cos[x][u]).sum();
    }
    out
}

fn transform_rows_cols(block: &[f64; 64], f: fn(&[f64; BLOCK]) -> [f64; BLOCK]) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    for r in 0..BLOCK {
        let mut row = [0.0; BLOCK];
        row.copy_from_slice(&block[r * BLOCK..(r + 1) * BLOCK]);
        tmp[r * BLOCK..(r + 1) * BLOCK].copy_from_slice(&f(&row));
    }
    let mut out = [0.0; 64];
    for c in 0..BLOCK {
        let mut col = [0.0; BLOCK];
        for r in 0..BLOCK {
            col[r] = tmp[r * BLOCK + c];
        }
        let t = f(&col);
        for r in 0..BLOCK {
            out[r * BLOCK + c] = t[r];
        }
    }
    out
}

/// Separable forward 2-D DCT-II of a row-major 8x8 block.
pub(crate) fn forward_dct(block: &[f64; 64]) -> [f64; 64] {
    transform_rows_cols(block, dct_1d)
}

/// Separable inverse 2-D DCT of a row-major 8x8 block.
pub(crate) fn inverse_dct(block: &[f64; 64]) -> [f64; 64] {
    transform_rows_cols(block, idct_1d)
}
