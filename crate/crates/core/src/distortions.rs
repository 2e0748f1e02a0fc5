//! Image corruption pipeline: additive Gaussian noise, separable Gaussian
//! blur, and a JPEG-style DCT quantization round trip. All outputs are
//! clamped back to `[0, 1]` so distorted images stay in the trained domain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt;
use std::str::FromStr;

use crate::dct::{forward_dct, inverse_dct, quant_table, BLOCK};
use crate::error::{Error, Result};

/// Distortion family applied during sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    #[serde(alias = "gaussian_noise")]
    Noise,
    #[serde(alias = "gaussian_blur")]
    Blur,
    Jpeg,
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistortionKind::Noise => write!(f, "noise"),
            DistortionKind::Blur => write!(f, "blur"),
            DistortionKind::Jpeg => write!(f, "jpeg"),
        }
    }
}

/// A distortion kind plus its level: noise sigma in pixel units, blur
/// kernel sigma in pixels, or JPEG quality in [1, 100].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: f64,
    /// Noise seed; blur and JPEG ignore it.
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: f64, seed: u64) -> Result<Self> {
        match kind {
            DistortionKind::Noise | DistortionKind::Blur => {
                if !(level >= 0.0) {
                    return Err(Error::Input(format!("{kind} level must be >= 0, got {level}")));
                }
            }
            DistortionKind::Jpeg => {
                if level.fract() != 0.0 || !(1.0..=100.0).contains(&level) {
                    return Err(Error::Input(format!(
                        "jpeg quality must be an integer in [1, 100], got {level}"
                    )));
                }
            }
        }
        Ok(Self { kind, level, seed })
    }

    pub fn apply(&self, img: &ImageGrid) -> Result<ImageGrid> {
        match self.kind {
            DistortionKind::Noise => gaussian_noise(img, self.level, self.seed),
            DistortionKind::Blur => gaussian_blur(img, self.level),
            DistortionKind::Jpeg => jpeg_compress(img, self.level as u32),
        }
    }
}

/// Parses "noise:0.3", "blur:1.2" or "jpeg:20" (seed defaults to 0).
impl FromStr for DistortionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, level) = s
            .split_once(':')
            .ok_or_else(|| Error::Input(format!("distortion spec '{s}' must be kind:level")))?;
        let kind = match name {
            "noise" => DistortionKind::Noise,
            "blur" => DistortionKind::Blur,
            "jpeg" => DistortionKind::Jpeg,
            other => return Err(Error::Input(format!("unknown distortion kind '{other}'"))),
        };
        let level: f64 = level
            .parse()
            .map_err(|_| Error::Input(format!("bad distortion level '{level}'")))?;
        DistortionSpec::new(kind, level, 0)
    }
}

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Input(format!(
                "pixel count {} != {width}x{height}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Adds seeded zero-mean Gaussian noise of the given standard deviation to
/// every pixel and clamps back to `[0, 1]`.
pub fn gaussian_noise(img: &ImageGrid, sigma: f64, seed: u64) -> Result<ImageGrid> {
    if !(sigma >= 0.0) {
        return Err(Error::Input(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = img
        .pixels
        .iter()
        .map(|&p| {
            let n: f64 = StandardNormal.sample(&mut rng);
            (p + sigma * n).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ImageGrid {
        width: img.width,
        height: img.height,
        pixels,
    })
}

/// Mirrors an out-of-range index back into `[0, len)` (symmetric
/// reflection: -1 maps to 0, len maps to len - 1).
fn reflect(idx: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= len {
            i = 2 * len - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn blur_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)` and
/// reflected edges. `sigma = 0` is the identity.
pub fn gaussian_blur(img: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    if !(sigma >= 0.0) {
        return Err(Error::Input(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let taps = blur_kernel(sigma);
    let radius = (taps.len() / 2) as isize;

    // Horizontal pass.
    let mut horiz = vec![0.0; img.pixels.len()];
    for y in 0..img.height {
        for x in 0..img.width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - radius, img.width);
                acc += w * img.at(sx, y);
            }
            horiz[y * img.width + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; img.pixels.len()];
    for y in 0..img.height {
        for x in 0..img.width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - radius, img.height);
                acc += w * horiz[sy * img.width + x];
            }
            out[y * img.width + x] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(ImageGrid {
        width: img.width,
        height: img.height,
        pixels: out,
    })
}

/// JPEG-style lossy round trip: reflect-pad to 8x8 blocks, level-shift,
/// forward DCT, quantize with the quality-scaled luminance table, dequantize,
/// inverse DCT, unshift and crop. No entropy coding; the quantization stage
/// is where the information loss happens.
pub fn jpeg_compress(img: &ImageGrid, quality: u32) -> Result<ImageGrid> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Input(format!(
            "jpeg quality must be in [1, 100], got {quality}"
        )));
    }
    let table = quant_table(quality);
    let pw = img.width.div_ceil(BLOCK) * BLOCK;
    let ph = img.height.div_ceil(BLOCK) * BLOCK;

    // Reflect-pad and level-shift to [-128, 127].
    let mut padded = vec![0.0; pw * ph];
    for y in 0..ph {
        let sy = reflect(y as isize, img.height);
        for x in 0..pw {
            let sx = reflect(x as isize, img.width);
            padded[y * pw + x] = img.at(sx, sy) * 255.0 - 128.0;
        }
    }

    for by in (0..ph).step_by(BLOCK) {
        for bx in (0..pw).step_by(BLOCK) {
            let mut block = [0.0; BLOCK * BLOCK];
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    block[r * BLOCK + c] = padded[(by + r) * pw + bx + c];
                }
            }
            let mut coef = forward_dct(&block);
            for (v, q) in coef.iter_mut().zip(&table) {
                *v = (*v / q).round() * q;
            }
            let back = inverse_dct(&coef);
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    padded[(by + r) * pw + bx + c] = back[r * BLOCK + c];
                }
            }
        }
    }

    let mut pixels = vec![0.0; img.width * img.height];
    for y in 0..img.height {
        for x in 0..img.width {
            pixels[y * img.width + x] = ((padded[y * pw + x] + 128.0) / 255.0).clamp(0.0, 1.0);
        }
    }
    Ok(ImageGrid {
        width: img.width,
        height: img.height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(w: usize, h: usize, v: f64) -> ImageGrid {
        ImageGrid::new(w, h, vec![v; w * h]).unwrap()
    }

    /// Deterministic busy test pattern.
    fn textured_image(w: usize, h: usize) -> ImageGrid {
        let pixels = (0..w * h)
            .map(|i| {
                let x = (i % w) as f64;
                let y = (i / w) as f64;
                (0.5 + 0.45 * (0.9 * x).sin() * (1.3 * y).cos()).clamp(0.0, 1.0)
            })
            .collect();
        ImageGrid::new(w, h, pixels).unwrap()
    }

    #[test]
    fn noise_zero_sigma_is_identity() {
        let img = textured_image(8, 8);
        assert_eq!(gaussian_noise(&img, 0.0, 5).unwrap(), img);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let img = textured_image(8, 8);
        let a = gaussian_noise(&img, 0.3, 42).unwrap();
        let b = gaussian_noise(&img, 0.3, 42).unwrap();
        assert_eq!(a, b);
        let c = gaussian_noise(&img, 0.3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_sample_sigma_near_nominal() {
        // At mid-gray almost nothing clamps, so sample sigma tracks nominal.
        let img = constant_image(28, 28, 0.5);
        let out = gaussian_noise(&img, 0.3, 7).unwrap();
        let deltas: Vec<f64> = out
            .pixels()
            .iter()
            .zip(img.pixels())
            .map(|(a, b)| a - b)
            .collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / deltas.len() as f64;
        let sd = var.sqrt();
        assert!((0.27..=0.33).contains(&sd), "sample sigma {sd}");
    }

    #[test]
    fn noise_rejects_negative_sigma() {
        let img = constant_image(4, 4, 0.5);
        assert!(gaussian_noise(&img, -0.1, 0).is_err());
    }

    #[test]
    fn blur_keeps_constant_images() {
        let img = constant_image(9, 9, 0.42);
        for sigma in [0.5, 1.0, 2.0] {
            let out = gaussian_blur(&img, sigma).unwrap();
            for p in out.pixels() {
                assert!((p - 0.42).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_zero_sigma_is_identity() {
        let img = textured_image(9, 9);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
    }

    /// Direct (non-separable) 2-D convolution with reflected edges.
    fn blur_2d_oracle(img: &ImageGrid, sigma: f64) -> Vec<f64> {
        let taps = blur_kernel(sigma);
        let radius = (taps.len() / 2) as isize;
        let mut out = vec![0.0; img.pixels().len()];
        for y in 0..img.height() {
            for x in 0..img.width() {
                let mut acc = 0.0;
                for (ky, wy) in taps.iter().enumerate() {
                    let sy = reflect(y as isize + ky as isize - radius, img.height());
                    for (kx, wx) in taps.iter().enumerate() {
                        let sx = reflect(x as isize + kx as isize - radius, img.width());
                        acc += wy * wx * img.at(sx, sy);
                    }
                }
                out[y * img.width() + x] = acc;
            }
        }
        out
    }

    #[test]
    fn blur_impulse_response_matches_kernel_square() {
        let mut pixels = vec![0.0; 81];
        pixels[4 * 9 + 4] = 1.0;
        let img = ImageGrid::new(9, 9, pixels).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        let taps = blur_kernel(1.0);
        let center_tap = taps[taps.len() / 2];
        assert!((out.at(4, 4) - center_tap * center_tap).abs() < 1e-12);

        let oracle = blur_2d_oracle(&img, 1.0);
        for (a, b) in out.pixels().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_reduces_high_frequency_energy_monotonically() {
        let img = textured_image(24, 24);
        let energy = |g: &ImageGrid| {
            let mut e = 0.0;
            for y in 0..g.height() {
                for x in 0..g.width() {
                    if x + 1 < g.width() {
                        let d = g.at(x + 1, y) - g.at(x, y);
                        e += d * d;
                    }
                    if y + 1 < g.height() {
                        let d = g.at(x, y + 1) - g.at(x, y);
                        e += d * d;
                    }
                }
            }
            e
        };
        let mut last = energy(&gaussian_blur(&img, 0.25).unwrap());
        for sigma in [0.5, 1.0, 1.5, 2.0] {
            let e = energy(&gaussian_blur(&img, sigma).unwrap());
            assert!(e <= last, "energy rose from {last} to {e} at sigma {sigma}");
            last = e;
        }
    }

    #[test]
    fn jpeg_constant_image_survives() {
        let img = constant_image(16, 16, 0.5);
        let out = jpeg_compress(&img, 50).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn jpeg_quality_100_is_near_lossless() {
        let img = textured_image(20, 12); // forces reflect padding
        let out = jpeg_compress(&img, 100).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 4.0 / 255.0, "{a} vs {b}");
        }
    }

    #[test]
    fn jpeg_low_quality_distorts_more_than_high() {
        let img = textured_image(24, 24);
        let err = |q| {
            let out = jpeg_compress(&img, q).unwrap();
            out.pixels()
                .iter()
                .zip(img.pixels())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        assert!(err(10) > err(90));
    }

    #[test]
    fn jpeg_rejects_bad_quality() {
        let img = constant_image(8, 8, 0.5);
        assert!(jpeg_compress(&img, 0).is_err());
        assert!(jpeg_compress(&img, 101).is_err());
    }

    #[test]
    fn spec_strings_parse() {
        let s: DistortionSpec = "noise:0.3".parse().unwrap();
        assert_eq!(s.kind, DistortionKind::Noise);
        assert_eq!(s.level, 0.3);
        let s: DistortionSpec = "blur:1.2".parse().unwrap();
        assert_eq!(s.kind, DistortionKind::Blur);
        let s: DistortionSpec = "jpeg:20".parse().unwrap();
        assert_eq!(s.kind, DistortionKind::Jpeg);
        assert!("jpeg:20.5".parse::<DistortionSpec>().is_err());
        assert!("noise:-1".parse::<DistortionSpec>().is_err());
        assert!("sepia:4".parse::<DistortionSpec>().is_err());
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }
}
