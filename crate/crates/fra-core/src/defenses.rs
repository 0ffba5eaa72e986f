//! Input-space defenses applied to adversarial images before evaluation.
//!
//! The jpeg-like defense keeps only the perturbation-destroying core of
//! baseline JPEG: per-channel 8x8 block DCT against the standard luminance
//! quantization table, without entropy coding or chroma subsampling. The
//! other two are a normalized Gaussian blur and a center crop refilled by
//! bilinear resampling.

use crate::error::{FraError, Result};
use crate::spectral::{dct2_with, idct2_with, DctBasis};
use crate::tensor::{ensure_finite, Image, Matrix};

/// Standard JPEG luminance quantization table (quality 50 baseline).
const LUMA_QUANT: [[f64; 8]; 8] = [
    [16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0],
    [12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0],
    [14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0],
    [14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0],
    [18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0],
    [24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0],
    [49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0],
    [72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0],
];

#[derive(Debug, Clone, PartialEq)]
pub enum DefenseSpec {
    /// DCT-quantization core of baseline JPEG at the given quality.
    JpegLike { quality: u32 },
    /// Normalized 2-D Gaussian blur with an odd kernel size.
    Gaussian { kernel: usize, sigma: f64 },
    /// Central crop of the given ratio, bilinearly resampled back.
    CenterCrop { ratio: f64 },
}

impl DefenseSpec {
    pub fn default_jpeg() -> Self {
        DefenseSpec::JpegLike { quality: 75 }
    }

    pub fn default_gaussian() -> Self {
        DefenseSpec::Gaussian {
            kernel: 5,
            sigma: 0.5,
        }
    }

    pub fn default_center_crop() -> Self {
        DefenseSpec::CenterCrop { ratio: 0.9 }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DefenseSpec::JpegLike { .. } => "jpeg-like",
            DefenseSpec::Gaussian { .. } => "gaussian",
            DefenseSpec::CenterCrop { .. } => "center-crop",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DefenseSpec::JpegLike { quality } => {
                if quality == 0 || quality > 100 {
                    return Err(FraError::InvalidParam {
                        name: "quality",
                        reason: format!("JPEG quality must lie in [1, 100], got {quality}"),
                    });
                }
            }
            DefenseSpec::Gaussian { kernel, sigma } => {
                if kernel % 2 == 0 || kernel == 0 {
                    return Err(FraError::InvalidParam {
                        name: "kernel",
                        reason: format!("Gaussian kernel size must be odd, got {kernel}"),
                    });
                }
                if !sigma.is_finite() || sigma <= 0.0 {
                    return Err(FraError::InvalidParam {
                        name: "sigma",
                        reason: format!("Gaussian sigma must be > 0, got {sigma}"),
                    });
                }
            }
            DefenseSpec::CenterCrop { ratio } => {
                if !ratio.is_finite() || ratio <= 0.0 || ratio > 1.0 {
                    return Err(FraError::InvalidParam {
                        name: "ratio",
                        reason: format!("crop ratio must lie in (0, 1], got {ratio}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Apply the defense; output shape always equals input shape and values are
/// clamped to [0, 1].
pub fn defend(image: &Image, spec: &DefenseSpec) -> Result<Image> {
    spec.validate()?;
    ensure_finite(image.data(), "defend input")?;
    let out = match *spec {
        DefenseSpec::JpegLike { quality } => jpeg_like(image, quality),
        DefenseSpec::Gaussian { kernel, sigma } => gaussian_blur(image, kernel, sigma),
        DefenseSpec::CenterCrop { ratio } => center_crop_resample(image, ratio),
    };
    Ok(out.clamp01())
}

/// Quality-scaled quantization table: `200 - 2q` percent for q >= 50,
/// `5000 / q` percent below, entries clamped to [1, 255] (libjpeg scaling).
fn scaled_quant_table(quality: u32) -> [[f64; 8]; 8] {
    let percent = if quality >= 50 {
        (200 - 2 * quality) as f64
    } else {
        5000.0 / quality as f64
    };
    let mut table = [[0.0; 8]; 8];
    for (i, row) in LUMA_QUANT.iter().enumerate() {
        for (j, &q) in row.iter().enumerate() {
            table[i][j] = (q * percent / 100.0).round().clamp(1.0, 255.0);
        }
    }
    table
}

fn jpeg_like(image: &Image, quality: u32) -> Image {
    let (h, w, channels) = image.shape();
    let table = scaled_quant_table(quality);
    let basis = DctBasis::new(8);
    let padded_h = h.div_ceil(8) * 8;
    let padded_w = w.div_ceil(8) * 8;
    let mut out = image.clone();
    for c in 0..channels {
        // Levels centered at zero, edge-replicated to full blocks.
        let plane = Matrix::from_fn(padded_h, padded_w, |y, x| {
            image.get(y.min(h - 1), x.min(w - 1), c) * 255.0 - 128.0
        });
        let mut restored = Matrix::zeros(padded_h, padded_w);
        for by in (0..padded_h).step_by(8) {
            for bx in (0..padded_w).step_by(8) {
                let block = Matrix::from_fn(8, 8, |i, j| plane.get(by + i, bx + j));
                let mut coeffs = dct2_with(&block, &basis, &basis);
                for (i, row) in table.iter().enumerate() {
                    for (j, &q) in row.iter().enumerate() {
                        coeffs.set(i, j, (coeffs.get(i, j) / q).round() * q);
                    }
                }
                let back = idct2_with(&coeffs, &basis, &basis);
                for i in 0..8 {
                    for j in 0..8 {
                        restored.set(by + i, bx + j, back.get(i, j));
                    }
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                out.set(y, x, c, (restored.get(y, x) + 128.0) / 255.0);
            }
        }
    }
    out
}

fn gaussian_kernel(size: usize, sigma: f64) -> Matrix {
    let r = (size - 1) as isize / 2;
    let mut kernel = Matrix::zeros(size, size);
    let mut sum = 0.0;
    for i in 0..size {
        for j in 0..size {
            let dy = i as isize - r;
            let dx = j as isize - r;
            let v = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.set(i, j, v);
            sum += v;
        }
    }
    for v in kernel.data_mut() {
        *v /= sum;
    }
    kernel
}

fn gaussian_blur(image: &Image, kernel_size: usize, sigma: f64) -> Image {
    let (h, w, channels) = image.shape();
    let kernel = gaussian_kernel(kernel_size, sigma);
    let r = (kernel_size - 1) as isize / 2;
    let mut out = image.clone();
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for i in 0..kernel_size {
                    for j in 0..kernel_size {
                        // Edge-replicate padding.
                        let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                        let sx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += kernel.get(i, j) * image.get(sy, sx, c);
                    }
                }
                out.set(y, x, c, acc);
            }
        }
    }
    out
}

/// Crop the central `floor(ratio * H) x floor(ratio * W)` window (at least
/// one pixel) and resample it back to the full size with half-pixel-centered
/// bilinear interpolation: output pixel i maps to crop coordinate
/// `(i + 0.5) * crop / full - 0.5`, with sample corners clamped into the
/// crop window.
fn center_crop_resample(image: &Image, ratio: f64) -> Image {
    let (h, w, channels) = image.shape();
    let crop_h = ((ratio * h as f64).floor() as usize).max(1);
    let crop_w = ((ratio * w as f64).floor() as usize).max(1);
    let top = (h - crop_h) / 2;
    let left = (w - crop_w) / 2;
    let mut out = image.clone();
    for y in 0..h {
        let src_y = (y as f64 + 0.5) * crop_h as f64 / h as f64 - 0.5;
        let y0 = src_y.floor();
        let fy = src_y - y0;
        let y0c = (y0 as isize).clamp(0, crop_h as isize - 1) as usize;
        let y1c = (y0 as isize + 1).clamp(0, crop_h as isize - 1) as usize;
        for x in 0..w {
            let src_x = (x as f64 + 0.5) * crop_w as f64 / w as f64 - 0.5;
            let x0 = src_x.floor();
            let fx = src_x - x0;
            let x0c = (x0 as isize).clamp(0, crop_w as isize - 1) as usize;
            let x1c = (x0 as isize + 1).clamp(0, crop_w as isize - 1) as usize;
            for c in 0..channels {
                let p00 = image.get(top + y0c, left + x0c, c);
                let p01 = image.get(top + y0c, left + x1c, c);
                let p10 = image.get(top + y1c, left + x0c, c);
                let p11 = image.get(top + y1c, left + x1c, c);
                let v = p00 * (1.0 - fy) * (1.0 - fx)
                    + p01 * (1.0 - fy) * fx
                    + p10 * fy * (1.0 - fx)
                    + p11 * fy * fx;
                out.set(y, x, c, v);
            }
        }
    }
    out
}
