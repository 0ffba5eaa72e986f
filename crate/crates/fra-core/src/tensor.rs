//! Dense value types: row-major matrices, images, and 4-D gradient stacks.
//!
//! All types are plain `Vec<f64>` buffers with explicit dimensions. They are
//! immutable value objects in the public API sense: operations return new
//! values, nothing holds interior mutability, and everything is `Send + Sync`.

use crate::error::{FraError, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wrap an existing row-major buffer. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self * other`
    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`
    pub fn mul_bt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul (B^T) dimension mismatch");
        Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    /// `self^T * other`
    pub fn tr_mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul (A^T) dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * v` for a column vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "matvec (A^T) dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (k, &a) in v.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out.iter_mut().zip(self.row(k)) {
                *o += a * b;
            }
        }
        out
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &Matrix, scale: f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// H x W x C image tensor with row-major (y, x, channel) layout.
///
/// Pixel values live in [0, 1] for actual images; perturbations and
/// gradients reuse the same container without the range contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            height * width * channels,
            "image buffer length mismatch"
        );
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, v: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    /// Extract channel `c` as an H x W plane.
    pub fn channel_plane(&self, c: usize) -> Matrix {
        Matrix::from_fn(self.height, self.width, |y, x| self.get(y, x, c))
    }

    /// Overwrite channel `c` from an H x W plane.
    pub fn set_channel_plane(&mut self, c: usize, plane: &Matrix) {
        assert_eq!((plane.rows(), plane.cols()), (self.height, self.width));
        for y in 0..self.height {
            for x in 0..self.width {
                self.set(y, x, c, plane.get(y, x));
            }
        }
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn add_scaled(&self, other: &Image, scale: f64) -> Image {
        assert!(self.same_shape(other), "image shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// `self * decay + other * scale`, the momentum-style update.
    pub fn scale_then_add(&self, decay: f64, other: &Image, scale: f64) -> Image {
        assert!(self.same_shape(other), "image shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * decay + b * scale)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn clamp01(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// B x C x H x W stack of gradient planes, row-major in (b, c, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Tensor4 {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Self {
        assert_eq!(
            data.len(),
            batch * channels * height * width,
            "tensor buffer length mismatch"
        );
        Tensor4 {
            batch,
            channels,
            height,
            width,
            data,
        }
    }

    /// Lift a single image into a batch of one, transposing HWC to CHW.
    pub fn from_image(image: &Image) -> Self {
        let (h, w, c) = image.shape();
        let mut t = Tensor4::zeros(1, c, h, w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    t.set(0, ch, y, x, image.get(y, x, ch));
                }
            }
        }
        t
    }

    /// Inverse of [`Tensor4::from_image`]; requires batch == 1.
    pub fn into_image(&self) -> Image {
        assert_eq!(self.batch, 1, "into_image requires a single-element batch");
        let mut img = Image::zeros(self.height, self.width, self.channels);
        for ch in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    img.set(y, x, ch, self.get(0, ch, y, x));
                }
            }
        }
        img
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((b * self.channels + c) * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        self.data[((b * self.channels + c) * self.height + y) * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contiguous (b, c) plane as an H x W matrix.
    pub fn plane(&self, b: usize, c: usize) -> Matrix {
        let start = ((b * self.channels + c) * self.height) * self.width;
        Matrix::from_vec(
            self.height,
            self.width,
            self.data[start..start + self.height * self.width].to_vec(),
        )
    }

    pub fn set_plane(&mut self, b: usize, c: usize, plane: &Matrix) {
        assert_eq!((plane.rows(), plane.cols()), (self.height, self.width));
        let start = ((b * self.channels + c) * self.height) * self.width;
        self.data[start..start + self.height * self.width].copy_from_slice(plane.data());
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Reject non-finite buffers with a named domain error.
pub fn ensure_finite(data: &[f64], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FraError::NonFinite(what))
    }
}
