//! DCT machinery: token-wise 1-D transforms over patch sequences, separable
//! 2-D transforms over gradient planes, the radial frequency coordinate, and
//! the family of radial gradient filters.
//!
//! All transforms use the orthonormal Type-II convention: the inverse is the
//! transpose and Frobenius norm is preserved. The transforms are computed by
//! explicit basis-matrix multiplication, which is plenty at the sizes this
//! crate works with.

use crate::error::{FraError, Result};
use crate::tensor::{ensure_finite, norm, Matrix, Tensor4};

/// Orthonormal Type-II DCT basis for a fixed length.
///
/// Row k, column n holds `s_k * cos(pi * (n + 1/2) * k / len)` with
/// `s_0 = sqrt(1/len)` and `s_k = sqrt(2/len)` for k >= 1, so the matrix is
/// orthogonal and the inverse transform is the transpose.
#[derive(Debug, Clone)]
pub struct DctBasis {
    forward: Matrix,
}

impl DctBasis {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "DCT length must be at least 1");
        let scale0 = (1.0 / len as f64).sqrt();
        let scale = (2.0 / len as f64).sqrt();
        let forward = Matrix::from_fn(len, len, |k, n| {
            let s = if k == 0 { scale0 } else { scale };
            s * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / len as f64).cos()
        });
        DctBasis { forward }
    }

    pub fn size(&self) -> usize {
        self.forward.rows()
    }

    /// Transform every column of `m` (m has `size` rows).
    pub fn dct_cols(&self, m: &Matrix) -> Matrix {
        self.forward.mul(m)
    }

    /// Inverse transform of [`DctBasis::dct_cols`].
    pub fn idct_cols(&self, m: &Matrix) -> Matrix {
        self.forward.tr_mul(m)
    }
}

/// Token-wise DCT coefficients of a patch-embedding matrix together with the
/// per-frequency energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStack {
    coeffs: Matrix,
    energy: Vec<f64>,
}

impl SpectralStack {
    /// Wrap a coefficient matrix, computing the energy vector (the Euclidean
    /// norm of each frequency row).
    pub fn from_coeffs(coeffs: Matrix) -> Self {
        let energy = (0..coeffs.rows()).map(|k| norm(coeffs.row(k))).collect();
        SpectralStack { coeffs, energy }
    }

    /// P x d coefficient matrix; row k is the k-th frequency component.
    pub fn coeffs(&self) -> &Matrix {
        &self.coeffs
    }

    /// Length-P energy vector.
    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn token_count(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn dim(&self) -> usize {
        self.coeffs.cols()
    }
}

/// Token-wise orthonormal Type-II DCT of a P x d embedding matrix, applied
/// independently to each of the d columns along the token axis.
pub fn dct_tokens(embeddings: &Matrix) -> Result<SpectralStack> {
    ensure_finite(embeddings.data(), "dct_tokens input")?;
    let basis = DctBasis::new(embeddings.rows());
    Ok(SpectralStack::from_coeffs(basis.dct_cols(embeddings)))
}

/// Inverse of [`dct_tokens`].
pub fn idct_tokens(stack: &SpectralStack) -> Matrix {
    let basis = DctBasis::new(stack.token_count());
    basis.idct_cols(stack.coeffs())
}

/// Orthonormal separable 2-D Type-II DCT (columns, then rows).
pub fn dct2(plane: &Matrix) -> Result<Matrix> {
    ensure_finite(plane.data(), "dct2 input")?;
    let row_basis = DctBasis::new(plane.rows());
    let col_basis = DctBasis::new(plane.cols());
    Ok(dct2_with(plane, &row_basis, &col_basis))
}

/// Inverse of [`dct2`].
pub fn idct2(plane: &Matrix) -> Result<Matrix> {
    ensure_finite(plane.data(), "idct2 input")?;
    let row_basis = DctBasis::new(plane.rows());
    let col_basis = DctBasis::new(plane.cols());
    Ok(idct2_with(plane, &row_basis, &col_basis))
}

pub(crate) fn dct2_with(plane: &Matrix, row_basis: &DctBasis, col_basis: &DctBasis) -> Matrix {
    // D_H * X * D_W^T
    row_basis.dct_cols(plane).mul_bt(&col_basis.forward)
}

pub(crate) fn idct2_with(plane: &Matrix, row_basis: &DctBasis, col_basis: &DctBasis) -> Matrix {
    // D_H^T * X * D_W
    row_basis.idct_cols(plane).mul(&col_basis.forward)
}

/// Radial frequency coordinate `sqrt(u^2 + v^2) / sqrt(H^2 + W^2)` without
/// range checking; `(0, 0)` is the DC corner.
///
/// Note that for valid indices (u < H, v < W) the value stays strictly below
/// 1; the denominator is kept literal rather than renormalized.
pub fn radial_distance_formula(u: usize, v: usize, height: usize, width: usize) -> f64 {
    let num = (u * u + v * v) as f64;
    let den = (height * height + width * width) as f64;
    (num / den).sqrt()
}

/// Range-checked radial frequency coordinate for an H x W coefficient grid.
pub fn radial_distance(u: usize, v: usize, height: usize, width: usize) -> Result<f64> {
    if u >= height || v >= width {
        return Err(FraError::IndexOutOfRange(format!(
            "(u={u}, v={v}) outside {height}x{width} grid"
        )));
    }
    Ok(radial_distance_formula(u, v, height, width))
}

/// Default band edges shared by the band-wise filters: low = [0, 1/3),
/// mid = [1/3, 2/3), high = [2/3, 1].
pub const DEFAULT_BAND_EDGES: (f64, f64) = (1.0 / 3.0, 2.0 / 3.0);

/// Radial modulation applied to the 2-D DCT spectrum of a gradient plane.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialFilter {
    /// `(1 - d)^p` decay; `p = 0` is a no-op modulation.
    Polynomial { p: f64 },
    /// `1 / (1 + beta * d)`.
    Reciprocal { beta: f64 },
    /// `sigmoid(-beta * (d - center))`.
    Sigmoid { beta: f64, center: f64 },
    /// Clip each band's coefficients into `mean +- gamma * std` computed over
    /// that band of the current plane.
    BandClip {
        tau_low: f64,
        tau_high: f64,
        gamma: [f64; 3],
    },
    /// Keep the top K% coefficients by magnitude in each band (band edges at
    /// the defaults), zero the rest. Ties at the cut keep the lower (u, v)
    /// lexicographic index.
    TopKSparse { keep_percent: [f64; 3] },
    /// Exact identity; the gradient is passed through untouched.
    Identity,
}

impl RadialFilter {
    /// Filter with the default polynomial decay exponent.
    pub fn default_polynomial() -> Self {
        RadialFilter::Polynomial { p: 1.5 }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, RadialFilter::Identity)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RadialFilter::Polynomial { .. } => "polynomial",
            RadialFilter::Reciprocal { .. } => "reciprocal",
            RadialFilter::Sigmoid { .. } => "sigmoid",
            RadialFilter::BandClip { .. } => "band-clip",
            RadialFilter::TopKSparse { .. } => "top-k-sparse",
            RadialFilter::Identity => "identity",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RadialFilter::Polynomial { p } => {
                if !p.is_finite() || p < 0.0 {
                    return Err(FraError::InvalidParam {
                        name: "p",
                        reason: format!("polynomial exponent must be >= 0, got {p}"),
                    });
                }
            }
            RadialFilter::Reciprocal { beta } => {
                if !beta.is_finite() || beta < 0.0 {
                    return Err(FraError::InvalidParam {
                        name: "beta",
                        reason: format!("reciprocal slope must be >= 0, got {beta}"),
                    });
                }
            }
            RadialFilter::Sigmoid { beta, center } => {
                if !beta.is_finite() || beta < 0.0 || !center.is_finite() {
                    return Err(FraError::InvalidParam {
                        name: "beta/center",
                        reason: format!(
                            "sigmoid needs beta >= 0 and finite center, got ({beta}, {center})"
                        ),
                    });
                }
            }
            RadialFilter::BandClip {
                tau_low,
                tau_high,
                gamma,
            } => {
                if !(0.0 < tau_low && tau_low < tau_high && tau_high < 1.0) {
                    return Err(FraError::InvalidParam {
                        name: "tau",
                        reason: format!(
                            "band edges must satisfy 0 < tau_low < tau_high < 1, got ({tau_low}, {tau_high})"
                        ),
                    });
                }
                if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
                    return Err(FraError::InvalidParam {
                        name: "gamma",
                        reason: format!("band-clip widths must be >= 0, got {gamma:?}"),
                    });
                }
            }
            RadialFilter::TopKSparse { keep_percent } => {
                if keep_percent
                    .iter()
                    .any(|k| !k.is_finite() || !(0.0..=100.0).contains(k))
                {
                    return Err(FraError::InvalidParam {
                        name: "keep_percent",
                        reason: format!(
                            "top-K percentages must lie in [0, 100], got {keep_percent:?}"
                        ),
                    });
                }
            }
            RadialFilter::Identity => {}
        }
        Ok(())
    }

    /// Modulation factor at radial coordinate `d`, defined for the smooth
    /// kinds (polynomial, reciprocal, sigmoid) and identity.
    pub fn modulation(&self, d: f64) -> f64 {
        match *self {
            RadialFilter::Polynomial { p } => (1.0 - d).powf(p),
            RadialFilter::Reciprocal { beta } => 1.0 / (1.0 + beta * d),
            RadialFilter::Sigmoid { beta, center } => 1.0 / (1.0 + (beta * (d - center)).exp()),
            RadialFilter::Identity => 1.0,
            _ => panic!("modulation() is only defined for smooth filter kinds"),
        }
    }

    fn is_smooth(&self) -> bool {
        matches!(
            self,
            RadialFilter::Polynomial { .. }
                | RadialFilter::Reciprocal { .. }
                | RadialFilter::Sigmoid { .. }
        )
    }
}

fn band_index(d: f64, tau_low: f64, tau_high: f64) -> usize {
    if d < tau_low {
        0
    } else if d < tau_high {
        1
    } else {
        2
    }
}

/// Apply a radial filter to one H x W spectrum-domain plane, in place on a
/// coefficient matrix (the caller does the DCT / IDCT around this).
fn modulate_spectrum_in_place(coeffs: &mut Matrix, filter: &RadialFilter) {
    let (h, w) = (coeffs.rows(), coeffs.cols());
    match filter {
        RadialFilter::Identity => {}
        f if f.is_smooth() => {
            for u in 0..h {
                for v in 0..w {
                    let d = radial_distance_formula(u, v, h, w);
                    coeffs.set(u, v, coeffs.get(u, v) * f.modulation(d));
                }
            }
        }
        RadialFilter::BandClip {
            tau_low,
            tau_high,
            gamma,
        } => {
            let mut bands: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for u in 0..h {
                for v in 0..w {
                    let d = radial_distance_formula(u, v, h, w);
                    bands[band_index(d, *tau_low, *tau_high)].push(coeffs.get(u, v));
                }
            }
            // Population mean and standard deviation per band.
            let stats: Vec<Option<(f64, f64)>> = bands
                .iter()
                .map(|b| {
                    if b.is_empty() {
                        None
                    } else {
                        let mean = b.iter().sum::<f64>() / b.len() as f64;
                        let var =
                            b.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / b.len() as f64;
                        Some((mean, var.sqrt()))
                    }
                })
                .collect();
            for u in 0..h {
                for v in 0..w {
                    let d = radial_distance_formula(u, v, h, w);
                    let band = band_index(d, *tau_low, *tau_high);
                    if let Some((mean, std)) = stats[band] {
                        let half_width = gamma[band] * std;
                        let clipped = coeffs.get(u, v).clamp(mean - half_width, mean + half_width);
                        coeffs.set(u, v, clipped);
                    }
                }
            }
        }
        RadialFilter::TopKSparse { keep_percent } => {
            let (tau_low, tau_high) = DEFAULT_BAND_EDGES;
            let mut bands: [Vec<(usize, usize)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for u in 0..h {
                for v in 0..w {
                    let d = radial_distance_formula(u, v, h, w);
                    bands[band_index(d, tau_low, tau_high)].push((u, v));
                }
            }
            for (band, members) in bands.iter_mut().enumerate() {
                if members.is_empty() {
                    continue;
                }
                // Largest magnitude first; ties keep the lower (u, v) index.
                members.sort_by(|&(ua, va), &(ub, vb)| {
                    let ma = coeffs.get(ua, va).abs();
                    let mb = coeffs.get(ub, vb).abs();
                    mb.partial_cmp(&ma).unwrap().then((ua, va).cmp(&(ub, vb)))
                });
                let keep = ((members.len() as f64 * keep_percent[band] / 100.0).round() as usize)
                    .min(members.len());
                for &(u, v) in members.iter().skip(keep) {
                    coeffs.set(u, v, 0.0);
                }
            }
        }
        _ => unreachable!(),
    }
}

/// The spectrum-domain half of [`apply_fgr_plane`]: modulate an H x W
/// coefficient matrix by the filter, without the surrounding transforms.
/// This is where the smooth kinds multiply every coefficient on one radial
/// circle by the same factor, so equal-radius coefficient ratios are
/// preserved exactly.
pub fn filter_spectrum(coeffs: &Matrix, filter: &RadialFilter) -> Result<Matrix> {
    filter.validate()?;
    ensure_finite(coeffs.data(), "filter_spectrum input")?;
    if filter.is_identity() || (coeffs.rows() == 1 && coeffs.cols() == 1) {
        return Ok(coeffs.clone());
    }
    let mut out = coeffs.clone();
    modulate_spectrum_in_place(&mut out, filter);
    Ok(out)
}

/// Filter a single gradient plane: DCT, radial modulation (or band-wise
/// statistics), inverse DCT. Identity and degenerate 1 x 1 planes pass
/// through untouched.
pub fn apply_fgr_plane(plane: &Matrix, filter: &RadialFilter) -> Result<Matrix> {
    filter.validate()?;
    ensure_finite(plane.data(), "apply_fgr input")?;
    if filter.is_identity() || (plane.rows() == 1 && plane.cols() == 1) {
        return Ok(plane.clone());
    }
    let row_basis = DctBasis::new(plane.rows());
    let col_basis = DctBasis::new(plane.cols());
    Ok(apply_fgr_plane_with(plane, filter, &row_basis, &col_basis))
}

pub(crate) fn apply_fgr_plane_with(
    plane: &Matrix,
    filter: &RadialFilter,
    row_basis: &DctBasis,
    col_basis: &DctBasis,
) -> Matrix {
    if filter.is_identity() || (plane.rows() == 1 && plane.cols() == 1) {
        return plane.clone();
    }
    let mut coeffs = dct2_with(plane, row_basis, col_basis);
    modulate_spectrum_in_place(&mut coeffs, filter);
    idct2_with(&coeffs, row_basis, col_basis)
}

/// Frequency-domain gradient regularization over a B x C x H x W gradient:
/// every (batch, channel) plane is filtered independently.
pub fn apply_fgr(gradient: &Tensor4, filter: &RadialFilter) -> Result<Tensor4> {
    filter.validate()?;
    ensure_finite(gradient.data(), "apply_fgr input")?;
    let (b, c, h, w) = gradient.dims();
    if filter.is_identity() || (h == 1 && w == 1) {
        return Ok(gradient.clone());
    }
    let row_basis = DctBasis::new(h);
    let col_basis = DctBasis::new(w);
    let mut out = gradient.clone();
    for bi in 0..b {
        for ci in 0..c {
            let plane = gradient.plane(bi, ci);
            out.set_plane(
                bi,
                ci,
                &apply_fgr_plane_with(&plane, filter, &row_basis, &col_basis),
            );
        }
    }
    Ok(out)
}

/// Total squared 2-D DCT energy of a plane at radial coordinate strictly
/// above `d_threshold`.
pub fn spectral_energy_above(plane: &Matrix, d_threshold: f64) -> Result<f64> {
    let coeffs = dct2(plane)?;
    let (h, w) = (coeffs.rows(), coeffs.cols());
    let mut total = 0.0;
    for u in 0..h {
        for v in 0..w {
            if radial_distance_formula(u, v, h, w) > d_threshold {
                let g = coeffs.get(u, v);
                total += g * g;
            }
        }
    }
    Ok(total)
}
