//! Image and tensor file formats.
//!
//! Two formats are supported, selected by file magic on load and by
//! extension on save:
//!
//! * binary PPM (`P6`, 8-bit, maxval 255): pixels map to [0, 1] via v/255 on
//!   load; saving quantizes with round-half-to-even.
//! * the repo tensor format `FRAT`: magic bytes `FRAT`, then little-endian
//!   u32 rank, u32 dims..., f64 payload in row-major order. Bit-exact round
//!   trips. Images are rank-3 (H, W, C); matrices rank-2.

use crate::error::{CliError, Result};
use fra_core::tensor::{Image, Matrix};
use std::io::Write;
use std::path::Path;

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(b"P6") {
        load_ppm(path, &bytes)
    } else if bytes.starts_with(b"FRAT") {
        let (dims, payload) = parse_frat(path, &bytes)?;
        if dims.len() != 3 {
            return Err(CliError::Format {
                format: "FRAT",
                path: path.to_path_buf(),
                message: format!("expected rank 3 for an image, got rank {}", dims.len()),
            });
        }
        Ok(Image::from_vec(dims[0], dims[1], dims[2], payload))
    } else {
        Err(CliError::Format {
            format: "image",
            path: path.to_path_buf(),
            message: "unrecognized magic (expected P6 or FRAT)".to_string(),
        })
    }
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => save_ppm(path, image),
        Some("frat") => {
            let (h, w, c) = image.shape();
            write_frat(path, &[h, w, c], image.data())
        }
        other => Err(CliError::Format {
            format: "image",
            path: path.to_path_buf(),
            message: format!("unsupported extension {other:?} (use .ppm or .frat)"),
        }),
    }
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if !bytes.starts_with(b"FRAT") {
        return Err(CliError::Format {
            format: "FRAT",
            path: path.to_path_buf(),
            message: "missing FRAT magic".to_string(),
        });
    }
    let (dims, payload) = parse_frat(path, &bytes)?;
    if dims.len() != 2 {
        return Err(CliError::Format {
            format: "FRAT",
            path: path.to_path_buf(),
            message: format!("expected rank 2 for a matrix, got rank {}", dims.len()),
        });
    }
    Ok(Matrix::from_vec(dims[0], dims[1], payload))
}

pub fn save_matrix(path: &Path, matrix: &Matrix) -> Result<()> {
    write_frat(path, &[matrix.rows(), matrix.cols()], matrix.data())
}

fn load_ppm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let bad = |message: String| CliError::Format {
        format: "PPM",
        path: path.to_path_buf(),
        message,
    };
    let mut pos = 2usize; // past "P6"
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        // Skip whitespace and '#' comment lines between header fields.
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".to_string()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        fields.push(
            text.parse::<usize>()
                .map_err(|e| bad(format!("bad header field: {e}")))?,
        );
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(bad(format!("only maxval 255 is supported, got {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing whitespace after maxval".to_string()));
    }
    pos += 1; // single whitespace byte, then raster
    let expected = width * height * 3;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(bad(format!(
            "truncated raster: {} of {expected} bytes",
            raster.len()
        )));
    }
    let data = raster[..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok(Image::from_vec(height, width, 3, data))
}

fn save_ppm(path: &Path, image: &Image) -> Result<()> {
    let (h, w, c) = image.shape();
    if c != 3 {
        return Err(CliError::Format {
            format: "PPM",
            path: path.to_path_buf(),
            message: format!("PPM requires 3 channels, image has {c}"),
        });
    }
    let mut out = Vec::with_capacity(32 + h * w * 3);
    write!(out, "P6\n{w} {h}\n255\n").unwrap();
    for v in image.data() {
        let level = (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8;
        out.push(level);
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

fn parse_frat(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |message: String| CliError::Format {
        format: "FRAT",
        path: path.to_path_buf(),
        message,
    };
    let mut pos = 4usize; // past magic
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        if *pos + 4 > bytes.len() {
            return Err(bad("truncated header".to_string()));
        }
        let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
        *pos += 4;
        Ok(v)
    };
    let rank = read_u32(&mut pos)? as usize;
    if rank == 0 || rank > 8 {
        return Err(bad(format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count = 1usize;
    for _ in 0..rank {
        let d = read_u32(&mut pos)? as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| bad("dimension overflow".to_string()))?;
        dims.push(d);
    }
    if pos + count * 8 > bytes.len() {
        return Err(bad(format!(
            "truncated payload: have {} bytes, need {}",
            bytes.len() - pos,
            count * 8
        )));
    }
    let payload = bytes[pos..pos + count * 8]
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    Ok((dims, payload))
}

fn write_frat(path: &Path, dims: &[usize], payload: &[f64]) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 + dims.len() * 4 + payload.len() * 8);
    out.extend_from_slice(b"FRAT");
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}
