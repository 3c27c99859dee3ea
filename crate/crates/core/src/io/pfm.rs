//! Grayscale PFM ("Pf") interchange for disparity and depth maps.
//! The header is `Pf`, width, height, scale; a negative scale marks
//! little-endian payload; rows are stored bottom-up.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::FormatError;
use crate::geometry::{FieldKind, GeoField};
use crate::tensor::Tensor;

pub fn write_pfm<W: Write>(w: &mut W, field: &GeoField<f32>) -> Result<(), FormatError> {
    if field.kind == FieldKind::Flow {
        return Err(FormatError::BadHeader(
            "PFM holds single-channel disparity or depth maps".into(),
        ));
    }
    let (h, wd) = (field.h(), field.w());
    write!(w, "Pf\n{wd} {h}\n-1.0\n")?;
    let data = field.data.data();
    let mut buf = Vec::with_capacity(4 * h * wd);
    for row in (0..h).rev() {
        for col in 0..wd {
            buf.extend_from_slice(&data[row * wd + col].to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_token<R: Read>(r: &mut R) -> Result<String, FormatError> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            if tok.is_empty() {
                return Err(FormatError::Truncated("PFM header".into()));
            }
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    String::from_utf8(tok).map_err(|_| FormatError::BadHeader("non-UTF8 PFM header".into()))
}

/// Reads a grayscale PFM as the requested field kind (Disparity or Depth).
pub fn read_pfm<R: Read>(r: &mut R, kind: FieldKind) -> Result<GeoField<f32>, FormatError> {
    if kind == FieldKind::Flow {
        return Err(FormatError::BadHeader(
            "PFM holds single-channel disparity or depth maps".into(),
        ));
    }
    let magic = read_token(r)?;
    if magic != "Pf" {
        return Err(FormatError::Magic {
            expected: "Pf".into(),
            got: magic,
        });
    }
    let w: i64 = read_token(r)?
        .parse()
        .map_err(|_| FormatError::BadHeader("PFM width".into()))?;
    let h: i64 = read_token(r)?
        .parse()
        .map_err(|_| FormatError::BadHeader("PFM height".into()))?;
    let scale: f32 = read_token(r)?
        .parse()
        .map_err(|_| FormatError::BadHeader("PFM scale".into()))?;
    if w <= 0 || h <= 0 {
        return Err(FormatError::BadHeader(format!("dimensions {w}x{h}")));
    }
    if scale == 0.0 {
        return Err(FormatError::BadHeader("zero PFM scale".into()));
    }
    let (w, h) = (w as usize, h as usize);
    let little_endian = scale < 0.0;
    let mut raw = vec![0u8; 4 * w * h];
    r.read_exact(&mut raw)
        .map_err(|_| FormatError::Truncated("PFM payload".into()))?;
    let mut data = vec![0.0f32; w * h];
    for file_row in 0..h {
        let img_row = h - 1 - file_row;
        for col in 0..w {
            let o = 4 * (file_row * w + col);
            let b = [raw[o], raw[o + 1], raw[o + 2], raw[o + 3]];
            data[img_row * w + col] = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    let t = Tensor::from_vec(data, &[1, h, w])
        .map_err(|e| FormatError::BadHeader(e.to_string()))?;
    GeoField::new(kind, t).map_err(|e| FormatError::BadHeader(e.to_string()))
}

pub fn write_pfm_file(path: impl AsRef<Path>, field: &GeoField<f32>) -> Result<(), FormatError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pfm(&mut f, field)
}

pub fn read_pfm_file(
    path: impl AsRef<Path>,
    kind: FieldKind,
) -> Result<GeoField<f32>, FormatError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_pfm(&mut f, kind)
}
