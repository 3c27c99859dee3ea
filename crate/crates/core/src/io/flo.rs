//! Middlebury `.flo` flow interchange: magic float 202021.25, i32 width,
//! i32 height, then row-major interleaved (u, v) float32, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::FormatError;
use crate::geometry::{FieldKind, GeoField};
use crate::tensor::Tensor;

const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo<W: Write>(w: &mut W, field: &GeoField<f32>) -> Result<(), FormatError> {
    if field.kind != FieldKind::Flow {
        return Err(FormatError::BadHeader(format!(
            ".flo holds flow fields, not {}",
            field.kind.name()
        )));
    }
    let (h, wd) = (field.h(), field.w());
    w.write_all(&FLO_MAGIC.to_le_bytes())?;
    w.write_all(&(wd as i32).to_le_bytes())?;
    w.write_all(&(h as i32).to_le_bytes())?;
    let data = field.data.data();
    let n = h * wd;
    let mut buf = Vec::with_capacity(8 * n);
    for i in 0..n {
        buf.extend_from_slice(&data[i].to_le_bytes());
        buf.extend_from_slice(&data[n + i].to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_flo<R: Read>(r: &mut R) -> Result<GeoField<f32>, FormatError> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| FormatError::Truncated(".flo header".into()))?;
    let magic = f32::from_le_bytes([head[0], head[1], head[2], head[3]]);
    if magic != FLO_MAGIC {
        return Err(FormatError::Magic {
            expected: FLO_MAGIC.to_string(),
            got: magic.to_string(),
        });
    }
    let w = i32::from_le_bytes([head[4], head[5], head[6], head[7]]);
    let h = i32::from_le_bytes([head[8], head[9], head[10], head[11]]);
    if w <= 0 || h <= 0 {
        return Err(FormatError::BadHeader(format!("dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w * h;
    let mut raw = vec![0u8; 8 * n];
    r.read_exact(&mut raw)
        .map_err(|_| FormatError::Truncated(".flo payload".into()))?;
    let mut data = vec![0.0f32; 2 * n];
    for i in 0..n {
        data[i] = f32::from_le_bytes([raw[8 * i], raw[8 * i + 1], raw[8 * i + 2], raw[8 * i + 3]]);
        data[n + i] = f32::from_le_bytes([
            raw[8 * i + 4],
            raw[8 * i + 5],
            raw[8 * i + 6],
            raw[8 * i + 7],
        ]);
    }
    let t = Tensor::from_vec(data, &[2, h, w])
        .map_err(|e| FormatError::BadHeader(e.to_string()))?;
    GeoField::new(FieldKind::Flow, t).map_err(|e| FormatError::BadHeader(e.to_string()))
}

pub fn write_flo_file(path: impl AsRef<Path>, field: &GeoField<f32>) -> Result<(), FormatError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_flo(&mut f, field)
}

pub fn read_flo_file(path: impl AsRef<Path>) -> Result<GeoField<f32>, FormatError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_flo(&mut f)
}
