//! KITTI 16-bit PNG flow interchange: `u = (ch0 - 2^15)/64`,
//! `v = (ch1 - 2^15)/64`, valid where `ch2 > 0`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::FormatError;
use crate::geometry::{FieldKind, GeoField};
use crate::tensor::Tensor;

fn encode_plane(v: f32) -> u16 {
    // quantize in f64: near 2^15 the f32 grid is coarser than 1/128 px
    (v as f64 * 64.0 + 32768.0).round().clamp(0.0, 65535.0) as u16
}

pub fn write_kitti_png(
    path: impl AsRef<Path>,
    field: &GeoField<f32>,
) -> Result<(), FormatError> {
    if field.kind != FieldKind::Flow {
        return Err(FormatError::BadHeader(format!(
            "KITTI flow PNG holds flow fields, not {}",
            field.kind.name()
        )));
    }
    let (h, w) = (field.h(), field.w());
    let n = h * w;
    let data = field.data.data();
    let valid = field.valid_or_all();
    let mut buf: Vec<u16> = Vec::with_capacity(3 * n);
    for i in 0..n {
        if valid[i] {
            buf.push(encode_plane(data[i]));
            buf.push(encode_plane(data[n + i]));
            buf.push(1);
        } else {
            buf.extend_from_slice(&[0, 0, 0]);
        }
    }
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, buf)
            .expect("buffer sized from the field");
    DynamicImage::ImageRgb16(img)
        .save(path)
        .map_err(|e| FormatError::Image(e.to_string()))
}

pub fn read_kitti_png(path: impl AsRef<Path>) -> Result<GeoField<f32>, FormatError> {
    let img = image::open(path).map_err(|e| FormatError::Image(e.to_string()))?;
    let rgb16 = match img {
        DynamicImage::ImageRgb16(b) => b,
        other => {
            return Err(FormatError::BitDepth(format!(
                "expected 16-bit 3-channel PNG, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = (rgb16.width() as usize, rgb16.height() as usize);
    let n = h * w;
    let mut data = vec![0.0f32; 2 * n];
    let mut valid = vec![false; n];
    for (i, px) in rgb16.pixels().enumerate() {
        let [cu, cv, cm] = px.0;
        if cm > 0 {
            data[i] = ((cu as f64 - 32768.0) / 64.0) as f32;
            data[n + i] = ((cv as f64 - 32768.0) / 64.0) as f32;
            valid[i] = true;
        }
    }
    let t = Tensor::from_vec(data, &[2, h, w])
        .map_err(|e| FormatError::BadHeader(e.to_string()))?;
    GeoField::new(FieldKind::Flow, t)
        .and_then(|f| f.with_valid(valid))
        .map_err(|e| FormatError::BadHeader(e.to_string()))
}
