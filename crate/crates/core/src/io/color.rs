//! Flow visualization on the standard color wheel: hue from the flow
//! direction, saturation from the magnitude, zero flow rendered white.

use image::{Rgb, RgbImage};

use crate::error::FormatError;
use crate::geometry::{FieldKind, GeoField};

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Renders a flow field: hue is `atan2(v, u)`, saturation is the magnitude
/// relative to `max_norm` (clamped to 1), value is 1. With `max_norm`
/// unset the field's own maximum magnitude is used.
pub fn flow_to_color(
    field: &GeoField<f32>,
    max_norm: Option<f32>,
) -> Result<RgbImage, FormatError> {
    if field.kind != FieldKind::Flow {
        return Err(FormatError::BadHeader(format!(
            "flow_to_color expects a flow field, got {}",
            field.kind.name()
        )));
    }
    let (h, w) = (field.h(), field.w());
    let n = h * w;
    let data = field.data.data();
    let max_norm = max_norm.unwrap_or_else(|| {
        (0..n)
            .map(|i| (data[i] * data[i] + data[n + i] * data[n + i]).sqrt())
            .fold(0.0f32, f32::max)
            .max(f32::MIN_POSITIVE)
    });
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (u, v) = (data[i], data[n + i]);
            let mag = (u * u + v * v).sqrt();
            let mut hue = v.atan2(u).to_degrees();
            if hue < 0.0 {
                hue += 360.0;
            }
            let sat = (mag / max_norm).clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, Rgb(hsv_to_rgb(hue, sat, 1.0)));
        }
    }
    Ok(img)
}
