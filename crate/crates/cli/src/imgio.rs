//! Loading and saving RGB images as `[3, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use geovit_core::tensor::Tensor;

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>, String> {
    let img = image::open(path.as_ref())
        .map_err(|e| format!("{}: {e}", path.as_ref().display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(data, &[3, h, w]).map_err(|e| e.to_string())
}

pub fn save_image(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<(), String> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(format!("expected a [3,H,W] image, got {:?}", t.shape()));
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let n = h * w;
    let data = t.data();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = [
                (data[i].clamp(0.0, 1.0) * 255.0).round() as u8,
                (data[n + i].clamp(0.0, 1.0) * 255.0).round() as u8,
                (data[2 * n + i].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path.as_ref())
        .map_err(|e| format!("{}: {e}", path.as_ref().display()))
}
