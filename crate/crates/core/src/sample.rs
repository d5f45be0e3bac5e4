//! Bilinear sampling with pixel-center coordinates and edge clamping.

use image::RgbImage;

/// Bilinear interpolation of `get` at `(u, v)`; integer coordinates are
/// sample centers and reads outside the grid clamp to the border.
#[inline]
pub fn bilinear<F: Fn(u32, u32) -> f64>(width: u32, height: u32, u: f64, v: f64, get: F) -> f64 {
    let (x0, fx) = split(u, width);
    let (y0, fy) = split(v, height);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let top = get(x0, y0) * (1.0 - fx) + get(x1, y0) * fx;
    let bottom = get(x0, y1) * (1.0 - fx) + get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

#[inline]
fn split(u: f64, size: u32) -> (u32, f64) {
    let max = (size - 1) as f64;
    let u = u.clamp(0.0, max);
    let x0 = u.floor();
    (x0 as u32, u - x0)
}

/// Bilinear RGB sample of an 8-bit image.
#[inline]
pub fn bilinear_rgb(img: &RgbImage, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let (x0, fx) = split(u, w);
    let (y0, fy) = split(v, h);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}
