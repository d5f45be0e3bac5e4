//! Exact Euclidean distance transform.
//!
//! Separable two-pass algorithm over squared distances: a column pass
//! computes vertical distances to the nearest invalid pixel, then a row pass
//! takes the lower envelope of parabolas rooted at every column. Pixels
//! outside the image count as invalid, so distances are also measured to
//! the image border.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::par;

/// Euclidean distance from each pixel to the nearest invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMap {
    pub width: u32,
    pub height: u32,
    /// Squared distances, row-major; 0 on invalid pixels.
    sq: Vec<u32>,
}

impl DistanceMap {
    pub fn squared(&self, x: u32, y: u32) -> u32 {
        self.sq[y as usize * self.width as usize + x as usize]
    }

    pub fn distance(&self, x: u32, y: u32) -> f64 {
        (self.squared(x, y) as f64).sqrt()
    }

    pub fn squared_values(&self) -> &[u32] {
        &self.sq
    }

    /// Bilinear sample at pixel-center coordinates, clamped at the border.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        crate::sample::bilinear(self.width, self.height, u, v, |x, y| self.distance(x, y))
    }

    /// 16-bit PNG scaled so the largest distance maps to 65535.
    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        let max = self.sq.iter().copied().max().unwrap_or(0);
        let scale = if max > 0 { 65535.0 / (max as f64).sqrt() } else { 0.0 };
        let img = ImageBuffer::<Luma<u16>, _>::from_fn(self.width, self.height, |x, y| {
            Luma([(self.distance(x, y) * scale).round() as u16])
        });
        img.save(path)
    }
}

/// Squared distance to the nearest invalid cell along one line, with virtual
/// invalid cells just before and after the line.
fn line_pass(valid: impl Fn(usize) -> bool, n: usize) -> Vec<u64> {
    let mut out = vec![0u64; n];
    let mut last: i64 = -1;
    for i in 0..n {
        if !valid(i) {
            last = i as i64;
        }
        let d = (i as i64 - last) as u64;
        out[i] = d * d;
    }
    let mut next: i64 = n as i64;
    for i in (0..n).rev() {
        if !valid(i) {
            next = i as i64;
        }
        let d = (next - i as i64) as u64;
        out[i] = out[i].min(d * d);
    }
    out
}

/// Lower envelope of `(x - q)² + f(q)` over `q ∈ {-1, 0, .., n-1, n}`, where
/// the two virtual sites have `f = 0`.
fn envelope_pass(f: &[u64]) -> Vec<u64> {
    let n = f.len();
    let site = |k: usize| -> (i64, u64) {
        // k = 0 is position -1, k = n + 1 is position n
        if k == 0 {
            (-1, 0)
        } else if k == n + 1 {
            (n as i64, 0)
        } else {
            ((k - 1) as i64, f[k - 1])
        }
    };
    let sites = n + 2;
    let mut v = vec![0usize; sites];
    let mut z = vec![0f64; sites + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |a: usize, b: usize| {
        let (qa, fa) = site(a);
        let (qb, fb) = site(b);
        ((fb as f64 + (qb * qb) as f64) - (fa as f64 + (qa * qa) as f64)) / (2.0 * (qb - qa) as f64)
    };
    for q in 1..sites {
        let mut s = intersect(v[k], q);
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut out = vec![0u64; n];
    k = 0;
    for (x, slot) in out.iter_mut().enumerate() {
        let xf = x as f64;
        while z[k + 1] < xf {
            k += 1;
        }
        let (q, fq) = site(v[k]);
        let d = x as i64 - q;
        *slot = (d * d) as u64 + fq;
    }
    out
}

/// Exact distance transform of a row-major boolean mask (`true` = valid).
pub fn distance_transform(mask: &[bool], width: u32, height: u32) -> DistanceMap {
    let (w, h) = (width as usize, height as usize);
    assert_eq!(mask.len(), w * h, "mask size does not match dimensions");
    let columns: Vec<Vec<u64>> = par::map_range(w, |x| line_pass(|y| mask[y * w + x], h));
    let rows: Vec<Vec<u64>> = par::map_range(h, |y| {
        let g: Vec<u64> = (0..w).map(|x| columns[x][y]).collect();
        envelope_pass(&g)
    });
    let sq = rows
        .into_iter()
        .flatten()
        .map(|d| u32::try_from(d).expect("squared distance fits in u32"))
        .collect();
    DistanceMap { width, height, sq }
}
