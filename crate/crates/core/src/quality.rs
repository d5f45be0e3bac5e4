//! Per-(face, view) quality: projected area, colour consistency and their
//! product.

use std::io::Write;

use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::ViewImage;
use crate::par;
use crate::visibility::{FaceVisibility, VisibilitySet};

/// Parameters of the colour-consistency loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyParams {
    /// Views whose Gaussian value drops below this are outliers.
    pub threshold: f64,
    /// Maximum refinement iterations.
    pub max_iters: usize,
    /// Refinement stops once fewer inliers than this remain.
    pub min_inliers: usize,
    /// Refinement stops once no covariance entry moves more than this.
    pub stability: f64,
    /// Isotropic colour variance added to the covariance before inversion,
    /// in squared 8-bit levels.
    pub noise_var: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        Self {
            threshold: 0.006,
            max_iters: 10,
            min_inliers: 4,
            stability: 1e-5,
            noise_var: 64.0,
        }
    }
}

/// Terminal statistics of the colour-consistency loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorStats {
    pub mean: Vector3<f64>,
    /// Covariance of the inlier colours, before regularisation.
    pub covariance: Matrix3<f64>,
    pub inliers: Vec<bool>,
    /// Refinement iterations performed.
    pub iterations: usize,
}

/// Visible-pixel count, or the analytic area for faces too small to cover a
/// pixel center.
pub fn projected_area(vis: &FaceVisibility) -> f64 {
    match (vis.footprint_pixels, vis.subpixel_area) {
        (0, Some(a)) if vis.is_visible() => a,
        _ => vis.visible_pixels.len() as f64,
    }
}

/// Mean RGB over the visible pixels; `None` when nothing is visible.
pub fn mean_face_color(vis: &FaceVisibility, image: &RgbImage) -> Option<[f64; 3]> {
    if vis.visible_pixels.is_empty() {
        return None;
    }
    let mut sum = [0u64; 3];
    for &[x, y] in &vis.visible_pixels {
        let p = image.get_pixel(x, y).0;
        for c in 0..3 {
            sum[c] += p[c] as u64;
        }
    }
    let n = vis.visible_pixels.len() as f64;
    Some(sum.map(|s| s as f64 / n))
}

pub fn view_quality(s: f64, omega: f64) -> f64 {
    omega * s
}

fn moments(colors: &[Vector3<f64>], inliers: &[bool]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = inliers.iter().filter(|&&b| b).count() as f64;
    let mut mean = Vector3::zeros();
    for (c, _) in colors.iter().zip(inliers).filter(|(_, &b)| b) {
        mean += c;
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for (c, _) in colors.iter().zip(inliers).filter(|(_, &b)| b) {
        let d = c - mean;
        cov += d * d.transpose();
    }
    (mean, cov / n)
}

fn gaussian(c: &Vector3<f64>, mean: &Vector3<f64>, precision: &Matrix3<f64>) -> f64 {
    let d = c - mean;
    (-0.5 * (d.transpose() * precision * d)[(0, 0)]).exp()
}

fn precision(cov: &Matrix3<f64>, noise_var: f64) -> Matrix3<f64> {
    (cov + Matrix3::identity() * noise_var)
        .try_inverse()
        .expect("regularised covariance is positive definite")
}

fn component_median(colors: &[Vector3<f64>]) -> Vector3<f64> {
    let mut out = Vector3::zeros();
    for ch in 0..3 {
        let mut v: Vec<f64> = colors.iter().map(|c| c[ch]).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        out[ch] = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
    }
    out
}

/// Gaussian colour-consistency weights for one face's candidate views.
///
/// With at least `min_inliers` colours, the inlier set is seeded from the
/// component-wise median under the noise covariance alone, then refined:
/// mean and covariance over the inliers, re-evaluate every view, keep those
/// above `threshold`. The returned weights evaluate the terminal Gaussian
/// for all views, outliers included.
pub fn color_consistency(colors: &[[f64; 3]], params: &ConsistencyParams) -> (Vec<f64>, ColorStats) {
    let cs: Vec<Vector3<f64>> = colors.iter().map(|c| Vector3::from(*c)).collect();
    let n = cs.len();
    if n == 0 {
        return (
            Vec::new(),
            ColorStats {
                mean: Vector3::zeros(),
                covariance: Matrix3::zeros(),
                inliers: Vec::new(),
                iterations: 0,
            },
        );
    }
    let mut inliers = vec![true; n];
    if n >= params.min_inliers {
        let seed_precision = precision(&Matrix3::zeros(), params.noise_var);
        let median = component_median(&cs);
        let seeded: Vec<bool> = cs
            .iter()
            .map(|c| gaussian(c, &median, &seed_precision) >= params.threshold)
            .collect();
        if seeded.iter().any(|&b| b) {
            inliers = seeded;
        }
    }
    let (mut mean, mut cov) = moments(&cs, &inliers);
    let mut iterations = 0;
    while iterations < params.max_iters {
        if inliers.iter().filter(|&&b| b).count() < params.min_inliers {
            break;
        }
        let prec = precision(&cov, params.noise_var);
        let next: Vec<bool> = cs
            .iter()
            .map(|c| gaussian(c, &mean, &prec) >= params.threshold)
            .collect();
        if !next.iter().any(|&b| b) {
            break;
        }
        iterations += 1;
        inliers = next;
        let (m, c) = moments(&cs, &inliers);
        let change = (c - cov).abs().max();
        mean = m;
        cov = c;
        if change < params.stability {
            break;
        }
    }
    let prec = precision(&cov, params.noise_var);
    let weights = cs.iter().map(|c| gaussian(c, &mean, &prec)).collect();
    (
        weights,
        ColorStats {
            mean,
            covariance: cov,
            inliers,
            iterations,
        },
    )
}

/// Quality of one visible (face, view) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityEntry {
    pub view: u32,
    /// Position of the view in the dataset's view list.
    pub view_index: usize,
    pub s: f64,
    pub omega: f64,
    pub q: f64,
    pub mean_color: [f64; 3],
}

/// Quality entries per face, ordered by view index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityTable {
    pub faces: Vec<Vec<QualityEntry>>,
}

impl QualityTable {
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Largest projected area of a face over its views (0 when unseen).
    pub fn max_area(&self, face: usize) -> f64 {
        self.faces[face].iter().map(|e| e.s).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "face,view,S,omega,Q")?;
        for (f, entries) in self.faces.iter().enumerate() {
            for e in entries {
                writeln!(w, "{},{},{},{},{}", f, e.view, e.s, e.omega, e.q)?;
            }
        }
        Ok(())
    }
}

/// Quality of one face over all the views that see it.
pub fn face_quality(
    face: usize,
    views: &[ViewImage],
    vis: &VisibilitySet,
    params: &ConsistencyParams,
) -> Vec<QualityEntry> {
    let mut entries = Vec::new();
    let mut colors = Vec::new();
    for (vi, view) in views.iter().enumerate() {
        let Some(fv) = vis.get(vi, face) else { continue };
        let Some(color) = mean_face_color(fv, &view.pixels) else { continue };
        let s = projected_area(fv);
        if s <= 0.0 {
            continue;
        }
        colors.push(color);
        entries.push(QualityEntry {
            view: view.id,
            view_index: vi,
            s,
            omega: 1.0,
            q: s,
            mean_color: color,
        });
    }
    let (weights, _) = color_consistency(&colors, params);
    for (e, w) in entries.iter_mut().zip(weights) {
        e.omega = w;
        e.q = view_quality(e.s, w);
    }
    entries
}

/// Quality table over every face, computed in parallel per face.
pub fn compute_quality(
    face_count: usize,
    views: &[ViewImage],
    vis: &VisibilitySet,
    params: &ConsistencyParams,
) -> QualityTable {
    QualityTable {
        faces: par::map_range(face_count, |f| face_quality(f, views, vis, params)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vis_with(pixels: Vec<[u32; 2]>) -> FaceVisibility {
        FaceVisibility {
            face: 0,
            view: 0,
            footprint_pixels: pixels.len(),
            visible_pixels: pixels,
            subpixel_area: None,
        }
    }

    /// Direct transcription of the loop for a fixed input, used as oracle:
    /// plain loops, explicit 3x3 inverse by cofactors.
    fn oracle(colors: &[[f64; 3]], p: &ConsistencyParams) -> Vec<f64> {
        fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
            let c = |r: usize, k: usize| {
                let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
                let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
                m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
            };
            let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
            let mut out = [[0.0; 3]; 3];
            for r in 0..3 {
                for k in 0..3 {
                    out[r][k] = c(k, r) / det;
                }
            }
            out
        }
        let g = |c: &[f64; 3], mu: &[f64; 3], cov: &[[f64; 3]; 3]| {
            let mut m = *cov;
            for k in 0..3 {
                m[k][k] += p.noise_var;
            }
            let inv = inv3(m);
            let d: Vec<f64> = (0..3).map(|k| c[k] - mu[k]).collect();
            let mut q = 0.0;
            for r in 0..3 {
                for k in 0..3 {
                    q += d[r] * inv[r][k] * d[k];
                }
            }
            (-0.5 * q).exp()
        };
        let stats = |inl: &[bool]| {
            let n = inl.iter().filter(|&&b| b).count() as f64;
            let mut mu = [0.0; 3];
            for (c, _) in colors.iter().zip(inl).filter(|(_, &b)| b) {
                for k in 0..3 {
                    mu[k] += c[k] / n;
                }
            }
            let mut cov = [[0.0; 3]; 3];
            for (c, _) in colors.iter().zip(inl).filter(|(_, &b)| b) {
                for r in 0..3 {
                    for k in 0..3 {
                        cov[r][k] += (c[r] - mu[r]) * (c[k] - mu[k]) / n;
                    }
                }
            }
            (mu, cov)
        };
        let n = colors.len();
        let mut inl = vec![true; n];
        if n >= p.min_inliers {
            let mut med = [0.0; 3];
            for k in 0..3 {
                let mut v: Vec<f64> = colors.iter().map(|c| c[k]).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                med[k] = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
            }
            let seed: Vec<bool> = colors.iter().map(|c| g(c, &med, &[[0.0; 3]; 3]) >= p.threshold).collect();
            if seed.contains(&true) {
                inl = seed;
            }
        }
        let (mut mu, mut cov) = stats(&inl);
        for _ in 0..p.max_iters {
            if inl.iter().filter(|&&b| b).count() < p.min_inliers {
                break;
            }
            let next: Vec<bool> = colors.iter().map(|c| g(c, &mu, &cov) >= p.threshold).collect();
            if !next.contains(&true) {
                break;
            }
            inl = next;
            let (m2, c2) = stats(&inl);
            let mut change: f64 = 0.0;
            for r in 0..3 {
                for k in 0..3 {
                    change = change.max((c2[r][k] - cov[r][k]).abs());
                }
            }
            mu = m2;
            cov = c2;
            if change < p.stability {
                break;
            }
        }
        colors.iter().map(|c| g(c, &mu, &cov)).collect()
    }

    #[test]
    fn identical_colors_weigh_one() {
        let (w, stats) = color_consistency(&[[40.0, 80.0, 120.0]; 5], &ConsistencyParams::default());
        assert!(w.iter().all(|&x| x == 1.0));
        assert!(stats.inliers.iter().all(|&b| b));
    }

    #[test]
    fn single_color_weighs_one() {
        let (w, _) = color_consistency(&[[1.0, 2.0, 3.0]], &ConsistencyParams::default());
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn outlier_among_four_is_rejected() {
        let colors = [
            [102.0, 100.0, 98.0],
            [98.0, 101.0, 100.0],
            [100.0, 98.0, 102.0],
            [101.0, 102.0, 99.0],
            [200.0, 200.0, 200.0],
        ];
        let p = ConsistencyParams::default();
        let (w, stats) = color_consistency(&colors, &p);
        let expected = oracle(&colors, &p);
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(w[4] < 0.006, "{w:?}");
        assert!(w[..4].iter().all(|&x| x > 0.5), "{w:?}");
        assert_eq!(stats.inliers, vec![true, true, true, true, false]);
    }

    #[test]
    fn two_colors_use_initial_statistics() {
        let colors = [[90.0, 90.0, 90.0], [110.0, 110.0, 110.0]];
        let p = ConsistencyParams::default();
        let (w, stats) = color_consistency(&colors, &p);
        assert_eq!(stats.iterations, 0);
        // mean 100, covariance 100 on every entry
        let cov = Matrix3::from_element(100.0) + Matrix3::identity() * p.noise_var;
        let d = Vector3::new(10.0, 10.0, 10.0);
        let expected = (-0.5 * (d.transpose() * cov.try_inverse().unwrap() * d)[(0, 0)]).exp();
        assert!((w[0] - expected).abs() < 1e-12 && (w[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn mean_color_of_uniform_and_split_footprints() {
        let mut img = RgbImage::from_pixel(4, 4, image::Rgb([128, 128, 128]));
        let all: Vec<[u32; 2]> = (0..4).flat_map(|y| (0..4).map(move |x| [x, y])).collect();
        assert_eq!(mean_face_color(&vis_with(all.clone()), &img), Some([128.0; 3]));
        for (i, &[x, y]) in all.iter().enumerate() {
            let v = if i % 2 == 0 { 0 } else { 255 };
            img.put_pixel(x, y, image::Rgb([v, v, v]));
        }
        assert_eq!(mean_face_color(&vis_with(all), &img), Some([127.5; 3]));
        assert_eq!(mean_face_color(&vis_with(vec![]), &img), None);
    }

    #[test]
    fn mean_color_of_gradient_matches_direct_sum() {
        let img = RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8]));
        let px: Vec<[u32; 2]> = (3..20).flat_map(|y| (5..5 + y).map(move |x| [x, y])).collect();
        let mut sum = [0.0; 3];
        for &[x, y] in &px {
            sum[0] += (x * 7) as f64;
            sum[1] += (y * 5) as f64;
            sum[2] += ((x + y) * 3) as f64;
        }
        let n = px.len() as f64;
        let m = mean_face_color(&vis_with(px), &img).unwrap();
        for k in 0..3 {
            assert!((m[k] - sum[k] / n).abs() < 0.5);
        }
    }

    #[test]
    fn quality_is_weighted_area() {
        assert_eq!(view_quality(100.0, 0.5), 50.0);
        assert_eq!(view_quality(0.0, 0.7), 0.0);
        assert_eq!(view_quality(42.0, 1.0), 42.0);
    }

    fn cluster() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 4..8)
            .prop_map(|v| v.into_iter().map(|d| [100.0 + d[0], 100.0 + d[1], 100.0 + d[2]]).collect())
    }

    proptest! {
        #[test]
        fn weights_follow_their_views_under_permutation(mut colors in prop::collection::vec(prop::array::uniform3(0.0f64..255.0), 1..9), rot in 0usize..8) {
            let p = ConsistencyParams::default();
            let (w, _) = color_consistency(&colors, &p);
            let k = rot % colors.len();
            colors.rotate_left(k);
            let (w2, _) = color_consistency(&colors, &p);
            for i in 0..colors.len() {
                let orig = (i + k) % colors.len();
                prop_assert!((w2[i] - w[orig]).abs() < 1e-9);
            }
            prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn duplicated_inlier_keeps_cluster_and_outlier_roles(mut colors in cluster(), dup in 0usize..8, far in 180.0f64..250.0) {
            let p = ConsistencyParams::default();
            let n = colors.len();
            colors.push([far, far, 255.0 - far]);
            let (w, _) = color_consistency(&colors, &p);
            prop_assert!(w[..n].iter().all(|&x| x > 0.5));
            prop_assert!(w[n] < p.threshold);
            let d = colors[dup % n];
            colors.push(d);
            let (w2, _) = color_consistency(&colors, &p);
            prop_assert!(w2[..n].iter().all(|&x| x > 0.5));
            prop_assert!(w2[n] < p.threshold);
        }

        #[test]
        fn isotropic_weights_decrease_with_distance(offsets in prop::collection::vec(0.0f64..60.0, 2..7)) {
            // colours on a line through the gray axis; fixed statistics, so
            // weights must order by distance to the mean
            let colors: Vec<[f64; 3]> = offsets.iter().map(|&o| [100.0 + o, 100.0, 100.0]).collect();
            let p = ConsistencyParams { min_inliers: usize::MAX, ..Default::default() };
            let (w, stats) = color_consistency(&colors, &p);
            for i in 0..colors.len() {
                for j in 0..colors.len() {
                    let di = (colors[i][0] - stats.mean[0]).abs();
                    let dj = (colors[j][0] - stats.mean[0]).abs();
                    if di < dj {
                        prop_assert!(w[i] >= w[j]);
                    }
                }
            }
        }
    }
}
