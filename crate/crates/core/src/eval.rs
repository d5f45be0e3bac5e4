//! Re-rendering of textured models and image-fidelity metrics.
//!
//! Every input view is rendered again from the textured model and compared
//! with the original photograph on the pixels the model covers.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::TexturedModel;
use crate::camera::{PinholeCamera, Projector, ViewImage};
use crate::mesh::AdjacencyGraph;
use crate::par;
use crate::sample::bilinear_rgb;
use crate::visibility::{project_faces, rasterize_depth, DepthBuffer};

/// Distance from a projected edge to each seam-score sample, in pixels.
pub const SEAM_OFFSET_PX: f64 = 1.5;

pub const PSNR_CAP: f64 = 99.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const RANGE: f64 = 255.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((u32, u32), (u32, u32)),
    #[error("mask selects no pixel")]
    EmptyMask,
    #[error("masked region {0}x{1} is smaller than the {WINDOW}x{WINDOW} window")]
    TooSmall(usize, usize),
    #[error("no view has any covered pixel")]
    NothingCovered,
}

/// A view rendered from the textured model.
#[derive(Debug, Clone)]
pub struct VirtualRender {
    pub image: RgbImage,
    /// Row-major, true where a face was drawn.
    pub coverage: Vec<bool>,
    pub depth: DepthBuffer,
}

impl VirtualRender {
    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

/// Texture color at barycentric `bary` of `face` (bilinear atlas lookup).
pub fn texture_color(model: &TexturedModel, face: usize, bary: [f64; 3]) -> [f64; 3] {
    let page = &model.pages[model.face_page[face]];
    let uv = &model.uvs[face];
    let u = bary[0] * uv[0][0] + bary[1] * uv[1][0] + bary[2] * uv[2][0];
    let v = bary[0] * uv[0][1] + bary[1] * uv[1][1] + bary[2] * uv[2][1];
    let (w, h) = (page.width() as f64, page.height() as f64);
    bilinear_rgb(page, u * w - 0.5, (1.0 - v) * h - 0.5)
}

/// Renders `model` through `camera`; background stays black.
pub fn render_virtual(model: &TexturedModel, camera: &PinholeCamera) -> VirtualRender {
    let depth = rasterize_depth(&model.mesh, camera);
    let tris = project_faces(&model.mesh, camera);
    let (w, h) = (camera.width(), camera.height());
    let rows = par::map_range(h as usize, |y| {
        let y = y as u32;
        (0..w)
            .map(|x| {
                let f = depth.face(x, y)?;
                let frag = tris[f].as_ref()?.fragment(x, y)?;
                Some(texture_color(model, f, frag.bary).map(|c| c.round().clamp(0.0, 255.0) as u8))
            })
            .collect::<Vec<_>>()
    });
    let mut image = RgbImage::new(w, h);
    let mut coverage = vec![false; w as usize * h as usize];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            if let Some(px) = px {
                image.put_pixel(x as u32, y as u32, Rgb(px));
                coverage[y * w as usize + x] = true;
            }
        }
    }
    VirtualRender { image, coverage, depth }
}

fn check_sizes(a: &RgbImage, b: &RgbImage, mask: Option<&[bool]>) -> Result<(), EvalError> {
    if a.dimensions() != b.dimensions() {
        return Err(EvalError::SizeMismatch(a.dimensions(), b.dimensions()));
    }
    if let Some(m) = mask {
        assert_eq!(m.len(), a.len() / 3, "mask size does not match image");
    }
    Ok(())
}

/// Peak signal-to-noise ratio over the RGB values of masked pixels (all
/// pixels when `mask` is `None`), capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: Option<&[bool]>) -> Result<f64, EvalError> {
    check_sizes(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.pixels().zip(b.pixels()).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for c in 0..3 {
            let d = pa.0[c] as f64 - pb.0[c] as f64;
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (RANGE * RANGE / mse).log10()).min(PSNR_CAP))
}

/// Grayscale plane.
#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                data.push(s / 4.0);
            }
        }
        Plane { w, h, data }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// Separable Gaussian filtering keeping only fully-overlapping windows.
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (w, h) = (self.w + 1 - n, self.h + 1 - n);
        let mut tmp = vec![0.0; w * self.h];
        for y in 0..self.h {
            for x in 0..w {
                tmp[y * w + x] = (0..n).map(|i| k[i] * self.at(x + i, y)).sum();
            }
        }
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = (0..n).map(|i| k[i] * tmp[(y + i) * w + x]).sum();
            }
        }
        Plane { w, h, data }
    }
}

fn luma(p: &Rgb<u8>) -> f64 {
    0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64
}

fn gaussian_kernel() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let k: Vec<f64> = (0..WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean luminance term and mean contrast-structure term at one scale.
fn ssim_terms(a: &Plane, b: &Plane, k: &[f64]) -> (f64, f64) {
    let (c1, c2) = ((K1 * RANGE).powi(2), (K2 * RANGE).powi(2));
    let ma = a.filter_valid(k);
    let mb = b.filter_valid(k);
    let saa = a.mul(a).filter_valid(k);
    let sbb = b.mul(b).filter_valid(k);
    let sab = a.mul(b).filter_valid(k);
    let n = ma.data.len() as f64;
    let (mut l_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..ma.data.len() {
        let (mua, mub) = (ma.data[i], mb.data[i]);
        let va = saa.data[i] - mua * mua;
        let vb = sbb.data[i] - mub * mub;
        let cov = sab.data[i] - mua * mub;
        l_sum += (2.0 * mua * mub + c1) / (mua * mua + mub * mub + c1);
        cs_sum += (2.0 * cov + c2) / (va + vb + c2);
    }
    (l_sum / n, cs_sum / n)
}

/// Number of dyadic scales whose smallest image still holds one window.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let mut side = width.min(height);
    let mut scales = 0;
    while scales < MS_SSIM_WEIGHTS.len() && side >= WINDOW {
        scales += 1;
        side /= 2;
    }
    scales
}

/// Result of [`ms_ssim`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    pub scales: usize,
}

/// Multi-scale structural similarity of the luminance of `a` and `b`.
///
/// With a mask, the bounding box of the masked pixels is compared and
/// unmasked pixels inside it are set to the mean of both images in both
/// inputs, so they add no dissimilarity. When the region is too small for
/// five scales, fewer are used and their weights renormalised. Negative
/// per-scale terms are clamped to zero.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage, mask: Option<&[bool]>) -> Result<MsSsim, EvalError> {
    check_sizes(a, b, mask)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    let selected = |x: usize, y: usize| mask.is_none_or(|m| m[y * w + x]);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if selected(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(EvalError::EmptyMask);
    }
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let scales = ms_ssim_scales(bw, bh);
    if scales == 0 {
        return Err(EvalError::TooSmall(bw, bh));
    }
    let mut pa = Plane { w: bw, h: bh, data: Vec::with_capacity(bw * bh) };
    let mut pb = pa.clone();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (la, lb) = (luma(a.get_pixel(x as u32, y as u32)), luma(b.get_pixel(x as u32, y as u32)));
            if selected(x, y) {
                pa.data.push(la);
                pb.data.push(lb);
            } else {
                let m = 0.5 * (la + lb);
                pa.data.push(m);
                pb.data.push(m);
            }
        }
    }
    let k = gaussian_kernel();
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut value = 1.0;
    for (s, &weight) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (l, cs) = ssim_terms(&pa, &pb, &k);
        let term = if s + 1 == scales { l * cs } else { cs };
        value *= term.max(0.0).powf(weight / total);
        if s + 1 < scales {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(MsSsim { value: value.clamp(0.0, 1.0), scales })
}

/// Metrics of one view. Masked values are `None` when the model covers no
/// pixel of the view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: u32,
    pub covered_pixels: usize,
    pub psnr: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub ms_ssim_scales: Option<usize>,
    pub psnr_unmasked: f64,
    pub ms_ssim_unmasked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub evaluated_views: usize,
    pub mean_psnr: f64,
    pub mean_ms_ssim: f64,
    pub mean_psnr_unmasked: f64,
    pub mean_ms_ssim_unmasked: f64,
}

fn view_metrics(model: &TexturedModel, view: &ViewImage) -> Result<ViewMetrics, EvalError> {
    let r = render_virtual(model, &view.camera);
    let covered = r.covered_count();
    let (psnr_m, ssim_m) = if covered > 0 {
        let m = ms_ssim(&r.image, &view.pixels, Some(&r.coverage))?;
        (Some(psnr(&r.image, &view.pixels, Some(&r.coverage))?), Some(m))
    } else {
        (None, None)
    };
    Ok(ViewMetrics {
        view: view.id,
        covered_pixels: covered,
        psnr: psnr_m,
        ms_ssim: ssim_m.map(|m| m.value),
        ms_ssim_scales: ssim_m.map(|m| m.scales),
        psnr_unmasked: psnr(&r.image, &view.pixels, None)?,
        ms_ssim_unmasked: ms_ssim(&r.image, &view.pixels, None)?.value,
    })
}

/// Renders and scores every view; means run over views with coverage.
pub fn evaluate_dataset(model: &TexturedModel, views: &[ViewImage]) -> Result<EvalReport, EvalError> {
    let mut metrics = par::map_slice(views, |v| view_metrics(model, v))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    metrics.sort_by_key(|m| m.view);
    let covered: Vec<&ViewMetrics> = metrics.iter().filter(|m| m.psnr.is_some()).collect();
    if covered.is_empty() {
        return Err(EvalError::NothingCovered);
    }
    let n = covered.len() as f64;
    let mean = |f: &dyn Fn(&ViewMetrics) -> f64| covered.iter().map(|m| f(m)).sum::<f64>() / n;
    Ok(EvalReport {
        evaluated_views: covered.len(),
        mean_psnr: mean(&|m| m.psnr.unwrap_or(0.0)),
        mean_ms_ssim: mean(&|m| m.ms_ssim.unwrap_or(0.0)),
        mean_psnr_unmasked: mean(&|m| m.psnr_unmasked),
        mean_ms_ssim_unmasked: mean(&|m| m.ms_ssim_unmasked),
        views: metrics,
    })
}

/// Mean absolute color step across mesh edges in rendered views.
///
/// For every adjacent face pair and every view, points at a quarter, half
/// and three quarters along the shared edge are projected and stepped
/// [`SEAM_OFFSET_PX`] to either side, perpendicular to the projected edge.
/// When the two pixels show the two faces, the per-channel absolute
/// difference of their rendered colors is accumulated. Returns `None` when
/// no edge could be sampled.
pub fn seam_score(model: &TexturedModel, views: &[PinholeCamera]) -> Option<f64> {
    let graph = AdjacencyGraph::build(&model.mesh);
    let mesh = &model.mesh;
    let sums = par::map_slice(views, |cam| {
        let r = render_virtual(model, cam);
        let (mut sum, mut n) = (0.0, 0usize);
        let pixel = |u: f64, v: f64| -> Option<(usize, Rgb<u8>)> {
            let (x, y) = (u.round(), v.round());
            if !cam.in_bounds(x, y) {
                return None;
            }
            let (x, y) = (x as u32, y as u32);
            Some((r.depth.face(x, y)?, *r.image.get_pixel(x, y)))
        };
        for &(f, g) in graph.edges() {
            let shared: Vec<usize> = mesh.faces[f].iter().copied().filter(|v| mesh.faces[g].contains(v)).collect();
            if shared.len() != 2 {
                continue;
            }
            let (a, b) = (mesh.vertices[shared[0]], mesh.vertices[shared[1]]);
            let (Some(pa), Some(pb)) = (cam.project(&a), cam.project(&b)) else { continue };
            let (du, dv) = (pb.u - pa.u, pb.v - pa.v);
            let len = (du * du + dv * dv).sqrt();
            if len < 1.0 {
                continue;
            }
            let (nu, nv) = (-dv / len * SEAM_OFFSET_PX, du / len * SEAM_OFFSET_PX);
            for t in [0.25, 0.5, 0.75] {
                let Some(pp) = cam.project(&(a + (b - a) * t)) else { continue };
                let (Some((fx, x)), Some((fy, y))) = (pixel(pp.u + nu, pp.v + nv), pixel(pp.u - nu, pp.v - nv)) else {
                    continue;
                };
                if !((fx == f && fy == g) || (fx == g && fy == f)) {
                    continue;
                }
                for c in 0..3 {
                    sum += (x.0[c] as f64 - y.0[c] as f64).abs();
                }
                n += 3;
            }
        }
        (sum, n)
    });
    let (sum, n) = sums.into_iter().fold((0.0, 0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
    (n > 0).then(|| sum / n as f64)
}
