//! Z-buffer rendering and per-(face, view) occlusion tests.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::camera::{Projector, ViewImage};
use crate::mesh::Mesh;
use crate::par;
use crate::raster::ScreenTriangle;

/// Face id stored for empty pixels.
pub const NO_FACE: u32 = u32::MAX;

/// Rows per parallel band when rendering.
const BAND_ROWS: u32 = 16;

/// Nearest front-facing depth and its face, per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    pub width: u32,
    pub height: u32,
    depth: Vec<f64>,
    face: Vec<u32>,
}

impl DepthBuffer {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            face: vec![NO_FACE; n],
        }
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// `+∞` for empty pixels.
    #[inline]
    pub fn depth(&self, x: u32, y: u32) -> f64 {
        self.depth[self.index(x, y)]
    }

    /// Producing face, or `None` for empty pixels.
    #[inline]
    pub fn face(&self, x: u32, y: u32) -> Option<usize> {
        match self.face[self.index(x, y)] {
            NO_FACE => None,
            f => Some(f as usize),
        }
    }

    pub fn covered_count(&self) -> usize {
        self.face.iter().filter(|&&f| f != NO_FACE).count()
    }

    /// Writes the buffer as a 16-bit PNG, finite depths mapped linearly onto
    /// `[0, 65535]`; empty pixels are written as 65535.
    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        let finite = self.depth.iter().copied().filter(|d| d.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d), hi.max(d))
        });
        let span = if hi > lo { hi - lo } else { 1.0 };
        let img = ImageBuffer::<Luma<u16>, _>::from_fn(self.width, self.height, |x, y| {
            let d = self.depth(x, y);
            let v = if d.is_finite() {
                ((d - lo) / span * 65535.0).round() as u16
            } else {
                u16::MAX
            };
            Luma([v])
        });
        img.save(path)
    }
}

/// True when the face normal points away from the viewer.
pub fn is_back_facing<P: Projector + ?Sized>(mesh: &Mesh, face: usize, proj: &P) -> bool {
    mesh.face_normals[face].dot(&proj.view_direction(&mesh.centroid(face))) >= 0.0
}

/// Projects every front-facing face; back faces and faces crossing the
/// sensor plane become `None`.
pub fn project_faces<P: Projector + ?Sized>(mesh: &Mesh, proj: &P) -> Vec<Option<ScreenTriangle>> {
    par::map_range(mesh.face_count(), |f| {
        if is_back_facing(mesh, f, proj) {
            return None;
        }
        ScreenTriangle::project(proj, &mesh.triangle(f))
    })
}

/// Renders the z-buffer of `mesh` seen through `proj`.
///
/// Rows are split into bands rendered in parallel; each pixel keeps the
/// smallest depth, ties going to the smaller face id, so the result does not
/// depend on scheduling.
pub fn rasterize_depth<P: Projector + ?Sized>(mesh: &Mesh, proj: &P) -> DepthBuffer {
    let (w, h) = (proj.width(), proj.height());
    let mut buf = DepthBuffer::empty(w, h);
    if w == 0 || h == 0 {
        return buf;
    }
    let tris = project_faces(mesh, proj);
    let band_count = h.div_ceil(BAND_ROWS) as usize;
    let mut bins: Vec<Vec<(u32, [u32; 4])>> = vec![Vec::new(); band_count];
    for (f, t) in tris.iter().enumerate() {
        let Some(t) = t else { continue };
        let Some(b) = t.pixel_bounds(w, h) else { continue };
        for band in (b[1] / BAND_ROWS)..=(b[3] / BAND_ROWS) {
            bins[band as usize].push((f as u32, b));
        }
    }

    let mut cells: Vec<(f64, u32)> = vec![(f64::INFINITY, NO_FACE); w as usize * h as usize];
    par::for_each_chunk_mut(&mut cells, (BAND_ROWS * w) as usize, |band, chunk| {
        let y_lo = band as u32 * BAND_ROWS;
        let y_hi = (y_lo + BAND_ROWS).min(h) - 1;
        for &(f, b) in &bins[band] {
            let t = tris[f as usize].as_ref().expect("binned faces are projected");
            let clipped = [b[0], b[1].max(y_lo), b[2], b[3].min(y_hi)];
            if clipped[1] > clipped[3] {
                continue;
            }
            t.for_each_fragment(clipped, |frag| {
                let cell = &mut chunk[((frag.y - y_lo) * w + frag.x) as usize];
                if frag.depth < cell.0 || (frag.depth == cell.0 && f < cell.1) {
                    *cell = (frag.depth, f);
                }
            });
        }
    });
    for (i, (d, f)) in cells.into_iter().enumerate() {
        buf.depth[i] = d;
        buf.face[i] = f;
    }
    buf
}

/// Visible part of one face's footprint in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVisibility {
    pub face: usize,
    pub view: u32,
    /// Pixel centers `(x, y)` that pass the depth test.
    pub visible_pixels: Vec<[u32; 2]>,
    /// Pixel centers covered by the projected face.
    pub footprint_pixels: usize,
    /// Analytic projected area for faces covering no pixel center.
    pub subpixel_area: Option<f64>,
}

impl FaceVisibility {
    pub fn is_visible(&self) -> bool {
        !self.visible_pixels.is_empty()
    }

    fn empty(face: usize, view: u32) -> Self {
        Self {
            face,
            view,
            visible_pixels: Vec::new(),
            footprint_pixels: 0,
            subpixel_area: None,
        }
    }
}

/// Occlusion test of one face against a depth buffer of the same mesh.
///
/// A footprint pixel is visible when the face's own depth there is within
/// a relative `bias` of the buffer. Faces covering no pixel center fall back
/// to testing the pixel under their projected centroid.
pub fn face_visibility<P: Projector + ?Sized>(
    mesh: &Mesh,
    face: usize,
    proj: &P,
    view: u32,
    depth: &DepthBuffer,
    bias: f64,
) -> FaceVisibility {
    let mut out = FaceVisibility::empty(face, view);
    if is_back_facing(mesh, face, proj) {
        return out;
    }
    let Some(tri) = ScreenTriangle::project(proj, &mesh.triangle(face)) else {
        return out;
    };
    let passes = |d: f64, x: u32, y: u32| d <= depth.depth(x, y) * (1.0 + bias);
    if let Some(bounds) = tri.pixel_bounds(depth.width, depth.height) {
        tri.for_each_fragment(bounds, |frag| {
            out.footprint_pixels += 1;
            if passes(frag.depth, frag.x, frag.y) {
                out.visible_pixels.push([frag.x, frag.y]);
            }
        });
    }
    if out.footprint_pixels == 0 {
        let Some(c) = proj.project(&mesh.centroid(face)) else {
            return out;
        };
        if !proj.in_bounds(c.u, c.v) {
            return out;
        }
        let (x, y) = (c.u.round().max(0.0) as u32, c.v.round().max(0.0) as u32);
        let (x, y) = (x.min(depth.width - 1), y.min(depth.height - 1));
        out.subpixel_area = Some(0.5 * tri.area2());
        if passes(c.depth, x, y) {
            out.visible_pixels.push([x, y]);
        }
    }
    out
}

/// Visibility of every face in one view; `None` for faces with no visible pixel.
#[derive(Debug, Clone)]
pub struct ViewVisibility {
    pub view: u32,
    pub faces: Vec<Option<FaceVisibility>>,
}

/// Per-view visibility for a whole dataset, in view order.
#[derive(Debug, Clone)]
pub struct VisibilitySet {
    pub views: Vec<ViewVisibility>,
}

impl VisibilitySet {
    pub fn get(&self, view_index: usize, face: usize) -> Option<&FaceVisibility> {
        self.views[view_index].faces[face].as_ref()
    }
}

/// Renders one view's z-buffer and tests every face against it.
pub fn view_visibility(mesh: &Mesh, view: &ViewImage, bias: f64) -> (DepthBuffer, ViewVisibility) {
    let depth = rasterize_depth(mesh, &view.camera);
    let faces = par::map_range(mesh.face_count(), |f| {
        let v = face_visibility(mesh, f, &view.camera, view.id, &depth, bias);
        v.is_visible().then_some(v)
    });
    (depth, ViewVisibility { view: view.id, faces })
}

/// Visibility over all views. Depth buffers are handed to `on_depth` (for
/// debug dumps) and then dropped.
pub fn compute_visibility<F>(mesh: &Mesh, views: &[ViewImage], bias: f64, on_depth: F) -> VisibilitySet
where
    F: Fn(&ViewImage, &DepthBuffer) + Sync + Send,
{
    let views = par::map_slice(views, |v| {
        let (depth, vis) = view_visibility(mesh, v, bias);
        on_depth(v, &depth);
        vis
    });
    VisibilitySet { views }
}
