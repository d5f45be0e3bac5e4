//! Distance-weighted fusion of each face's candidate views.
//!
//! Every view gets one mask: the union of the visible footprints of all
//! faces that kept the view as a candidate. Its distance transform weights
//! the view's contribution, so a view fades out towards the border of the
//! region it textures.

use std::collections::VecDeque;

use crate::camera::{Projector, ViewImage};
use crate::dt::{distance_transform, DistanceMap};
use crate::mesh::Mesh;
use crate::mrf::CandidateSet;
use crate::par;
use crate::sample::bilinear_rgb;
use crate::visibility::VisibilitySet;

pub const MIN_RESOLUTION: u32 = 4;
pub const MAX_RESOLUTION: u32 = 256;
/// Texels per source pixel along each patch axis.
pub const TEXEL_DENSITY: f64 = 2.0;

/// Pixels of one view that texture at least one face.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMask {
    pub view: u32,
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl ViewMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }
}

/// One mask per view, in view order.
pub fn build_masks(candidates: &CandidateSet, vis: &VisibilitySet, views: &[ViewImage]) -> Vec<ViewMask> {
    par::map_range(views.len(), |vi| {
        let view = &views[vi];
        let (w, h) = (view.camera.width, view.camera.height);
        let mut bits = vec![false; w as usize * h as usize];
        for (face, cands) in candidates.faces.iter().enumerate() {
            if !cands.iter().any(|c| c.0 == view.id) {
                continue;
            }
            if let Some(fv) = vis.get(vi, face) {
                for &[x, y] in &fv.visible_pixels {
                    bits[y as usize * w as usize + x as usize] = true;
                }
            }
        }
        ViewMask {
            view: view.id,
            width: w,
            height: h,
            bits,
        }
    })
}

/// Distance maps of all masks, computed per view in parallel.
pub fn distance_maps(masks: &[ViewMask]) -> Vec<DistanceMap> {
    par::map_slice(masks, |m| distance_transform(&m.bits, m.width, m.height))
}

/// Texel resolution for a face whose best candidate covers `area` pixels.
///
/// A patch of side `sqrt(2 * area)` holds one texel per source pixel; that
/// is scaled by [`TEXEL_DENSITY`] so hard edges survive the second
/// resampling at render time.
pub fn patch_resolution(area: f64) -> u32 {
    let r = (TEXEL_DENSITY * (2.0 * area.max(0.0)).sqrt()).ceil() as u32;
    r.clamp(MIN_RESOLUTION, MAX_RESOLUTION)
}

/// Square texel grid over a face's barycentric domain.
///
/// Texel `(i, j)` has its center at barycentric `s = (i + ½)/R`,
/// `t = (j + ½)/R` relative to vertices 1 and 2. Texels with `s + t ≤ 1`
/// are covered by the face; the rest hold the color of the nearest point of
/// the face, so bilinear lookups near the hypotenuse stay on face content.
#[derive(Debug, Clone, PartialEq)]
pub struct FacePatch {
    pub face: usize,
    pub resolution: u32,
    /// Row-major RGB, `j * R + i`.
    pub texels: Vec<[f32; 3]>,
    /// Largest deviation of a covered texel's normalised weight sum from 1.
    pub max_weight_error: f64,
    /// Texels where equal weights replaced all-zero distance weights.
    pub equal_weight_texels: usize,
    /// Texels with no in-bounds candidate, copied from the nearest texel.
    pub filled_texels: usize,
}

impl FacePatch {
    pub fn texel(&self, i: u32, j: u32) -> [f32; 3] {
        self.texels[(j * self.resolution + i) as usize]
    }

    pub fn is_covered(resolution: u32, i: u32, j: u32) -> bool {
        let r = resolution as f64;
        (i as f64 + 0.5) / r + (j as f64 + 0.5) / r <= 1.0
    }
}

/// Barycentric `(s, t)` of texel `(i, j)`, pulled onto the face when the
/// texel center lies beyond the hypotenuse.
pub fn texel_barycentric(resolution: u32, i: u32, j: u32) -> (f64, f64) {
    let r = resolution as f64;
    let (s, t) = ((i as f64 + 0.5) / r, (j as f64 + 0.5) / r);
    let excess = s + t - 1.0;
    if excess <= 0.0 {
        return (s, t);
    }
    let (s, t) = (s - excess / 2.0, t - excess / 2.0);
    if s < 0.0 {
        (0.0, 1.0)
    } else if t < 0.0 {
        (1.0, 0.0)
    } else {
        (s, t)
    }
}

/// Blends one face from its candidate views.
///
/// `views` and `dists` are indexed by view position; `view_index` maps a
/// candidate's view id to that position.
pub fn blend_face<F>(
    mesh: &Mesh,
    face: usize,
    candidates: &[(u32, f64)],
    views: &[ViewImage],
    dists: &[DistanceMap],
    view_index: F,
    resolution: u32,
) -> FacePatch
where
    F: Fn(u32) -> usize,
{
    let r = resolution.max(1);
    let cand: Vec<usize> = candidates.iter().map(|c| view_index(c.0)).collect();
    let mut texels: Vec<Option<[f32; 3]>> = Vec::with_capacity((r * r) as usize);
    let mut max_weight_error: f64 = 0.0;
    let mut equal_weight_texels = 0;
    let mut samples: Vec<([f64; 3], f64)> = Vec::with_capacity(cand.len());
    for j in 0..r {
        for i in 0..r {
            let (s, t) = texel_barycentric(r, i, j);
            let p = mesh.point_at(face, s, t);
            samples.clear();
            for &vi in &cand {
                let cam = &views[vi].camera;
                let Some(pr) = cam.project(&p) else { continue };
                if !cam.in_bounds(pr.u, pr.v) {
                    continue;
                }
                let color = bilinear_rgb(&views[vi].pixels, pr.u, pr.v);
                let w = dists[vi].sample(pr.u, pr.v).max(0.0);
                samples.push((color, w));
            }
            if samples.is_empty() {
                texels.push(None);
                continue;
            }
            let mut total: f64 = samples.iter().map(|s| s.1).sum();
            if total <= 0.0 {
                for s in samples.iter_mut() {
                    s.1 = 1.0;
                }
                total = samples.len() as f64;
                if FacePatch::is_covered(r, i, j) {
                    equal_weight_texels += 1;
                }
            }
            let mut color = [0.0f64; 3];
            let mut norm_sum = 0.0;
            for (c, w) in &samples {
                let wn = w / total;
                norm_sum += wn;
                for k in 0..3 {
                    color[k] += wn * c[k];
                }
            }
            if FacePatch::is_covered(r, i, j) {
                max_weight_error = max_weight_error.max((norm_sum - 1.0).abs());
            }
            texels.push(Some(color.map(|c| c as f32)));
        }
    }
    let filled_texels = texels.iter().filter(|t| t.is_none()).count();
    let texels = fill_missing(&texels, r);
    FacePatch {
        face,
        resolution: r,
        texels,
        max_weight_error,
        equal_weight_texels,
        filled_texels,
    }
}

/// Replaces missing texels by the nearest present one in 4-neighbour steps
/// (mid-gray when none is present).
fn fill_missing(texels: &[Option<[f32; 3]>], r: u32) -> Vec<[f32; 3]> {
    let r = r as usize;
    let mut out: Vec<Option<[f32; 3]>> = texels.to_vec();
    let mut queue: VecDeque<usize> = (0..out.len()).filter(|&k| out[k].is_some()).collect();
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % r, k / r);
        let mut nbrs = [None; 4];
        if i > 0 {
            nbrs[0] = Some(k - 1);
        }
        if i + 1 < r {
            nbrs[1] = Some(k + 1);
        }
        if j > 0 {
            nbrs[2] = Some(k - r);
        }
        if j + 1 < r {
            nbrs[3] = Some(k + r);
        }
        for n in nbrs.into_iter().flatten() {
            if out[n].is_none() {
                out[n] = out[k];
                queue.push_back(n);
            }
        }
    }
    out.into_iter().map(|t| t.unwrap_or([128.0; 3])).collect()
}

/// Blends every face that has candidates; faces without any get `None`.
pub fn blend_all(
    mesh: &Mesh,
    candidates: &CandidateSet,
    views: &[ViewImage],
    dists: &[DistanceMap],
    resolution_of: impl Fn(usize) -> u32 + Sync + Send,
) -> Vec<Option<FacePatch>> {
    let index_of = |id: u32| {
        views
            .iter()
            .position(|v| v.id == id)
            .expect("candidate view ids come from the view list")
    };
    par::map_range(mesh.face_count(), |f| {
        let c = &candidates.faces[f];
        if c.is_empty() {
            return None;
        }
        Some(blend_face(mesh, f, c, views, dists, index_of, resolution_of(f)))
    })
}
