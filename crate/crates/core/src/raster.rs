//! Triangle scan conversion shared by depth rendering, footprints and
//! re-rendering.
//!
//! Coverage is decided at pixel centers (integer coordinates) with a
//! consistent tie rule, so triangles sharing an edge never both cover a
//! pixel center lying exactly on it. Depth is interpolated perspective
//! correctly through `1/z`.

use crate::camera::Projector;
use crate::mesh::Vec3;

/// A triangle projected into pixel space, oriented counter-clockwise in the
/// `edge` sense below.
#[derive(Debug, Clone, Copy)]
pub struct ScreenTriangle {
    pub pts: [[f64; 2]; 3],
    pub inv_depth: [f64; 3],
    /// Maps oriented vertex slot to the face's original vertex slot.
    pub order: [usize; 3],
}

/// Covered pixel: position, depth and perspective-correct barycentrics
/// relative to the face's original vertex order.
#[derive(Debug, Clone, Copy)]
pub struct Fragment {
    pub x: u32,
    pub y: u32,
    pub depth: f64,
    pub bary: [f64; 3],
}

/// Edge function of `p` against the directed segment `a → b`, evaluated
/// with the endpoints in canonical order so the opposite traversal yields
/// the exact negation.
#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let swap = (b[0], b[1]) < (a[0], a[1]);
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let w = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if swap {
        -w
    } else {
        w
    }
}

/// Exactly one of `d` and `-d` owns pixel centers lying on the edge.
#[inline]
fn owns_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

impl ScreenTriangle {
    /// Projects a triangle. Returns `None` if any vertex is behind the
    /// sensor or the projection has zero area.
    pub fn project<P: Projector + ?Sized>(proj: &P, tri: &[Vec3; 3]) -> Option<Self> {
        let mut pts = [[0.0; 2]; 3];
        let mut inv_depth = [0.0; 3];
        for k in 0..3 {
            let p = proj.project(&tri[k])?;
            pts[k] = [p.u, p.v];
            inv_depth[k] = 1.0 / p.depth;
        }
        let area = edge(pts[0], pts[1], pts[2]);
        if area == 0.0 || !area.is_finite() {
            return None;
        }
        let order = if area > 0.0 { [0, 1, 2] } else { [0, 2, 1] };
        Some(Self {
            pts: order.map(|k| pts[k]),
            inv_depth: order.map(|k| inv_depth[k]),
            order,
        })
    }

    /// Signed-positive doubled area in pixels².
    pub fn area2(&self) -> f64 {
        edge(self.pts[0], self.pts[1], self.pts[2])
    }

    /// Inclusive pixel bounds clipped to a `width × height` image, or `None`
    /// when no pixel center can be covered.
    pub fn pixel_bounds(&self, width: u32, height: u32) -> Option<[u32; 4]> {
        let xs = self.pts.map(|p| p[0]);
        let ys = self.pts.map(|p| p[1]);
        let min = |a: [f64; 3]| a[0].min(a[1]).min(a[2]);
        let max = |a: [f64; 3]| a[0].max(a[1]).max(a[2]);
        let x0 = min(xs).ceil().max(0.0);
        let y0 = min(ys).ceil().max(0.0);
        let x1 = max(xs).floor().min(width as f64 - 1.0);
        let y1 = max(ys).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some([x0 as u32, y0 as u32, x1 as u32, y1 as u32])
    }

    /// Coverage and interpolation at one pixel center.
    #[inline]
    pub fn fragment(&self, x: u32, y: u32) -> Option<Fragment> {
        let p = [x as f64, y as f64];
        let [a, b, c] = self.pts;
        let w = [edge(b, c, p), edge(c, a, p), edge(a, b, p)];
        let owners = [owns_edge(b, c), owns_edge(c, a), owns_edge(a, b)];
        for k in 0..3 {
            if w[k] < 0.0 || (w[k] == 0.0 && !owners[k]) {
                return None;
            }
        }
        let sum = w[0] + w[1] + w[2];
        let lin = [w[0] / sum, w[1] / sum, w[2] / sum];
        let inv_z = lin[0] * self.inv_depth[0] + lin[1] * self.inv_depth[1] + lin[2] * self.inv_depth[2];
        let depth = 1.0 / inv_z;
        let mut bary = [0.0; 3];
        for k in 0..3 {
            bary[self.order[k]] = lin[k] * self.inv_depth[k] * depth;
        }
        Some(Fragment { x, y, depth, bary })
    }

    /// Visits covered pixel centers row-major within `rows` (inclusive range).
    pub fn for_each_fragment<F: FnMut(Fragment)>(&self, bounds: [u32; 4], mut f: F) {
        for y in bounds[1]..=bounds[3] {
            for x in bounds[0]..=bounds[2] {
                if let Some(frag) = self.fragment(x, y) {
                    f(frag);
                }
            }
        }
    }
}
