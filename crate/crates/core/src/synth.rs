//! Synthetic scenes with known geometry, texture and cameras.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{self, ManifestEntry, PinholeCamera, ViewImage};
use crate::mesh::{Mesh, Vec3};
use crate::par;
use crate::visibility::{project_faces, rasterize_depth};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Shape {
    /// Axis-aligned `[-1, 1]³` cube, each side split into `subdiv²` quads.
    Cube { subdiv: u32 },
    /// Unit sphere from an icosahedron subdivided `subdiv` times.
    Icosphere { subdiv: u32 },
    /// `[-1, 1]²` square in the `z = 0` plane facing `+z`.
    PlaneGrid { cells: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Pattern {
    /// `cells` squares across the `[-1, 1]` extent of each side.
    Checkerboard { cells: u32 },
    Gradient,
    Solid { rgb: [u8; 3] },
    /// Sawtooth ramps in red and green over a checkerboard in blue.
    UvDebug { cells: u32 },
}

impl Pattern {
    /// Surface color at `p` on a face with normal `n`. Coordinates are taken
    /// in the plane orthogonal to the dominant normal axis.
    pub fn color(&self, p: &Vec3, n: &Vec3) -> [f64; 3] {
        let axis = (0..3).max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).unwrap_or(2);
        let (a, b) = (p[(axis + 1) % 3], p[(axis + 2) % 3]);
        match *self {
            Pattern::Checkerboard { cells } => {
                const LIGHT: [[f64; 3]; 3] = [[225.0, 205.0, 90.0], [95.0, 215.0, 200.0], [230.0, 130.0, 160.0]];
                const DARK: [[f64; 3]; 3] = [[35.0, 60.0, 150.0], [120.0, 40.0, 60.0], [30.0, 110.0, 50.0]];
                let k = cells as f64 / 2.0;
                let parity = ((a + 1.0) * k).floor() as i64 + ((b + 1.0) * k).floor() as i64;
                if parity.rem_euclid(2) == 0 {
                    LIGHT[axis]
                } else {
                    DARK[axis]
                }
            }
            Pattern::Solid { rgb } => rgb.map(f64::from),
            Pattern::Gradient => [p.x, p.y, p.z].map(|c| ((c + 1.0) * 100.0 + 30.0).clamp(0.0, 255.0)),
            Pattern::UvDebug { cells } => {
                let k = cells as f64 / 2.0;
                let (fa, fb) = ((a + 1.0) * k, (b + 1.0) * k);
                let parity = (fa.floor() as i64 + fb.floor() as i64).rem_euclid(2);
                [fa.fract() * 255.0, fb.fract() * 255.0, if parity == 0 { 200.0 } else { 40.0 }]
            }
        }
    }
}

/// Explicit camera placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CameraLayout {
    /// Cameras on a circle around the `z` axis looking at the origin. With
    /// `alternate`, elevations alternate between `+elevation` and
    /// `-elevation`.
    Ring {
        count: usize,
        radius: f64,
        elevation_deg: f64,
        alternate: bool,
        azimuth_offset_deg: f64,
    },
    /// One camera on each half-axis at `distance`, in the order
    /// `+x, -x, +y, -y, +z, -z`.
    Axes { distance: f64 },
    Custom(Vec<CameraPose>),
}

impl CameraLayout {
    pub fn poses(&self) -> Vec<CameraPose> {
        let z_up = [0.0, 0.0, 1.0];
        match self {
            CameraLayout::Ring {
                count,
                radius,
                elevation_deg,
                alternate,
                azimuth_offset_deg,
            } => (0..*count)
                .map(|i| {
                    let az = (azimuth_offset_deg + 360.0 * i as f64 / *count as f64).to_radians();
                    let el = if *alternate && i % 2 == 1 { -elevation_deg } else { *elevation_deg }.to_radians();
                    CameraPose {
                        eye: [radius * el.cos() * az.cos(), radius * el.cos() * az.sin(), radius * el.sin()],
                        target: [0.0; 3],
                        up: z_up,
                    }
                })
                .collect(),
            CameraLayout::Axes { distance: d } => {
                let d = *d;
                let eyes = [[d, 0.0, 0.0], [-d, 0.0, 0.0], [0.0, d, 0.0], [0.0, -d, 0.0], [0.0, 0.0, d], [0.0, 0.0, -d]];
                eyes.iter()
                    .map(|&eye| CameraPose {
                        eye,
                        target: [0.0; 3],
                        up: if eye[2] != 0.0 { [0.0, 1.0, 0.0] } else { z_up },
                    })
                    .collect()
            }
            CameraLayout::Custom(p) => p.clone(),
        }
    }
}

/// Error added to the recorded (not the rendered) camera poses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jitter {
    pub rotation_deg: f64,
    /// Fraction of the camera's distance to the origin.
    pub translation_frac: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub pattern: Pattern,
    pub cameras: CameraLayout,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    /// Per-view gain; missing entries mean 1.
    pub gains: Vec<f64>,
    /// Per-view additive bias in gray levels; missing entries mean 0.
    pub biases: Vec<f64>,
    pub jitter: Jitter,
    /// Samples per pixel along each axis.
    pub supersample: u32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: Shape::Cube { subdiv: 4 },
            pattern: Pattern::Checkerboard { cells: 8 },
            cameras: CameraLayout::Ring {
                count: 6,
                radius: 6.0,
                elevation_deg: 35.0,
                alternate: true,
                azimuth_offset_deg: 15.0,
            },
            width: 512,
            height: 512,
            fov_deg: 40.0,
            gains: Vec::new(),
            biases: Vec::new(),
            jitter: Jitter::default(),
            supersample: 3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        let views = self.cameras.poses().len();
        if views == 0 {
            return bad("at least one camera is required");
        }
        if self.gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return bad("gains must be positive");
        }
        if self.biases.iter().any(|b| !b.is_finite()) {
            return bad("biases must be finite");
        }
        if self.gains.len() > views || self.biases.len() > views {
            return bad("more gains or biases than cameras");
        }
        if !(self.jitter.rotation_deg >= 0.0 && self.jitter.translation_frac >= 0.0) {
            return bad("jitter must be non-negative");
        }
        if self.width == 0 || self.height == 0 || self.supersample == 0 {
            return bad("image size and supersampling must be positive");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("field of view must lie in (0, 180) degrees");
        }
        let subdiv_ok = match self.shape {
            Shape::Cube { subdiv } => subdiv >= 1,
            Shape::Icosphere { .. } => true,
            Shape::PlaneGrid { cells } => cells >= 1,
        };
        if !subdiv_ok {
            return bad("shape subdivision must be at least 1");
        }
        Ok(())
    }

    /// Gains drawn uniformly from `[lo, hi]`, one per camera.
    pub fn random_gains(count: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect()
    }
}

/// Generated scene held in memory.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: Mesh,
    /// Images with the recorded (possibly jittered) cameras.
    pub views: Vec<ViewImage>,
    /// Cameras the images were rendered with.
    pub true_cameras: Vec<PinholeCamera>,
}

fn cube(subdiv: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let n = subdiv as usize;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut id = |i: usize, j: usize| -> usize {
                let mut p = [0.0; 3];
                p[axis] = sign;
                p[ua] = -1.0 + 2.0 * i as f64 / n as f64;
                p[va] = -1.0 + 2.0 * j as f64 / n as f64;
                let key = p.map(|c| ((c + 1.0) * n as f64 / 2.0).round() as i64);
                *index.entry(key).or_insert_with(|| {
                    vertices.push(Vec3::new(p[0], p[1], p[2]));
                    vertices.len() - 1
                })
            };
            for j in 0..n {
                for i in 0..n {
                    let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    // (u, v, axis) is right-handed, so u×v points along +axis
                    if sign > 0.0 {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
        }
    }
    (vertices, faces)
}

fn icosphere(subdiv: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut m = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    vertices.push(((vertices[a] + vertices[b]) / 2.0).normalize());
                    vertices.len() - 1
                });
            }
            next.push([f[0], m[0], m[2]]);
            next.push([f[1], m[1], m[0]]);
            next.push([f[2], m[2], m[1]]);
            next.push(m);
        }
        faces = next;
    }
    for f in faces.iter_mut() {
        let [a, b, c] = f.map(|v| vertices[v]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            f.swap(1, 2);
        }
    }
    (vertices, faces)
}

fn plane_grid(cells: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let n = cells as usize;
    let vertices = (0..=n)
        .flat_map(|j| (0..=n).map(move |i| (i, j)))
        .map(|(i, j)| Vec3::new(-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64, 0.0))
        .collect();
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut faces = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    (vertices, faces)
}

pub fn build_shape(shape: Shape) -> Mesh {
    let (v, f) = match shape {
        Shape::Cube { subdiv } => cube(subdiv.max(1)),
        Shape::Icosphere { subdiv } => icosphere(subdiv),
        Shape::PlaneGrid { cells } => plane_grid(cells.max(1)),
    };
    Mesh::new(v, f).expect("generated shapes are well formed")
}

/// Camera with `s×s` samples per pixel of `cam`, sharing its pixel grid.
fn supersampled(cam: &PinholeCamera, s: u32) -> PinholeCamera {
    let k = s as f64;
    PinholeCamera {
        fx: cam.fx * k,
        fy: cam.fy * k,
        cx: (cam.cx + 0.5) * k - 0.5,
        cy: (cam.cy + 0.5) * k - 0.5,
        width: cam.width * s,
        height: cam.height * s,
        ..cam.clone()
    }
}

/// Anti-aliased render of the patterned mesh, before gain and bias, as
/// floating-point RGB in row-major order.
pub fn render_pattern(mesh: &Mesh, pattern: &Pattern, cam: &PinholeCamera, supersample: u32) -> Vec<[f64; 3]> {
    let s = supersample.max(1);
    let big = supersampled(cam, s);
    let depth = rasterize_depth(mesh, &big);
    let tris = project_faces(mesh, &big);
    let (w, h) = (cam.width as usize, cam.height as usize);
    let rows = par::map_range(h, |y| {
        let mut row = vec![[0.0; 3]; w];
        for (x, out) in row.iter_mut().enumerate() {
            for sy in 0..s {
                for sx in 0..s {
                    let (bx, by) = (x as u32 * s + sx, y as u32 * s + sy);
                    let Some(f) = depth.face(bx, by) else { continue };
                    let Some(frag) = tris[f].as_ref().and_then(|t| t.fragment(bx, by)) else { continue };
                    let tri = mesh.triangle(f);
                    let p = tri[0] * frag.bary[0] + tri[1] * frag.bary[1] + tri[2] * frag.bary[2];
                    let c = pattern.color(&p, &mesh.face_normals[f]);
                    for k in 0..3 {
                        out[k] += c[k];
                    }
                }
            }
            let n = (s * s) as f64;
            *out = out.map(|c| c / n);
        }
        row
    });
    rows.into_iter().flatten().collect()
}

fn perturb(cam: &PinholeCamera, jitter: &Jitter, rng: &mut ChaCha8Rng) -> PinholeCamera {
    if jitter.rotation_deg == 0.0 && jitter.translation_frac == 0.0 {
        return cam.clone();
    }
    let mut unit = || loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    };
    let axis = Unit::new_normalize(unit());
    let dir = unit();
    let angle = rng.random_range(-1.0..=1.0) * jitter.rotation_deg.to_radians();
    let center = cam.center();
    let magnitude = rng.random_range(0.0..=1.0) * jitter.translation_frac * center.norm();
    let rotation = Rotation3::from_axis_angle(&axis, angle).into_inner() * cam.rotation;
    let new_center = center + dir * magnitude;
    PinholeCamera {
        rotation,
        translation: -(rotation * new_center),
        ..cam.clone()
    }
}

/// Renders the scene described by `spec` in memory.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mesh = build_shape(spec.shape);
    let poses = spec.cameras.poses();
    let cameras: Vec<PinholeCamera> = poses
        .iter()
        .map(|p| {
            let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
            PinholeCamera::look_at(v(p.eye), v(p.target), v(p.up), spec.fov_deg, spec.width, spec.height)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.jitter.seed);
    let recorded: Vec<PinholeCamera> = cameras.iter().map(|c| perturb(c, &spec.jitter, &mut rng)).collect();
    let images = par::map_range(cameras.len(), |i| {
        let gain = spec.gains.get(i).copied().unwrap_or(1.0);
        let bias = spec.biases.get(i).copied().unwrap_or(0.0);
        let px = render_pattern(&mesh, &spec.pattern, &cameras[i], spec.supersample);
        let quant = |c: f64| (c * gain + bias).round().clamp(0.0, 255.0) as u8;
        RgbImage::from_fn(spec.width, spec.height, |x, y| {
            Rgb(px[(y * spec.width + x) as usize].map(quant))
        })
    });
    let views = images
        .into_iter()
        .zip(recorded)
        .enumerate()
        .map(|(i, (pixels, camera))| ViewImage {
            id: i as u32,
            camera,
            pixels,
        })
        .collect();
    Ok(Scene {
        mesh,
        views,
        true_cameras: cameras,
    })
}

/// Plain OBJ with positions and faces.
pub fn write_obj(mesh: &Mesh, path: &Path) -> std::io::Result<()> {
    let mut s = String::with_capacity(40 * (mesh.vertex_count() + mesh.face_count()));
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    std::fs::write(path, s)
}

/// Paths of a scene written by [`write_scene`].
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub mesh: PathBuf,
    pub manifest: PathBuf,
    pub images: Vec<PathBuf>,
}

/// Writes `mesh.obj`, `views.json` and `view_###.png` into `out_dir`.
pub fn write_scene(scene: &Scene, out_dir: &Path) -> Result<SceneFiles, SynthError> {
    let io = |p: &Path, e: &dyn std::fmt::Display| SynthError::Io {
        path: p.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, &e))?;
    let mesh_path = out_dir.join("mesh.obj");
    write_obj(&scene.mesh, &mesh_path).map_err(|e| io(&mesh_path, &e))?;
    let mut entries = Vec::new();
    let mut images = Vec::new();
    for v in &scene.views {
        let name = format!("view_{:03}.png", v.id);
        let p = out_dir.join(&name);
        v.pixels.save(&p).map_err(|e| io(&p, &e))?;
        images.push(p);
        entries.push(ManifestEntry::from_camera(v.id, name, &v.camera));
    }
    let manifest = out_dir.join("views.json");
    camera::write_manifest(&manifest, &entries).map_err(|e| io(&manifest, &e))?;
    Ok(SceneFiles {
        mesh: mesh_path,
        manifest,
        images,
    })
}

/// Renders and writes a scene.
pub fn generate(spec: &SceneSpec, out_dir: &Path) -> Result<SceneFiles, SynthError> {
    write_scene(&generate_scene(spec)?, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::AdjacencyGraph;
    use crate::visibility::compute_visibility;

    fn small(shape: Shape, cameras: CameraLayout) -> SceneSpec {
        SceneSpec {
            shape,
            cameras,
            width: 96,
            height: 96,
            supersample: 1,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn shapes_are_closed_and_outward() {
        for shape in [Shape::Cube { subdiv: 3 }, Shape::Icosphere { subdiv: 2 }] {
            let m = build_shape(shape);
            let g = AdjacencyGraph::build(&m);
            // closed 2-manifold: every face has three neighbours
            assert_eq!(g.edge_count() * 2, m.face_count() * 3, "{shape:?}");
            for f in 0..m.face_count() {
                assert!(m.face_normals[f].dot(&m.centroid(f)) > 0.0);
            }
        }
        assert_eq!(build_shape(Shape::Cube { subdiv: 4 }).face_count(), 192);
        assert_eq!(build_shape(Shape::Icosphere { subdiv: 5 }).face_count(), 20480);
        let plane = build_shape(Shape::PlaneGrid { cells: 3 });
        assert_eq!(plane.face_count(), 18);
        assert!(plane.face_normals.iter().all(|n| n.z == 1.0));
    }

    #[test]
    fn axis_cameras_see_every_cube_face() {
        let scene = generate_scene(&small(Shape::Cube { subdiv: 2 }, CameraLayout::Axes { distance: 4.0 })).unwrap();
        let vis = compute_visibility(&scene.mesh, &scene.views, 1e-3, |_, _| {});
        for f in 0..scene.mesh.face_count() {
            assert!((0..vis.views.len()).any(|v| vis.get(v, f).is_some()), "face {f}");
        }
    }

    #[test]
    fn ring_sees_each_cube_side_from_several_views() {
        let scene = generate_scene(&small(Shape::Cube { subdiv: 1 }, SceneSpec::default().cameras)).unwrap();
        let vis = compute_visibility(&scene.mesh, &scene.views, 1e-3, |_, _| {});
        for f in 0..scene.mesh.face_count() {
            let n = (0..vis.views.len()).filter(|&v| vis.get(v, f).is_some()).count();
            assert!(n >= 3, "face {f} seen by {n} views");
        }
    }

    #[test]
    fn gain_scales_mean_intensity() {
        let mut spec = small(Shape::Cube { subdiv: 1 }, SceneSpec::default().cameras);
        spec.pattern = Pattern::Gradient;
        let base = generate_scene(&spec).unwrap();
        spec.gains = vec![1.0, 1.0, 1.0, 1.2];
        let lit = generate_scene(&spec).unwrap();
        let mean = |img: &RgbImage| img.pixels().map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>()).sum::<f64>() / (img.len() as f64);
        let expected: f64 = base.views[3]
            .pixels
            .pixels()
            .map(|p| p.0.iter().map(|&c| (c as f64 * 1.2).min(255.0)).sum::<f64>())
            .sum::<f64>()
            / base.views[3].pixels.len() as f64;
        assert!((mean(&lit.views[3].pixels) - expected).abs() < 0.6);
        assert_eq!(lit.views[0].pixels, base.views[0].pixels);
    }

    #[test]
    fn zero_jitter_records_true_cameras() {
        let scene = generate_scene(&small(Shape::Cube { subdiv: 1 }, SceneSpec::default().cameras)).unwrap();
        for (v, c) in scene.views.iter().zip(&scene.true_cameras) {
            assert_eq!(&v.camera, c);
        }
        let mut spec = small(Shape::Cube { subdiv: 1 }, SceneSpec::default().cameras);
        spec.jitter = Jitter {
            rotation_deg: 1.0,
            translation_frac: 0.01,
            seed: 3,
        };
        let jittered = generate_scene(&spec).unwrap();
        assert_ne!(jittered.views[0].camera, jittered.true_cameras[0]);
        assert!(jittered.views[0].camera.validate().is_ok());
        assert_eq!(jittered.views[0].pixels, scene.views[0].pixels);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = SceneSpec::default();
        s.gains = vec![0.0];
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.cameras = CameraLayout::Custom(Vec::new());
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.jitter.rotation_deg = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn written_scene_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let files = generate(&small(Shape::Cube { subdiv: 1 }, SceneSpec::default().cameras), dir.path()).unwrap();
        let views = camera::load_views(&files.manifest, dir.path()).unwrap();
        assert_eq!(views.len(), 6);
        let mesh = crate::mesh::load_mesh(&files.mesh, &Default::default()).unwrap();
        assert_eq!(mesh.face_count(), 12);
    }
}
