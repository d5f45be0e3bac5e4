//! Posed views: pinhole projection and the JSON view manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Vec3;
use crate::par;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("at least one view required")]
    Empty,
    #[error("duplicate view id {0}")]
    DuplicateId(u32),
    #[error("view {id}: missing image {path}")]
    MissingImage { id: u32, path: PathBuf },
    #[error("view {id}: cannot decode {path}: {message}")]
    Decode {
        id: u32,
        path: PathBuf,
        message: String,
    },
    #[error("view {id}: image is {actual_w}x{actual_h} but manifest declares {width}x{height}")]
    Dimension {
        id: u32,
        width: u32,
        height: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("invalid camera: {0}")]
    Invalid(String),
}

/// A pixel position with depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Anything that maps world points to pixels with a depth ordering.
///
/// Downstream stages only rely on this contract, so other sensor models can
/// sit behind it.
pub trait Projector: Send + Sync {
    /// `None` when the point is behind the sensor.
    fn project(&self, point: &Vec3) -> Option<Projection>;
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    /// Direction of the viewing ray through `point`, pointing away from the sensor.
    fn view_direction(&self, point: &Vec3) -> Vec3;

    /// Pixel-center convention: integer coordinates are pixel centers.
    fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width() as f64 - 0.5 && v < self.height() as f64 - 0.5
    }
}

/// Pinhole camera, world-to-camera `x_cam = R·X + t`, no distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(CameraError::Invalid(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        let off = (rtr - Matrix3::identity()).abs().max();
        if !(off <= 1e-6) {
            return Err(CameraError::Invalid(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {off:e})"
            )));
        }
        Ok(())
    }

    /// Camera looking from `eye` towards `target`, image y axis pointing
    /// along `-up`. `fov_x_deg` is the horizontal field of view.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_x_deg: f64, width: u32, height: u32) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::new(1.0, 0.0, 0.0));
            if right.norm() < 1e-9 {
                right = forward.cross(&Vec3::new(0.0, 1.0, 0.0));
            }
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64 - 0.5,
            cy: 0.5 * height as f64 - 0.5,
            rotation,
            translation,
            width,
            height,
        }
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    /// Inverse of [`Projector::project`] for a known depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let xc = Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.rotation.transpose() * (xc - self.translation)
    }
}

impl Projector for PinholeCamera {
    fn project(&self, point: &Vec3) -> Option<Projection> {
        let x = self.to_camera(point);
        if x.z <= 0.0 {
            return None;
        }
        Some(Projection {
            u: self.fx * x.x / x.z + self.cx,
            v: self.fy * x.y / x.z + self.cy,
            depth: x.z,
        })
    }

    fn width(&self) -> u32 {
        self.width
    }

    fn height(&self) -> u32 {
        self.height
    }

    fn view_direction(&self, point: &Vec3) -> Vec3 {
        point - self.center()
    }
}

/// One input image with its camera. `id` is the MRF label.
#[derive(Debug, Clone)]
pub struct ViewImage {
    pub id: u32,
    pub camera: PinholeCamera,
    pub pixels: RgbImage,
}

/// One record of the view manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: u32,
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
}

impl ManifestEntry {
    pub fn from_camera(id: u32, image: impl Into<String>, cam: &PinholeCamera) -> Self {
        let r = cam.rotation;
        Self {
            id,
            image: image.into(),
            width: cam.width,
            height: cam.height,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [cam.translation.x, cam.translation.y, cam.translation.z],
        }
    }

    pub fn camera(&self) -> Result<PinholeCamera, CameraError> {
        PinholeCamera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            Matrix3::from_row_slice(&self.rotation),
            Vec3::from_column_slice(&self.t),
            self.width,
            self.height,
        )
        .map_err(|e| CameraError::Invalid(format!("view {}: {e}", self.id)))
    }
}

/// Reads and validates a manifest without touching images.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CameraError> {
    let text = std::fs::read_to_string(path).map_err(|source| CameraError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    if entries.is_empty() {
        return Err(CameraError::Empty);
    }
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.id) {
            return Err(CameraError::DuplicateId(e.id));
        }
        e.camera()?;
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), CameraError> {
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text).map_err(|source| CameraError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every view in manifest order, decoding images in parallel.
pub fn load_views(manifest_path: &Path, image_root: &Path) -> Result<Vec<ViewImage>, CameraError> {
    let entries = read_manifest(manifest_path)?;
    par::map_slice(&entries, |e| load_view(e, image_root))
        .into_iter()
        .collect()
}

fn load_view(e: &ManifestEntry, image_root: &Path) -> Result<ViewImage, CameraError> {
    let camera = e.camera()?;
    let path = image_root.join(&e.image);
    if !path.is_file() {
        return Err(CameraError::MissingImage { id: e.id, path });
    }
    let pixels = image::open(&path)
        .map_err(|err| CameraError::Decode {
            id: e.id,
            path: path.clone(),
            message: err.to_string(),
        })?
        .to_rgb8();
    if pixels.width() != e.width || pixels.height() != e.height {
        return Err(CameraError::Dimension {
            id: e.id,
            width: e.width,
            height: e.height,
            actual_w: pixels.width(),
            actual_h: pixels.height(),
        });
    }
    Ok(ViewImage {
        id: e.id,
        camera,
        pixels,
    })
}
