//! Indexed triangle meshes and their face-adjacency graph.

mod obj;
mod ply;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

pub use obj::{parse_obj, ObjDocument, ObjFace};
pub use ply::parse_ply;

pub type Vec3 = Vector3<f64>;

/// Squared parallelogram area at or below which a face counts as degenerate.
pub const DEGENERATE_AREA2: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("degenerate faces: {faces:?}")]
    Degenerate { faces: Vec<usize> },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
}

/// Options applied while loading a mesh file.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop degenerate faces with a warning instead of failing.
    pub drop_degenerate: bool,
    /// Merge vertices closer than this Euclidean distance before building faces.
    pub weld: Option<f64>,
}

/// An indexed triangle mesh with per-face unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub face_normals: Vec<Vec3>,
}

impl Mesh {
    /// Builds a mesh, rejecting out-of-range indices and degenerate faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        check_indices(&vertices, &faces)?;
        let bad = degenerate_faces(&vertices, &faces);
        if !bad.is_empty() {
            return Err(MeshError::Degenerate { faces: bad });
        }
        Ok(Self::with_normals(vertices, faces))
    }

    /// Builds a mesh, silently removing degenerate faces. Returns the removed
    /// face indices (in input numbering).
    pub fn new_dropping_degenerate(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
    ) -> Result<(Self, Vec<usize>), MeshError> {
        check_indices(&vertices, &faces)?;
        let bad = degenerate_faces(&vertices, &faces);
        let kept = faces
            .into_iter()
            .enumerate()
            .filter(|(i, _)| bad.binary_search(i).is_err())
            .map(|(_, f)| f)
            .collect();
        Ok((Self::with_normals(vertices, kept), bad))
    }

    fn with_normals(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        let face_normals = faces
            .iter()
            .map(|f| {
                let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
                n / n.norm()
            })
            .collect();
        Self {
            vertices,
            faces,
            face_normals,
        }
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            face_normals: Vec::new(),
        }
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    pub fn area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Point at barycentric coordinates `(s, t)` relative to vertices 1 and 2.
    pub fn point_at(&self, face: usize, s: f64, t: f64) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        a + (b - a) * s + (c - a) * t
    }

    /// Merges vertices within `eps` of an earlier vertex. Faces are remapped;
    /// faces that collapse become degenerate and are left for the caller to
    /// validate.
    pub fn weld_vertices(vertices: &[Vec3], faces: &mut [[usize; 3]], eps: f64) -> Vec<Vec3> {
        let remap = weld_map(vertices, eps);
        let mut out = Vec::new();
        let mut new_index = vec![usize::MAX; vertices.len()];
        for (i, &rep) in remap.iter().enumerate() {
            if rep == i {
                new_index[i] = out.len();
                out.push(vertices[i]);
            }
        }
        for f in faces.iter_mut() {
            for v in f.iter_mut() {
                *v = new_index[remap[*v]];
            }
        }
        out
    }
}

fn check_indices(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<(), MeshError> {
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            if v >= vertices.len() {
                return Err(MeshError::IndexOutOfRange {
                    face: fi,
                    index: v,
                    count: vertices.len(),
                });
            }
        }
    }
    Ok(())
}

/// Indices of faces with repeated vertices or (near-)zero area, ascending.
pub fn degenerate_faces(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<usize> {
    faces
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return true;
            }
            let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            !(n.norm_squared() > DEGENERATE_AREA2)
        })
        .map(|(i, _)| i)
        .collect()
}

/// For each vertex, the index of the earliest vertex within `eps` of it
/// (itself when none).
fn weld_map(vertices: &[Vec3], eps: f64) -> Vec<usize> {
    let cell = if eps > 0.0 { eps } else { f64::MIN_POSITIVE };
    let key = |p: &Vec3| {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut remap = Vec::with_capacity(vertices.len());
    for (i, p) in vertices.iter().enumerate() {
        let k = key(p);
        let mut found = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(reps) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &r in reps {
                            if (vertices[r] - p).norm() <= eps && found.is_none_or(|f| r < f) {
                                found = Some(r);
                            }
                        }
                    }
                }
            }
        }
        match found {
            Some(r) => remap.push(r),
            None => {
                grid.entry(k).or_default().push(i);
                remap.push(i);
            }
        }
    }
    remap
}

/// Loads an OBJ or ASCII PLY file, chosen by extension.
pub fn load_mesh(path: &Path, opts: &LoadOptions) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (vertices, faces) = match ext.as_str() {
        "obj" => {
            let doc = parse_obj(&text)?;
            let faces = doc.faces.iter().map(|f| f.vertices).collect();
            (doc.positions, faces)
        }
        "ply" => parse_ply(&text)?,
        other => return Err(MeshError::UnsupportedFormat(other.to_string())),
    };
    build_mesh(vertices, faces, opts)
}

/// Applies welding and degenerate-face policy to raw geometry.
pub fn build_mesh(
    vertices: Vec<Vec3>,
    mut faces: Vec<[usize; 3]>,
    opts: &LoadOptions,
) -> Result<Mesh, MeshError> {
    check_indices(&vertices, &faces)?;
    let vertices = match opts.weld {
        Some(eps) => Mesh::weld_vertices(&vertices, &mut faces, eps),
        None => vertices,
    };
    if opts.drop_degenerate {
        let (mesh, dropped) = Mesh::new_dropping_degenerate(vertices, faces)?;
        if !dropped.is_empty() {
            log::warn!("dropped {} degenerate faces: {:?}", dropped.len(), dropped);
        }
        Ok(mesh)
    } else {
        Mesh::new(vertices, faces)
    }
}

/// Undirected face adjacency: faces sharing exactly two vertex indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    pub fn build(mesh: &Mesh) -> Self {
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                by_edge.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let shared = |i: usize, j: usize| {
            let (fi, fj) = (&mesh.faces[i], &mesh.faces[j]);
            fi.iter().filter(|v| fj.contains(v)).count()
        };
        let mut pairs = BTreeSet::new();
        for faces in by_edge.values() {
            for (a, &i) in faces.iter().enumerate() {
                for &j in &faces[a + 1..] {
                    if i != j && shared(i, j) == 2 {
                        pairs.insert((i.min(j), i.max(j)));
                    }
                }
            }
        }
        Self::from_edges(mesh.face_count(), pairs)
    }

    /// Builds a graph over `face_count` nodes from undirected pairs.
    /// Self-pairs and duplicates are ignored.
    pub fn from_edges<I>(face_count: usize, edges: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let set: BTreeSet<(usize, usize)> = edges
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        let mut neighbors = vec![Vec::new(); face_count];
        for &(i, j) in &set {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Self {
            edges: set.into_iter().collect(),
            neighbors,
        }
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn face_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbors of `face`, ascending.
    pub fn neighbors(&self, face: usize) -> &[usize] {
        &self.neighbors[face]
    }
}
