//! Texture atlas packing, textured-OBJ export and re-import.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::blend::FacePatch;
use crate::mesh::{self, Mesh, MeshError};
use crate::par;

pub const MAX_PAGE_SIDE: u32 = 8192;
pub const GUTTER: u32 = 2;
/// Side of the uniform block used by untextured faces.
pub const GRAY_BLOCK: u32 = 4;
pub const GRAY: u8 = 128;

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("face {face}: patch of {size} texels does not fit a {max} atlas page")]
    PatchTooLarge { face: usize, size: u32, max: u32 },
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("model {0}: {1}")]
    Model(PathBuf, String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AtlasError {
    AtlasError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Where a face's texels live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Top-left texel of the patch (inside its gutter) and its side.
    Patch { page: usize, x: u32, y: u32, size: u32 },
    /// Shared gray block.
    Gray { page: usize, x: u32, y: u32 },
}

impl Placement {
    pub fn page(&self) -> usize {
        match *self {
            Placement::Patch { page, .. } | Placement::Gray { page, .. } => page,
        }
    }
}

/// Packed atlas pages with one placement per face.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    pub pages: Vec<RgbImage>,
    pub placements: Vec<Placement>,
}

struct Item {
    /// `None` for the gray block.
    face: Option<usize>,
    size: u32,
}

impl Item {
    fn slot(&self) -> u32 {
        self.size + 2 * GUTTER
    }
}

/// Shelf-packs slots of the given sides into pages of side `side`.
/// Returns `(page, x, y)` of each slot's corner, or `None` when more than
/// `max_pages` pages would be needed.
fn shelf_pack(slots: &[u32], side: u32, max_pages: usize) -> Option<Vec<(usize, u32, u32)>> {
    let mut out = Vec::with_capacity(slots.len());
    let (mut page, mut x, mut y, mut shelf_h) = (0usize, 0u32, 0u32, 0u32);
    for &s in slots {
        if x + s > side {
            x = 0;
            y += shelf_h;
            shelf_h = 0;
        }
        if y + s > side {
            page += 1;
            if page >= max_pages {
                return None;
            }
            x = 0;
            y = 0;
            shelf_h = 0;
        }
        out.push((page, x, y));
        x += s;
        shelf_h = shelf_h.max(s);
    }
    Some(out)
}

/// Slot contents of one item, gutters included, row-major.
fn render_tile(it: &Item, patches: &[Option<FacePatch>]) -> Vec<[u8; 3]> {
    let (n, g, slot) = (it.size as i64, GUTTER as i64, it.slot() as i64);
    let patch = it.face.map(|f| patches[f].as_ref().expect("item has a patch"));
    let mut out = Vec::with_capacity((slot * slot) as usize);
    for j in 0..slot {
        for i in 0..slot {
            let (ti, tj) = ((i - g).clamp(0, n - 1) as u32, (j - g).clamp(0, n - 1) as u32);
            out.push(match patch {
                Some(p) => p.texel(ti, tj).map(quantize),
                None => [GRAY; 3],
            });
        }
    }
    out
}

fn quantize(c: f32) -> u8 {
    c.round().clamp(0.0, 255.0) as u8
}

/// Packs per-face patches (indexed by face, `None` = untextured).
///
/// Patches are placed by decreasing size, ties by face id, on shelves of
/// the smallest power-of-two page that holds them; beyond
/// [`MAX_PAGE_SIDE`] further pages are opened. Each patch is surrounded by
/// a [`GUTTER`]-texel border replicating its edge texels.
pub fn pack(patches: &[Option<FacePatch>]) -> Result<TextureAtlas, AtlasError> {
    let face_count = patches.len();
    let mut items: Vec<Item> = patches
        .iter()
        .enumerate()
        .filter_map(|(f, p)| p.as_ref().map(|p| Item { face: Some(f), size: p.resolution }))
        .collect();
    if items.is_empty() {
        let page = RgbImage::from_pixel(GRAY_BLOCK, GRAY_BLOCK, Rgb([GRAY; 3]));
        return Ok(TextureAtlas {
            pages: vec![page],
            placements: vec![Placement::Gray { page: 0, x: 0, y: 0 }; face_count],
        });
    }
    for it in &items {
        if it.slot() > MAX_PAGE_SIDE {
            return Err(AtlasError::PatchTooLarge {
                face: it.face.unwrap_or(0),
                size: it.size,
                max: MAX_PAGE_SIDE,
            });
        }
    }
    if items.len() < face_count {
        items.push(Item { face: None, size: GRAY_BLOCK });
    }
    items.sort_by(|a, b| {
        b.size
            .cmp(&a.size)
            .then(a.face.unwrap_or(usize::MAX).cmp(&b.face.unwrap_or(usize::MAX)))
    });
    let slots: Vec<u32> = items.iter().map(Item::slot).collect();
    let area: u64 = slots.iter().map(|&s| s as u64 * s as u64).sum();

    let mut side = slots[0].next_power_of_two();
    while (side as u64 * side as u64) < area && side < MAX_PAGE_SIDE {
        side *= 2;
    }
    let positions = loop {
        if let Some(p) = shelf_pack(&slots, side, 1) {
            break p;
        }
        if side >= MAX_PAGE_SIDE {
            break shelf_pack(&slots, MAX_PAGE_SIDE, usize::MAX).expect("unbounded pages always fit");
        }
        side *= 2;
    };
    let page_count = positions.iter().map(|p| p.0).max().unwrap_or(0) + 1;
    let tiles = par::map_slice(&items, |it| render_tile(it, patches));
    let mut pages = vec![RgbImage::from_pixel(side, side, Rgb([0, 0, 0])); page_count];
    let mut placements = vec![Placement::Gray { page: 0, x: 0, y: 0 }; face_count];
    let mut gray_at = None;
    for ((it, tile), &(page, sx, sy)) in items.iter().zip(&tiles).zip(&positions) {
        let slot = it.slot();
        for (k, px) in tile.iter().enumerate() {
            let (i, j) = (k as u32 % slot, k as u32 / slot);
            pages[page].put_pixel(sx + i, sy + j, Rgb(*px));
        }
        let (ox, oy) = (sx + GUTTER, sy + GUTTER);
        match it.face {
            Some(f) => placements[f] = Placement::Patch { page, x: ox, y: oy, size: it.size },
            None => gray_at = Some(Placement::Gray { page, x: ox, y: oy }),
        }
    }
    if let Some(gray) = gray_at {
        for (f, p) in patches.iter().enumerate() {
            if p.is_none() {
                placements[f] = gray;
            }
        }
    }
    Ok(TextureAtlas { pages, placements })
}

impl TextureAtlas {
    /// Texel-space corners `[v0, v1, v2]` of a face's UV triangle, with
    /// `(0, 0)` at the page's top-left corner.
    pub fn texel_triangle(&self, face: usize) -> [[f64; 2]; 3] {
        match self.placements[face] {
            Placement::Patch { x, y, size, .. } => {
                let (x, y, s) = (x as f64, y as f64, size as f64);
                [[x, y], [x + s, y], [x, y + s]]
            }
            Placement::Gray { x, y, .. } => {
                let (x, y) = (x as f64, y as f64);
                [[x + 1.0, y + 1.0], [x + 3.0, y + 1.0], [x + 1.0, y + 3.0]]
            }
        }
    }

    /// OBJ-convention UVs (`v` up) of a face's three corners.
    pub fn uvs(&self, face: usize) -> [[f64; 2]; 3] {
        let page = &self.pages[self.placements[face].page()];
        let (w, h) = (page.width() as f64, page.height() as f64);
        self.texel_triangle(face).map(|[x, y]| [x / w, 1.0 - y / h])
    }

    /// Rasterizes every textured face's UV triangle at texel centers and
    /// returns the first texel claimed twice, if any. Faces sharing the
    /// gray block are skipped.
    pub fn first_overlap(&self) -> Option<(usize, u32, u32)> {
        let mut occ: Vec<Vec<u8>> = self
            .pages
            .iter()
            .map(|p| vec![0u8; p.width() as usize * p.height() as usize])
            .collect();
        for (f, pl) in self.placements.iter().enumerate() {
            let Placement::Patch { page, .. } = *pl else { continue };
            let w = self.pages[page].width();
            let tri = self.texel_triangle(f);
            let (x0, y0) = (tri[0][0] as u32, tri[0][1] as u32);
            let n = (tri[1][0] - tri[0][0]) as u32;
            for j in 0..n {
                for i in 0..n {
                    // texel center strictly inside or on the legs of the triangle
                    let (s, t) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
                    if s + t > 1.0 {
                        continue;
                    }
                    let cell = &mut occ[page][((y0 + j) * w + x0 + i) as usize];
                    *cell += 1;
                    if *cell > 1 {
                        return Some((page, x0 + i, y0 + j));
                    }
                }
            }
        }
        None
    }

    pub fn untextured_count(&self) -> usize {
        self.placements
            .iter()
            .filter(|p| matches!(p, Placement::Gray { .. }))
            .count()
    }
}

pub fn page_name(page: usize) -> String {
    format!("atlas_{page:04}")
}

/// Mesh with per-face UVs into atlas pages; what gets re-rendered.
#[derive(Debug, Clone)]
pub struct TexturedModel {
    pub mesh: Mesh,
    /// OBJ-convention UVs per face corner.
    pub uvs: Vec<[[f64; 2]; 3]>,
    pub face_page: Vec<usize>,
    /// False for faces mapped to the shared gray block.
    pub textured: Vec<bool>,
    pub pages: Vec<RgbImage>,
}

impl TexturedModel {
    pub fn new(mesh: Mesh, atlas: TextureAtlas) -> Self {
        let uvs = (0..mesh.face_count()).map(|f| atlas.uvs(f)).collect();
        let face_page = atlas.placements.iter().map(Placement::page).collect();
        let textured = atlas
            .placements
            .iter()
            .map(|p| matches!(p, Placement::Patch { .. }))
            .collect();
        Self {
            mesh,
            uvs,
            face_page,
            textured,
            pages: atlas.pages,
        }
    }
}

/// Writes `model.obj`, `model.mtl` and `atlas_####.png` into `out_dir`.
/// Returns the written paths.
pub fn export(model: &TexturedModel, out_dir: &Path) -> Result<Vec<PathBuf>, AtlasError> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut written = Vec::new();

    let mut mtl = String::new();
    for (p, img) in model.pages.iter().enumerate() {
        let name = page_name(p);
        let png = out_dir.join(format!("{name}.png"));
        img.save(&png).map_err(|e| io_err(&png, e))?;
        written.push(png);
        let _ = write!(
            mtl,
            "newmtl {name}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {name}.png\n\n"
        );
    }
    let mtl_path = out_dir.join("model.mtl");
    std::fs::write(&mtl_path, mtl).map_err(|e| io_err(&mtl_path, e))?;

    let mesh = &model.mesh;
    let mut obj = String::with_capacity(64 * (mesh.vertex_count() + 4 * mesh.face_count()));
    obj.push_str("mtllib model.mtl\n");
    for v in &mesh.vertices {
        let _ = writeln!(obj, "v {} {} {}", v.x, v.y, v.z);
    }
    // one vt triple per textured face, one shared triple for the gray block
    let mut vt_of = vec![0usize; mesh.face_count()];
    let mut gray_vt = None;
    let mut next = 1;
    for (f, uv) in model.uvs.iter().enumerate() {
        if !model.textured[f] {
            if let Some(k) = gray_vt {
                vt_of[f] = k;
                continue;
            }
            gray_vt = Some(next);
        }
        for [u, v] in uv {
            let _ = writeln!(obj, "vt {u} {v}");
        }
        vt_of[f] = next;
        next += 3;
    }
    let mut current = None;
    for (f, face) in mesh.faces.iter().enumerate() {
        let page = model.face_page[f];
        if current != Some(page) {
            let _ = writeln!(obj, "usemtl {}", page_name(page));
            current = Some(page);
        }
        let t = vt_of[f];
        let _ = writeln!(
            obj,
            "f {}/{} {}/{} {}/{}",
            face[0] + 1,
            t,
            face[1] + 1,
            t + 1,
            face[2] + 1,
            t + 2
        );
    }
    let obj_path = out_dir.join("model.obj");
    std::fs::write(&obj_path, obj).map_err(|e| io_err(&obj_path, e))?;
    written.insert(0, mtl_path);
    written.insert(0, obj_path);
    Ok(written)
}

/// `newmtl` name → `map_Kd` file, in declaration order.
fn parse_mtl(text: &str) -> Vec<(String, Option<String>)> {
    let mut out: Vec<(String, Option<String>)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(name) = line.strip_prefix("newmtl ") {
            out.push((name.trim().to_string(), None));
        } else if let Some(file) = line.strip_prefix("map_Kd ") {
            if let Some(last) = out.last_mut() {
                last.1 = Some(file.trim().to_string());
            }
        }
    }
    out
}

/// Loads a textured OBJ with its MTL and texture images.
pub fn load_textured_model(obj_path: &Path) -> Result<TexturedModel, AtlasError> {
    let text = std::fs::read_to_string(obj_path).map_err(|e| io_err(obj_path, e))?;
    let doc = mesh::parse_obj(&text)?;
    let dir = obj_path.parent().unwrap_or(Path::new("."));
    let bad = |msg: String| AtlasError::Model(obj_path.to_path_buf(), msg);

    let mut materials = Vec::new();
    for lib in &doc.mtllibs {
        let p = dir.join(lib);
        let t = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        materials.extend(parse_mtl(&t));
    }
    let mut pages = Vec::new();
    let mut page_of_material = Vec::new();
    for name in &doc.materials {
        let file = materials
            .iter()
            .find(|m| &m.0 == name)
            .and_then(|m| m.1.clone())
            .ok_or_else(|| bad(format!("material '{name}' has no map_Kd")))?;
        let p = dir.join(&file);
        let img = image::open(&p).map_err(|e| io_err(&p, e))?.to_rgb8();
        page_of_material.push(pages.len());
        pages.push(img);
    }
    if pages.is_empty() {
        return Err(bad("no textured materials".into()));
    }

    let mut uvs = Vec::with_capacity(doc.faces.len());
    let mut face_page = Vec::with_capacity(doc.faces.len());
    for (f, face) in doc.faces.iter().enumerate() {
        let t = face.texcoords.ok_or_else(|| bad(format!("face {f} has no texture coordinates")))?;
        uvs.push(t.map(|k| doc.texcoords[k]));
        face_page.push(face.material.map(|m| page_of_material[m]).unwrap_or(0));
    }
    let mut users = std::collections::HashMap::new();
    for face in &doc.faces {
        *users.entry(face.texcoords).or_insert(0usize) += 1;
    }
    let textured = doc.faces.iter().map(|f| users[&f.texcoords] == 1).collect();
    let faces = doc.faces.iter().map(|f| f.vertices).collect();
    let mesh = Mesh::new(doc.positions, faces)?;
    Ok(TexturedModel {
        mesh,
        uvs,
        face_page,
        textured,
        pages,
    })
}
