//! Wavefront OBJ subset: `v`, `vt`, `f`, `usemtl`, `mtllib`.

use super::{MeshError, Vec3};

/// A triangulated face with 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjFace {
    pub vertices: [usize; 3],
    pub texcoords: Option<[usize; 3]>,
    /// Index into [`ObjDocument::materials`] of the active `usemtl`.
    pub material: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjDocument {
    pub positions: Vec<Vec3>,
    pub texcoords: Vec<[f64; 2]>,
    pub faces: Vec<ObjFace>,
    pub materials: Vec<String>,
    pub mtllibs: Vec<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

fn floats<const N: usize>(
    line_no: usize,
    mut it: std::str::SplitWhitespace<'_>,
) -> Result<[f64; N], MeshError> {
    let mut out = [0.0; N];
    for (k, slot) in out.iter_mut().enumerate() {
        let tok = it
            .next()
            .ok_or_else(|| parse_err(line_no, format!("expected {N} numbers, got {k}")))?;
        *slot = tok
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid number '{tok}'")))?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index against `count`.
fn resolve(line_no: usize, tok: &str, count: usize) -> Result<usize, MeshError> {
    let i: i64 = tok
        .parse()
        .map_err(|_| parse_err(line_no, format!("invalid index '{tok}'")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(parse_err(line_no, "index 0 is not valid in OBJ"));
    };
    if idx < 0 || idx as usize >= count {
        return Err(parse_err(
            line_no,
            format!("index {i} out of range ({count} available)"),
        ));
    }
    Ok(idx as usize)
}

/// Parses OBJ text. Polygons are fan-triangulated as (0, k, k+1).
pub fn parse_obj(text: &str) -> Result<ObjDocument, MeshError> {
    let mut doc = ObjDocument::default();
    let mut current_material = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        match tag {
            "v" => {
                let [x, y, z] = floats::<3>(line_no, it)?;
                doc.positions.push(Vec3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = floats::<2>(line_no, it)?;
                doc.texcoords.push([u, v]);
            }
            "f" => {
                let mut verts = Vec::new();
                let mut tex = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let v = parts.next().unwrap_or("");
                    verts.push(resolve(line_no, v, doc.positions.len())?);
                    match parts.next() {
                        Some(t) if !t.is_empty() => {
                            tex.push(resolve(line_no, t, doc.texcoords.len())?)
                        }
                        _ => {}
                    }
                }
                if verts.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least 3 vertices"));
                }
                let has_tex = !tex.is_empty();
                if has_tex && tex.len() != verts.len() {
                    return Err(parse_err(line_no, "mixed faces with and without texcoords"));
                }
                for k in 1..verts.len() - 1 {
                    doc.faces.push(ObjFace {
                        vertices: [verts[0], verts[k], verts[k + 1]],
                        texcoords: has_tex.then(|| [tex[0], tex[k], tex[k + 1]]),
                        material: current_material,
                    });
                }
            }
            "usemtl" => {
                let name = it.collect::<Vec<_>>().join(" ");
                let idx = match doc.materials.iter().position(|m| *m == name) {
                    Some(p) => p,
                    None => {
                        doc.materials.push(name);
                        doc.materials.len() - 1
                    }
                };
                current_material = Some(idx);
            }
            "mtllib" => doc.mtllibs.push(it.collect::<Vec<_>>().join(" ")),
            _ => {}
        }
    }
    Ok(doc)
}
