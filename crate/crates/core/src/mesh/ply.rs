//! ASCII PLY reader (vertex positions and polygon faces only).

use super::{MeshError, Vec3};

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn perr(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses an ASCII PLY document. Faces are fan-triangulated.
pub fn parse_ply(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>), MeshError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(perr(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (n, line) = lines.next().ok_or_else(|| perr(0, "unterminated header"))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("format") => {
                if it.next() != Some("ascii") {
                    return Err(MeshError::UnsupportedFormat("binary PLY".into()));
                }
            }
            Some("element") => {
                let name = it.next().ok_or_else(|| perr(n, "element without name"))?;
                let count = it
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| perr(n, "element without count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(n, "property before element"))?;
                let name = it.last().ok_or_else(|| perr(n, "property without name"))?;
                el.properties.push(name.to_string());
            }
            Some("end_header") => break,
            _ => {}
        }
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (n, line) = lines
                .next()
                .ok_or_else(|| perr(0, format!("missing {} records", el.name)))?;
            let nums: Vec<&str> = line.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let mut xyz = [0.0; 3];
                    for (k, axis) in ["x", "y", "z"].iter().enumerate() {
                        let p = el
                            .properties
                            .iter()
                            .position(|p| p == axis)
                            .ok_or_else(|| perr(n, format!("vertex lacks property {axis}")))?;
                        xyz[k] = nums
                            .get(p)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| perr(n, "invalid vertex record"))?;
                    }
                    vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                }
                "face" => {
                    let count: usize = nums
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| perr(n, "invalid face record"))?;
                    if count < 3 || nums.len() < count + 1 {
                        return Err(perr(n, "face needs at least 3 indices"));
                    }
                    let idx: Vec<usize> = nums[1..=count]
                        .iter()
                        .map(|t| t.parse().map_err(|_| perr(n, format!("invalid index '{t}'"))))
                        .collect::<Result<_, _>>()?;
                    for k in 1..count - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    Ok((vertices, faces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_vertices_and_faces() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let (v, f) = parse_ply(text).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(f, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn rejects_binary() {
        let text = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(matches!(parse_ply(text), Err(MeshError::UnsupportedFormat(_))));
    }
}
