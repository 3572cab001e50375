//! Wavefront OBJ meshes (vertices, optional vertex colors, faces).
//!
//! Polygons are fan-triangulated. Texture coordinates, normals, groups and
//! material statements are accepted and ignored.

use std::fmt::Write as _;
use std::path::Path;

use jga_core::SmplMesh;

use crate::{read_file, write_file, IoError};

fn malformed(offset: usize, message: impl Into<String>) -> IoError {
    IoError::Malformed {
        what: "OBJ",
        offset,
        message: message.into(),
    }
}

fn vertex_ref(token: &str, count: usize, offset: usize) -> Result<usize, IoError> {
    let first = token.split('/').next().unwrap_or("");
    let idx: i64 = first
        .parse()
        .map_err(|_| malformed(offset, format!("bad face index `{token}`")))?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        count as i64 + idx
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(malformed(
            offset,
            format!("face index {idx} out of range for {count} vertices"),
        ));
    }
    Ok(resolved as usize)
}

pub fn parse_obj(bytes: &[u8]) -> Result<SmplMesh, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(e.valid_up_to(), "file is not UTF-8"))?;
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw.len();
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut words = line.split_whitespace();
        let Some(tag) = words.next() else { continue };
        let rest: Vec<&str> = words.collect();
        match tag {
            "v" => {
                let nums: Result<Vec<f64>, _> = rest.iter().map(|w| w.parse::<f64>()).collect();
                let nums = nums.map_err(|_| malformed(line_offset, "bad vertex coordinate"))?;
                if nums.iter().any(|v| !v.is_finite()) {
                    return Err(malformed(line_offset, "non-finite vertex coordinate"));
                }
                match nums.len() {
                    3 => vertices.push([nums[0], nums[1], nums[2]]),
                    6 => {
                        vertices.push([nums[0], nums[1], nums[2]]);
                        colors.push([nums[3], nums[4], nums[5]]);
                    }
                    n => {
                        return Err(malformed(
                            line_offset,
                            format!("vertex has {n} values, expected 3 or 6"),
                        ))
                    }
                }
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(malformed(line_offset, "face needs at least 3 vertices"));
                }
                let idx: Result<Vec<usize>, _> = rest
                    .iter()
                    .map(|t| vertex_ref(t, vertices.len(), line_offset))
                    .collect();
                let idx = idx?;
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            "vt" | "vn" | "vp" | "o" | "g" | "s" | "mtllib" | "usemtl" | "l" => {}
            other => return Err(malformed(line_offset, format!("unsupported statement `{other}`"))),
        }
    }
    if !colors.is_empty() && colors.len() != vertices.len() {
        return Err(malformed(
            offset,
            "vertex colors must be given for all vertices or none",
        ));
    }
    let mut mesh = SmplMesh::new(vertices, faces)?;
    mesh.vertex_colors = (!colors.is_empty()).then_some(colors);
    Ok(mesh)
}

pub fn encode_obj(mesh: &SmplMesh) -> Vec<u8> {
    let mut out = String::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(c) => {
                let c = c[i];
                writeln!(out, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]).unwrap();
            }
            None => writeln!(out, "v {} {} {}", v[0], v[1], v[2]).unwrap(),
        }
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out.into_bytes()
}

pub fn read_obj(path: &Path) -> Result<SmplMesh, IoError> {
    parse_obj(&read_file(path)?)
}

pub fn write_obj(path: &Path, mesh: &SmplMesh) -> Result<(), IoError> {
    write_file(path, &encode_obj(mesh))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quads_and_slashes() {
        let text = "# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 -1//1\n";
        let mesh = parse_obj(text.as_bytes()).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(mesh.vertex_colors.is_none());
    }

    #[test]
    fn out_of_range_face_reports_offset() {
        let text = "v 0 0 0\nf 1 2 3\n";
        match parse_obj(text.as_bytes()) {
            Err(IoError::Malformed { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }
}
