//! ASCII OBJ and PLY readers and writers.
//!
//! Writers print coordinates with Rust's shortest round-trip float format, so
//! saving and reloading a mesh reproduces every coordinate bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point3, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Some(MeshFormat::Obj),
            Some("ply") => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

/// Loads an OBJ or ASCII PLY triangle mesh. Format is chosen by extension,
/// falling back to sniffing a `ply` magic line.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = MeshFormat::from_path(path).unwrap_or_else(|| {
        if text.starts_with(b"ply") {
            MeshFormat::Ply
        } else {
            MeshFormat::Obj
        }
    });
    if format == MeshFormat::Ply && !text.is_ascii() && header_is_binary(&text) {
        return Err(Error::Parse {
            path: path.into(),
            line: 2,
            message: "binary PLY is not supported; convert to ASCII".into(),
        });
    }
    let text = String::from_utf8(text).map_err(|_| Error::Parse {
        path: path.into(),
        line: 0,
        message: "file is not valid UTF-8 text".into(),
    })?;
    match format {
        MeshFormat::Obj => parse_obj(&text, path),
        MeshFormat::Ply => parse_ply(&text, path),
    }
}

fn header_is_binary(bytes: &[u8]) -> bool {
    let head = &bytes[..bytes.len().min(512)];
    head.windows(13).any(|w| w == b"format binary")
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match MeshFormat::from_path(path).unwrap_or(MeshFormat::Obj) {
        MeshFormat::Obj => write_obj(mesh),
        MeshFormat::Ply => write_ply(mesh),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_ply(mesh: &TriMesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices().len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(s, "element face {}", mesh.faces().len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for v in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing coordinate"))?;
    let x: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number '{tok}'")))?;
    if !x.is_finite() {
        return Err(parse_err(path, line, format!("non-finite coordinate '{tok}'")));
    }
    Ok(x)
}

/// Checks indices against the vertex count and rejects repeated indices.
fn check_face(face: [usize; 3], n_vertices: usize, path: &Path, line: usize) -> Result<()> {
    if let Some(&bad) = face.iter().find(|&&i| i >= n_vertices) {
        return Err(parse_err(
            path,
            line,
            format!("dangling vertex index {} (mesh has {n_vertices} vertices)", bad + 1),
        ));
    }
    if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
        return Err(parse_err(path, line, "degenerate face repeats a vertex"));
    }
    Ok(())
}

pub(crate) fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<([usize; 3], usize)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, line)?;
                let y = parse_f64(toks.next(), path, line)?;
                let z = parse_f64(toks.next(), path, line)?;
                vertices.push(Point3::new(x, y, z));
            }
            Some("f") => {
                let refs: Vec<&str> = toks.collect();
                if refs.len() != 3 {
                    return Err(parse_err(
                        path,
                        line,
                        format!("non-triangular face with {} vertices", refs.len()),
                    ));
                }
                let mut face = [0usize; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let head = r.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("invalid face index '{r}'")))?;
                    *slot = match idx {
                        0 => return Err(parse_err(path, line, "face index 0 is invalid (OBJ is 1-based)")),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let rel = vertices.len() as i64 + i;
                            if rel < 0 {
                                return Err(parse_err(path, line, format!("relative index {i} out of range")));
                            }
                            rel as usize
                        }
                    };
                }
                faces.push((face, line));
            }
            _ => {}
        }
    }
    for &(face, line) in &faces {
        check_face(face, vertices.len(), path, line)?;
    }
    TriMesh::new(vertices, faces.into_iter().map(|(f, _)| f).collect())
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    list_first: bool,
}

pub(crate) fn parse_ply(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic line")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (lineno, raw) in lines.by_ref() {
        let line = lineno + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("format") => match toks.next() {
                Some("ascii") => {}
                Some(other) => {
                    return Err(parse_err(
                        path,
                        line,
                        format!("unsupported PLY format '{other}'; only ascii is supported"),
                    ))
                }
                None => return Err(parse_err(path, line, "missing PLY format")),
            },
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| parse_err(path, line, "element without a name"))?;
                let count: usize = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, line, "element without a valid count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    list_first: false,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line, "property before any element"))?;
                let rest: Vec<&str> = toks.collect();
                if rest.first() == Some(&"list") {
                    if el.properties.is_empty() {
                        el.list_first = true;
                    }
                    el.properties.push(rest.last().copied().unwrap_or("").to_string());
                } else {
                    el.properties.push(rest.last().copied().unwrap_or("").to_string());
                }
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(parse_err(path, 0, "PLY header has no end_header"));
    }

    let mut vertices = Vec::new();
    let mut faces: Vec<([usize; 3], usize)> = Vec::new();
    for el in &elements {
        let (xi, yi, zi) = if el.name == "vertex" {
            let find = |n: &str| {
                el.properties
                    .iter()
                    .position(|p| p == n)
                    .ok_or_else(|| parse_err(path, 0, format!("vertex element lacks property '{n}'")))
            };
            (find("x")?, find("y")?, find("z")?)
        } else {
            (0, 0, 0)
        };
        if el.name == "face" && !el.list_first {
            return Err(parse_err(path, 0, "face element must start with a vertex index list"));
        }
        for _ in 0..el.count {
            let (lineno, raw) = lines
                .next()
                .ok_or_else(|| parse_err(path, 0, format!("unexpected end of file in element '{}'", el.name)))?;
            let line = lineno + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let x = parse_f64(toks.get(xi).copied(), path, line)?;
                    let y = parse_f64(toks.get(yi).copied(), path, line)?;
                    let z = parse_f64(toks.get(zi).copied(), path, line)?;
                    vertices.push(Point3::new(x, y, z));
                }
                "face" => {
                    let n: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(path, line, "face line lacks a vertex count"))?;
                    if n != 3 {
                        return Err(parse_err(path, line, format!("non-triangular face with {n} vertices")));
                    }
                    let mut face = [0usize; 3];
                    for (slot, t) in face.iter_mut().zip(toks.iter().skip(1)) {
                        *slot = t
                            .parse()
                            .map_err(|_| parse_err(path, line, format!("invalid face index '{t}'")))?;
                    }
                    if toks.len() < 4 {
                        return Err(parse_err(path, line, "face line lists fewer than 3 indices"));
                    }
                    faces.push((face, line));
                }
                _ => {}
            }
        }
    }
    for &(face, line) in &faces {
        check_face(face, vertices.len(), path, line)?;
    }
    TriMesh::new(vertices, faces.into_iter().map(|(f, _)| f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.obj")
    }

    #[test]
    fn minimal_obj() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", p()).unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_slash_forms_and_comments() {
        let text = "# comment\no thing\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nf 1/1/1 2//1 3/2\nf -3 -2 -1\n";
        let m = parse_obj(text, p()).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 1, 2]]);
    }

    #[test]
    fn obj_dangling_index_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n", p()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("dangling"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn obj_rejects_quads_and_bad_numbers() {
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(parse_obj(quad, p()), Err(Error::Parse { line: 5, .. })));
        assert!(matches!(parse_obj("v 0 x 0\n", p()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn ply_tetrahedron() {
        let text = "ply\nformat ascii 1.0\ncomment tet\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 4\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
        let m = parse_ply(text, Path::new("t.ply")).unwrap();
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.faces().len(), 4);
    }

    #[test]
    fn ply_extra_properties_and_binary_rejection() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n9 0 0 0\n9 1 0 0\n9 0 1 0\n3 0 1 2\n";
        let m = parse_ply(text, Path::new("t.ply")).unwrap();
        assert_eq!(m.vertices()[1], Point3::new(1.0, 0.0, 0.0));
        let bin = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(parse_ply(bin, Path::new("t.ply")).is_err());
        let quad = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert!(matches!(parse_ply(quad, Path::new("t.ply")), Err(Error::Parse { line: 14, .. })));
    }

    #[test]
    fn writers_round_trip_exactly() {
        let m = TriMesh::new(
            vec![Point3::new(0.1, -1.0 / 3.0, 1e-17), Point3::new(2.5, 0.7, -0.3), Point3::new(std::f64::consts::PI, 0.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(parse_obj(&write_obj(&m), p()).unwrap(), m);
        assert_eq!(parse_ply(&write_ply(&m), Path::new("t.ply")).unwrap(), m);
    }
}
