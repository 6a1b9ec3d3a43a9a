//! Mesh (ASCII PLY, OBJ) and point file (`.xyz`, `.particles`) I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Point3, PointCloud, TriangleMesh};
use crate::error::{Error, Result};

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Loads an ASCII PLY or OBJ triangle mesh, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    match extension(path).as_str() {
        "ply" => parse_ply(path, &text),
        "obj" => parse_obj(path, &text),
        other => Err(format_err(path, 0, format!("unsupported mesh extension '{other}'"))),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| format_err(path, line, format!("expected a number, found '{tok}'")))
}

/// Fan triangulation of a polygon.
fn push_polygon(faces: &mut Vec<[usize; 3]>, poly: &[usize]) {
    for i in 1..poly.len().saturating_sub(1) {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
}

fn parse_ply(path: &Path, text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(format_err(path, 1, "missing 'ply' magic")),
    }

    let mut n_vertices = None;
    let mut n_faces = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = String::new();
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| format_err(path, 0, "unexpected end of header"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(format_err(path, ln, format!("unsupported PLY format '{fmt}'")));
                }
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| format_err(path, ln, "bad element count"))?;
                current = name.to_string();
                match *name {
                    "vertex" => n_vertices = Some(count),
                    "face" => n_faces = count,
                    _ => {}
                }
            }
            ["property", "list", ..] => {}
            ["property", _ty, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n_vertices = n_vertices.ok_or_else(|| format_err(path, 0, "no vertex element"))?;
    let axis = |name: &str| {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| format_err(path, 0, format!("vertex property '{name}' missing")))
    };
    let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);

    let mut vertices = Vec::with_capacity(n_vertices);
    while vertices.len() < n_vertices {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| format_err(path, 0, "file ends inside vertex list"))?;
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < vertex_props.len() {
            return Err(format_err(path, ln, "too few vertex properties"));
        }
        vertices.push([
            parse_f64(path, ln, toks[ix])?,
            parse_f64(path, ln, toks[iy])?,
            parse_f64(path, ln, toks[iz])?,
        ]);
    }

    let mut faces = Vec::with_capacity(n_faces);
    let mut read = 0;
    while read < n_faces {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| format_err(path, 0, "file ends inside face list"))?;
        if line.is_empty() {
            continue;
        }
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(path, ln, "face indices must be non-negative integers"))?;
        let count = *idx.first().ok_or_else(|| format_err(path, ln, "empty face"))?;
        if idx.len() != count + 1 || count < 3 {
            return Err(format_err(path, ln, "malformed face"));
        }
        push_polygon(&mut faces, &idx[1..]);
        read += 1;
    }
    TriangleMesh::new(vertices, faces)
}

fn parse_obj(path: &Path, text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(format_err(path, ln, "vertex needs three coordinates"));
                }
                vertices.push([
                    parse_f64(path, ln, c[0])?,
                    parse_f64(path, ln, c[1])?,
                    parse_f64(path, ln, c[2])?,
                ]);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in toks {
                    let head = t.split('/').next().unwrap_or("");
                    let v: i64 = head
                        .parse()
                        .map_err(|_| format_err(path, ln, format!("bad face index '{t}'")))?;
                    // 1-based, negative = relative to the end
                    let idx = if v > 0 {
                        v - 1
                    } else if v < 0 {
                        vertices.len() as i64 + v
                    } else {
                        return Err(format_err(path, ln, "face index 0 is invalid in OBJ"));
                    };
                    if idx < 0 {
                        return Err(format_err(path, ln, "relative face index out of range"));
                    }
                    poly.push(idx as usize);
                }
                if poly.len() < 3 {
                    return Err(format_err(path, ln, "face needs at least three vertices"));
                }
                push_polygon(&mut faces, &poly);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Writes an ASCII PLY mesh.
pub fn save_mesh_ply(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertices().len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(out, "element face {}", mesh.faces().len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    write_string(path.as_ref(), &out)
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads whitespace separated `x y z` rows (`.xyz` and `.particles` share the layout).
pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<Point3>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut pts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(format_err(path, i + 1, "expected exactly three coordinates"));
        }
        pts.push([
            parse_f64(path, i + 1, toks[0])?,
            parse_f64(path, i + 1, toks[1])?,
            parse_f64(path, i + 1, toks[2])?,
        ]);
    }
    Ok(pts)
}

pub fn write_points(path: impl AsRef<Path>, points: &[Point3]) -> Result<()> {
    let mut out = String::with_capacity(points.len() * 48);
    for p in points {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    write_string(path.as_ref(), &out)
}

/// Loads any supported shape file as a point cloud; meshes contribute their vertices.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "ply" | "obj" => super::mesh_vertices_as_cloud(&load_mesh(path)?),
        "xyz" | "particles" | "pts" | "txt" => PointCloud::new(read_points(path)?),
        other => Err(format_err(path, 0, format!("unsupported point extension '{other}'"))),
    }
}

/// Lists supported shape files in `dir`, sorted by name.
pub fn list_shape_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                extension(p).as_str(),
                "ply" | "obj" | "xyz" | "particles"
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const TRI_PLY: &str = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn minimal_ply() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = load_mesh(write(dir.path(), "t.ply", TRI_PLY)).unwrap();
        assert_eq!(mesh.vertices().len(), 3);
        assert_eq!(mesh.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_indices_become_zero_based() {
        let dir = tempfile::tempdir().unwrap();
        let body = "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2/1/1 4/2/2 3/3/3\nf -3 -1 -2\n";
        let mesh = load_mesh(write(dir.path(), "t.obj", body)).unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2], [1, 3, 2], [1, 3, 2]]);
    }

    #[test]
    fn out_of_range_face_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let body = TRI_PLY.replace("3 0 1 2", "3 0 1 99");
        let err = load_mesh(write(dir.path(), "bad.ply", &body)).unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)), "{err}");
    }

    #[test]
    fn parse_failure_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = TRI_PLY.replace("1 0 0\n", "1 zero 0\n");
        match load_mesh(write(dir.path(), "bad.ply", &body)).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 11),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ply_save_load_and_points_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = load_mesh(write(dir.path(), "t.ply", TRI_PLY)).unwrap();
        let out = dir.path().join("sub/o.ply");
        save_mesh_ply(&out, &mesh).unwrap();
        assert_eq!(load_mesh(&out).unwrap(), mesh);

        let pts = vec![[0.1, -2.5, 3.0], [1e-7, 4.25, -0.0]];
        let p = dir.path().join("a.particles");
        write_points(&p, &pts).unwrap();
        assert_eq!(read_points(&p).unwrap(), pts);
        assert_eq!(load_cloud(&p).unwrap().count(), 2);
    }
}
