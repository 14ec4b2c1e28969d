//! ASCII OFF / OBJ / PLY readers and writers.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Face, Shape, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        ext.parse()
    }
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(MeshFormat::Off),
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            other => Err(Error::InvalidArgument(format!(
                "unsupported mesh format '{other}'"
            ))),
        }
    }
}

/// Reads a shape, inferring the format from the file extension.
pub fn load_shape(path: &Path) -> Result<Shape> {
    load_shape_as(path, MeshFormat::from_path(path)?)
}

pub fn load_shape_as(path: &Path, format: MeshFormat) -> Result<Shape> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("shape")
        .to_string();
    parse_shape(&text, format, id)
}

pub fn parse_shape(text: &str, format: MeshFormat, id: String) -> Result<Shape> {
    let (v, f) = match format {
        MeshFormat::Off => parse_off(text)?,
        MeshFormat::Obj => parse_obj(text)?,
        MeshFormat::Ply => parse_ply(text)?,
    };
    if v.is_empty() {
        return Err(Error::EmptyGeometry(format!("'{id}' contains no vertices")));
    }
    Shape::new(id, v, f)
}

pub fn save_shape(shape: &Shape, path: &Path) -> Result<()> {
    let format = MeshFormat::from_path(path)?;
    let text = format_shape(shape, format);
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn format_shape(shape: &Shape, format: MeshFormat) -> String {
    let mut out = String::new();
    let v = shape.vertices();
    let f = shape.faces();
    match format {
        MeshFormat::Off => {
            let _ = writeln!(out, "OFF\n{} {} 0", v.len(), f.len());
            for p in v {
                let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
            }
            for t in f {
                let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
        MeshFormat::Obj => {
            for p in v {
                let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
            }
            for t in f {
                let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
            }
        }
        MeshFormat::Ply => {
            let _ = write!(
                out,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
                v.len()
            );
            if !f.is_empty() {
                let _ = write!(
                    out,
                    "element face {}\nproperty list uchar int vertex_indices\n",
                    f.len()
                );
            }
            out.push_str("end_header\n");
            for p in v {
                let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
            }
            for t in f {
                let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
    }
    out
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| perr(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| perr(line, format!("cannot parse {what} from '{tok}'")))
}

/// Fan-triangulates a polygon.
fn push_polygon(poly: &[usize], faces: &mut Vec<Face>, line: usize) -> Result<()> {
    if poly.len() < 3 {
        return Err(perr(line, "face with fewer than 3 vertices"));
    }
    for i in 1..poly.len() - 1 {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
    Ok(())
}

fn check_indices(faces: &[Face], n: usize) -> Result<()> {
    for f in faces {
        for &i in f {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    n_vertices: n,
                });
            }
        }
    }
    Ok(())
}

/// Data lines with comments stripped, paired with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_off(text: &str) -> Result<(Vec<Vec3>, Vec<Face>)> {
    let mut lines = data_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
    let mut toks: Vec<&str> = header.split_whitespace().collect();
    if !toks[0].ends_with("OFF") {
        return Err(perr(ln, "missing OFF header"));
    }
    toks.remove(0);
    let counts_line;
    let mut ln = ln;
    if toks.is_empty() {
        let (l, c) = lines.next().ok_or_else(|| perr(ln, "missing counts"))?;
        ln = l;
        counts_line = c;
        toks = counts_line.split_whitespace().collect();
    }
    let mut it = toks.into_iter();
    let nv: usize = num(it.next(), ln, "vertex count")?;
    let nf: usize = num(it.next(), ln, "face count")?;

    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines
            .next()
            .ok_or_else(|| perr(ln, format!("expected {nv} vertices")))?;
        let mut t = s.split_whitespace();
        verts.push([
            num(t.next(), l, "x")?,
            num(t.next(), l, "y")?,
            num(t.next(), l, "z")?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = lines
            .next()
            .ok_or_else(|| perr(ln, format!("expected {nf} faces")))?;
        let mut t = s.split_whitespace();
        let k: usize = num(t.next(), l, "face size")?;
        let poly: Vec<usize> = (0..k)
            .map(|_| num(t.next(), l, "face index"))
            .collect::<Result<_>>()?;
        push_polygon(&poly, &mut faces, l)?;
    }
    check_indices(&faces, verts.len())?;
    Ok((verts, faces))
}

fn parse_obj(text: &str) -> Result<(Vec<Vec3>, Vec<Face>)> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (l, s) in data_lines(text) {
        let mut t = s.split_whitespace();
        match t.next() {
            Some("v") => verts.push([
                num(t.next(), l, "x")?,
                num(t.next(), l, "y")?,
                num(t.next(), l, "z")?,
            ]),
            Some("f") => {
                let n = verts.len() as i64;
                let poly = t
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| perr(l, format!("bad face index '{tok}'")))?;
                        let idx = if i < 0 { n + i } else { i - 1 };
                        if idx < 0 {
                            return Err(perr(l, format!("face index {i} out of range")));
                        }
                        Ok(idx as usize)
                    })
                    .collect::<Result<Vec<usize>>>()?;
                push_polygon(&poly, &mut faces, l)?;
            }
            _ => {}
        }
    }
    check_indices(&faces, verts.len())?;
    Ok((verts, faces))
}

fn parse_ply(text: &str) -> Result<(Vec<Vec3>, Vec<Face>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(perr(1, "missing ply magic")),
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current: Option<&str> = None;
    let mut other_elements = false;
    let mut header_done = false;
    for (l, s) in lines.by_ref() {
        let t: Vec<&str> = s.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(perr(l, format!("only ascii PLY is supported, got '{fmt}'")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                n_vertices = num(Some(n), l, "vertex count")?;
                current = Some("vertex");
            }
            ["element", "face", n] => {
                n_faces = num(Some(n), l, "face count")?;
                current = Some("face");
            }
            ["element", ..] => {
                current = Some("other");
                other_elements = true;
            }
            ["property", "list", ..] => {}
            ["property", _, name] => {
                if current == Some("vertex") {
                    vertex_props.push(name.to_string());
                }
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(perr(l, format!("unrecognized header line '{s}'"))),
        }
    }
    if !header_done {
        return Err(perr(0, "missing end_header"));
    }
    if other_elements {
        log::debug!("ignoring non vertex/face PLY elements");
    }
    let pos = |name: &str| vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (pos("x"), pos("y"), pos("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr(0, "vertex element lacks x/y/z properties")),
    };
    let mut body = lines.filter(|(_, s)| !s.is_empty());
    let mut verts = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (l, s) = body
            .next()
            .ok_or_else(|| perr(0, format!("expected {n_vertices} vertices")))?;
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|x| num(Some(x), l, "vertex property"))
            .collect::<Result<_>>()?;
        if vals.len() < vertex_props.len() {
            return Err(perr(l, "too few vertex properties"));
        }
        verts.push([vals[ix], vals[iy], vals[iz]]);
    }
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (l, s) = body
            .next()
            .ok_or_else(|| perr(0, format!("expected {n_faces} faces")))?;
        let mut t = s.split_whitespace();
        let k: usize = num(t.next(), l, "face size")?;
        let poly: Vec<usize> = (0..k)
            .map(|_| num(t.next(), l, "face index"))
            .collect::<Result<_>>()?;
        push_polygon(&poly, &mut faces, l)?;
    }
    check_indices(&faces, verts.len())?;
    Ok((verts, faces))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TET_OFF: &str = "OFF\n# tetrahedron\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn tetrahedron_off() {
        let s = parse_shape(TET_OFF, MeshFormat::Off, "tet".into()).unwrap();
        assert_eq!(s.n_vertices(), 4);
        assert_eq!(s.faces().len(), 4);
        assert_eq!(s.faces()[0], [0, 2, 1]);
    }

    #[test]
    fn off_counts_on_header_line_and_quads() {
        let text = "OFF 4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let s = parse_shape(text, MeshFormat::Off, "q".into()).unwrap();
        assert_eq!(s.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_indices_rebased() {
        let text = "# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nvn 0 0 1\nf 1/1/1 3 2\nf 1 2 4\nf 1 4 3\nf -3 -2 -1\n";
        let s = parse_shape(text, MeshFormat::Obj, "t".into()).unwrap();
        assert_eq!(s.faces()[0], [0, 2, 1]);
        assert_eq!(s.faces()[3], [1, 2, 3]);
    }

    #[test]
    fn ply_out_of_range_index() {
        let mut text = String::from(
            "ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n",
        );
        for i in 0..10 {
            text.push_str(&format!("{i} {} 0\n", i * i));
        }
        text.push_str("3 0 1 999\n");
        let r = parse_shape(&text, MeshFormat::Ply, "p".into());
        assert!(matches!(
            r,
            Err(Error::IndexOutOfRange {
                index: 999,
                n_vertices: 10
            })
        ));
    }

    #[test]
    fn ply_extra_vertex_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nend_header\n9 0 0 0\n9 1 0 0\n9 0 1 0\n9 0 0 1\n";
        let s = parse_shape(text, MeshFormat::Ply, "p".into()).unwrap();
        assert!(!s.is_mesh());
        assert_eq!(s.vertices()[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_ply_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 4\nend_header\n";
        assert!(matches!(
            parse_shape(text, MeshFormat::Ply, "b".into()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn malformed_counts() {
        assert!(matches!(
            parse_shape("OFF\nfour 4 0\n", MeshFormat::Off, "x".into()),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_shape("OFF\n4 1 0\n0 0 0\n", MeshFormat::Off, "x".into()),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_shape("", MeshFormat::Obj, "x".into()),
            Err(Error::EmptyGeometry(_))
        ));
    }

    #[test]
    fn roundtrip_all_formats() {
        let s = parse_shape(TET_OFF, MeshFormat::Off, "tet".into())
            .unwrap()
            .map_vertices(|i, v| [v[0] + 0.1 * i as f64, v[1] / 3.0, v[2] - 1e-7]);
        for fmt in [MeshFormat::Off, MeshFormat::Obj, MeshFormat::Ply] {
            let text = format_shape(&s, fmt);
            let back = parse_shape(&text, fmt, "tet".into()).unwrap();
            assert_eq!(back.faces(), s.faces());
            assert_eq!(back.vertices(), s.vertices());
        }
    }
}
