use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::Point3;

use crate::error::{GeometryError, Result};
use crate::mesh::TriMesh;

/// Wavefront OBJ with triangular faces. Texture and normal indices in face
/// tokens are ignored; negative (relative) indices are resolved.
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| GeometryError::io(path, e))?;
    parse_obj(BufReader::new(file), path)
}

pub fn parse_obj<R: BufRead>(reader: R, path: &Path) -> Result<TriMesh> {
    let perr = |line: usize, message: String| GeometryError::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| GeometryError::io(path, e))?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("v") => {
                let c: Vec<f64> = words
                    .take(3)
                    .map(|w| w.parse::<f64>().map_err(|_| perr(lineno, format!("bad coordinate '{w}'"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(perr(lineno, "vertex needs three coordinates".into()));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = words
                    .map(|w| {
                        let head = w.split('/').next().unwrap_or("");
                        let v: i64 = head
                            .parse()
                            .map_err(|_| perr(lineno, format!("bad face index '{w}'")))?;
                        let resolved = match v {
                            v if v > 0 => v - 1,
                            v if v < 0 => vertices.len() as i64 + v,
                            _ => return Err(perr(lineno, "face index 0 is invalid".into())),
                        };
                        u32::try_from(resolved)
                            .map_err(|_| perr(lineno, format!("face index '{w}' is out of range")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(perr(
                        lineno,
                        format!("face has {} vertices; only triangles are accepted", idx.len()),
                    ));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces).map_err(|e| GeometryError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
