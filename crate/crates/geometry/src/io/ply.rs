//! PLY reading (ASCII and binary little/big endian) and binary little-endian
//! writing.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{GeometryError, Result};
use crate::io::atomic_write;
use crate::mesh::{PointCloud, TriMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], format: Format) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = b.try_into().expect("sized slice");
                match format {
                    Format::BinaryBigEndian => <$t>::from_be_bytes(arr) as f64,
                    _ => <$t>::from_le_bytes(arr) as f64,
                }
            }};
        }
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => num!(i16),
            ScalarType::U16 => num!(u16),
            ScalarType::I32 => num!(i32),
            ScalarType::U32 => num!(u32),
            ScalarType::F32 => num!(f32),
            ScalarType::F64 => num!(f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Property {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count: ScalarType, item: ScalarType },
}

impl Property {
    pub fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Scalar(Vec<f64>),
    List(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    pub columns: Vec<Column>,
}

impl Element {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        let i = self.properties.iter().position(|p| p.name() == name)?;
        match &self.columns[i] {
            Column::Scalar(v) => Some(v),
            Column::List(_) => None,
        }
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        let i = self.properties.iter().position(|p| p.name() == name)?;
        match &self.columns[i] {
            Column::List(v) => Some(v),
            Column::Scalar(_) => None,
        }
    }
}

/// Parsed contents of a PLY file, every value widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyFile {
    pub format: Format,
    pub comments: Vec<String>,
    pub elements: Vec<Element>,
}

impl PlyFile {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

pub fn read_ply(path: &Path) -> Result<PlyFile> {
    let file = std::fs::File::open(path).map_err(|e| GeometryError::io(path, e))?;
    parse_ply(BufReader::new(file), path)
}

pub fn parse_ply<R: BufRead>(mut reader: R, path: &Path) -> Result<PlyFile> {
    let perr = |message: String| GeometryError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut line = String::new();
    let read_line = |reader: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| GeometryError::io(path, e))?;
        if n == 0 {
            return Err(perr("unexpected end of header".into()));
        }
        Ok(())
    };
    read_line(&mut reader, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(perr("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    let mut lineno = 1;
    loop {
        read_line(&mut reader, &mut line)?;
        lineno += 1;
        let trimmed = line.trim_end_matches(['\n', '\r']);
        let mut words = trimmed.split_whitespace();
        match words.next() {
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLittleEndian,
                    Some("binary_big_endian") => Format::BinaryBigEndian,
                    other => return Err(perr(format!("line {lineno}: unknown format {other:?}"))),
                });
            }
            Some("comment") => {
                let text = trimmed.strip_prefix("comment").unwrap_or("");
                comments.push(text.strip_prefix(' ').unwrap_or(text).to_string());
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next();
                let count = words.next().and_then(|c| c.parse::<usize>().ok());
                match (name, count) {
                    (Some(name), Some(count)) => elements.push(Element {
                        name: name.to_string(),
                        count,
                        properties: Vec::new(),
                        columns: Vec::new(),
                    }),
                    _ => return Err(perr(format!("line {lineno}: malformed element line"))),
                }
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| perr(format!("line {lineno}: property before any element")))?;
                let words: Vec<&str> = words.collect();
                let prop = match words.as_slice() {
                    ["list", count, item, name] => Property::List {
                        name: name.to_string(),
                        count: ScalarType::parse(count)
                            .ok_or_else(|| perr(format!("line {lineno}: unknown type {count}")))?,
                        item: ScalarType::parse(item)
                            .ok_or_else(|| perr(format!("line {lineno}: unknown type {item}")))?,
                    },
                    [ty, name] => Property::Scalar {
                        name: name.to_string(),
                        ty: ScalarType::parse(ty)
                            .ok_or_else(|| perr(format!("line {lineno}: unknown type {ty}")))?,
                    },
                    _ => return Err(perr(format!("line {lineno}: malformed property line"))),
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            None => {}
            Some(other) => return Err(perr(format!("line {lineno}: unexpected keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| perr("header has no format line".into()))?;

    for element in &mut elements {
        element.columns = element
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar { .. } => Column::Scalar(Vec::with_capacity(element.count)),
                Property::List { .. } => Column::List(Vec::with_capacity(element.count)),
            })
            .collect();
    }
    match format {
        Format::Ascii => read_ascii_body(reader, &mut elements, &perr)?,
        _ => read_binary_body(reader, &mut elements, format, &perr)?,
    }
    Ok(PlyFile {
        format,
        comments,
        elements,
    })
}

fn read_ascii_body<R: BufRead>(
    reader: R,
    elements: &mut [Element],
    perr: &dyn Fn(String) -> GeometryError,
) -> Result<()> {
    let mut lines = reader.lines();
    for element in elements.iter_mut() {
        for row in 0..element.count {
            let line = lines
                .next()
                .ok_or_else(|| perr(format!("{} row {row}: unexpected end of data", element.name)))?
                .map_err(|e| perr(e.to_string()))?;
            let mut values = line.split_whitespace().map(|w| {
                w.parse::<f64>()
                    .map_err(|_| perr(format!("{} row {row}: bad number '{w}'", element.name)))
            });
            let mut next = || {
                values
                    .next()
                    .unwrap_or_else(|| Err(perr(format!("{} row {row}: too few values", element.name))))
            };
            for (prop, column) in element.properties.iter().zip(element.columns.iter_mut()) {
                match (prop, column) {
                    (Property::Scalar { .. }, Column::Scalar(col)) => col.push(next()?),
                    (Property::List { .. }, Column::List(col)) => {
                        let n = next()?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(perr(format!("{} row {row}: bad list length", element.name)));
                        }
                        let items = (0..n as usize).map(|_| next()).collect::<Result<Vec<_>>>()?;
                        col.push(items);
                    }
                    _ => unreachable!("columns mirror properties"),
                }
            }
        }
    }
    Ok(())
}

fn read_binary_body<R: Read>(
    mut reader: R,
    elements: &mut [Element],
    format: Format,
    perr: &dyn Fn(String) -> GeometryError,
) -> Result<()> {
    let mut buf = [0u8; 8];
    let mut read = |ty: ScalarType, what: &str| -> Result<f64> {
        let b = &mut buf[..ty.size()];
        reader
            .read_exact(b)
            .map_err(|_| perr(format!("{what}: unexpected end of data")))?;
        Ok(ty.decode(b, format))
    };
    for element in elements.iter_mut() {
        for _ in 0..element.count {
            for (prop, column) in element.properties.iter().zip(element.columns.iter_mut()) {
                match (prop, column) {
                    (Property::Scalar { ty, .. }, Column::Scalar(col)) => {
                        col.push(read(*ty, &element.name)?)
                    }
                    (Property::List { count, item, .. }, Column::List(col)) => {
                        let n = read(*count, &element.name)?;
                        if !(n >= 0.0) {
                            return Err(perr(format!("{}: negative list length", element.name)));
                        }
                        let items = (0..n as usize)
                            .map(|_| read(*item, &element.name))
                            .collect::<Result<Vec<_>>>()?;
                        col.push(items);
                    }
                    _ => unreachable!("columns mirror properties"),
                }
            }
        }
    }
    Ok(())
}

fn vertex_positions(ply: &PlyFile, path: &Path) -> Result<Vec<Point3<f64>>> {
    let perr = |message: String| GeometryError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let vertex = ply
        .element("vertex")
        .ok_or_else(|| perr("no vertex element".into()))?;
    let coord = |name: &str| {
        vertex
            .scalar(name)
            .ok_or_else(|| perr(format!("vertex element lacks scalar property '{name}'")))
    };
    let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
    Ok((0..vertex.count)
        .map(|i| Point3::new(x[i], y[i], z[i]))
        .collect())
}

/// Triangle mesh from the `vertex` and `face` elements.
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let ply = read_ply(path)?;
    let perr = |message: String| GeometryError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let vertices = vertex_positions(&ply, path)?;
    let face = ply.element("face").ok_or_else(|| perr("no face element".into()))?;
    let lists = face
        .list("vertex_indices")
        .or_else(|| face.list("vertex_index"))
        .ok_or_else(|| perr("face element lacks a vertex_indices list".into()))?;
    let mut faces = Vec::with_capacity(lists.len());
    for (fi, l) in lists.iter().enumerate() {
        if l.len() != 3 {
            return Err(perr(format!("face {fi} has {} vertices; only triangles are accepted", l.len())));
        }
        if l.iter().any(|&v| v < 0.0 || v > u32::MAX as f64) {
            return Err(perr(format!("face {fi} has an out-of-range index")));
        }
        faces.push([l[0] as u32, l[1] as u32, l[2] as u32]);
    }
    TriMesh::new(vertices, faces).map_err(|e| perr(e.to_string()))
}

/// Points with normals when the vertex element carries `nx, ny, nz`.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let ply = read_ply(path)?;
    let points = vertex_positions(&ply, path)?;
    let vertex = ply.element("vertex").expect("checked above");
    let cloud = match (vertex.scalar("nx"), vertex.scalar("ny"), vertex.scalar("nz")) {
        (Some(nx), Some(ny), Some(nz)) => PointCloud {
            points,
            normals: Some(
                (0..vertex.count)
                    .map(|i| Vector3::new(nx[i], ny[i], nz[i]))
                    .collect(),
            ),
        },
        _ => PointCloud::new(points),
    };
    cloud.validate().map_err(|e| GeometryError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(cloud)
}

fn header(comments: &[String], elements: &[(&str, usize, &[&str])]) -> Vec<u8> {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        h.push_str("comment ");
        h.push_str(&c.replace('\n', " "));
        h.push('\n');
    }
    for (name, count, props) in elements {
        h.push_str(&format!("element {name} {count}\n"));
        for p in *props {
            h.push_str("property ");
            h.push_str(p);
            h.push('\n');
        }
    }
    h.push_str("end_header\n");
    h.into_bytes()
}

/// Binary little-endian mesh with double-precision vertices.
pub fn encode_mesh(mesh: &TriMesh, comments: &[String]) -> Vec<u8> {
    let mut out = header(
        comments,
        &[
            ("vertex", mesh.vertices().len(), &["double x", "double y", "double z"]),
            ("face", mesh.faces().len(), &["list uchar uint vertex_indices"]),
        ],
    );
    out.reserve(mesh.vertices().len() * 24 + mesh.faces().len() * 13);
    for v in mesh.vertices() {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in mesh.faces() {
        out.push(3);
        for i in f {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

/// Binary little-endian cloud, `x y z nx ny nz` as 32-bit floats. A cloud
/// without normals is written with zero normals.
pub fn encode_cloud(cloud: &PointCloud, comments: &[String]) -> Vec<u8> {
    let mut out = header(
        comments,
        &[(
            "vertex",
            cloud.len(),
            &["float x", "float y", "float z", "float nx", "float ny", "float nz"],
        )],
    );
    out.reserve(cloud.len() * 24);
    for (i, p) in cloud.points.iter().enumerate() {
        let n = cloud.normals.as_ref().map_or(Vector3::zeros(), |ns| ns[i]);
        for c in [p.x, p.y, p.z, n.x, n.y, n.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

/// Binary little-endian points plus index pairs, as `vertex` and `edge`
/// elements.
pub fn encode_points_edges(points: &[Point3<f64>], edges: &[[u32; 2]], comments: &[String]) -> Vec<u8> {
    let mut out = header(
        comments,
        &[
            ("vertex", points.len(), &["double x", "double y", "double z"]),
            ("edge", edges.len(), &["int vertex1", "int vertex2"]),
        ],
    );
    for p in points {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for e in edges {
        for i in e {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    out
}

pub fn write_mesh(path: &Path, mesh: &TriMesh, comments: &[String]) -> Result<()> {
    atomic_write(path, &encode_mesh(mesh, comments))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, comments: &[String]) -> Result<()> {
    atomic_write(path, &encode_cloud(cloud, comments))
}

pub fn write_points_edges(
    path: &Path,
    points: &[Point3<f64>],
    edges: &[[u32; 2]],
    comments: &[String],
) -> Result<()> {
    atomic_write(path, &encode_points_edges(points, edges, comments))
}
