//! Colored point clouds and the PLY subset used by PCQA databases.
//!
//! Reading accepts `ascii 1.0` and `binary_little_endian 1.0`. The vertex
//! element must carry `x`, `y`, `z`; `red`, `green`, `blue` are optional and
//! default to mid-grey. Unknown vertex properties and other elements are
//! skipped. Writing always emits binary little-endian with float32
//! coordinates and uchar colors.

use std::path::Path;

use crate::error::{Error, PlyError, Result};

pub const DEFAULT_COLOR: [u8; 3] = [128, 128, 128];
pub const CUBE_PAD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if points.len() != colors.len() {
            return Err(Error::Ply(PlyError::Header(format!(
                "{} points but {} colors",
                points.len(),
                colors.len()
            ))));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Ply(PlyError::BadValue {
                vertex: 0,
                msg: "non-finite coordinate".into(),
            }));
        }
        Ok(PointCloud { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned cube enclosing a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingCube {
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl BoundingCube {
    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|a| (p[a] as f64 - self.center[a]).abs() <= self.half_extent)
    }

    /// Full space diagonal of the cube.
    pub fn diagonal(&self) -> f64 {
        2.0 * self.half_extent * 3f64.sqrt()
    }
}

/// Cube centered on the per-axis min/max midpoint, with half extent equal to
/// the largest axis half-range enlarged by 5%. Degenerate (zero-extent)
/// clouds get half extent 1.0.
pub fn bounding_cube(cloud: &PointCloud) -> Result<BoundingCube> {
    if cloud.is_empty() {
        return Err(Error::Ply(PlyError::Header("empty cloud has no bounding cube".into())));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a] as f64);
            hi[a] = hi[a].max(p[a] as f64);
        }
    }
    let center = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
    let half_range = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max);
    let half_extent = if half_range > 0.0 {
        half_range * (1.0 + CUBE_PAD)
    } else {
        1.0
    };
    Ok(BoundingCube { center, half_extent })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarKind::I8,
            "uchar" | "uint8" => ScalarKind::U8,
            "short" | "int16" => ScalarKind::I16,
            "ushort" | "uint16" => ScalarKind::U16,
            "int" | "int32" => ScalarKind::I32,
            "uint" | "uint32" => ScalarKind::U32,
            "float" | "float32" => ScalarKind::F32,
            "double" | "float64" => ScalarKind::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarKind::I8 | ScalarKind::U8 => 1,
            ScalarKind::I16 | ScalarKind::U16 => 2,
            ScalarKind::I32 | ScalarKind::U32 | ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            ScalarKind::I8 => b[0] as i8 as f64,
            ScalarKind::U8 => b[0] as f64,
            ScalarKind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, kind: ScalarKind },
    List { count: ScalarKind, item: ScalarKind },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn header_err(msg: impl Into<String>) -> Error {
    Error::Ply(PlyError::Header(msg.into()))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if !bytes.starts_with(b"ply\n") && !bytes.starts_with(b"ply\r\n") {
        return Err(Error::Ply(PlyError::BadMagic));
    }
    let marker = b"end_header";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| header_err("missing end_header"))?;
    let mut body_offset = pos + marker.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..pos]).map_err(|_| header_err("header is not UTF-8"))?;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in text.lines().skip(1) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, v] => {
                if *v != "1.0" {
                    return Err(Error::Ply(PlyError::UnsupportedFormat(format!("{f} {v}"))));
                }
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(Error::Ply(PlyError::UnsupportedFormat(other.to_string()))),
                });
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| header_err(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, _name] => {
                let el = elements.last_mut().ok_or_else(|| header_err("property before element"))?;
                let count = ScalarKind::parse(c).ok_or_else(|| header_err(format!("unknown type `{c}`")))?;
                let item = ScalarKind::parse(i).ok_or_else(|| header_err(format!("unknown type `{i}`")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", t, name] => {
                let el = elements.last_mut().ok_or_else(|| header_err("property before element"))?;
                let kind = ScalarKind::parse(t).ok_or_else(|| header_err(format!("unknown type `{t}`")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    kind,
                });
            }
            _ => return Err(header_err(format!("unrecognized line `{line}`"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| header_err("missing format line"))?,
        elements,
        body_offset,
    })
}

/// Result of parsing a PLY document.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyDocument {
    pub cloud: PointCloud,
    /// Set when the vertex element had no color; colors were filled with
    /// [`DEFAULT_COLOR`].
    pub missing_color: bool,
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |n: &str| {
        el.props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
    };
    let coord = |n: &'static str| find(n).ok_or(Error::Ply(PlyError::MissingCoordinate(n)));
    let xyz = [coord("x")?, coord("y")?, coord("z")?];
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

fn to_color(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyDocument> {
    let header = parse_header(bytes)?;
    let vidx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err("no vertex element"))?;
    let layout = vertex_layout(&header.elements[vidx])?;
    let body = &bytes[header.body_offset..];
    let (points, colors) = match header.format {
        Format::Ascii => read_ascii(body, &header, vidx, &layout)?,
        Format::BinaryLe => read_binary(body, &header, vidx, &layout)?,
    };
    let missing_color = layout.rgb.is_none();
    Ok(PlyDocument {
        cloud: PointCloud::new(points, colors)?,
        missing_color,
    })
}

type Columns = (Vec<[f32; 3]>, Vec<[u8; 3]>);

fn read_ascii(body: &[u8], header: &Header, vidx: usize, layout: &VertexLayout) -> Result<Columns> {
    let text = std::str::from_utf8(body).map_err(|_| header_err("ascii body is not UTF-8"))?;
    let mut lines = text.split_inclusive('\n');
    let mut offset = header.body_offset;
    for el in &header.elements[..vidx] {
        for _ in 0..el.count {
            let l = lines.next().ok_or(Error::Ply(PlyError::Truncated { vertex: 1, offset }))?;
            offset += l.len();
        }
    }
    let el = &header.elements[vidx];
    let mut points = Vec::with_capacity(el.count);
    let mut colors = Vec::with_capacity(el.count);
    for v in 0..el.count {
        let line = loop {
            let l = lines.next().ok_or_else(|| Error::Ply(PlyError::Truncated { vertex: v + 1, offset }))?;
            offset += l.len();
            if !l.trim().is_empty() {
                break l;
            }
        };
        let truncated = || Error::Ply(PlyError::Truncated { vertex: v + 1, offset });
        let toks: Vec<&str> = line.split_whitespace().collect();
        let mut values = Vec::with_capacity(el.props.len());
        let mut t = 0;
        for p in &el.props {
            match p {
                Property::Scalar { .. } => {
                    let tok = toks.get(t).ok_or_else(truncated)?;
                    values.push(tok.parse::<f64>().map_err(|_| {
                        Error::Ply(PlyError::BadValue {
                            vertex: v + 1,
                            msg: format!("`{tok}` is not a number"),
                        })
                    })?);
                    t += 1;
                    continue;
                }
                Property::List { .. } => {
                    let n: usize = toks
                        .get(t)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(truncated)?;
                    t += 1 + n;
                    values.push(0.0);
                }
            }
        }
        if t > toks.len() {
            return Err(truncated());
        }
        points.push(layout.xyz.map(|i| values[i] as f32));
        colors.push(layout.rgb.map_or(DEFAULT_COLOR, |c| c.map(|i| to_color(values[i]))));
    }
    Ok((points, colors))
}

fn read_binary(body: &[u8], header: &Header, vidx: usize, layout: &VertexLayout) -> Result<Columns> {
    let mut pos = 0usize;
    let abs = |pos: usize| header.body_offset + pos;
    // skip earlier elements
    for el in &header.elements[..vidx] {
        for _ in 0..el.count {
            for p in &el.props {
                match *p {
                    Property::Scalar { kind, .. } => pos += kind.size(),
                    Property::List { count, item } => {
                        let b = body
                            .get(pos..pos + count.size())
                            .ok_or(Error::Ply(PlyError::Truncated { vertex: 1, offset: abs(pos) }))?;
                        let n = count.read(b) as usize;
                        pos += count.size() + n * item.size();
                    }
                }
            }
        }
    }
    let el = &header.elements[vidx];
    let mut points = Vec::with_capacity(el.count);
    let mut colors = Vec::with_capacity(el.count);
    let mut values = vec![0.0f64; el.props.len()];
    for v in 0..el.count {
        for (k, p) in el.props.iter().enumerate() {
            let truncated = Error::Ply(PlyError::Truncated { vertex: v + 1, offset: abs(pos) });
            match *p {
                Property::Scalar { kind, .. } => {
                    let b = body.get(pos..pos + kind.size()).ok_or(truncated)?;
                    values[k] = kind.read(b);
                    pos += kind.size();
                }
                Property::List { count, item } => {
                    let b = body.get(pos..pos + count.size()).ok_or(truncated)?;
                    let n = count.read(b) as usize;
                    pos += count.size() + n * item.size();
                    if pos > body.len() {
                        return Err(Error::Ply(PlyError::Truncated { vertex: v + 1, offset: abs(body.len()) }));
                    }
                }
            }
        }
        let p = layout.xyz.map(|i| values[i] as f32);
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::Ply(PlyError::BadValue {
                vertex: v + 1,
                msg: "non-finite coordinate".into(),
            }));
        }
        points.push(p);
        colors.push(layout.rgb.map_or(DEFAULT_COLOR, |c| c.map(|i| to_color(values[i]))));
    }
    Ok((points, colors))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_ply_document(path).map(|d| d.cloud)
}

pub fn read_ply_document(path: impl AsRef<Path>) -> Result<PlyDocument> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

fn header_text(format: &str, n: usize) -> String {
    format!(
        "ply\nformat {format} 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
}

/// Binary little-endian encoding.
pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut out = header_text("binary_little_endian", cloud.len()).into_bytes();
    out.reserve(cloud.len() * 15);
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    out
}

/// ASCII encoding; coordinates use the shortest representation that
/// round-trips the float32 value.
pub fn encode_ply_ascii(cloud: &PointCloud) -> Vec<u8> {
    let mut out = header_text("ascii", cloud.len());
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        out.push_str(&format!("{} {} {} {} {} {}\n", p[0], p[1], p[2], c[0], c[1], c[2]));
    }
    out.into_bytes()
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ply(cloud)).map_err(|e| Error::io(path, e))
}
