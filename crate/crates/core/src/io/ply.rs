use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{read_file, write_atomic, IoError};
use crate::eval::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn fmt_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str, IoError> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| fmt_err("PLY header is not terminated by end_header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map(|s| s.trim_end_matches('\r')).map_err(|_| fmt_err("PLY header is not valid UTF-8"))
    };
    if next_line()?.trim() != "ply" {
        return Err(fmt_err("missing 'ply' magic line"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some(other) => return Err(fmt_err(format!("unsupported PLY format '{other}'"))),
                    None => return Err(fmt_err("PLY format line lacks an encoding")),
                });
                if toks.get(2).copied() != Some("1.0") {
                    return Err(fmt_err(format!("unsupported PLY version '{}'", toks.get(2).unwrap_or(&""))));
                }
            }
            Some("element") => {
                let (Some(name), Some(count)) = (toks.get(1), toks.get(2)) else {
                    return Err(fmt_err(format!("malformed element line '{line}'")));
                };
                let count = count.parse().map_err(|_| fmt_err(format!("element '{name}': bad count '{count}'")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| fmt_err("property declared before any element"))?;
                let prop = if toks.get(1).copied() == Some("list") {
                    let (Some(ct), Some(it), Some(name)) = (toks.get(2), toks.get(3), toks.get(4)) else {
                        return Err(fmt_err(format!("element '{}': malformed list property", el.name)));
                    };
                    let bad = |t: &str| fmt_err(format!("element '{}', property '{name}': unsupported type '{t}'", el.name));
                    let count = Scalar::parse(ct).ok_or_else(|| bad(ct))?;
                    if matches!(count, Scalar::F32 | Scalar::F64) {
                        return Err(bad(ct));
                    }
                    Property::List { count, item: Scalar::parse(it).ok_or_else(|| bad(it))? }
                } else {
                    let (Some(ty), Some(name)) = (toks.get(1), toks.get(2)) else {
                        return Err(fmt_err(format!("element '{}': malformed property line", el.name)));
                    };
                    let ty = Scalar::parse(ty).ok_or_else(|| {
                        fmt_err(format!("element '{}', property '{name}': unsupported type '{ty}'", el.name))
                    })?;
                    Property::Scalar { name: name.to_string(), ty }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(fmt_err(format!("unknown PLY header keyword '{other}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| fmt_err("PLY header has no format line"))?;
    Ok(Header { encoding, elements, body_offset: pos })
}

/// Column of x, y and z in the vertex element.
fn xyz_columns(el: &Element) -> Result<[usize; 3], IoError> {
    let mut cols = [usize::MAX; 3];
    for (i, p) in el.props.iter().enumerate() {
        if let Property::Scalar { name, ty } = p {
            if let Some(axis) = ["x", "y", "z"].iter().position(|a| a == name) {
                if !matches!(ty, Scalar::F32 | Scalar::F64) {
                    return Err(fmt_err(format!("element 'vertex', property '{name}': coordinates must be float or double")));
                }
                cols[axis] = i;
            }
        }
    }
    for (axis, c) in cols.iter().enumerate() {
        if *c == usize::MAX {
            return Err(fmt_err(format!("element 'vertex' lacks property '{}'", ["x", "y", "z"][axis])));
        }
    }
    Ok(cols)
}

/// Reads the vertex coordinates of a PLY file; other properties and
/// elements are parsed and skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<Vec<Point>, IoError> {
    let header = parse_header(bytes)?;
    let vertex = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| fmt_err("PLY file has no 'vertex' element"))?;
    let cols = xyz_columns(&header.elements[vertex])?;
    let body = &bytes[header.body_offset..];
    match header.encoding {
        PlyEncoding::Ascii => parse_ascii_body(body, &header.elements, vertex, cols),
        PlyEncoding::BinaryLittleEndian => parse_binary_body(body, &header.elements, vertex, cols),
    }
}

fn parse_ascii_body(body: &[u8], elements: &[Element], vertex: usize, cols: [usize; 3]) -> Result<Vec<Point>, IoError> {
    let text = std::str::from_utf8(body).map_err(|_| fmt_err("ASCII PLY body is not valid UTF-8"))?;
    // A cut inside the last number would still parse, so rows must be
    // newline-terminated.
    if !text.trim_end_matches([' ', '\t']).is_empty() && !text.trim_end_matches([' ', '\t']).ends_with('\n') {
        return Err(fmt_err("ASCII PLY body does not end with a newline; the file looks truncated"));
    }
    let mut toks = text.split_whitespace();
    let mut points = Vec::new();
    for (ei, el) in elements.iter().enumerate() {
        if ei == vertex {
            points.reserve(el.count);
        }
        for row in 0..el.count {
            let mut xyz = [0.0; 3];
            for (pi, p) in el.props.iter().enumerate() {
                let mut next = |what: &str, ty: Scalar| -> Result<f64, IoError> {
                    let t = toks.next().ok_or_else(|| fmt_err(format!("element '{}' row {row}: file ends early", el.name)))?;
                    let bad = || fmt_err(format!("element '{}' row {row}, property '{what}': bad value '{t}'", el.name));
                    // Single-precision values are parsed as such so that they
                    // read back exactly as written.
                    if ty == Scalar::F32 {
                        t.parse::<f32>().map(f64::from).map_err(|_| bad())
                    } else {
                        t.parse::<f64>().map_err(|_| bad())
                    }
                };
                match p {
                    Property::Scalar { name, ty } => {
                        let v = next(name, *ty)?;
                        if ei == vertex {
                            if let Some(axis) = cols.iter().position(|&c| c == pi) {
                                xyz[axis] = v;
                            }
                        }
                    }
                    Property::List { count, item } => {
                        let n = next("list count", *count)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(fmt_err(format!("element '{}' row {row}: bad list count {n}", el.name)));
                        }
                        for _ in 0..n as usize {
                            next("list item", *item)?;
                        }
                    }
                }
            }
            if ei == vertex {
                points.push(Vector3::from(xyz));
            }
        }
    }
    if toks.next().is_some() {
        return Err(fmt_err("ASCII PLY body has trailing data"));
    }
    Ok(points)
}

fn parse_binary_body(body: &[u8], elements: &[Element], vertex: usize, cols: [usize; 3]) -> Result<Vec<Point>, IoError> {
    let mut pos = 0usize;
    let mut take = |n: usize, el: &str| -> Result<&[u8], IoError> {
        if pos + n > body.len() {
            return Err(fmt_err(format!("element '{el}': file ends early")));
        }
        let s = &body[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut points = Vec::new();
    for (ei, el) in elements.iter().enumerate() {
        if ei == vertex {
            points.reserve(el.count.min(body.len() / 12 + 1));
        }
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for (pi, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar { ty, .. } => {
                        let b = take(ty.size(), &el.name)?;
                        if ei == vertex {
                            if let Some(axis) = cols.iter().position(|&c| c == pi) {
                                xyz[axis] = ty.read_le(b);
                            }
                        }
                    }
                    Property::List { count, item } => {
                        let n = count.read_le(take(count.size(), &el.name)?);
                        if n < 0.0 {
                            return Err(fmt_err(format!("element '{}': negative list count", el.name)));
                        }
                        take(n as usize * item.size(), &el.name)?;
                    }
                }
            }
            if ei == vertex {
                points.push(Vector3::from(xyz));
            }
        }
    }
    if pos != body.len() {
        return Err(fmt_err(format!("binary PLY body has {} trailing bytes", body.len() - pos)));
    }
    Ok(points)
}

pub fn load_pointcloud(path: &Path) -> Result<Vec<Point>, IoError> {
    parse_ply(&read_file(path)?).map_err(|e| e.in_file(path))
}

/// Writes x/y/z as 32-bit floats, so coordinates are rounded to `f32`.
pub fn encode_ply(points: &[Point], encoding: PlyEncoding) -> Vec<u8> {
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )
    .into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut s = String::with_capacity(points.len() * 30);
            for p in points {
                let _ = writeln!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            for p in points {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn save_pointcloud(path: &Path, points: &[Point], encoding: PlyEncoding) -> Result<(), IoError> {
    write_atomic(path, &encode_ply(points, encoding))
}
