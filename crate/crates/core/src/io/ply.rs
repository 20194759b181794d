//! Minimal PLY support: ASCII and binary little-endian, vertex element only.
//!
//! Colors map to features divided by 255. Output always stores coordinates
//! as doubles and colors as `uchar`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Point3, PointCloud};

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
    fn parse(name: &str) -> Option<Scalar> {
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

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug)]
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

fn header_err(msg: impl Into<String>) -> Error {
    Error::UnsupportedFormat(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| header_err("missing end_header"))?;
    let mut body_offset = end + END.len();
    // Header terminator is "\n" or "\r\n".
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| header_err("header is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(header_err("missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => return Err(header_err(format!("PLY format {other}"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before element"))?;
                let count = Scalar::parse(count).ok_or_else(|| header_err(format!("type {count}")))?;
                let item = Scalar::parse(item).ok_or_else(|| header_err(format!("type {item}")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| header_err(format!("type {ty}")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(header_err(format!("header line {line:?}"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| header_err("missing format line"))?,
        elements,
        body_offset,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    label: Option<usize>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |want: &str| {
        el.props.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
    };
    let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) else {
        return Err(Error::MissingVertexElement);
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let label = find("label").or_else(|| find("class"));
    Ok(VertexLayout {
        xyz: [x, y, z],
        rgb,
        label,
    })
}

/// Reads the vertex element of a PLY file.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vidx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or(Error::MissingVertexElement)?;
    let vertex = &header.elements[vidx];
    let layout = vertex_layout(vertex)?;
    let Some(rgb) = layout.rgb else {
        return Err(Error::NoFeatures);
    };
    let body = &bytes[header.body_offset..];

    let rows: Vec<Vec<f64>> = match header.encoding {
        PlyEncoding::Ascii => read_ascii_rows(body, &header.elements, vidx)?,
        PlyEncoding::BinaryLittleEndian => read_binary_rows(body, &header.elements, vidx)?,
    };

    let mut coords: Vec<Point3> = Vec::with_capacity(rows.len());
    let mut feats = Vec::with_capacity(rows.len());
    let mut labels = layout.label.map(|_| Vec::with_capacity(rows.len()));
    for (i, r) in rows.iter().enumerate() {
        coords.push([r[layout.xyz[0]], r[layout.xyz[1]], r[layout.xyz[2]]]);
        feats.push(rgb.iter().map(|&c| r[c] / 255.0).collect());
        if let (Some(l), Some(col)) = (labels.as_mut(), layout.label) {
            let v = r[col];
            if !(v >= 0.0) || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("label {v} is not a nonnegative integer"),
                });
            }
            l.push(v as u32);
        }
    }
    PointCloud::new(coords, feats, labels)
}

fn read_ascii_rows(body: &[u8], elements: &[Element], vidx: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(body).map_err(|_| header_err("ASCII body is not UTF-8"))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    // Rows of preceding elements are skipped whole; one element row per line.
    for el in &elements[..vidx] {
        for _ in 0..el.count {
            lines.next().ok_or_else(|| header_err("truncated ASCII body"))?;
        }
    }
    let vertex = &elements[vidx];
    let mut rows = Vec::with_capacity(vertex.count.min(body.len()));
    for _ in 0..vertex.count {
        let (lineno, line) = lines.next().ok_or_else(|| header_err("truncated ASCII body"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let mut row = Vec::with_capacity(vertex.props.len());
        let mut t = 0;
        for p in &vertex.props {
            let tok = |t: usize| -> Result<f64> {
                let s = toks.get(t).ok_or(Error::TokenCount {
                    line: lineno + 1,
                    expected: t + 1,
                    found: toks.len(),
                })?;
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: format!("{s:?}: {e}"),
                })
            };
            match p {
                Property::Scalar { .. } => {
                    row.push(tok(t)?);
                    t += 1;
                }
                Property::List { .. } => {
                    let n = tok(t)? as usize;
                    t += 1 + n;
                    row.push(f64::NAN);
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_binary_rows(body: &[u8], elements: &[Element], vidx: usize) -> Result<Vec<Vec<f64>>> {
    let truncated = || header_err("truncated binary body");
    let mut pos = 0usize;
    let mut read_row = |el: &Element, keep: bool| -> Result<Option<Vec<f64>>> {
        let mut row = keep.then(|| Vec::with_capacity(el.props.len()));
        for p in &el.props {
            match *p {
                Property::Scalar { ty, .. } => {
                    let b = body.get(pos..pos + ty.size()).ok_or_else(truncated)?;
                    if let Some(r) = row.as_mut() {
                        r.push(ty.read_le(b));
                    }
                    pos += ty.size();
                }
                Property::List { count, item } => {
                    let b = body.get(pos..pos + count.size()).ok_or_else(truncated)?;
                    let n = count.read_le(b) as usize;
                    pos += count.size() + n * item.size();
                    if let Some(r) = row.as_mut() {
                        r.push(f64::NAN);
                    }
                }
            }
        }
        Ok(row)
    };
    for el in &elements[..vidx] {
        for _ in 0..el.count {
            read_row(el, false)?;
        }
    }
    let vertex = &elements[vidx];
    let min_row: usize = vertex
        .props
        .iter()
        .map(|p| match p {
            Property::Scalar { ty, .. } => ty.size(),
            Property::List { count, .. } => count.size(),
        })
        .sum();
    // Declared counts larger than the body can hold are rejected before allocating.
    if vertex.count.saturating_mul(min_row.max(1)) > body.len() {
        return Err(truncated());
    }
    let mut rows = Vec::with_capacity(vertex.count);
    for _ in 0..vertex.count {
        rows.push(read_row(vertex, true)?.expect("row kept"));
    }
    Ok(rows)
}

fn color_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a PLY with double coordinates, `uchar` colors and, when present,
/// a `uint` label. Requires exactly three feature channels.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(cloud, encoding)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ply(cloud: &PointCloud, encoding: PlyEncoding) -> Result<Vec<u8>> {
    if cloud.feature_dim() != 3 {
        return Err(Error::UnsupportedFormat(format!(
            "PLY output stores RGB; cloud has {} feature channels",
            cloud.feature_dim()
        )));
    }
    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(header, "property double {axis}");
    }
    for c in ["red", "green", "blue"] {
        let _ = writeln!(header, "property uchar {c}");
    }
    if cloud.labels().is_some() {
        header.push_str("property uint label\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for i in 0..cloud.len() {
        let c = cloud.coords()[i];
        let f = cloud.feature(i);
        let rgb = [color_byte(f[0]), color_byte(f[1]), color_byte(f[2])];
        let label = cloud.labels().map(|l| l[i]);
        match encoding {
            PlyEncoding::Ascii => {
                let mut line = format!("{} {} {} {} {} {}", c[0], c[1], c[2], rgb[0], rgb[1], rgb[2]);
                if let Some(l) = label {
                    let _ = write!(line, " {l}");
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in c {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&rgb);
                if let Some(l) = label {
                    out.extend_from_slice(&l.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}
