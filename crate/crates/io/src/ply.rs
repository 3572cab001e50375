//! PLY point files for Gaussian sets.
//!
//! One `vertex` element with the properties `x y z red green blue scale_0..2
//! rot_0..3 opacity`. Scales are stored as logarithms and opacity as a logit,
//! following the usual splatting export layout; rotations are `w x y z`.
//! Colors written as floats are in `[0, 1]`; `uchar` colors are divided by 255
//! on read.

use std::path::Path;

use jga_core::{Cube, GaussianAttributes, GaussianSet};

use crate::{read_file, write_file, IoError, Reader};

pub const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "red", "green", "blue", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    BinaryLittleEndian,
    Ascii,
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    /// An ASCII value as the declared type stores it.
    fn coerce(self, x: f64) -> f64 {
        match self {
            Self::F32 => x as f32 as f64,
            _ => x,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    format: PlyFormat,
    count: usize,
    // (slot in PROPERTIES, type)
    props: Vec<(usize, Scalar)>,
    body: usize,
}

fn malformed(offset: usize, message: impl Into<String>) -> IoError {
    IoError::Malformed {
        what: "PLY header",
        offset,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    let mut offset = 0;
    let mut format = None;
    let mut count = None;
    let mut props: Vec<(usize, Scalar)> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let end = rest.iter().position(|b| *b == b'\n').ok_or(IoError::Truncated {
            what: "PLY header",
            offset,
            needed: 1,
            available: rest.len(),
        })?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| malformed(offset, "header is not UTF-8"))?
            .trim_end_matches('\r');
        let line_start = offset;
        offset += end + 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        if first {
            if line != "ply" {
                return Err(malformed(line_start, "missing `ply` magic"));
            }
            first = false;
            continue;
        }
        match words.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, "1.0"] => {
                format = Some(match *f {
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "ascii" => PlyFormat::Ascii,
                    other => return Err(malformed(line_start, format!("unsupported format `{other}`"))),
                });
            }
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(malformed(line_start, "duplicate vertex element"));
                }
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| malformed(line_start, format!("bad vertex count `{n}`")))?,
                );
            }
            ["element", name, ..] => {
                return Err(malformed(line_start, format!("unsupported element `{name}`")));
            }
            ["property", "list", ..] => {
                return Err(malformed(line_start, "list properties are not supported"));
            }
            ["property", ty, name] => {
                if count.is_none() {
                    return Err(malformed(line_start, "property before element"));
                }
                let ty = Scalar::parse(ty).ok_or_else(|| malformed(line_start, format!("unknown type `{ty}`")))?;
                let slot = PROPERTIES
                    .iter()
                    .position(|p| p == name)
                    .ok_or_else(|| IoError::UnknownProperty {
                        name: name.to_string(),
                        offset: line_start,
                    })?;
                if props.iter().any(|(s, _)| *s == slot) {
                    return Err(malformed(line_start, format!("duplicate property `{name}`")));
                }
                props.push((slot, ty));
            }
            ["end_header"] => break,
            _ => return Err(malformed(line_start, format!("unexpected header line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| malformed(offset, "missing format line"))?;
    let count = count.ok_or_else(|| malformed(offset, "missing vertex element"))?;
    if let Some(missing) = (0..PROPERTIES.len()).find(|s| !props.iter().any(|(p, _)| p == s)) {
        return Err(malformed(offset, format!("missing property `{}`", PROPERTIES[missing])));
    }
    Ok(Header {
        format,
        count,
        props,
        body: offset,
    })
}

fn to_gaussian(values: &[f64; 14]) -> GaussianAttributes {
    GaussianAttributes {
        position: [values[0], values[1], values[2]],
        color: [values[3], values[4], values[5]],
        log_scale: [values[6], values[7], values[8]],
        rotation: [values[9], values[10], values[11], values[12]],
        opacity_logit: values[13],
    }
}

fn color_value(slot: usize, ty: Scalar, v: f64) -> f64 {
    if (3..6).contains(&slot) && !ty.is_float() {
        v / 255.0
    } else {
        v
    }
}

/// Parses a PLY file from memory.
pub fn parse_ply(bytes: &[u8], bounds: Cube) -> Result<GaussianSet, IoError> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body..];
    let mut gaussians = Vec::new();
    match header.format {
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = header.props.iter().map(|(_, t)| t.size()).sum();
            let needed = (header.count as u64).saturating_mul(stride as u64);
            if (body.len() as u64) < needed {
                return Err(IoError::Truncated {
                    what: "PLY vertex data",
                    offset: header.body,
                    needed,
                    available: body.len(),
                });
            }
            let mut r = Reader::new(bytes, "PLY vertex data");
            r.take(header.body)?;
            gaussians.reserve(header.count);
            for _ in 0..header.count {
                let mut values = [0.0; 14];
                for &(slot, ty) in &header.props {
                    values[slot] = color_value(slot, ty, ty.decode(r.take(ty.size())?));
                }
                gaussians.push(to_gaussian(&values));
            }
            r.finish()?;
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|e| IoError::Malformed {
                what: "PLY vertex data",
                offset: header.body + e.valid_up_to(),
                message: "body is not UTF-8".into(),
            })?;
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            let line_offset = |idx: usize| header.body + text.lines().take(idx).map(|l| l.len() + 1).sum::<usize>();
            for v in 0..header.count {
                let (idx, line) = lines.next().ok_or_else(|| IoError::Truncated {
                    what: "PLY vertex data",
                    offset: bytes.len(),
                    needed: (header.count - v) as u64,
                    available: 0,
                })?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != header.props.len() {
                    return Err(IoError::Malformed {
                        what: "PLY vertex data",
                        offset: line_offset(idx),
                        message: format!(
                            "vertex {v} has {} values, expected {}",
                            fields.len(),
                            header.props.len()
                        ),
                    });
                }
                let mut values = [0.0; 14];
                for (field, &(slot, ty)) in fields.iter().zip(&header.props) {
                    let x: f64 = field.parse().map_err(|_| IoError::Malformed {
                        what: "PLY vertex data",
                        offset: line_offset(idx),
                        message: format!("bad number `{field}`"),
                    })?;
                    values[slot] = color_value(slot, ty, ty.coerce(x));
                }
                gaussians.push(to_gaussian(&values));
            }
            if let Some((idx, _)) = lines.next() {
                let offset = line_offset(idx);
                return Err(IoError::Trailing {
                    what: "PLY vertex data",
                    offset,
                    extra: bytes.len() - offset,
                });
            }
        }
    }
    Ok(GaussianSet::new(gaussians, bounds)?)
}

fn flat(g: &GaussianAttributes) -> [f64; 14] {
    let mut v = [0.0; 14];
    v[0..3].copy_from_slice(&g.position);
    v[3..6].copy_from_slice(&g.color);
    v[6..9].copy_from_slice(&g.log_scale);
    v[9..13].copy_from_slice(&g.rotation);
    v[13] = g.opacity_logit;
    v
}

/// Serializes with 32-bit float properties.
pub fn encode_ply(set: &GaussianSet, format: PlyFormat) -> Vec<u8> {
    let name = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    let mut out = format!("ply\nformat {name} 1.0\nelement vertex {}\n", set.len()).into_bytes();
    for p in PROPERTIES {
        out.extend_from_slice(format!("property float {p}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for g in &set.gaussians {
        let v = flat(g);
        match format {
            PlyFormat::BinaryLittleEndian => {
                for x in v {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            PlyFormat::Ascii => {
                let line: Vec<String> = v.iter().map(|x| format!("{}", *x as f32)).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

pub fn read_ply(path: &Path, bounds: Cube) -> Result<GaussianSet, IoError> {
    parse_ply(&read_file(path)?, bounds)
}

pub fn write_ply(path: &Path, set: &GaussianSet, format: PlyFormat) -> Result<(), IoError> {
    write_file(path, &encode_ply(set, format))
}
