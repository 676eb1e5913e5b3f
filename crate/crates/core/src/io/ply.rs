//! Point clouds in the PLY subset `x, y, z` (float) and `red, green, blue`
//! (uchar), as ASCII or binary little endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::Point;

use super::png::{linear_to_srgb, srgb_to_linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn read_le(self, b: &[u8]) -> f64 {
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
    format: Format,
    count: usize,
    props: Vec<(String, Scalar)>,
    body: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let err = |m: String| Error::load(path, m);
    let mut pos = 0;
    let mut next_line = || -> Option<String> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        pos += end + 1;
        Some(String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string())
    };
    if next_line().as_deref() != Some("ply") {
        return Err(err("malformed PLY header: missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut seen_other = false;
    loop {
        let line = next_line().ok_or_else(|| err("malformed PLY header: missing end_header".into()))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(err(format!("malformed PLY header: unsupported format {other:?}"))),
                })
            }
            ["element", name, n] => {
                let n: usize = n.parse().map_err(|_| err(format!("malformed PLY header: bad element count {n:?}")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    if seen_other {
                        return Err(err("malformed PLY header: vertex must be the first element".into()));
                    }
                    count = Some(n);
                } else {
                    seen_other = true;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(err("malformed PLY header: list properties on vertices are not supported".into()))
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| err(format!("malformed PLY header: unknown type {ty:?}")))?;
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            _ => return Err(err(format!("malformed PLY header: unexpected line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| err("malformed PLY header: missing format".into()))?;
    let count = count.ok_or_else(|| err("malformed PLY header: no vertex element".into()))?;
    Ok(Header { format, count, props, body: pos })
}

/// Read a point cloud. 8-bit colors are sRGB decoded like 8-bit images.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<Vec<Point>> {
    let h = parse_header(bytes, path)?;
    let find = |name: &str| {
        h.props
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::load(path, format!("malformed PLY header: missing vertex property {name:?}")))
    };
    let xyz = [find("x")?, find("y")?, find("z")?];
    let rgb = [find("red")?, find("green")?, find("blue")?];
    if h.count == 0 {
        return Err(Error::load(path, "empty point cloud"));
    }
    let mut values = vec![0.0; h.props.len()];
    let mut points = Vec::with_capacity(h.count);
    let to_point = |values: &[f64]| {
        let color = rgb.map(|i| match h.props[i].1 {
            Scalar::U8 => srgb_to_linear(values[i] / 255.0),
            Scalar::U16 => values[i] / 65535.0,
            _ => values[i],
        });
        Point { position: xyz.map(|i| values[i]), color }
    };
    match h.format {
        Format::Ascii => {
            let text = std::str::from_utf8(&bytes[h.body..]).map_err(|_| Error::load(path, "PLY body is not text"))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for v in 0..h.count {
                let line = lines.next().ok_or_else(|| Error::load(path, format!("PLY body ends at vertex {v}")))?;
                let mut tok = line.split_whitespace();
                for (k, slot) in values.iter_mut().enumerate() {
                    let t = tok
                        .next()
                        .ok_or_else(|| Error::load(path, format!("vertex {v}: missing property {:?}", h.props[k].0)))?;
                    *slot = t.parse().map_err(|_| Error::load(path, format!("vertex {v}: bad value {t:?}")))?;
                }
                points.push(to_point(&values));
            }
        }
        Format::BinaryLe => {
            let stride: usize = h.props.iter().map(|p| p.1.size()).sum();
            let body = &bytes[h.body..];
            if body.len() < stride * h.count {
                return Err(Error::load(path, format!("PLY body holds {} bytes, expected {}", body.len(), stride * h.count)));
            }
            for rec in body.chunks_exact(stride).take(h.count) {
                let mut off = 0;
                for (k, (_, s)) in h.props.iter().enumerate() {
                    values[k] = s.read_le(&rec[off..]);
                    off += s.size();
                }
                points.push(to_point(&values));
            }
        }
    }
    Ok(points)
}

pub fn read_ply(path: &Path) -> Result<Vec<Point>> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    parse_ply(&bytes, path)
}

/// Binary little-endian encoding with float positions and sRGB uchar colors.
pub fn encode_ply(points: &[Point]) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )
    .into_bytes();
    for p in points {
        for v in p.position {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for c in p.color {
            out.push((linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0).round() as u8);
        }
    }
    out
}
