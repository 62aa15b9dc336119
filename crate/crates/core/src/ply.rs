//! PLY persistence for Gaussian splats.
//!
//! The standard layout is binary little-endian with the properties
//! `x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3`,
//! which common splat viewers load directly. Normals are written as zeros.
//! `f_rest` is channel-major: `f_rest_{c*15 + k-1}` holds basis `k`, channel `c`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gaussian::{EmbeddedGaussian, GaussianParams};
use crate::sh::SH_BASIS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
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

    fn write_le(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v as i8 as u8),
            Self::U8 => out.push(v as u8),
            Self::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
}

/// Columns of the `vertex` element, keyed by property name.
#[derive(Debug, Clone, Default)]
pub struct VertexTable {
    pub count: usize,
    pub columns: HashMap<String, Vec<f64>>,
}

impl VertexTable {
    fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(|c| c.as_slice())
            .ok_or_else(|| Error::Ply(format!("missing property {name:?}")))
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<(Format, Vec<Element>)> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io("reading ply header", e))?;
        if n == 0 {
            return Err(Error::Ply("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(reader)? != "ply" {
        return Err(Error::Ply("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(reader)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => return Err(Error::Ply(format!("unsupported format {other:?}"))),
                });
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::Ply(format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ..] => {
                return Err(Error::Ply("list properties are not supported".into()));
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::Ply(format!("unknown property type {ty:?}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Ply("property before any element".into()))?;
                el.properties.push((name.to_string(), ty));
            }
            ["end_header"] => break,
            [] => {}
            _ => return Err(Error::Ply(format!("malformed header line {l:?}"))),
        }
    }
    let format = format.ok_or_else(|| Error::Ply("missing format line".into()))?;
    Ok((format, elements))
}

/// Read the `vertex` element of a PLY file.
pub fn read_vertex_table(path: impl AsRef<Path>) -> Result<VertexTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = BufReader::new(file);
    let (format, elements) = read_header(&mut reader)?;
    let mut table = None;
    let mut ascii_lines = None;
    for el in &elements {
        let rows = match format {
            Format::BinaryLittleEndian => {
                let stride: usize = el.properties.iter().map(|(_, t)| t.size()).sum();
                let mut buf = vec![0u8; stride * el.count];
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Ply(format!("truncated data for element {:?}", el.name)))?;
                if el.name != "vertex" {
                    continue;
                }
                let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(el.count); el.properties.len()];
                for row in buf.chunks_exact(stride.max(1)).take(el.count) {
                    let mut off = 0;
                    for (j, (_, ty)) in el.properties.iter().enumerate() {
                        cols[j].push(ty.read_le(&row[off..off + ty.size()]));
                        off += ty.size();
                    }
                }
                cols
            }
            Format::Ascii => {
                let lines = ascii_lines.get_or_insert_with(|| {
                    let mut rest = String::new();
                    let _ = reader.read_to_string(&mut rest);
                    rest.lines().map(str::to_string).collect::<Vec<_>>().into_iter()
                });
                let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(el.count); el.properties.len()];
                for _ in 0..el.count {
                    let l = lines
                        .next()
                        .ok_or_else(|| Error::Ply(format!("truncated data for element {:?}", el.name)))?;
                    let vals: Vec<f64> = l
                        .split_whitespace()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Ply(format!("bad ascii row {l:?}")))?;
                    if vals.len() != el.properties.len() {
                        return Err(Error::Ply(format!("ascii row has {} values", vals.len())));
                    }
                    for (j, v) in vals.into_iter().enumerate() {
                        cols[j].push(v);
                    }
                }
                if el.name != "vertex" {
                    continue;
                }
                cols
            }
        };
        let columns = el
            .properties
            .iter()
            .map(|(n, _)| n.clone())
            .zip(rows)
            .collect();
        table = Some(VertexTable {
            count: el.count,
            columns,
        });
        break;
    }
    table.ok_or_else(|| Error::Ply("no vertex element".into()))
}

/// Write a binary little-endian PLY with one `vertex` element.
pub fn write_vertex_table(
    path: impl AsRef<Path>,
    properties: &[(String, ScalarType)],
    rows: usize,
    mut row_values: impl FnMut(usize, &mut Vec<f64>),
) -> Result<()> {
    let path = path.as_ref();
    let file =
        fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {rows}\n"));
    for (name, ty) in properties {
        header.push_str(&format!("property {} {}\n", ty.name(), name));
    }
    header.push_str("end_header\n");
    let io = |e| Error::io(format!("writing {}", path.display()), e);
    w.write_all(header.as_bytes()).map_err(io)?;
    let mut values = Vec::with_capacity(properties.len());
    let mut bytes = Vec::new();
    for i in 0..rows {
        values.clear();
        bytes.clear();
        row_values(i, &mut values);
        debug_assert_eq!(values.len(), properties.len());
        for (v, (_, ty)) in values.iter().zip(properties) {
            ty.write_le(*v, &mut bytes);
        }
        w.write_all(&bytes).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Scalar precision for splat properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// 32-bit floats, the layout viewers expect.
    #[default]
    Float,
    /// 64-bit floats; round-trips every finite value bit-exactly.
    Double,
}

fn splat_property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * (SH_BASIS - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn splat_values(g: &GaussianParams, out: &mut Vec<f64>) {
    out.extend_from_slice(g.position.as_slice());
    out.extend_from_slice(&[0.0; 3]);
    out.extend_from_slice(&g.sh[0]);
    for c in 0..3 {
        for k in 1..SH_BASIS {
            out.push(g.sh[k][c]);
        }
    }
    out.push(g.opacity_logit);
    out.extend_from_slice(g.log_scale.as_slice());
    out.extend_from_slice(&g.rotation);
}

fn splats_from_table(table: &VertexTable) -> Result<Vec<GaussianParams>> {
    let get = |n: &str| table.column(n);
    let (x, y, z) = (get("x")?, get("y")?, get("z")?);
    let dc: Vec<&[f64]> = (0..3).map(|i| get(&format!("f_dc_{i}"))).collect::<Result<_>>()?;
    let rest: Vec<&[f64]> = (0..3 * (SH_BASIS - 1))
        .map(|i| get(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let opacity = get("opacity")?;
    let scale: Vec<&[f64]> = (0..3).map(|i| get(&format!("scale_{i}"))).collect::<Result<_>>()?;
    let rot: Vec<&[f64]> = (0..4).map(|i| get(&format!("rot_{i}"))).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(table.count);
    for i in 0..table.count {
        let mut sh = [[0.0; 3]; SH_BASIS];
        for c in 0..3 {
            sh[0][c] = dc[c][i];
            for k in 1..SH_BASIS {
                sh[k][c] = rest[c * (SH_BASIS - 1) + k - 1][i];
            }
        }
        out.push(GaussianParams {
            position: Vector3::new(x[i], y[i], z[i]),
            rotation: [rot[0][i], rot[1][i], rot[2][i], rot[3][i]],
            log_scale: Vector3::new(scale[0][i], scale[1][i], scale[2][i]),
            opacity_logit: opacity[i],
            sh,
        });
    }
    Ok(out)
}

/// Write world-space splats in the standard float layout.
pub fn export_ply(gaussians: &[GaussianParams], path: impl AsRef<Path>) -> Result<()> {
    export_ply_with(gaussians, path, Precision::Float)
}

pub fn export_ply_with(
    gaussians: &[GaussianParams],
    path: impl AsRef<Path>,
    precision: Precision,
) -> Result<()> {
    let ty = match precision {
        Precision::Float => ScalarType::F32,
        Precision::Double => ScalarType::F64,
    };
    let props: Vec<_> = splat_property_names().into_iter().map(|n| (n, ty)).collect();
    write_vertex_table(path, &props, gaussians.len(), |i, out| splat_values(&gaussians[i], out))
}

/// Read splats written in the standard layout (float or double).
pub fn import_ply(path: impl AsRef<Path>) -> Result<Vec<GaussianParams>> {
    splats_from_table(&read_vertex_table(path)?)
}

const EMBED_EXTRAS: [&str; 4] = ["anchor", "level", "frozen", "position_locked"];

/// Write embedded (local-frame) Gaussians with their anchor and flags, in
/// double precision so a reload is bit-exact.
pub fn export_embedded(gaussians: &[EmbeddedGaussian], path: impl AsRef<Path>) -> Result<()> {
    let mut props: Vec<_> = splat_property_names()
        .into_iter()
        .map(|n| (n, ScalarType::F64))
        .collect();
    props.push((EMBED_EXTRAS[0].into(), ScalarType::U32));
    props.push((EMBED_EXTRAS[1].into(), ScalarType::U32));
    props.push((EMBED_EXTRAS[2].into(), ScalarType::U8));
    props.push((EMBED_EXTRAS[3].into(), ScalarType::U8));
    write_vertex_table(path, &props, gaussians.len(), |i, out| {
        let g = &gaussians[i];
        splat_values(&g.local, out);
        out.push(g.anchor as f64);
        out.push(g.level as f64);
        out.push(g.frozen as u8 as f64);
        out.push(g.position_locked as u8 as f64);
    })
}

pub fn import_embedded(path: impl AsRef<Path>) -> Result<Vec<EmbeddedGaussian>> {
    let table = read_vertex_table(path)?;
    let params = splats_from_table(&table)?;
    let extras: Vec<&[f64]> = EMBED_EXTRAS
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<_>>()?;
    Ok(params
        .into_iter()
        .enumerate()
        .map(|(i, local)| EmbeddedGaussian {
            anchor: extras[0][i] as u32,
            local,
            level: extras[1][i] as u32,
            frozen: extras[2][i] != 0.0,
            position_locked: extras[3][i] != 0.0,
        })
        .collect())
}
