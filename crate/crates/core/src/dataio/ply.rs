use std::path::{Path, PathBuf};

use super::Mesh;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Contents of a PLY file: a mesh when it has faces, points otherwise.
#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Mesh(Mesh),
    Points(PointCloud),
}

#[derive(Clone, Copy, Debug, PartialEq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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
enum Prop {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Prop {
    fn name(&self) -> &str {
        match self {
            Prop::Scalar(n, _) | Prop::List(n, _, _) => n,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Prop>,
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl Lines<'_> {
    fn next(&mut self) -> Option<(usize, String)> {
        if self.pos >= self.bytes.len() {
            return None;
        }
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        let l = String::from_utf8_lossy(&rest[..end]).trim().to_string();
        self.pos += end + 1;
        self.line += 1;
        Some((self.line, l))
    }
}

/// One element instance: scalar values and list values by property order.
type Record = Vec<Vec<f64>>;

pub fn load_ply(path: &Path) -> Result<Geometry> {
    let bytes = std::fs::read(path)?;
    parse_ply(&bytes, path)
}

/// Parses ASCII or binary little-endian PLY.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<Geometry> {
    let err = |line: usize, msg: String| Error::Parse { path: PathBuf::from(path), line, msg };
    let mut rd = Lines { bytes, pos: 0, line: 0 };
    match rd.next() {
        Some((_, l)) if l == "ply" => {}
        Some((n, l)) => return Err(err(n, format!("expected 'ply' magic, found {l:?}"))),
        None => return Err(err(1, "empty file, expected 'ply' magic".into())),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    let header_end;
    loop {
        let (n, l) = rd.next().ok_or_else(|| err(rd.line + 1, "header ends before end_header".into()))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", f, ..] => return Err(err(n, format!("unsupported format {f:?}"))),
            ["element", name, count] => {
                let count = count.parse().map_err(|_| err(n, format!("bad element count {count:?}")))?;
                elements.push(Element { name: name.to_string(), count, props: vec![] });
            }
            ["property", "list", ct, it, name] => {
                let (ct, it) = Scalar::parse(ct).zip(Scalar::parse(it)).ok_or_else(|| err(n, format!("unknown list types in {l:?}")))?;
                elements.last_mut().ok_or_else(|| err(n, "property before any element".into()))?.props.push(Prop::List(
                    name.to_string(),
                    ct,
                    it,
                ));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| err(n, format!("unknown property type {ty:?}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| err(n, "property before any element".into()))?
                    .props
                    .push(Prop::Scalar(name.to_string(), ty));
            }
            ["end_header"] => {
                header_end = n;
                break;
            }
            _ => return Err(err(n, format!("unrecognized header line {l:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| err(header_end, "header has no format line".into()))?;

    let mut data: Vec<Vec<Record>> = Vec::new();
    if binary {
        let mut p = rd.pos.min(bytes.len());
        let read = |ty: Scalar, p: &mut usize| -> Result<f64> {
            let sz = ty.size();
            if *p + sz > bytes.len() {
                return Err(err(header_end, "binary body shorter than the header declares".into()));
            }
            let v = ty.read_le(&bytes[*p..*p + sz]);
            *p += sz;
            Ok(v)
        };
        for el in &elements {
            let mut recs = Vec::with_capacity(el.count);
            for _ in 0..el.count {
                let mut rec = Vec::with_capacity(el.props.len());
                for prop in &el.props {
                    match prop {
                        Prop::Scalar(_, ty) => rec.push(vec![read(*ty, &mut p)?]),
                        Prop::List(_, ct, it) => {
                            let len = read(*ct, &mut p)? as usize;
                            rec.push((0..len).map(|_| read(*it, &mut p)).collect::<Result<_>>()?);
                        }
                    }
                }
                recs.push(rec);
            }
            data.push(recs);
        }
        if p != bytes.len() {
            return Err(err(header_end, format!("{} trailing bytes after the declared elements", bytes.len() - p)));
        }
    } else {
        let mut body = Vec::new();
        while let Some((n, l)) = rd.next() {
            if !l.is_empty() {
                body.push((n, l));
            }
        }
        let mut it = body.into_iter();
        for el in &elements {
            let mut recs = Vec::with_capacity(el.count);
            for i in 0..el.count {
                let (n, l) = it.next().ok_or_else(|| err(rd.line + 1, format!("expected {} {} records, found {i}", el.count, el.name)))?;
                let mut toks = l.split_whitespace();
                let mut num = |what: &str| -> Result<f64> {
                    let t = toks.next().ok_or_else(|| err(n, format!("missing value for {what}")))?;
                    t.parse().map_err(|_| err(n, format!("bad number {t:?} for {what}")))
                };
                let mut rec = Vec::with_capacity(el.props.len());
                for prop in &el.props {
                    match prop {
                        Prop::Scalar(name, _) => rec.push(vec![num(name)?]),
                        Prop::List(name, _, _) => {
                            let len = num(name)? as usize;
                            rec.push((0..len).map(|_| num(name)).collect::<Result<_>>()?);
                        }
                    }
                }
                if toks.next().is_some() {
                    return Err(err(n, format!("extra values in {} record", el.name)));
                }
                recs.push(rec);
            }
            data.push(recs);
        }
        if let Some((n, _)) = it.next() {
            return Err(err(n, "unexpected data after the declared elements".into()));
        }
    }

    let vi = elements.iter().position(|e| e.name == "vertex").ok_or_else(|| err(header_end, "no vertex element".into()))?;
    let vel = &elements[vi];
    let find = |name: &str| vel.props.iter().position(|p| p.name() == name && matches!(p, Prop::Scalar(..)));
    let (x, y, z) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err(header_end, "vertex element lacks x, y, z".into())),
    };
    let points: Vec<[f64; 3]> = data[vi].iter().map(|r| [r[x][0], r[y][0], r[z][0]]).collect();
    let colors = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let scale = match &vel.props[r] {
                Prop::Scalar(_, Scalar::F32 | Scalar::F64) => 1.0,
                _ => 1.0 / 255.0,
            };
            Some(data[vi].iter().map(|rec| [rec[r][0] * scale, rec[g][0] * scale, rec[b][0] * scale]).collect())
        }
        _ => None,
    };

    let face = elements.iter().position(|e| e.name == "face" && e.count > 0);
    match face {
        Some(fi) => {
            let li = elements[fi]
                .props
                .iter()
                .position(|p| matches!(p, Prop::List(n, _, _) if n == "vertex_indices" || n == "vertex_index"))
                .ok_or_else(|| err(header_end, "face element lacks vertex_indices".into()))?;
            let mut faces = Vec::new();
            for rec in &data[fi] {
                let idx: Vec<usize> = rec[li].iter().map(|&v| v as usize).collect();
                if idx.len() < 3 || idx.iter().any(|&v| v >= points.len()) {
                    return Err(err(header_end, format!("invalid face {idx:?}")));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            Ok(Geometry::Mesh(Mesh::new(points, faces)?))
        }
        None => Ok(Geometry::Points(match colors {
            Some(c) => PointCloud::with_colors(points, c)?,
            None => PointCloud::new(points),
        })),
    }
}
