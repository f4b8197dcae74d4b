//! On-disk point-cloud formats.
//!
//! * `xyz-text`: one point per line, `x y z [f0 f1 ...]`, whitespace separated.
//! * `ply-ascii`: the `vertex` element of an ASCII PLY file; `x`, `y`, `z` become
//!   coordinates and every other scalar property becomes a feature column.
//! * `packed-binary`: little-endian `"PCLD"`, `u32 N`, `u32 d`, then `N*3` and
//!   `N*d` `f64` values.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const PACKED_MAGIC: &[u8; 4] = b"PCLD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    XyzText,
    PlyAscii,
    PackedBinary,
}

impl Format {
    /// Guess from the file extension: `.ply`, `.xyz`/`.txt`, anything else is packed.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => Format::PlyAscii,
            Some("xyz") | Some("txt") => Format::XyzText,
            _ => Format::PackedBinary,
        }
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz-text" | "xyz" => Ok(Format::XyzText),
            "ply-ascii" | "ply" => Ok(Format::PlyAscii),
            "packed-binary" | "packed" | "bin" => Ok(Format::PackedBinary),
            _ => Err(Error::BadParams(format!("unknown format '{s}'"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::XyzText => "xyz-text",
            Format::PlyAscii => "ply-ascii",
            Format::PackedBinary => "packed-binary",
        })
    }
}

pub fn read_cloud<T: Real>(path: &Path, format: Format) -> Result<PointCloud<T>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        Format::XyzText => parse_xyz(reader),
        Format::PlyAscii => parse_ply(reader),
        Format::PackedBinary => decode_packed(reader),
    }
}

pub fn write_cloud<T: Real>(cloud: &PointCloud<T>, path: &Path, format: Format) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::XyzText => emit_xyz(cloud, &mut w)?,
        Format::PlyAscii => emit_ply(cloud, &mut w)?,
        Format::PackedBinary => encode_packed(cloud, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn parse_value<T: Real>(tok: &str, line: usize) -> Result<T> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("not a number: '{tok}'")))?;
    Ok(T::of(v))
}

pub fn parse_xyz<T: Real, R: BufRead>(reader: R) -> Result<PointCloud<T>> {
    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut dim: Option<usize> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(line_no, "expected at least 3 columns"));
        }
        let d = toks.len() - 3;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Validation(format!(
                    "ragged features at line {line_no}: {d} columns after xyz, expected {prev}"
                )))
            }
            _ => {}
        }
        coords.push([
            parse_value(toks[0], line_no)?,
            parse_value(toks[1], line_no)?,
            parse_value(toks[2], line_no)?,
        ]);
        for tok in &toks[3..] {
            features.push(parse_value(tok, line_no)?);
        }
    }
    PointCloud::new(coords, features, dim.unwrap_or(0))
}

fn emit_xyz<T: Real, W: Write>(cloud: &PointCloud<T>, w: &mut W) -> Result<()> {
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        write!(w, "{} {} {}", p[0], p[1], p[2])?;
        for v in cloud.feature(i) {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
    has_list: bool,
}

pub fn parse_ply<T: Real, R: BufRead>(reader: R) -> Result<PointCloud<T>> {
    let mut lines = reader.lines().enumerate();
    let mut next = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((n, l)) => Ok(Some((n + 1, l?))),
            None => Ok(None),
        }
    };

    match next()? {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(1, "missing 'ply' magic line")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let Some((n, line)) = next()? else {
            return Err(Error::parse(0, "unterminated header"));
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::parse(n, format!("unsupported PLY format '{other}'")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(n, "bad element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(n, "property before element"))?;
                el.has_list = true;
                el.props.push(toks.last().unwrap().to_string());
            }
            ["property", _ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(n, "property before element"))?;
                el.props.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(Error::parse(n, format!("unrecognised header line '{line}'"))),
        }
    }

    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(0, "no vertex element"))?;
    if elements[vi].has_list {
        return Err(Error::parse(0, "list properties on vertex are not supported"));
    }
    let props = &elements[vi].props;
    let find = |axis: &str| {
        props
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| Error::parse(0, format!("vertex has no '{axis}' property")))
    };
    let (ix, iy, iz) = (find("x")?, find("y")?, find("z")?);
    let feat_cols: Vec<usize> = (0..props.len()).filter(|c| ![ix, iy, iz].contains(c)).collect();

    let mut coords = Vec::with_capacity(elements[vi].count);
    let mut features = Vec::with_capacity(elements[vi].count * feat_cols.len());
    for (ei, el) in elements.iter().enumerate() {
        if ei != vi {
            log::warn!("ignoring PLY element '{}' ({} rows)", el.name, el.count);
        }
        for _ in 0..el.count {
            let Some((n, line)) = next()? else {
                return Err(Error::parse(0, format!("truncated '{}' element", el.name)));
            };
            if ei != vi {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != props.len() {
                return Err(Error::parse(
                    n,
                    format!("expected {} values, found {}", props.len(), toks.len()),
                ));
            }
            coords.push([
                parse_value(toks[ix], n)?,
                parse_value(toks[iy], n)?,
                parse_value(toks[iz], n)?,
            ]);
            for &c in &feat_cols {
                features.push(parse_value(toks[c], n)?);
            }
        }
    }
    PointCloud::new(coords, features, feat_cols.len())
}

fn emit_ply<T: Real, W: Write>(cloud: &PointCloud<T>, w: &mut W) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    for j in 0..cloud.feature_dim() {
        writeln!(w, "property double f{j}")?;
    }
    writeln!(w, "end_header")?;
    emit_xyz(cloud, w)
}

pub fn encode_packed<T: Real, W: Write>(cloud: &PointCloud<T>, w: &mut W) -> Result<()> {
    w.write_all(PACKED_MAGIC)?;
    w.write_all(&u32_len(cloud.len())?.to_le_bytes())?;
    w.write_all(&u32_len(cloud.feature_dim())?.to_le_bytes())?;
    for p in cloud.coords() {
        for v in p {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    for v in cloud.features() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn decode_packed<T: Real, R: Read>(mut r: R) -> Result<PointCloud<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::parse(0, "truncated header"))?;
    if &magic != PACKED_MAGIC {
        return Err(Error::parse(0, "bad magic, expected PCLD"));
    }
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push([read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?]);
    }
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        features.push(read_f64(&mut r)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::parse(0, "trailing bytes after packed cloud"));
    }
    PointCloud::new(coords, features, d)
}

pub(crate) fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Validation(format!("{n} does not fit u32")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::parse(0, "truncated data"))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::parse(0, "truncated data"))?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<T: Real, R: Read>(r: &mut R) -> Result<T> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::parse(0, "truncated data"))?;
    Ok(T::of(f64::from_le_bytes(b)))
}

/// One unsigned integer per line (labels, source indices).
pub fn write_index_list<I: fmt::Display>(path: &Path, values: &[I]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index_list<I: FromStr>(path: &Path) -> Result<Vec<I>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(
            t.parse()
                .map_err(|_| Error::parse(n + 1, format!("not an unsigned integer: '{t}'")))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn xyz_three_lines() {
        let c: PointCloud<f64> = parse_xyz(Cursor::new("0 0 0\n1 0 0\n0 1 0\n")).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.feature_dim(), 0);
        assert_eq!(c.point(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn xyz_nan_is_validation_error() {
        let e = parse_xyz::<f64, _>(Cursor::new("nan 0 0\n")).unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }

    #[test]
    fn xyz_malformed_and_ragged() {
        assert!(matches!(
            parse_xyz::<f64, _>(Cursor::new("0 0\n")).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        assert!(matches!(
            parse_xyz::<f64, _>(Cursor::new("0 0 0 1\n1 1 1\n")).unwrap_err(),
            Error::Validation(_)
        ));
        assert!(matches!(
            parse_xyz::<f64, _>(Cursor::new("0 a 0\n")).unwrap_err(),
            Error::Parse { .. }
        ));
    }

    #[test]
    fn ply_with_colors_and_extra_element() {
        let src = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\n\
                   property float x\nproperty float y\nproperty float z\n\
                   property uchar red\nproperty uchar green\nproperty uchar blue\n\
                   element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                   0 0 0 255 0 0\n1 2 3 0 255 0\n3 0 1 1\n";
        let c: PointCloud<f64> = parse_ply(Cursor::new(src)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.feature_dim(), 3);
        assert_eq!(c.feature(1), &[0.0, 255.0, 0.0]);
        assert_eq!(c.point(1), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn ply_property_order_maps_features() {
        let src = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float nx\n\
                   property float z\nproperty float y\nproperty float x\nproperty float s\n\
                   end_header\n9 3 2 1 7\n";
        let c: PointCloud<f64> = parse_ply(Cursor::new(src)).unwrap();
        assert_eq!(c.point(0), &[1.0, 2.0, 3.0]);
        assert_eq!(c.feature(0), &[9.0, 7.0]);
    }

    #[test]
    fn ply_binary_rejected() {
        let src = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(parse_ply::<f64, _>(Cursor::new(src)), Err(Error::Parse { .. })));
    }

    #[test]
    fn packed_rejects_bad_magic_and_truncation() {
        assert!(decode_packed::<f64, _>(Cursor::new(b"XXXX\0\0\0\0\0\0\0\0".to_vec())).is_err());
        let c = PointCloud::<f64>::from_coords(vec![[1.0, 2.0, 3.0]]).unwrap();
        let mut buf = Vec::new();
        encode_packed(&c, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 24);
        buf.pop();
        assert!(decode_packed::<f64, _>(Cursor::new(buf)).is_err());
    }
}
