use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::round_sig;
use crate::cloud::{Point3, PointCloud};
use crate::{Error, Result};

/// Magic header of the raw binary format.
pub const RAW_MAGIC: [u8; 8] = *b"PCQAL\0\0\x01";

const RAW_HEADER_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudFileFormat {
    /// One `x y z` triple per line. Blank lines and `#` comments are skipped.
    XyzText,
    /// ASCII PLY with a `vertex` element carrying `x`, `y` and `z`.
    PlyAscii,
    /// Magic, little-endian `u64` count, then little-endian `f32` triples.
    RawF32Le,
}

impl CloudFileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "xyz" => Ok(CloudFileFormat::XyzText),
            "ply" => Ok(CloudFileFormat::PlyAscii),
            "pcq" => Ok(CloudFileFormat::RawF32Le),
            _ => Err(Error::UnknownFormat(format!(
                "cannot infer a cloud format from '{}' (use .xyz, .ply or .pcq)",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFileFormat::XyzText => "xyz",
            CloudFileFormat::PlyAscii => "ply",
            CloudFileFormat::RawF32Le => "pcq",
        }
    }
}

impl std::str::FromStr for CloudFileFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "xyz" => Ok(CloudFileFormat::XyzText),
            "ply" => Ok(CloudFileFormat::PlyAscii),
            "pcq" | "raw" => Ok(CloudFileFormat::RawF32Le),
            other => Err(format!("unknown cloud format '{other}' (expected xyz, ply or pcq)")),
        }
    }
}

/// Reads a cloud, inferring the format from the extension when `format` is
/// `None`. The label is the file stem.
pub fn read_cloud(path: &Path, format: Option<CloudFileFormat>) -> Result<PointCloud> {
    let format = match format {
        Some(f) => f,
        None => CloudFileFormat::from_path(path)?,
    };
    let file = File::open(path)?;
    let mut cloud = read_cloud_from(BufReader::new(file), format, path)?;
    cloud.set_label(path.file_stem().map(|s| s.to_string_lossy().into_owned()));
    Ok(cloud)
}

/// Parses a cloud from any reader. `path` is only used in error messages.
pub fn read_cloud_from(reader: impl BufRead, format: CloudFileFormat, path: &Path) -> Result<PointCloud> {
    let points = match format {
        CloudFileFormat::XyzText => parse_xyz(reader, path)?,
        CloudFileFormat::PlyAscii => parse_ply(reader, path)?,
        CloudFileFormat::RawF32Le => parse_raw(reader, path)?,
    };
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(points)
}

fn parse_error(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    }
}

fn parse_triple<'a>(mut tokens: impl Iterator<Item = &'a str>, path: &Path, line_no: usize) -> Result<Point3> {
    let mut p = [0.0; 3];
    for (axis, slot) in p.iter_mut().enumerate() {
        let tok = tokens.next().ok_or_else(|| {
            parse_error(
                path,
                format!("line {line_no}"),
                format!("expected 3 coordinates, found {axis}"),
            )
        })?;
        *slot = tok
            .parse()
            .map_err(|_| parse_error(path, format!("line {line_no}"), format!("invalid number '{tok}'")))?;
    }
    Ok(p)
}

fn parse_xyz(reader: impl BufRead, path: &Path) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let p = parse_triple(&mut tokens, path, idx + 1)?;
        if tokens.next().is_some() {
            return Err(parse_error(
                path,
                format!("line {}", idx + 1),
                "expected exactly 3 coordinates",
            ));
        }
        points.push(p);
    }
    Ok(points)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn parse_ply(reader: impl BufRead, path: &Path) -> Result<Vec<Point3>> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l)));
    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some(r) => Ok(r?),
            None => Err(parse_error(
                path,
                "end of file".into(),
                format!("unexpected end of file in {what}"),
            )),
        }
    };

    let (n, magic) = next_line("header")?;
    if magic.trim() != "ply" {
        return Err(parse_error(path, format!("line {n}"), "missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (n, line) = next_line("header")?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                if tokens.next() != Some("ascii") {
                    return Err(parse_error(path, format!("line {n}"), "only ascii PLY is supported"));
                }
            }
            Some("element") => {
                let (name, count) = match (tokens.next(), tokens.next()) {
                    (Some(name), Some(count)) => (name, count),
                    _ => return Err(parse_error(path, format!("line {n}"), "malformed element line")),
                };
                let count = count
                    .parse()
                    .map_err(|_| parse_error(path, format!("line {n}"), format!("invalid element count '{count}'")))?;
                elements.push(PlyElement {
                    name: name.to_owned(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(path, format!("line {n}"), "property before any element"))?;
                let name = tokens
                    .last()
                    .ok_or_else(|| parse_error(path, format!("line {n}"), "malformed property line"))?;
                element.properties.push(name.to_owned());
            }
            Some(other) => {
                return Err(parse_error(
                    path,
                    format!("line {n}"),
                    format!("unexpected header keyword '{other}'"),
                ));
            }
        }
    }

    let mut points = Vec::new();
    let mut seen_vertex = false;
    for element in &elements {
        if element.name != "vertex" || seen_vertex {
            for _ in 0..element.count {
                next_line(&element.name)?;
            }
            continue;
        }
        seen_vertex = true;
        let column = |axis: &str| {
            element.properties.iter().position(|p| p == axis).ok_or_else(|| {
                parse_error(
                    path,
                    "header".into(),
                    format!("vertex element has no '{axis}' property"),
                )
            })
        };
        let cols = [column("x")?, column("y")?, column("z")?];
        points.reserve(element.count);
        for _ in 0..element.count {
            let (n, line) = next_line("vertex data")?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < element.properties.len() {
                return Err(parse_error(
                    path,
                    format!("line {n}"),
                    format!("expected {} values, found {}", element.properties.len(), tokens.len()),
                ));
            }
            points.push(parse_triple(cols.iter().map(|&c| tokens[c]), path, n)?);
        }
    }
    if !seen_vertex {
        return Err(parse_error(path, "header".into(), "no vertex element"));
    }
    Ok(points)
}

fn parse_raw(mut reader: impl Read, path: &Path) -> Result<Vec<Point3>> {
    let mut header = [0u8; RAW_HEADER_LEN as usize];
    read_exact_at(&mut reader, &mut header, 0, path)?;
    if header[..8] != RAW_MAGIC {
        return Err(parse_error(path, "byte 0".into(), "bad magic"));
    }
    let count = u64::from_le_bytes(header[8..].try_into().expect("8 bytes"));
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    let expected = count.checked_mul(12);
    if expected != Some(data.len() as u64) {
        return Err(parse_error(
            path,
            format!("byte {}", RAW_HEADER_LEN + data.len() as u64),
            format!("header declares {count} points but payload has {} bytes", data.len()),
        ));
    }
    Ok(data
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[k..k + 4].try_into().expect("4 bytes")) as f64;
            [f(0), f(4), f(8)]
        })
        .collect())
}

fn read_exact_at(reader: &mut impl Read, buf: &mut [u8], offset: u64, path: &Path) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            parse_error(path, format!("byte {offset}"), "truncated header")
        } else {
            Error::Io(e)
        }
    })
}

/// Writes a cloud, inferring the format from the extension when `format` is
/// `None`.
pub fn write_cloud(cloud: &PointCloud, path: &Path, format: Option<CloudFileFormat>) -> Result<()> {
    let format = match format {
        Some(f) => f,
        None => CloudFileFormat::from_path(path)?,
    };
    let mut out = BufWriter::new(File::create(path)?);
    write_cloud_to(cloud, &mut out, format)?;
    out.flush()?;
    Ok(())
}

/// Text formats print each coordinate at 9 significant digits; the raw
/// format stores `f32`.
pub fn write_cloud_to(cloud: &PointCloud, out: &mut impl Write, format: CloudFileFormat) -> Result<()> {
    match format {
        CloudFileFormat::XyzText => {
            for p in cloud.points() {
                write_text_point(out, p)?;
            }
        }
        CloudFileFormat::PlyAscii => {
            write!(
                out,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
                cloud.len()
            )?;
            for p in cloud.points() {
                write_text_point(out, p)?;
            }
        }
        CloudFileFormat::RawF32Le => {
            out.write_all(&RAW_MAGIC)?;
            out.write_all(&(cloud.len() as u64).to_le_bytes())?;
            for p in cloud.points() {
                for &c in p {
                    out.write_all(&(c as f32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn write_text_point(out: &mut impl Write, p: &Point3) -> std::io::Result<()> {
    writeln!(out, "{} {} {}", round_sig(p[0]), round_sig(p[1]), round_sig(p[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: CloudFileFormat) -> Result<PointCloud> {
        read_cloud_from(text.as_bytes(), format, Path::new("mem"))
    }

    #[test]
    fn xyz_basic_and_comments() {
        let c = parse("0 0 0\n1 0 0\n", CloudFileFormat::XyzText).unwrap();
        assert_eq!(c.points(), &[[0.0; 3], [1.0, 0.0, 0.0]]);
        let c = parse("# header\n\n  1\t2 3  \n# x\n", CloudFileFormat::XyzText).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn xyz_errors_carry_line_numbers() {
        match parse("0 0 0\n1 x 0\n", CloudFileFormat::XyzText) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("1 2\n", CloudFileFormat::XyzText),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse("1 2 3 4\n", CloudFileFormat::XyzText),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse("# only\n\n", CloudFileFormat::XyzText),
            Err(Error::EmptyCloud)
        ));
        assert!(matches!(
            parse("0 0 0\nnan 0 0\n", CloudFileFormat::XyzText),
            Err(Error::NonFiniteCoordinate { point: 1, axis: 0 })
        ));
    }

    #[test]
    fn ply_skips_extra_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\ncomment colored\nelement vertex 3\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 255 0 0\n1 0.5 -2 0 255 0\n3 4 5 0 0 255\n3 0 1 2\n";
        let c = parse(text, CloudFileFormat::PlyAscii).unwrap();
        assert_eq!(c.points(), &[[0.0; 3], [1.0, 0.5, -2.0], [3.0, 4.0, 5.0]]);
    }

    #[test]
    fn ply_property_order_respected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float nx\nproperty float z\n\
                    property float y\nproperty float x\nend_header\n9 3 2 1\n";
        assert_eq!(
            parse(text, CloudFileFormat::PlyAscii).unwrap().points(),
            &[[1.0, 2.0, 3.0]]
        );
    }

    #[test]
    fn ply_rejects_binary_and_truncation() {
        let bin = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        assert!(matches!(
            parse(bin, CloudFileFormat::PlyAscii),
            Err(Error::Parse { .. })
        ));
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
                     property float z\nend_header\n0 0 0\n";
        assert!(matches!(
            parse(short, CloudFileFormat::PlyAscii),
            Err(Error::Parse { .. })
        ));
        let no_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n";
        assert!(matches!(
            parse(no_z, CloudFileFormat::PlyAscii),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn raw_round_trip_and_errors() {
        let c = PointCloud::new(vec![[0.1, -2.5, 1e-3], [3.0, 4.0, 5.0]]).unwrap();
        let mut buf = Vec::new();
        write_cloud_to(&c, &mut buf, CloudFileFormat::RawF32Le).unwrap();
        assert_eq!(buf.len(), 16 + 24);
        let back = read_cloud_from(&buf[..], CloudFileFormat::RawF32Le, Path::new("mem")).unwrap();
        for (p, q) in c.points().iter().zip(back.points()) {
            for k in 0..3 {
                assert_eq!(q[k], p[k] as f32 as f64);
            }
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_cloud_from(&bad[..], CloudFileFormat::RawF32Le, Path::new("mem")),
            Err(Error::Parse { .. })
        ));
        match read_cloud_from(&buf[..buf.len() - 2], CloudFileFormat::RawF32Le, Path::new("mem")) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "byte 38"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_cloud_from(&buf[..5], CloudFileFormat::RawF32Le, Path::new("mem")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn text_round_trip_at_nine_digits() {
        let c = PointCloud::new(vec![[0.123456789123, -1e-7, 12345.6789012], [1.0, 2.0, 3.0]]).unwrap();
        for format in [CloudFileFormat::XyzText, CloudFileFormat::PlyAscii] {
            let mut buf = Vec::new();
            write_cloud_to(&c, &mut buf, format).unwrap();
            let back = read_cloud_from(&buf[..], format, Path::new("mem")).unwrap();
            for (p, q) in c.points().iter().zip(back.points()) {
                for k in 0..3 {
                    assert_eq!(q[k], round_sig(p[k]));
                    assert!((q[k] - p[k]).abs() <= 1e-8 * p[k].abs());
                }
            }
        }
    }

    #[test]
    fn files_infer_format_and_label() {
        let dir = tempfile::tempdir().unwrap();
        let c = PointCloud::new(vec![[0.0, 1.0, 2.0]]).unwrap();
        for ext in ["xyz", "ply", "pcq"] {
            let path = dir.path().join(format!("chair.{ext}"));
            write_cloud(&c, &path, None).unwrap();
            let back = read_cloud(&path, None).unwrap();
            assert_eq!(back.points(), c.points());
            assert_eq!(back.label(), Some("chair"));
        }
        assert!(matches!(
            read_cloud(&dir.path().join("a.obj"), None),
            Err(Error::UnknownFormat(_))
        ));
        assert!(matches!(
            read_cloud(&dir.path().join("missing.xyz"), None),
            Err(Error::Io(_))
        ));
    }
}
