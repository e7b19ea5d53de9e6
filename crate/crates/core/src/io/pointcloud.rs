use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ply,
    Xyz,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => Ok(Format::Ply),
        Some("xyz") | Some("txt") => Ok(Format::Xyz),
        _ => Err(Error::parse(path, 0, "unknown point cloud extension (expected .ply or .xyz)")),
    }
}

pub fn read_pointcloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let format = format_of(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Ply => parse_ply(&text, path),
        Format::Xyz => parse_xyz(&text, path),
    }
}

/// Writes every coordinate in shortest round-trip form, so reading back is exact.
pub fn write_pointcloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format_of(path)? {
        Format::Ply => ply_string(cloud),
        Format::Xyz => xyz_string(cloud),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ply_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.labels().is_some() {
        s.push_str("property uchar label\n");
    }
    s.push_str("end_header\n");
    push_rows(&mut s, cloud);
    s
}

fn xyz_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    push_rows(&mut s, cloud);
    s
}

fn push_rows(s: &mut String, cloud: &PointCloud) {
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(l) = cloud.labels() {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
}

fn parse_coord(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid number `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite coordinate `{tok}`")));
    }
    Ok(v)
}

fn parse_label(tok: &str, path: &Path, line: usize) -> Result<u8> {
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid label `{tok}`")))
}

fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(path, 1, "missing `ply` magic")),
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut saw_format = false;
    let mut header_end = false;
    for (ln, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::parse(path, ln, format!("unsupported PLY format `{other}`")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| Error::parse(path, ln, format!("invalid element count `{count}`")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    if vertex_count.is_some() {
                        return Err(Error::parse(path, ln, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                } else if vertex_count.is_none() {
                    return Err(Error::parse(path, ln, "vertex element must come first"));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(path, ln, "list properties on vertices are not supported"))
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push((*name).to_string());
                }
            }
            ["property", ..] if !in_vertex => {}
            ["end_header"] => {
                header_end = true;
                break;
            }
            _ => return Err(Error::parse(path, ln, format!("malformed header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(Error::parse(path, 2, "missing `format ascii 1.0`"));
    }
    if !header_end {
        return Err(Error::parse(path, text.lines().count(), "missing `end_header`"));
    }
    let count = vertex_count.ok_or_else(|| Error::parse(path, 0, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(path, 0, "vertex element lacks x, y or z")),
    };
    let il = col("label");
    let mut points = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(if il.is_some() { count } else { 0 });
    for _ in 0..count {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, text.lines().count(), "fewer vertices than declared"))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != props.len() {
            return Err(Error::parse(
                path,
                ln,
                format!("expected {} values, found {}", props.len(), tokens.len()),
            ));
        }
        points.push(Vec3::new(
            parse_coord(tokens[ix], path, ln)?,
            parse_coord(tokens[iy], path, ln)?,
            parse_coord(tokens[iz], path, ln)?,
        ));
        if let Some(il) = il {
            labels.push(parse_label(tokens[il], path, ln)?);
        }
    }
    match il {
        Some(_) => PointCloud::with_labels(points, labels),
        None => Ok(PointCloud::new(points)),
    }
}

fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if !(tokens.len() == 3 || tokens.len() == 4) {
            return Err(Error::parse(path, ln, format!("expected 3 or 4 columns, found {}", tokens.len())));
        }
        match columns {
            None => columns = Some(tokens.len()),
            Some(c) if c != tokens.len() => {
                return Err(Error::parse(path, ln, "inconsistent column count"));
            }
            _ => {}
        }
        points.push(Vec3::new(
            parse_coord(tokens[0], path, ln)?,
            parse_coord(tokens[1], path, ln)?,
            parse_coord(tokens[2], path, ln)?,
        ));
        if tokens.len() == 4 {
            labels.push(parse_label(tokens[3], path, ln)?);
        }
    }
    if columns == Some(4) {
        PointCloud::with_labels(points, labels)
    } else {
        Ok(PointCloud::new(points))
    }
}
