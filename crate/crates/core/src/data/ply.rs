//! ASCII PLY reading and writing.
//!
//! Written files carry `double` positions with 17 significant digits (so
//! values round-trip bit-exactly), optional `uchar` colors and optional
//! `double` normals. The reader accepts any ASCII file whose vertex element
//! has `x`, `y`, `z`; other properties and elements are skipped.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Quantizes a `[0, 1]` channel to the byte stored in the file.
pub fn color_to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn ply_to_string(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(64 * cloud.len() + 256);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(out, "property double {axis}");
    }
    if cloud.colors.is_some() {
        for ch in ["red", "green", "blue"] {
            let _ = writeln!(out, "property uchar {ch}");
        }
    }
    if cloud.normals.is_some() {
        for axis in ["nx", "ny", "nz"] {
            let _ = writeln!(out, "property double {axis}");
        }
    }
    out.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let _ = write!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
        if let Some(colors) = &cloud.colors {
            let c = colors[i];
            let _ = write!(
                out,
                " {} {} {}",
                color_to_byte(c.x),
                color_to_byte(c.y),
                color_to_byte(c.z)
            );
        }
        if let Some(normals) = &cloud.normals {
            let n = normals[i];
            let _ = write!(out, " {:.16e} {:.16e} {:.16e}", n.x, n.y, n.z);
        }
        out.push('\n');
    }
    out
}

pub fn ply_write(path: &Path, cloud: &PointCloud) -> Result<()> {
    cloud.validate()?;
    std::fs::write(path, ply_to_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn ply_read(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    /// Scalar property names with their integer-ness; `None` marks a list.
    properties: Vec<Option<(String, bool)>>,
}

fn scalar_type(t: &str) -> Option<bool> {
    match t {
        "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8" | "int16"
        | "uint16" | "int32" | "uint32" => Some(true),
        "float" | "double" | "float32" | "float64" => Some(false),
        _ => None,
    }
}

pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(err(1, "missing 'ply' magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (no, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                if *fmt != "ascii" {
                    return Err(err(no, format!("unsupported format '{fmt}', only ascii is read")));
                }
                saw_format = true;
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| err(no, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(no, "property before any element".into()))?;
                el.properties.push(None);
            }
            ["property", ty, name] => {
                let is_int = scalar_type(ty).ok_or_else(|| err(no, format!("unknown property type '{ty}'")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(no, "property before any element".into()))?;
                el.properties.push(Some((name.to_string(), is_int)));
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(err(no, format!("unrecognized header line '{line}'"))),
        }
    }
    if !header_done {
        return Err(err(text.lines().count(), "header has no end_header".into()));
    }
    if !saw_format {
        return Err(err(2, "header has no format line".into()));
    }

    let mut positions = Vec::new();
    let mut colors: Option<Vec<Vector3<f64>>> = None;
    let mut normals: Option<Vec<Vector3<f64>>> = None;
    let mut found_vertex = false;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines
                    .next()
                    .ok_or_else(|| err(text.lines().count(), format!("missing '{}' rows", el.name)))?;
            }
            continue;
        }
        found_vertex = true;
        let find = |n: &str| {
            el.properties
                .iter()
                .position(|p| p.as_ref().is_some_and(|(name, _)| name == n))
        };
        let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
            return Err(err(0, "vertex element lacks x, y, z".into()));
        };
        let color_idx = match (find("red"), find("green"), find("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let normal_idx = match (find("nx"), find("ny"), find("nz")) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        };
        if el.properties.iter().any(Option::is_none) {
            return Err(err(0, "list properties on vertices are not supported".into()));
        }
        let known = ["x", "y", "z", "red", "green", "blue", "nx", "ny", "nz"];
        for (name, _) in el.properties.iter().flatten() {
            if !known.contains(&name.as_str()) {
                log::warn!("skipping unknown vertex property '{name}'");
            }
        }
        let color_is_int = color_idx.map(|c| el.properties[c[0]].as_ref().is_some_and(|p| p.1));
        if color_idx.is_some() {
            colors = Some(Vec::with_capacity(el.count));
        }
        if normal_idx.is_some() {
            normals = Some(Vec::with_capacity(el.count));
        }
        positions.reserve(el.count);
        for _ in 0..el.count {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(text.lines().count(), format!("expected {} vertices", el.count)))?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(no, format!("bad number '{t}'"))))
                .collect::<Result<_>>()?;
            if values.len() != el.properties.len() {
                return Err(err(
                    no,
                    format!("expected {} values, found {}", el.properties.len(), values.len()),
                ));
            }
            positions.push(Vector3::new(values[ix], values[iy], values[iz]));
            if let (Some(c), Some(out)) = (color_idx, colors.as_mut()) {
                let scale = if color_is_int == Some(true) { 255.0 } else { 1.0 };
                out.push(Vector3::new(values[c[0]], values[c[1]], values[c[2]]) / scale);
            }
            if let (Some(n), Some(out)) = (normal_idx, normals.as_mut()) {
                out.push(Vector3::new(values[n[0]], values[n[1]], values[n[2]]));
            }
        }
    }
    if !found_vertex {
        return Err(err(0, "no vertex element".into()));
    }
    for (no, line) in lines {
        if !line.trim().is_empty() {
            return Err(err(no, "data after the last element".into()));
        }
    }
    Ok(PointCloud {
        positions,
        colors,
        normals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_cloud_round_trip() {
        let text = ply_to_string(&PointCloud::new(vec![]));
        assert!(text.contains("element vertex 0"));
        assert!(parse_ply(&text).unwrap().is_empty());
    }

    #[test]
    fn colored_cloud_round_trips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200;
        let positions: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random::<f64>() * 1e3 - 500.0, rng.random(), rng.random::<f64>() * 1e-7))
            .collect();
        let colors: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random::<u8>() as f64, rng.random::<u8>() as f64, rng.random::<u8>() as f64) / 255.0)
            .collect();
        let normals: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random::<f64>()).normalize())
            .collect();
        let cloud = PointCloud::new(positions).with_colors(colors).with_normals(normals);
        let back = parse_ply(&ply_to_string(&cloud)).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn extra_properties_and_comments_are_skipped() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty float intensity\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3 0.5 255 0 0\n-1.5 0 2e-3 0.1 0 255 0\n3 0 1 0\n";
        let cloud = parse_ply(text).unwrap();
        assert_eq!(cloud.positions, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.5, 0.0, 0.002)]);
        assert_eq!(cloud.colors.unwrap()[1], Vector3::new(0.0, 1.0, 0.0));
        assert!(cloud.normals.is_none());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let short = "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n1 1 1\n";
        assert!(matches!(parse_ply(short), Err(Error::Parse { .. })));
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 zero 0\n";
        assert!(matches!(parse_ply(bad), Err(Error::Parse { line: 8, .. })));
        let header = "ply\nformat ascii 1.0\nelement vertex x\n";
        assert!(matches!(parse_ply(header), Err(Error::Parse { line: 3, .. })));
        assert!(parse_ply("format ascii 1.0\n").is_err());
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
    }
}
