//! Minimal Wavefront OBJ subset: `v x y z [r g b]`, `f i j k` and `#`
//! comments. Anything else is rejected.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rig::Mesh;

/// Decimal places used when writing vertex coordinates and colors.
pub const OBJ_DECIMALS: usize = 6;

pub fn parse_obj(origin: &str, text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut colors: Vec<Vector3<f64>> = Vec::new();
    let mut triangles = Vec::new();
    let mut colored: Option<bool> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let fields: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let nums = fields
                    .iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| Error::parse(origin, line_no, format!("bad number `{s}`")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let has_color = match nums.len() {
                    3 => false,
                    6 => true,
                    n => {
                        return Err(Error::parse(
                            origin,
                            line_no,
                            format!("vertex needs 3 or 6 values, got {n}"),
                        ))
                    }
                };
                match colored {
                    None => colored = Some(has_color),
                    Some(c) if c != has_color => {
                        return Err(Error::parse(origin, line_no, "mixed colored and uncolored vertices"))
                    }
                    _ => {}
                }
                vertices.push(Vector3::new(nums[0], nums[1], nums[2]));
                if has_color {
                    colors.push(Vector3::new(nums[3], nums[4], nums[5]));
                }
            }
            "f" => {
                if fields.len() != 3 {
                    return Err(Error::parse(
                        origin,
                        line_no,
                        format!("only triangles are supported, got {} indices", fields.len()),
                    ));
                }
                let mut tri = [0usize; 3];
                for (slot, s) in tri.iter_mut().zip(&fields) {
                    let one_based: usize = s
                        .parse()
                        .map_err(|_| Error::parse(origin, line_no, format!("bad face index `{s}`")))?;
                    if one_based == 0 {
                        return Err(Error::parse(origin, line_no, "face indices are 1-based"));
                    }
                    *slot = one_based - 1;
                }
                triangles.push(tri);
            }
            other => {
                return Err(Error::parse(origin, line_no, format!("unsupported directive `{other}`")));
            }
        }
    }

    let colors = if colored == Some(true) { Some(colors) } else { None };
    Mesh::new(vertices, triangles, colors).map_err(|e| match e {
        Error::Topology(msg) => Error::parse(origin, 0, msg),
        other => other,
    })
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&path.display().to_string(), &text)
}

pub fn write_obj_string(mesh: &Mesh) -> String {
    let p = OBJ_DECIMALS;
    let mut out = String::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(out, "v {:.p$} {:.p$} {:.p$}", v.x, v.y, v.z);
        if let Some(colors) = &mesh.colors {
            let c = colors[i];
            let _ = write!(out, " {:.p$} {:.p$} {:.p$}", c.x, c.y, c.z);
        }
        out.push('\n');
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}
