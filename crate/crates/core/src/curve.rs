//! Viseme weight curves and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Decimal places in curve CSV files.
pub const CURVE_DECIMALS: usize = 6;

/// Per-frame viseme weights sampled at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub fps: f64,
    pub labels: Vec<String>,
    pub frames: Vec<Vec<f64>>,
}

impl Curve {
    pub fn zeros(fps: f64, labels: Vec<String>, frames: usize) -> Self {
        let v = labels.len();
        Self {
            fps,
            labels,
            frames: vec![vec![0.0; v]; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn viseme_count(&self) -> usize {
        self.labels.len()
    }

    pub fn column(&self, viseme: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f[viseme]).collect()
    }
}

pub fn write_curve(c: &Curve) -> String {
    let p = CURVE_DECIMALS;
    let mut out = String::new();
    let _ = writeln!(out, "# fps={}", c.fps);
    out.push_str("frame");
    for l in &c.labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (j, row) in c.frames.iter().enumerate() {
        let _ = write!(out, "{j}");
        for v in row {
            // avoid "-0.000000"
            let v = if *v == 0.0 { 0.0 } else { *v };
            let _ = write!(out, ",{v:.p$}");
        }
        out.push('\n');
    }
    out
}

pub fn read_curve_str(origin: &str, text: &str) -> Result<Curve> {
    let mut fps = None;
    let mut labels: Option<Vec<String>> = None;
    let mut frames = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("fps=") {
                let f: f64 = v
                    .trim()
                    .parse()
                    .ok()
                    .filter(|f: &f64| *f > 0.0 && f.is_finite())
                    .ok_or_else(|| Error::parse(origin, line_no, format!("bad fps `{v}`")))?;
                fps = Some(f);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(labels) = &labels else {
            if fields.first() != Some(&"frame") {
                return Err(Error::parse(origin, line_no, "header must start with `frame`"));
            }
            labels = Some(fields[1..].iter().map(|s| s.to_string()).collect());
            continue;
        };
        if fields.len() != labels.len() + 1 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected {} columns, got {}", labels.len() + 1, fields.len()),
            ));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("bad frame index `{}`", fields[0])))?;
        if frame != frames.len() {
            return Err(Error::parse(
                origin,
                line_no,
                format!("frame {frame} out of sequence (expected {})", frames.len()),
            ));
        }
        let row = fields[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(origin, line_no, format!("bad weight `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        frames.push(row);
    }
    let labels = labels.ok_or_else(|| Error::parse(origin, 0, "missing header"))?;
    let fps = fps.ok_or_else(|| Error::parse(origin, 0, "missing `# fps=` line"))?;
    Ok(Curve { fps, labels, frames })
}

pub fn read_curve(path: &Path) -> Result<Curve> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_curve_str(&path.display().to_string(), &text)
}
