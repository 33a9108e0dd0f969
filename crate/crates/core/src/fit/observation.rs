//! Per-frame visual observations and their on-disk formats.
//!
//! An observation directory holds `landmarks.csv`, images
//! `frame_<j:05>.ppm` and flow pairs `flow_<j:05>.flo` (frame `j-1` to
//! `j`). Any of them may be missing for a given frame.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::rig::{LandmarkId, Rig};

use super::config::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: LandmarkId,
    /// Detected position, pixels.
    pub position: Vector2<f64>,
    pub beta: f64,
}

/// Row-major grid of `C` f32 channels per pixel. Pixel `(x, y)` is the
/// sample at integer coordinates; in between is bilinear.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<const C: usize> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// RGB image with values in `[0, 1]`.
pub type RgbImage = Grid<3>;
/// Per-pixel 2D displacement in pixels.
pub type FlowGrid = Grid<2>;

/// Bilinear sample and its spatial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Sample<const C: usize> {
    pub value: [f64; C],
    pub dx: [f64; C],
    pub dy: [f64; C],
}

impl<const C: usize> Grid<C> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * C],
        }
    }

    pub fn filled(width: usize, height: usize, value: [f32; C]) -> Self {
        let mut g = Self::new(width, height);
        for px in g.data.chunks_exact_mut(C) {
            px.copy_from_slice(&value);
        }
        g
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; C] {
        let o = (y * self.width + x) * C;
        let mut out = [0.0; C];
        out.copy_from_slice(&self.data[o..o + C]);
        out
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; C]) {
        let o = (y * self.width + x) * C;
        self.data[o..o + C].copy_from_slice(&v);
    }

    /// True when `p` lies within `[0, W-1] x [0, H-1]`.
    #[inline]
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        self.width > 0
            && self.height > 0
            && p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation with exact derivatives of the interpolant.
    /// `None` outside the grid.
    pub fn sample(&self, p: &Vector2<f64>) -> Option<Sample<C>> {
        if !self.contains(p) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (p.y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut s = Sample {
            value: [0.0; C],
            dx: [0.0; C],
            dy: [0.0; C],
        };
        for ch in 0..C {
            let (a, b, c, d) = (a[ch] as f64, b[ch] as f64, c[ch] as f64, d[ch] as f64);
            s.value[ch] = (1.0 - fx) * (1.0 - fy) * a + fx * (1.0 - fy) * b + (1.0 - fx) * fy * c + fx * fy * d;
            if x1 != x0 {
                s.dx[ch] = (1.0 - fy) * (b - a) + fy * (d - c);
            }
            if y1 != y0 {
                s.dy[ch] = (1.0 - fx) * (c - a) + fx * (d - b);
            }
        }
        Some(s)
    }
}

/// Forward flow (frame `j-1` to `j`) and backward flow (`j` to `j-1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub forward: FlowGrid,
    pub backward: FlowGrid,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameObservation {
    pub landmarks: Vec<Landmark>,
    pub image: Option<RgbImage>,
    pub flow: Option<FlowPair>,
}

/// Source of per-frame observations. Frames the source knows nothing about
/// come back empty.
pub trait ObservationProvider: Sync {
    fn observation(&self, frame: usize) -> Result<Cow<'_, FrameObservation>>;
}

static EMPTY: FrameObservation = FrameObservation {
    landmarks: Vec::new(),
    image: None,
    flow: None,
};

impl ObservationProvider for [FrameObservation] {
    fn observation(&self, frame: usize) -> Result<Cow<'_, FrameObservation>> {
        Ok(Cow::Borrowed(self.get(frame).unwrap_or(&EMPTY)))
    }
}

impl ObservationProvider for Vec<FrameObservation> {
    fn observation(&self, frame: usize) -> Result<Cow<'_, FrameObservation>> {
        self.as_slice().observation(frame)
    }
}

// ---------------------------------------------------------------- landmarks

/// One row of the landmark CSV. `beta` is `None` when the column is blank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkRow {
    pub frame: usize,
    pub id: LandmarkId,
    pub position: Vector2<f64>,
    pub beta: Option<f64>,
}

pub fn parse_landmarks(origin: &str, text: &str) -> Result<Vec<LandmarkRow>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.starts_with("frame") {
                continue;
            }
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 && f.len() != 5 {
            return Err(Error::parse(origin, line_no, "expected frame,landmark_id,x,y,beta"));
        }
        let bad = |what: &str, s: &str| Error::parse(origin, line_no, format!("bad {what} `{s}`"));
        let frame = f[0].parse().map_err(|_| bad("frame", f[0]))?;
        let id = f[1].trim_start_matches('L').parse().map_err(|_| bad("landmark id", f[1]))?;
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(what, s))
        };
        let position = Vector2::new(num(f[2], "x")?, num(f[3], "y")?);
        let beta = match f.get(4) {
            Some(s) if !s.is_empty() => {
                let b = num(s, "beta")?;
                if b <= 0.0 {
                    return Err(Error::parse(origin, line_no, "beta must be positive"));
                }
                Some(b)
            }
            _ => None,
        };
        rows.push(LandmarkRow {
            frame,
            id,
            position,
            beta,
        });
    }
    Ok(rows)
}

pub fn write_landmarks(rows: &[LandmarkRow]) -> String {
    let mut out = String::from("frame,landmark_id,x,y,beta\n");
    for r in rows {
        let _ = write!(out, "{},{},{:.6},{:.6},", r.frame, r.id, r.position.x, r.position.y);
        if let Some(b) = r.beta {
            let _ = write!(out, "{b}");
        }
        out.push('\n');
    }
    out
}

/// Groups rows by frame and fills blank weights from the rig's mouth set.
pub fn resolve_landmarks(rows: &[LandmarkRow], rig: &Rig, cfg: &FitConfig) -> Vec<Vec<Landmark>> {
    let frames = rows.iter().map(|r| r.frame + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); frames];
    for r in rows {
        let beta = r.beta.unwrap_or(if rig.is_mouth_landmark(r.id) {
            cfg.mouth_beta
        } else {
            cfg.beta
        });
        out[r.frame].push(Landmark {
            id: r.id,
            position: r.position,
            beta,
        });
    }
    out
}

// ---------------------------------------------------------------- PPM

fn ppm_token<'a>(origin: &str, bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(origin, 0, "truncated PPM header"));
    }
    Ok(&bytes[start..*pos])
}

/// Binary PPM (`P6`), 8 or 16 bit.
pub fn parse_ppm(origin: &str, bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    if ppm_token(origin, bytes, &mut pos)? != b"P6" {
        return Err(Error::parse(origin, 0, "not a P6 PPM"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = ppm_token(origin, bytes, &mut pos)?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(origin, 0, format!("bad PPM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(origin, 0, "PPM maxval out of range"));
    }
    pos += 1; // single whitespace byte before the raster
    let bpc = if maxval < 256 { 1 } else { 2 };
    let need = w * h * 3 * bpc;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::parse(origin, 0, "truncated PPM raster"))?;
    let maxval = maxval as f32;
    let data = if bpc == 1 {
        raster.iter().map(|&b| b as f32 / maxval).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval)
            .collect()
    };
    Ok(RgbImage {
        width: w,
        height: h,
        data,
    })
}

/// 8-bit `P6`; values are clamped to `[0, 1]` and rounded.
pub fn write_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

// ---------------------------------------------------------------- flow

pub const FLOW_MAGIC: &[u8; 4] = b"FLO1";

/// `FLO1`, width and height as u32 LE, then the forward grid and the
/// backward grid as row-major `(dx, dy)` f32 LE pairs.
pub fn write_flow(pair: &FlowPair) -> Vec<u8> {
    let (w, h) = (pair.forward.width, pair.forward.height);
    let mut out = Vec::with_capacity(12 + 16 * w * h);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for v in pair.forward.data.iter().chain(&pair.backward.data) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_flow(origin: &str, bytes: &[u8]) -> Result<FlowPair> {
    if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
        return Err(Error::parse(origin, 0, "missing FLO1 magic"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = w * h * 2;
    let body = &bytes[12..];
    if body.len() != 2 * n * 4 {
        return Err(Error::parse(
            origin,
            0,
            format!("flow body is {} bytes, expected {}", body.len(), 2 * n * 4),
        ));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if floats.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(origin, 0, "non-finite flow value"));
    }
    let (fwd, bwd) = floats.split_at(n);
    Ok(FlowPair {
        forward: FlowGrid {
            width: w,
            height: h,
            data: fwd.to_vec(),
        },
        backward: FlowGrid {
            width: w,
            height: h,
            data: bwd.to_vec(),
        },
    })
}

// ---------------------------------------------------------------- directory

pub fn image_file_name(frame: usize) -> String {
    format!("frame_{frame:05}.ppm")
}

pub fn flow_file_name(frame: usize) -> String {
    format!("flow_{frame:05}.flo")
}

pub const LANDMARK_FILE: &str = "landmarks.csv";

/// Observation directory read lazily frame by frame.
#[derive(Debug)]
pub struct DirectoryObservations {
    dir: PathBuf,
    landmarks: Vec<Vec<Landmark>>,
    missing_flow: Mutex<BTreeSet<usize>>,
}

impl DirectoryObservations {
    pub fn open(dir: &Path, rig: &Rig, cfg: &FitConfig) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "observation directory not found"),
            ));
        }
        let lm_path = dir.join(LANDMARK_FILE);
        let landmarks = if lm_path.exists() {
            let text = std::fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
            let rows = parse_landmarks(&lm_path.display().to_string(), &text)?;
            resolve_landmarks(&rows, rig, cfg)
        } else {
            Vec::new()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            landmarks,
            missing_flow: Mutex::new(BTreeSet::new()),
        })
    }

    /// Frames `j >= 1` whose flow file was requested but absent.
    pub fn missing_flow_frames(&self) -> Vec<usize> {
        self.missing_flow.lock().unwrap().iter().copied().collect()
    }
}

impl ObservationProvider for DirectoryObservations {
    fn observation(&self, frame: usize) -> Result<Cow<'_, FrameObservation>> {
        let landmarks = self.landmarks.get(frame).cloned().unwrap_or_default();
        let img_path = self.dir.join(image_file_name(frame));
        let image = match std::fs::read(&img_path) {
            Ok(bytes) => Some(parse_ppm(&img_path.display().to_string(), &bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(img_path, e)),
        };
        let flow_path = self.dir.join(flow_file_name(frame));
        let flow = match std::fs::read(&flow_path) {
            Ok(bytes) => Some(parse_flow(&flow_path.display().to_string(), &bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if frame > 0 {
                    self.missing_flow.lock().unwrap().insert(frame);
                }
                None
            }
            Err(e) => return Err(Error::io(flow_path, e)),
        };
        Ok(Cow::Owned(FrameObservation {
            landmarks,
            image,
            flow,
        }))
    }
}
