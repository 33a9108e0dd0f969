//! Blendshape rig: neutral mesh plus viseme shapes sharing its topology,
//! the linear blend model, and the rig manifest format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::kv;
use crate::obj::{read_obj, write_obj_string};

/// Default viseme inventory. Only `MBP`, `SSS` and `WWW` carry meaning in
/// the built-in phoneme map beyond being distinct columns; rigs may declare
/// any labels and any count.
pub const DEFAULT_VISEME_LABELS: [&str; 16] = [
    "AAA", "EH", "AHH", "OHH", "UUU", "IEE", "RRR", "WWW", "SSS", "FFF", "TTH", "MBP", "SSH", "SCHWA",
    "GK", "LNTD",
];

pub type LandmarkId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Per-vertex RGB in `[0, 1]`.
    pub colors: Option<Vec<Vector3<f64>>>,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
        colors: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Topology(format!(
                "triangle {t:?} references a vertex beyond count {n}"
            )));
        }
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::Topology(format!("{} colors for {n} vertices", c.len())));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            colors,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
}

/// Two vertex pairs whose horizontal and vertical separations track lip
/// motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LipPairs {
    pub horizontal: (usize, usize),
    pub vertical: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub neutral: Mesh,
    pub visemes: Vec<Mesh>,
    pub labels: Vec<String>,
    pub landmark_bindings: Vec<(LandmarkId, usize)>,
    pub lip_pairs: Option<LipPairs>,
    /// Landmark ids around the mouth; these get the larger default weight.
    pub mouth_landmarks: Vec<LandmarkId>,
    // vertex-major: deltas[k * V + i] = B_i(k) - B_0(k)
    deltas: Vec<Vector3<f64>>,
}

impl Rig {
    pub fn new(
        neutral: Mesh,
        visemes: Vec<Mesh>,
        labels: Vec<String>,
        landmark_bindings: Vec<(LandmarkId, usize)>,
    ) -> Result<Self> {
        if visemes.is_empty() {
            return Err(Error::Topology("a rig needs at least one viseme".into()));
        }
        if labels.len() != visemes.len() {
            return Err(Error::Dimension {
                expected: visemes.len(),
                got: labels.len(),
            });
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        let n = neutral.vertex_count();
        for (label, mesh) in labels.iter().zip(&visemes) {
            if mesh.vertex_count() != n {
                return Err(Error::Topology(format!(
                    "viseme `{label}` has {} vertices, neutral has {n}",
                    mesh.vertex_count()
                )));
            }
            if mesh.triangles != neutral.triangles {
                return Err(Error::Topology(format!(
                    "viseme `{label}` triangle list differs from neutral"
                )));
            }
        }
        let mut ids = HashSet::new();
        for &(id, v) in &landmark_bindings {
            if v >= n {
                return Err(Error::Topology(format!(
                    "landmark L{id} bound to vertex {v}, mesh has {n}"
                )));
            }
            if !ids.insert(id) {
                return Err(Error::Config(format!("landmark L{id} bound twice")));
            }
        }

        let nv = visemes.len();
        let mut deltas = Vec::with_capacity(n * nv);
        for k in 0..n {
            for mesh in &visemes {
                deltas.push(mesh.vertices[k] - neutral.vertices[k]);
            }
        }
        Ok(Self {
            neutral,
            visemes,
            labels,
            landmark_bindings,
            lip_pairs: None,
            mouth_landmarks: Vec::new(),
            deltas,
        })
    }

    pub fn with_lip_pairs(mut self, pairs: LipPairs) -> Result<Self> {
        let n = self.vertex_count();
        let (a, b) = pairs.horizontal;
        let (c, d) = pairs.vertical;
        if [a, b, c, d].iter().any(|&v| v >= n) {
            return Err(Error::Topology(format!("lip pair vertex out of range (mesh has {n})")));
        }
        self.lip_pairs = Some(pairs);
        Ok(self)
    }

    pub fn with_mouth_landmarks(mut self, ids: Vec<LandmarkId>) -> Self {
        self.mouth_landmarks = ids;
        self
    }

    /// Number of visemes `V`.
    pub fn viseme_count(&self) -> usize {
        self.visemes.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.neutral.vertex_count()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn binding(&self, id: LandmarkId) -> Option<usize> {
        self.landmark_bindings.iter().find(|(l, _)| *l == id).map(|&(_, v)| v)
    }

    pub fn is_mouth_landmark(&self, id: LandmarkId) -> bool {
        self.mouth_landmarks.contains(&id)
    }

    /// `B_i(k) - B_0(k)` for every viseme `i`, in viseme order.
    #[inline]
    pub fn vertex_deltas(&self, k: usize) -> &[Vector3<f64>] {
        let v = self.viseme_count();
        &self.deltas[k * v..(k + 1) * v]
    }

    /// Blended position of a single vertex. `w` must hold `V` entries.
    #[inline]
    pub fn blend_vertex(&self, k: usize, w: &[f64]) -> Vector3<f64> {
        let mut s = self.neutral.vertices[k];
        for (d, &x) in self.vertex_deltas(k).iter().zip(w) {
            s += d * x;
        }
        s
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.viseme_count() {
            return Err(Error::Dimension {
                expected: self.viseme_count(),
                got: w.len(),
            });
        }
        Ok(())
    }
}

/// `S = B_0 + sum_i w_i (B_i - B_0)`; triangles and colors come from the
/// neutral mesh.
pub fn blend_mesh(rig: &Rig, w: &[f64]) -> Result<Mesh> {
    rig.check_weights(w)?;
    let vertices = (0..rig.vertex_count()).map(|k| rig.blend_vertex(k, w)).collect();
    Ok(Mesh {
        vertices,
        triangles: rig.neutral.triangles.clone(),
        colors: rig.neutral.colors.clone(),
    })
}

pub fn load_rig(
    neutral_path: &Path,
    viseme_paths: &[PathBuf],
    labels: &[String],
    bindings: &[(LandmarkId, usize)],
) -> Result<Rig> {
    let neutral = read_obj(neutral_path)?;
    let visemes = viseme_paths.iter().map(|p| read_obj(p)).collect::<Result<Vec<_>>>()?;
    Rig::new(neutral, visemes, labels.to_vec(), bindings.to_vec())
}

fn parse_index_pair(origin: &str, e: &kv::Entry) -> Result<(usize, usize)> {
    let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(Error::parse(origin, e.line, "expected two vertex indices")),
        },
        _ => Err(Error::parse(origin, e.line, "expected `a,b`")),
    }
}

/// Reads a rig manifest:
///
/// ```text
/// neutral=neutral.obj
/// viseme.MBP=mbp.obj
/// L12=345
/// mouth=12,13
/// lip_horizontal=10,20
/// lip_vertical=30,40
/// ```
///
/// Relative paths resolve against the manifest's directory.
pub fn load_rig_manifest(path: &Path) -> Result<Rig> {
    let (origin, entries) = kv::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut neutral = None;
    let mut labels = Vec::new();
    let mut viseme_paths = Vec::new();
    let mut bindings = Vec::new();
    let mut mouth = Vec::new();
    let mut horizontal = None;
    let mut vertical = None;

    for e in &entries {
        if e.key == "neutral" {
            neutral = Some(base.join(&e.value));
        } else if let Some(label) = e.key.strip_prefix("viseme.") {
            labels.push(label.to_string());
            viseme_paths.push(base.join(&e.value));
        } else if e.key == "mouth" {
            for tok in e.value.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let id = tok
                    .trim_start_matches('L')
                    .parse()
                    .map_err(|_| Error::parse(&origin, e.line, format!("bad landmark id `{tok}`")))?;
                mouth.push(id);
            }
        } else if e.key == "lip_horizontal" {
            horizontal = Some(parse_index_pair(&origin, e)?);
        } else if e.key == "lip_vertical" {
            vertical = Some(parse_index_pair(&origin, e)?);
        } else if let Some(id) = e.key.strip_prefix('L').and_then(|s| s.parse::<LandmarkId>().ok()) {
            bindings.push((id, kv::parse_usize(&origin, e)?));
        } else {
            return Err(Error::parse(&origin, e.line, format!("unknown key `{}`", e.key)));
        }
    }

    let neutral = neutral.ok_or_else(|| Error::parse(&origin, 0, "missing `neutral`"))?;
    let mut rig = load_rig(&neutral, &viseme_paths, &labels, &bindings)?.with_mouth_landmarks(mouth);
    match (horizontal, vertical) {
        (Some(h), Some(v)) => {
            rig = rig.with_lip_pairs(LipPairs {
                horizontal: h,
                vertical: v,
            })?
        }
        (None, None) => {}
        _ => return Err(Error::parse(&origin, 0, "lip_horizontal and lip_vertical come together")),
    }
    Ok(rig)
}

/// Serializes a rig as a manifest plus one OBJ per mesh. Returns
/// `(relative file name, contents)` pairs with the manifest first.
pub fn rig_files(rig: &Rig) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let mut manifest = String::new();
    manifest.push_str("neutral=neutral.obj\n");
    files.push(("neutral.obj".to_string(), write_obj_string(&rig.neutral)));
    for (label, mesh) in rig.labels.iter().zip(&rig.visemes) {
        let name = format!("viseme_{label}.obj");
        let _ = writeln!(manifest, "viseme.{label}={name}");
        // viseme meshes carry no colors of their own
        let bare = Mesh {
            colors: None,
            ..mesh.clone()
        };
        files.push((name, write_obj_string(&bare)));
    }
    for (id, v) in &rig.landmark_bindings {
        let _ = writeln!(manifest, "L{id}={v}");
    }
    if !rig.mouth_landmarks.is_empty() {
        let ids: Vec<String> = rig.mouth_landmarks.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(manifest, "mouth={}", ids.join(","));
    }
    if let Some(p) = rig.lip_pairs {
        let _ = writeln!(manifest, "lip_horizontal={},{}", p.horizontal.0, p.horizontal.1);
        let _ = writeln!(manifest, "lip_vertical={},{}", p.vertical.0, p.vertical.1);
    }
    files.insert(0, ("rig.txt".to_string(), manifest));
    files
}
