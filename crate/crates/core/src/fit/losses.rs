//! The seven per-frame loss terms and their analytic gradients.
//!
//! Every vertex-based term blends the needed vertices, projects them, and
//! pushes `d loss / d pixel` back through [`Projector::backprop`] into the
//! viseme weights and the pose.

use nalgebra::{Vector2, Vector3};

use crate::camera::{Pose, PoseGrad, Projected, Projector};
use crate::error::{Error, Result};
use crate::rig::Rig;

use super::config::LossWeights;
use super::guidance::GuidanceSets;
use super::observation::{Landmark, RgbImage};

/// Optimized quantities for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameParams {
    pub weights: Vec<f64>,
    pub pose: Pose,
}

/// Flat layout: `V` weights, quaternion `(w, x, y, z)`, translation.
pub const POSE_PARAMS: usize = 7;

impl FrameParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let q = self.pose.rotation;
        let t = self.pose.translation;
        let mut v = self.weights.clone();
        v.extend([q.w, q.i, q.j, q.k, t.x, t.y, t.z]);
        v
    }

    pub fn set_from(&mut self, flat: &[f64]) {
        let nv = self.weights.len();
        debug_assert_eq!(flat.len(), nv + POSE_PARAMS);
        self.weights.copy_from_slice(&flat[..nv]);
        let p = &flat[nv..];
        self.pose.rotation = nalgebra::Quaternion::new(p[0], p[1], p[2], p[3]);
        self.pose.translation = Vector3::new(p[4], p[5], p[6]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub pose: PoseGrad,
}

impl Gradient {
    pub fn zeros(v: usize) -> Self {
        Self {
            weights: vec![0.0; v],
            pose: PoseGrad::default(),
        }
    }

    /// Same layout as [`FrameParams::to_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        let r = self.pose.rotation;
        let t = self.pose.translation;
        let mut v = self.weights.clone();
        v.extend([r[0], r[1], r[2], r[3], t.x, t.y, t.z]);
        v
    }
}

/// Gradient under construction. Pose rotation is with respect to the
/// normalized quaternion until [`Projector::finish`] runs.
struct Accum {
    weights: Vec<f64>,
    pose: PoseGrad,
}

impl Accum {
    fn new(v: usize) -> Self {
        Self {
            weights: vec![0.0; v],
            pose: PoseGrad::default(),
        }
    }
}

/// Backpropagates `g` (d loss / d pixel) at blended vertex `k`.
#[inline]
fn push_vertex(rig: &Rig, proj: &Projector, k: usize, s: &Vector3<f64>, p: &Projected, g: &Vector2<f64>, acc: &mut Accum) {
    let ds = proj.backprop(s, p, g, &mut acc.pose);
    for (slot, d) in acc.weights.iter_mut().zip(rig.vertex_deltas(k)) {
        *slot += d.dot(&ds);
    }
}

fn lmk_term(rig: &Rig, proj: &Projector, w: &[f64], landmarks: &[Landmark], scale: f64, mut acc: Option<&mut Accum>) -> Result<f64> {
    if landmarks.is_empty() {
        return Err(Error::Config("landmark loss needs at least one landmark".into()));
    }
    let inv = 1.0 / landmarks.len() as f64;
    let mut total = 0.0;
    for lm in landmarks {
        let k = rig
            .binding(lm.id)
            .ok_or_else(|| Error::Config(format!("landmark L{} has no vertex binding", lm.id)))?;
        let s = rig.blend_vertex(k, w);
        let p = proj.project(&s)?;
        let r = p.pixel - lm.position;
        total += lm.beta * r.norm_squared();
        if let Some(acc) = acc.as_deref_mut() {
            let g = r * (2.0 * lm.beta * inv * scale);
            push_vertex(rig, proj, k, &s, &p, &g, acc);
        }
    }
    Ok(total * inv)
}

fn rgb_term(rig: &Rig, proj: &Projector, w: &[f64], image: &RgbImage, scale: f64, acc: Option<&mut Accum>) -> Result<f64> {
    let colors = rig
        .neutral
        .colors
        .as_ref()
        .ok_or_else(|| Error::Config("photometric loss needs per-vertex colors".into()))?;
    if image.width == 0 || image.height == 0 {
        return Err(Error::Config("photometric loss needs a non-empty image".into()));
    }
    let mut total = 0.0;
    let mut inside = Vec::new();
    for (k, color) in colors.iter().enumerate() {
        let s = rig.blend_vertex(k, w);
        let p = proj.project(&s)?;
        let Some(sample) = image.sample(&p.pixel) else {
            continue;
        };
        let mut g = Vector2::zeros();
        for c in 0..3 {
            let r = sample.value[c] - color[c];
            total += r * r;
            g.x += 2.0 * r * sample.dx[c];
            g.y += 2.0 * r * sample.dy[c];
        }
        inside.push((k, s, p, g));
    }
    if inside.is_empty() {
        return Err(Error::AllOutside);
    }
    let inv = 1.0 / inside.len() as f64;
    if let Some(acc) = acc {
        for (k, s, p, g) in &inside {
            push_vertex(rig, proj, *k, s, p, &(g * (inv * scale)), acc);
        }
    }
    Ok(total * inv)
}

/// A screened flow correspondence turned into a pixel target for the
/// current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTarget {
    pub vertex: usize,
    pub target: Vector2<f64>,
}

fn flow_term(rig: &Rig, proj: &Projector, w: &[f64], targets: &[FlowTarget], scale: f64, mut acc: Option<&mut Accum>) -> Result<f64> {
    if targets.is_empty() {
        return Ok(0.0);
    }
    let inv = 1.0 / targets.len() as f64;
    let mut total = 0.0;
    for t in targets {
        let s = rig.blend_vertex(t.vertex, w);
        let p = proj.project(&s)?;
        let r = p.pixel - t.target;
        total += r.norm_squared();
        if let Some(acc) = acc.as_deref_mut() {
            push_vertex(rig, proj, t.vertex, &s, &p, &(r * (2.0 * inv * scale)), acc);
        }
    }
    Ok(total * inv)
}

fn mean_square_term(w: &[f64], set: &[usize], sign: f64, scale: f64, acc: Option<&mut Accum>) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let inv = 1.0 / set.len() as f64;
    let total: f64 = set.iter().map(|&i| w[i] * w[i]).sum();
    if let Some(acc) = acc {
        for &i in set {
            acc.weights[i] += sign * 2.0 * w[i] * inv * scale;
        }
    }
    sign * total * inv
}

fn diff_term(w: &[f64], neighbor: Option<&[f64]>, scale: f64, acc: Option<&mut Accum>) -> f64 {
    let Some(nb) = neighbor else {
        return 0.0;
    };
    let inv = 1.0 / w.len() as f64;
    let total: f64 = w.iter().zip(nb).map(|(a, b)| (a - b) * (a - b)).sum();
    if let Some(acc) = acc {
        for ((slot, a), b) in acc.weights.iter_mut().zip(w).zip(nb) {
            *slot += 2.0 * (a - b) * inv * scale;
        }
    }
    total * inv
}

fn range_term(w: &[f64], scale: f64, mut acc: Option<&mut Accum>) -> f64 {
    let upper: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1.0).collect();
    let lower: Vec<usize> = (0..w.len()).filter(|&i| w[i] < 0.0).collect();
    let mut total = 0.0;
    if !upper.is_empty() {
        let inv = 1.0 / upper.len() as f64;
        total += inv * upper.iter().map(|&i| (w[i] - 1.0).powi(2)).sum::<f64>();
        if let Some(acc) = acc.as_deref_mut() {
            for &i in &upper {
                acc.weights[i] += 2.0 * (w[i] - 1.0) * inv * scale;
            }
        }
    }
    if !lower.is_empty() {
        let inv = 1.0 / lower.len() as f64;
        total += inv * lower.iter().map(|&i| w[i] * w[i]).sum::<f64>();
        if let Some(acc) = acc {
            for &i in &lower {
                acc.weights[i] += 2.0 * w[i] * inv * scale;
            }
        }
    }
    total
}

// ------------------------------------------------------------ public terms

/// Weighted mean squared reprojection error of bound landmarks.
pub fn loss_lmk(pose: &Pose, w: &[f64], rig: &Rig, landmarks: &[Landmark]) -> Result<f64> {
    lmk_term(rig, &Projector::new(pose)?, w, landmarks, 1.0, None)
}

/// Mean squared RGB difference between the image sampled at projected
/// vertices and the vertex colors, over vertices landing inside the image.
pub fn loss_rgb(pose: &Pose, w: &[f64], rig: &Rig, image: &RgbImage) -> Result<f64> {
    rgb_term(rig, &Projector::new(pose)?, w, image, 1.0, None)
}

pub fn loss_sup(w: &[f64], sets: &GuidanceSets) -> f64 {
    mean_square_term(w, &sets.suppress, 1.0, 1.0, None)
}

pub fn loss_act(w: &[f64], sets: &GuidanceSets) -> f64 {
    mean_square_term(w, &sets.activate, -1.0, 1.0, None)
}

/// Screened correspondence: vertex `k` moved by `u` pixels since the
/// previous frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowCorrespondence {
    pub vertex: usize,
    pub u: Vector2<f64>,
}

/// Pixel targets `Proj(s_prev) + u` from the (fixed) previous frame.
pub fn flow_targets(rig: &Rig, pose_prev: &Pose, w_prev: &[f64], corr: &[FlowCorrespondence]) -> Result<Vec<FlowTarget>> {
    let proj = Projector::new(pose_prev)?;
    corr.iter()
        .map(|c| {
            let p = proj.project(&rig.blend_vertex(c.vertex, w_prev))?;
            Ok(FlowTarget {
                vertex: c.vertex,
                target: p.pixel + c.u,
            })
        })
        .collect()
}

pub fn loss_flow(
    pose: &Pose,
    w: &[f64],
    pose_prev: &Pose,
    w_prev: &[f64],
    rig: &Rig,
    corr: &[FlowCorrespondence],
) -> Result<f64> {
    let targets = flow_targets(rig, pose_prev, w_prev, corr)?;
    flow_term(rig, &Projector::new(pose)?, w, &targets, 1.0, None)
}

pub fn loss_diff(w: &[f64], neighbor: Option<&[f64]>) -> f64 {
    diff_term(w, neighbor, 1.0, None)
}

pub fn loss_range(w: &[f64]) -> f64 {
    range_term(w, 1.0, None)
}

// ------------------------------------------------------------ frame problem

/// Everything the objective of one frame depends on besides the optimized
/// parameters. Terms with zero weight, no landmarks, no image, or a rig
/// without colors contribute nothing.
#[derive(Debug, Clone, Copy)]
pub struct FrameProblem<'a> {
    pub rig: &'a Rig,
    pub landmarks: &'a [Landmark],
    pub image: Option<&'a RgbImage>,
    pub flow_targets: &'a [FlowTarget],
    pub guidance: &'a GuidanceSets,
    /// Weights of the adjacent, already solved frame.
    pub neighbor: Option<&'a [f64]>,
    pub weights: LossWeights,
}

impl FrameProblem<'_> {
    fn uses_rgb(&self) -> bool {
        self.image.is_some() && self.rig.neutral.colors.is_some()
    }

    fn check(&self, params: &FrameParams) -> Result<()> {
        let v = self.rig.viseme_count();
        if params.weights.len() != v {
            return Err(Error::Dimension {
                expected: v,
                got: params.weights.len(),
            });
        }
        if let Some(nb) = self.neighbor {
            if nb.len() != v {
                return Err(Error::Dimension { expected: v, got: nb.len() });
            }
        }
        Ok(())
    }

    /// Unweighted values of the seven terms.
    pub fn components(&self, params: &FrameParams) -> Result<[f64; 7]> {
        self.check(params)?;
        let proj = Projector::new(&params.pose)?;
        let w = params.weights.as_slice();
        let lmk = if self.landmarks.is_empty() {
            0.0
        } else {
            lmk_term(self.rig, &proj, w, self.landmarks, 1.0, None)?
        };
        let rgb = match self.image {
            Some(img) if self.uses_rgb() => rgb_term(self.rig, &proj, w, img, 1.0, None)?,
            _ => 0.0,
        };
        Ok([
            lmk,
            rgb,
            mean_square_term(w, &self.guidance.suppress, 1.0, 1.0, None),
            mean_square_term(w, &self.guidance.activate, -1.0, 1.0, None),
            flow_term(self.rig, &proj, w, self.flow_targets, 1.0, None)?,
            diff_term(w, self.neighbor, 1.0, None),
            range_term(w, 1.0, None),
        ])
    }

    fn evaluate(&self, params: &FrameParams, mut acc: Option<&mut Accum>) -> Result<(f64, Projector)> {
        self.check(params)?;
        let proj = Projector::new(&params.pose)?;
        let w = params.weights.as_slice();
        let [w1, w2, w3, w4, w5, w6, w7] = self.weights;
        let mut total = 0.0;
        if w1 != 0.0 && !self.landmarks.is_empty() {
            total += w1 * lmk_term(self.rig, &proj, w, self.landmarks, w1, acc.as_deref_mut())?;
        }
        if w2 != 0.0 && self.uses_rgb() {
            total += w2 * rgb_term(self.rig, &proj, w, self.image.unwrap(), w2, acc.as_deref_mut())?;
        }
        if w3 != 0.0 {
            total += w3 * mean_square_term(w, &self.guidance.suppress, 1.0, w3, acc.as_deref_mut());
        }
        if w4 != 0.0 {
            total += w4 * mean_square_term(w, &self.guidance.activate, -1.0, w4, acc.as_deref_mut());
        }
        if w5 != 0.0 {
            total += w5 * flow_term(self.rig, &proj, w, self.flow_targets, w5, acc.as_deref_mut())?;
        }
        if w6 != 0.0 {
            total += w6 * diff_term(w, self.neighbor, w6, acc.as_deref_mut());
        }
        if w7 != 0.0 {
            total += w7 * range_term(w, w7, acc);
        }
        Ok((total, proj))
    }

    pub fn total(&self, params: &FrameParams) -> Result<f64> {
        Ok(self.evaluate(params, None)?.0)
    }

    pub fn total_and_grad(&self, params: &FrameParams) -> Result<(f64, Gradient)> {
        let mut acc = Accum::new(self.rig.viseme_count());
        let (total, proj) = self.evaluate(params, Some(&mut acc))?;
        let pose = proj.finish(acc.pose);
        Ok((
            total,
            Gradient {
                weights: acc.weights,
                pose,
            },
        ))
    }
}

/// `w1 L_lmk + w2 L_rgb + ... + w7 L_range` for one frame.
pub fn total_loss(problem: &FrameProblem<'_>, params: &FrameParams) -> Result<f64> {
    problem.total(params)
}

/// Gradient of [`total_loss`] over the viseme weights, the quaternion
/// (tangent to the unit sphere at unit length) and the translation.
pub fn grad_total(problem: &FrameProblem<'_>, params: &FrameParams) -> Result<Gradient> {
    Ok(problem.total_and_grad(params)?.1)
}
