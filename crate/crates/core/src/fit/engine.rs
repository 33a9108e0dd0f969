//! Two-pass per-frame fitting of a clip.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Vector2, Vector3};

use crate::camera::{Intrinsics, Pose, Projector};
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::procedural::{generate_procedural, ProceduralRules};
use crate::rig::Rig;
use crate::timeline::{PhonemeVisemeMap, Timeline};

use super::adam::{adam_step, AdamState};
use super::config::FitConfig;
use super::flow::screen_flow;
use super::guidance::{guidance_sets, GuidanceSets};
use super::losses::{FlowTarget, FrameParams, FrameProblem, POSE_PARAMS};
use super::observation::{FrameObservation, ObservationProvider};

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Final weights, truncated to `[0, 1]`.
    pub curve: Curve,
    pub poses: Vec<Pose>,
}

/// Runs `cfg.iters` Adam iterations on one frame's objective.
pub fn optimize_frame(problem: &FrameProblem<'_>, init: FrameParams, cfg: &FitConfig) -> Result<FrameParams> {
    let mut params = init;
    let mut state = AdamState::new(params.weights.len() + POSE_PARAMS);
    for it in 0..cfg.iters {
        let (loss, grad) = problem.total_and_grad(&params)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {loss} at iteration {it}")));
        }
        adam_step(&mut state, &mut params, &grad, cfg.lr_at(it))?;
    }
    Ok(params)
}

fn screened_targets(rig: &Rig, prev: &FrameParams, obs: &FrameObservation, cfg: &FitConfig) -> Result<Vec<FlowTarget>> {
    let Some(flow) = &obs.flow else {
        return Ok(Vec::new());
    };
    let proj = Projector::new(&prev.pose)?;
    let mut previous: Vec<(usize, Vector2<f64>)> = Vec::with_capacity(rig.vertex_count());
    for k in 0..rig.vertex_count() {
        previous.push((k, proj.project(&rig.blend_vertex(k, &prev.weights))?.pixel));
    }
    let corr = screen_flow(&flow.forward, &flow.backward, cfg.tau_flow, &previous);
    let lookup = |k: usize| previous[k].1;
    Ok(corr
        .into_iter()
        .map(|c| FlowTarget {
            vertex: c.vertex,
            target: lookup(c.vertex) + c.u,
        })
        .collect())
}

fn solve(
    rig: &Rig,
    obs: &FrameObservation,
    guidance: &GuidanceSets,
    neighbor: Option<&[f64]>,
    targets: &[FlowTarget],
    init: FrameParams,
    cfg: &FitConfig,
) -> Result<FrameParams> {
    let problem = FrameProblem {
        rig,
        landmarks: &obs.landmarks,
        image: obs.image.as_ref(),
        flow_targets: targets,
        guidance,
        neighbor,
        weights: cfg.weights,
    };
    optimize_frame(&problem, init, cfg)
}

fn at_frame(frame: usize) -> impl Fn(Error) -> Error {
    move |e| {
        if e.is_numeric() {
            Error::FrameFailed {
                frame,
                source: Box::new(e),
            }
        } else {
            e
        }
    }
}

/// Fits every frame against `procedural` (used both as initialization and
/// as the guidance signal).
///
/// The first pass runs forward, each frame starting from the procedural
/// weights and the previous frame's pose, with the temporal and flow terms
/// tied to frame `j-1`. The second pass runs backward from the first-pass
/// solutions with the temporal term tied to `j+1` and no flow term.
/// Weights are truncated to `[0, 1]` once, at the end.
pub fn fit_curve(rig: &Rig, procedural: &Curve, obs: &dyn ObservationProvider, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if procedural.labels != rig.labels {
        return Err(Error::Config(format!(
            "procedural curve labels {:?} differ from rig labels {:?}",
            procedural.labels, rig.labels
        )));
    }
    let n = procedural.len();
    let guidance: Vec<GuidanceSets> = (0..n).map(|j| guidance_sets(procedural, j, cfg)).collect();

    let mut first: Vec<FrameParams> = Vec::with_capacity(n);
    for j in 0..n {
        let o = obs.observation(j)?;
        let (pose, targets, neighbor) = match first.last() {
            Some(prev) => (
                prev.pose,
                screened_targets(rig, prev, &o, cfg).map_err(at_frame(j))?,
                Some(prev.weights.as_slice()),
            ),
            None => (cfg.initial_pose(), Vec::new(), None),
        };
        let init = FrameParams {
            weights: procedural.frames[j].clone(),
            pose,
        };
        let sol = solve(rig, &o, &guidance[j], neighbor, &targets, init, cfg).map_err(at_frame(j))?;
        first.push(sol);
    }

    let mut second: Vec<Option<FrameParams>> = vec![None; n];
    for j in (0..n).rev() {
        let o = obs.observation(j)?;
        let neighbor = second.get(j + 1).and_then(|s| s.as_ref()).map(|p| p.weights.as_slice());
        let sol = solve(rig, &o, &guidance[j], neighbor, &[], first[j].clone(), cfg).map_err(at_frame(j))?;
        second[j] = Some(sol);
    }

    let mut curve = Curve::zeros(procedural.fps, procedural.labels.clone(), n);
    let mut poses = Vec::with_capacity(n);
    for (row, sol) in curve.frames.iter_mut().zip(second.into_iter().flatten()) {
        for (dst, src) in row.iter_mut().zip(&sol.weights) {
            *dst = src.clamp(0.0, 1.0);
        }
        let mut pose = sol.pose;
        pose.normalize_rotation();
        poses.push(pose);
    }
    Ok(FitResult { curve, poses })
}

/// [`fit_curve`] with the procedural curve generated from `timeline`.
pub fn fit_clip(
    rig: &Rig,
    timeline: &Timeline,
    map: &PhonemeVisemeMap,
    rules: &ProceduralRules,
    fps: f64,
    obs: &dyn ObservationProvider,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let procedural = generate_procedural(timeline, fps, map, rules)?;
    fit_curve(rig, &procedural, obs, cfg)
}

// ------------------------------------------------------------ pose files

/// `frame,qw,qx,qy,qz,tx,ty,tz`, 9 decimals.
pub fn write_poses(poses: &[Pose]) -> String {
    let mut out = String::from("frame,qw,qx,qy,qz,tx,ty,tz\n");
    for (j, p) in poses.iter().enumerate() {
        let (q, t) = (p.rotation, p.translation);
        let _ = writeln!(
            out,
            "{j},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z
        );
    }
    out
}

pub fn read_poses(path: &Path, intrinsics: Intrinsics) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    parse_poses(&origin, &text, intrinsics)
}

pub fn parse_poses(origin: &str, text: &str, intrinsics: Intrinsics) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("frame") {
            continue;
        }
        let nums: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(origin, idx + 1, "bad number"))?;
        if nums.len() != 8 || nums[0] as usize != poses.len() {
            return Err(Error::parse(origin, idx + 1, "expected frame,qw,qx,qy,qz,tx,ty,tz in order"));
        }
        let mut p = Pose::new(
            Quaternion::new(nums[1], nums[2], nums[3], nums[4]),
            Vector3::new(nums[5], nums[6], nums[7]),
            intrinsics,
        );
        p.normalize_rotation();
        poses.push(p);
    }
    Ok(poses)
}
