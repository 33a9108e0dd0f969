#![allow(dead_code)]

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;

use viseme_core::camera::{project, Intrinsics, Pose};
use viseme_core::fit::observation::RgbImage;
use viseme_core::fit::{FlowTarget, FrameParams, FrameProblem, GuidanceSets, Landmark, LossWeights};
use viseme_core::rig::{Mesh, Rig};

pub const INTRINSICS: Intrinsics = Intrinsics {
    focal: 300.0,
    cx: 64.0,
    cy: 48.0,
};

/// A random frame objective. Weights avoid the kinks of the range term and
/// every projected vertex sits well inside one pixel cell, so central
/// differences see a smooth function.
pub struct Instance {
    pub rig: Rig,
    pub landmarks: Vec<Landmark>,
    pub image: RgbImage,
    pub targets: Vec<FlowTarget>,
    pub guidance: GuidanceSets,
    pub neighbor: Vec<f64>,
    pub params: FrameParams,
}

impl Instance {
    pub fn problem(&self, weights: LossWeights) -> FrameProblem<'_> {
        FrameProblem {
            rig: &self.rig,
            landmarks: &self.landmarks,
            image: Some(&self.image),
            flow_targets: &self.targets,
            guidance: &self.guidance,
            neighbor: Some(&self.neighbor),
            weights,
        }
    }
}

pub fn random_rig<R: Rng>(rng: &mut R, vertices: usize, visemes: usize) -> Rig {
    let neutral: Vec<Vector3<f64>> = (0..vertices)
        .map(|_| {
            Vector3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.2..0.2),
            )
        })
        .collect();
    let colors = (0..vertices)
        .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
        .collect();
    let shapes = (0..visemes)
        .map(|_| {
            let v = neutral
                .iter()
                .map(|b| b + Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.1..0.1)))
                .collect();
            Mesh::new(v, vec![], None).unwrap()
        })
        .collect();
    let labels = (0..visemes).map(|i| format!("V{i}")).collect();
    let bindings = (0..vertices).map(|k| (k as u32, k)).collect();
    Rig::new(Mesh::new(neutral, vec![], Some(colors)).unwrap(), shapes, labels, bindings).unwrap()
}

pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(-0.3..0.3);
    let q = UnitQuaternion::from_scaled_axis(axis.normalize() * angle).into_inner();
    // deliberately off the unit sphere
    let q = q * rng.random_range(0.8..1.2);
    Pose::new(
        q,
        Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(4.0..6.0)),
        INTRINSICS,
    )
}

fn weight_away_from_kinks<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let w: f64 = rng.random_range(-0.5..1.5);
        if w.abs() > 0.02 && (w - 1.0).abs() > 0.02 {
            return w;
        }
    }
}

fn cell_margin(p: &Vector2<f64>) -> f64 {
    let fx = p.x - p.x.floor();
    let fy = p.y - p.y.floor();
    fx.min(1.0 - fx).min(fy).min(1.0 - fy)
}

pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    loop {
        let rig = random_rig(rng, 10, 5);
        let pose = random_pose(rng);
        let weights: Vec<f64> = (0..5).map(|_| weight_away_from_kinks(rng)).collect();
        let unit = Pose {
            rotation: pose.rotation.normalize(),
            ..pose
        };
        let projected: Vec<Vector2<f64>> = (0..10)
            .map(|k| project(&rig.blend_vertex(k, &weights), &unit).unwrap())
            .collect();
        let inside = projected
            .iter()
            .all(|p| p.x > 2.0 && p.y > 2.0 && p.x < 125.0 && p.y < 93.0);
        if !inside || projected.iter().any(|p| cell_margin(p) < 0.05) {
            continue;
        }
        let image = smooth_image(rng, 128, 96);
        let mut ids: Vec<usize> = (0..10).collect();
        ids.shuffle(rng);
        let landmarks = ids[..6]
            .iter()
            .map(|&k| Landmark {
                id: k as u32,
                position: projected[k] + Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                beta: rng.random_range(0.5..5.0),
            })
            .collect();
        ids.shuffle(rng);
        let targets = ids[..5]
            .iter()
            .map(|&k| FlowTarget {
                vertex: k,
                target: projected[k] + Vector2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
            })
            .collect();
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(rng);
        let na = rng.random_range(1..=2);
        let ns = rng.random_range(1..=3);
        let mut activate = order[..na].to_vec();
        let mut suppress = order[na..na + ns].to_vec();
        activate.sort_unstable();
        suppress.sort_unstable();
        // make sure the range term has something to do
        let mut weights = weights;
        if weights.iter().all(|w| (0.0..=1.0).contains(w)) {
            weights[rng.random_range(0..5)] = if rng.random_bool(0.5) { 1.3 } else { -0.3 };
        }
        let neighbor = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let inst = Instance {
            rig,
            landmarks,
            image,
            targets,
            guidance: GuidanceSets { suppress, activate },
            neighbor,
            params: FrameParams { weights, pose },
        };
        if stable(&inst) {
            return inst;
        }
    }
}

/// Random image made of a few plane waves per channel, wavelengths 15 to
/// 60 pixels.
pub fn smooth_image<R: Rng>(rng: &mut R, width: usize, height: usize) -> RgbImage {
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / rng.random_range(15.0..60.0);
            [k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.05..0.15)]
        })
        .collect();
    let mut image = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let mut px = [0.5f32; 3];
            for (i, w) in waves.iter().enumerate() {
                px[i / 3] += (w[3] * (w[0] * x as f64 + w[1] * y as f64 + w[2]).sin()) as f32;
            }
            image.set(x, y, px);
        }
    }
    image
}

fn stable(inst: &Instance) -> bool {
    let unit = Pose {
        rotation: inst.params.pose.rotation.normalize(),
        ..inst.params.pose
    };
    (0..inst.rig.vertex_count()).all(|k| {
        let p = project(&inst.rig.blend_vertex(k, &inst.params.weights), &unit).unwrap();
        p.x > 2.0 && p.y > 2.0 && p.x < 125.0 && p.y < 93.0 && cell_margin(&p) >= 0.05
    })
}

/// Central differences of `f` over the flat parameter vector.
pub fn numeric_gradient(params: &FrameParams, h: f64, f: impl Fn(&FrameParams) -> f64) -> Vec<f64> {
    let base = params.to_vec();
    let mut p = params.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + h;
        p.set_from(&x);
        let fp = f(&p);
        x[i] = base[i] - h;
        p.set_from(&x);
        let fm = f(&p);
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest coordinate difference relative to the largest reference
/// coordinate.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}
