//! Seeded synthetic clips with exact ground truth.
//!
//! A small face rig with an open lip gap is animated by a known weight curve
//! and head motion. Landmarks, images and flow are rendered from that truth,
//! so fitted curves and poses can be scored against it.

use std::borrow::Cow;
use std::f64::consts::TAU;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{project, Intrinsics, Pose};
use crate::curve::{write_curve, Curve};
use crate::error::{Error, Result};
use crate::fit::engine::write_poses;
use crate::fit::guidance::guidance_sets;
use crate::fit::observation::{
    flow_file_name, image_file_name, write_flow, write_landmarks, write_ppm, FlowGrid, FlowPair, FrameObservation,
    Landmark, LandmarkRow, ObservationProvider, RgbImage, LANDMARK_FILE,
};
use crate::fit::FitConfig;
use crate::procedural::{generate_procedural, procedural_at, ProceduralRules};
use crate::rig::{rig_files, LandmarkId, LipPairs, Mesh, Rig, DEFAULT_VISEME_LABELS};
use crate::timeline::{frame_time, write_alignment, PhonemeSegment, PhonemeVisemeMap, Timeline};

pub const IMAGE_WIDTH: usize = 640;
pub const IMAGE_HEIGHT: usize = 480;
pub const FOCAL: f64 = 1000.0;
/// Radius in pixels of the disc drawn around each projected vertex.
pub const SPLAT_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub frames: usize,
    pub fps: f64,
    /// Standard deviation of landmark noise, pixels.
    pub landmark_noise: f64,
    /// Skip images and flow.
    pub landmarks_only: bool,
    /// Make SSS move the landmark-bound vertices exactly like MBP.
    pub ambiguous_closure: bool,
    /// Replace the random phoneme track.
    pub timeline: Option<Timeline>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 100,
            fps: 30.0,
            landmark_noise: 0.0,
            landmarks_only: false,
            ambiguous_closure: false,
            timeline: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub options: SynthOptions,
    pub rig: Rig,
    pub timeline: Timeline,
    pub map: PhonemeVisemeMap,
    pub rules: ProceduralRules,
    pub procedural: Curve,
    pub truth: Curve,
    pub poses: Vec<Pose>,
    /// Observed (possibly noisy) landmarks per frame.
    pub landmarks: Vec<Vec<Landmark>>,
    pub config: FitConfig,
}

// Vertex layout of the synthetic face.
struct Layout {
    vertices: Vec<Vector3<f64>>,
    upper_lip: Vec<usize>,
    lower_lip: Vec<usize>,
    corners: [usize; 2],
    chin: Vec<usize>,
    jaw: Vec<usize>,
    cheeks: Vec<usize>,
    teeth: Vec<usize>,
    grid: Vec<Vec<usize>>,
}

fn depth(x: f64, y: f64) -> f64 {
    0.25 * (x * x + y * y)
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn layout() -> Layout {
    let mut vertices = Vec::new();
    let mut push = |x: f64, y: f64, dz: f64| {
        vertices.push(Vector3::new(x, y, depth(x, y) + dz));
        vertices.len() - 1
    };
    let mut grid = Vec::new();
    for y in [-1.0, -0.7, -0.4, -0.1, 0.15] {
        let row = [-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9].iter().map(|&x| push(x, y, 0.0)).collect();
        grid.push(row);
    }
    let cheeks = vec![push(-0.75, 0.4, 0.0), push(0.75, 0.4, 0.0), push(-0.95, 0.5, 0.0), push(0.95, 0.5, 0.0)];
    let upper_lip = [-0.4, -0.2, 0.0, 0.2, 0.4].iter().map(|&x| push(x, 0.4, 0.0)).collect();
    let lower_lip = [-0.3, -0.1, 0.1, 0.3].iter().map(|&x| push(x, 0.6, 0.0)).collect();
    let corners = [push(-0.55, 0.5, 0.0), push(0.55, 0.5, 0.0)];
    let jaw = vec![push(-0.7, 0.8, 0.0), push(0.7, 0.8, 0.0), push(-0.9, 0.75, 0.0), push(0.9, 0.75, 0.0)];
    let chin = [-0.6, -0.3, 0.0, 0.3, 0.6].iter().map(|&x| push(x, 1.0, 0.0)).collect();
    let teeth = vec![push(-0.15, 0.5, 0.1), push(0.15, 0.5, 0.1)];
    Layout {
        vertices,
        upper_lip,
        lower_lip,
        corners,
        chin,
        jaw,
        cheeks,
        teeth,
        grid,
    }
}

// Amplitudes of the motion primitives making up one viseme.
#[derive(Default, Clone, Copy)]
struct Shape {
    jaw: f64,
    close: f64,
    widen: f64,
    pucker: f64,
    raise: f64,
    tuck: f64,
    teeth: f64,
}

fn shape_of(label: &str) -> Shape {
    let s = Shape::default();
    match label {
        "AAA" => Shape { jaw: 0.35, widen: 0.05, ..s },
        "EH" => Shape { jaw: 0.2, widen: 0.12, ..s },
        "AHH" => Shape { jaw: 0.28, widen: 0.02, raise: 0.03, ..s },
        "OHH" => Shape { jaw: 0.22, pucker: 0.12, ..s },
        "UUU" => Shape { jaw: 0.06, pucker: 0.22, ..s },
        "IEE" => Shape { jaw: 0.08, widen: 0.18, teeth: 0.05, ..s },
        "RRR" => Shape { jaw: 0.1, pucker: 0.1, raise: 0.05, ..s },
        "WWW" => Shape { jaw: 0.04, pucker: 0.26, close: 0.05, ..s },
        "SSS" => Shape { close: 0.12, widen: 0.1, teeth: 0.1, ..s },
        "FFF" => Shape { tuck: 0.12, close: 0.1, raise: 0.04, ..s },
        "TTH" => Shape { jaw: 0.08, teeth: 0.12, tuck: 0.04, ..s },
        "MBP" => Shape { close: 0.2, tuck: -0.03, ..s },
        "SSH" => Shape { jaw: 0.08, pucker: 0.15, teeth: 0.06, ..s },
        "SCHWA" => Shape { jaw: 0.15, ..s },
        "GK" => Shape { jaw: 0.14, widen: 0.04, ..s },
        _ => Shape { jaw: 0.12, teeth: 0.04, widen: 0.03, ..s },
    }
}

fn shape_deltas(lay: &Layout, sh: Shape) -> Vec<Vector3<f64>> {
    let mut d = vec![Vector3::zeros(); lay.vertices.len()];
    let x = |i: usize| lay.vertices[i].x;
    for &i in &lay.lower_lip {
        d[i] += Vector3::new(x(i) * sh.widen - 0.5 * x(i) * sh.pucker, sh.jaw - sh.close - 0.3 * sh.tuck, sh.tuck - sh.pucker);
    }
    for &i in &lay.upper_lip {
        d[i] += Vector3::new(x(i) * sh.widen - 0.5 * x(i) * sh.pucker, -sh.raise, -sh.pucker);
    }
    for &i in &lay.corners {
        let side = x(i).signum();
        d[i] += Vector3::new(side * (sh.widen - sh.pucker), 0.4 * sh.jaw, -0.5 * sh.pucker);
    }
    for &i in &lay.chin {
        d[i] += Vector3::new(0.0, sh.jaw, 0.0);
    }
    for &i in &lay.jaw {
        d[i] += Vector3::new(0.0, 0.6 * sh.jaw, 0.0);
    }
    for &i in &lay.cheeks {
        d[i] += Vector3::new(0.3 * x(i).signum() * sh.widen, 0.2 * sh.jaw, 0.0);
    }
    for &i in &lay.teeth {
        d[i] += Vector3::new(0.0, 0.5 * sh.jaw, -sh.teeth);
    }
    d
}

fn vertex_color(k: usize) -> Vector3<f64> {
    let c = |a: usize, span: usize, base: usize| ((k * a) % span + base) as f64 / 255.0;
    Vector3::new(c(37, 200, 40), c(91, 200, 30), c(53, 180, 50))
}

/// Landmark ids below this sit around the mouth.
pub const MOUTH_LANDMARKS: u32 = 24;
/// First id of the landmarks on the upper face.
pub const FACE_LANDMARK_BASE: u32 = 30;
// Half-range of the per-viseme random displacement, model units.
const SIGNATURE: f64 = 0.15;

fn build_rig(lay: &Layout, rng: &mut ChaCha8Rng, ambiguous: bool) -> Result<Rig> {
    let n = lay.vertices.len();
    let neutral_v: Vec<Vector3<f64>> = lay.vertices.iter().map(|v| v.map(quantize)).collect();
    let colors: Vec<Vector3<f64>> = (0..n).map(vertex_color).collect();

    let mut triangles = Vec::new();
    for r in 0..lay.grid.len() - 1 {
        for c in 0..lay.grid[r].len() - 1 {
            let (a, b) = (lay.grid[r][c], lay.grid[r][c + 1]);
            let (e, f) = (lay.grid[r + 1][c], lay.grid[r + 1][c + 1]);
            triangles.push([a, e, b]);
            triangles.push([b, e, f]);
        }
    }

    let mut bindings: Vec<(LandmarkId, usize)> = Vec::new();
    let mouth: Vec<usize> = lay
        .upper_lip
        .iter()
        .chain(&lay.lower_lip)
        .chain(&lay.corners)
        .chain(&lay.chin)
        .chain(&lay.jaw)
        .chain(&lay.cheeks)
        .copied()
        .collect();
    for (id, &v) in mouth.iter().enumerate() {
        bindings.push((id as LandmarkId, v));
    }
    let face = [lay.grid[0][1], lay.grid[0][5], lay.grid[2][0], lay.grid[2][6], lay.grid[3][3], lay.grid[4][3]];
    for (i, &v) in face.iter().enumerate() {
        bindings.push((FACE_LANDMARK_BASE + i as LandmarkId, v));
    }

    // Each viseme gets its own seeded displacement field on top of the
    // shared primitives so that no viseme is a mix of the others. The
    // vertical lip pair keeps its exact height change.
    let gap_pair = [lay.upper_lip[2], lay.lower_lip[2]];
    let mouth_region: Vec<usize> = mouth.iter().chain(&lay.teeth).copied().collect();
    let labels: Vec<String> = DEFAULT_VISEME_LABELS.iter().map(|s| s.to_string()).collect();
    let mut deltas: Vec<Vec<Vector3<f64>>> = Vec::new();
    for label in &labels {
        let mut d = shape_deltas(lay, shape_of(label));
        for &i in &mouth_region {
            d[i].x += rng.random_range(-SIGNATURE..SIGNATURE);
            let dy: f64 = rng.random_range(-SIGNATURE..SIGNATURE);
            if !gap_pair.contains(&i) {
                d[i].y += dy;
            }
            d[i].z += rng.random_range(-0.02..0.02);
        }
        deltas.push(d);
    }
    if ambiguous {
        let mbp = labels.iter().position(|l| l == "MBP").unwrap();
        let sss = labels.iter().position(|l| l == "SSS").unwrap();
        for &(_, v) in &bindings {
            deltas[sss][v] = deltas[mbp][v];
        }
    }
    let visemes = deltas
        .iter()
        .map(|d| {
            let v = neutral_v.iter().zip(d).map(|(b, dd)| (b + dd).map(quantize)).collect();
            Mesh::new(v, triangles.clone(), None)
        })
        .collect::<Result<Vec<_>>>()?;
    let neutral = Mesh::new(neutral_v, triangles, Some(colors))?;
    Rig::new(neutral, visemes, labels, bindings)?
        .with_lip_pairs(LipPairs {
            horizontal: (lay.corners[0], lay.corners[1]),
            vertical: (lay.upper_lip[2], lay.lower_lip[2]),
        })
        .map(|r| r.with_mouth_landmarks((0..MOUTH_LANDMARKS).collect()))
}

const PHONEMES: [&str; 24] = [
    "a", "e", "i", "o", "u", "ə", "æ", "m", "b", "p", "s", "z", "f", "v", "w", "l", "n", "t", "d", "k", "g", "r", "ʃ",
    "θ",
];

fn random_timeline(rng: &mut ChaCha8Rng, duration: f64) -> Result<Timeline> {
    let mut segments = Vec::new();
    let mut t = rng.random_range(0.1..0.2);
    while t < duration - 0.05 {
        if rng.random_bool(0.1) {
            t += rng.random_range(0.05..0.15);
            continue;
        }
        let d: f64 = rng.random_range(0.06..0.18);
        let end = (t + d).min(duration);
        if end - t < 0.02 {
            break;
        }
        let ph = PHONEMES[rng.random_range(0..PHONEMES.len())];
        segments.push(PhonemeSegment::new(ph, t, end));
        t = end;
    }
    Timeline::new(segments, Some(duration))
}

fn head_pose(t: f64, phase: &[f64; 6], intrinsics: Intrinsics) -> Pose {
    let yaw = 0.04 * (TAU * 0.4 * t + phase[0]).sin();
    let pitch = 0.03 * (TAU * 0.3 * t + phase[1]).sin();
    let roll = 0.02 * (TAU * 0.5 * t + phase[2]).sin();
    let q = UnitQuaternion::from_euler_angles(pitch, yaw, roll).into_inner();
    let tr = Vector3::new(
        0.05 * (TAU * 0.2 * t + phase[3]).sin(),
        0.03 * (TAU * 0.35 * t + phase[4]).sin(),
        5.0 + 0.1 * (TAU * 0.25 * t + phase[5]).sin(),
    );
    Pose::new(q, tr, intrinsics)
}

impl SyntheticClip {
    pub fn generate(options: SynthOptions) -> Result<Self> {
        if options.frames == 0 || !(options.fps > 0.0) {
            return Err(Error::Config("synthetic clip needs frames > 0 and fps > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let lay = layout();
        let rig = build_rig(&lay, &mut rng, options.ambiguous_closure)?;
        let duration = options.frames as f64 / options.fps;
        let timeline = match &options.timeline {
            Some(t) => t.clone(),
            None => random_timeline(&mut rng, duration)?,
        };
        let map = PhonemeVisemeMap::default_for(&rig.labels);
        let rules = ProceduralRules::default();
        let procedural = generate_procedural(&timeline, options.fps, &map, &rules)?;
        let config = FitConfig {
            intrinsics: Intrinsics {
                focal: FOCAL,
                cx: IMAGE_WIDTH as f64 / 2.0,
                cy: IMAGE_HEIGHT as f64 / 2.0,
            },
            ..FitConfig::default()
        };

        // Ground truth: procedural shapes with per-viseme gain, a little
        // timing jitter and slow amplitude wobble; anything the guidance
        // would suppress is zero.
        let nv = rig.viseme_count();
        let gain: Vec<f64> = (0..nv).map(|_| rng.random_range(0.4..0.9)).collect();
        let wobble: Vec<f64> = (0..nv).map(|_| rng.random_range(0.0..TAU)).collect();
        let shift_phase = rng.random_range(0.0..TAU);
        let phase: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        let mut truth = Curve::zeros(options.fps, rig.labels.clone(), procedural.len());
        for j in 0..procedural.len() {
            let t = frame_time(j, options.fps);
            let shifted = t + 0.025 * (TAU * 0.7 * t + shift_phase).sin();
            let base = procedural_at(&timeline, shifted, &map, &rules)?;
            let sets = guidance_sets(&procedural, j, &config);
            for i in 0..nv {
                let w = base[i] * gain[i] * (1.0 + 0.3 * (TAU * 1.1 * t + wobble[i]).sin());
                truth.frames[j][i] = if sets.suppress.contains(&i) { 0.0 } else { w.clamp(0.0, 1.0) };
            }
        }
        let poses: Vec<Pose> = (0..procedural.len())
            .map(|j| head_pose(frame_time(j, options.fps), &phase, config.intrinsics))
            .collect();

        // Noise comes from its own stream so the truth does not depend on it.
        let mut noise_rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x9e37_79b9_7f4a_7c15);
        let normal = Normal::new(0.0, options.landmark_noise.max(0.0))
            .map_err(|e| Error::Config(format!("landmark noise: {e}")))?;
        let mut landmarks = Vec::with_capacity(procedural.len());
        for j in 0..procedural.len() {
            let w = &truth.frames[j];
            let mut frame = Vec::with_capacity(rig.landmark_bindings.len());
            for &(id, v) in &rig.landmark_bindings {
                let p = project(&rig.blend_vertex(v, w), &poses[j])?;
                let p = if options.landmark_noise > 0.0 {
                    p + Vector2::new(normal.sample(&mut noise_rng), normal.sample(&mut noise_rng))
                } else {
                    p
                };
                let beta = if rig.is_mouth_landmark(id) {
                    config.mouth_beta
                } else {
                    config.beta
                };
                frame.push(Landmark {
                    id,
                    position: p.map(quantize),
                    beta,
                });
            }
            landmarks.push(frame);
        }

        Ok(Self {
            options,
            rig,
            timeline,
            map,
            rules,
            procedural,
            truth,
            poses,
            landmarks,
            config,
        })
    }

    pub fn frames(&self) -> usize {
        self.truth.len()
    }

    fn projected(&self, j: usize) -> Result<Vec<Vector2<f64>>> {
        let w = &self.truth.frames[j];
        (0..self.rig.vertex_count())
            .map(|k| project(&self.rig.blend_vertex(k, w), &self.poses[j]))
            .collect()
    }

    /// Rendered image of frame `j`: a smooth background with a small disc of
    /// vertex colour around every projected vertex.
    pub fn render_image(&self, j: usize) -> Result<RgbImage> {
        let mut img = RgbImage::new(IMAGE_WIDTH, IMAGE_HEIGHT);
        let q = |v: f64| (v * 255.0).round() as f32 / 255.0;
        for y in 0..IMAGE_HEIGHT {
            for x in 0..IMAGE_WIDTH {
                let fx = x as f64 / IMAGE_WIDTH as f64;
                let fy = y as f64 / IMAGE_HEIGHT as f64;
                img.set(x, y, [q(0.3 + 0.2 * fx), q(0.25 + 0.2 * fy), q(0.4 + 0.1 * fx * fy)]);
            }
        }
        let colors = self.rig.neutral.colors.as_ref().expect("synthetic rig has colors");
        for (k, p) in self.projected(j)?.iter().enumerate() {
            let c = colors[k];
            splat(&mut img, p, [c.x as f32, c.y as f32, c.z as f32]);
        }
        Ok(img)
    }

    /// Exact flow between frames `j-1` and `j`; `None` for the first frame.
    pub fn render_flow(&self, j: usize) -> Result<Option<FlowPair>> {
        if j == 0 {
            return Ok(None);
        }
        let before = self.projected(j - 1)?;
        let after = self.projected(j)?;
        let mut forward = FlowGrid::new(IMAGE_WIDTH, IMAGE_HEIGHT);
        let mut backward = FlowGrid::new(IMAGE_WIDTH, IMAGE_HEIGHT);
        for (p0, p1) in before.iter().zip(&after) {
            let u = p1 - p0;
            let (ux, uy) = (u.x as f32, u.y as f32);
            splat(&mut forward, p0, [ux, uy]);
            splat(&mut backward, p1, [-ux, -uy]);
        }
        Ok(Some(FlowPair { forward, backward }))
    }

    /// All files of the clip as `(relative path, bytes)`: the rig, the
    /// alignment, map and config, the observations and the ground truth.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out: Vec<(String, Vec<u8>)> = Vec::new();
        for (name, text) in rig_files(&self.rig) {
            out.push((format!("rig/{name}"), text.into_bytes()));
        }
        out.push(("alignment.tsv".into(), write_alignment(&self.timeline).into_bytes()));
        out.push(("map.txt".into(), self.map.to_text().into_bytes()));
        out.push(("config.txt".into(), self.config.to_text().into_bytes()));
        let rows: Vec<LandmarkRow> = self
            .landmarks
            .iter()
            .enumerate()
            .flat_map(|(frame, lms)| {
                lms.iter().map(move |l| LandmarkRow {
                    frame,
                    id: l.id,
                    position: l.position,
                    beta: None,
                })
            })
            .collect();
        out.push((format!("obs/{LANDMARK_FILE}"), write_landmarks(&rows).into_bytes()));
        if !self.options.landmarks_only {
            for j in 0..self.frames() {
                out.push((format!("obs/{}", image_file_name(j)), write_ppm(&self.render_image(j)?)));
                if let Some(flow) = self.render_flow(j)? {
                    out.push((format!("obs/{}", flow_file_name(j)), write_flow(&flow)));
                }
            }
        }
        out.push(("truth/curve.csv".into(), write_curve(&self.truth).into_bytes()));
        out.push(("truth/procedural.csv".into(), write_curve(&self.procedural).into_bytes()));
        out.push(("truth/poses.csv".into(), write_poses(&self.poses).into_bytes()));
        Ok(out)
    }
}

fn splat<const C: usize>(grid: &mut crate::fit::observation::Grid<C>, p: &Vector2<f64>, value: [f32; C]) {
    let r = SPLAT_RADIUS;
    let x0 = (p.x - r).floor().max(0.0) as usize;
    let y0 = (p.y - r).floor().max(0.0) as usize;
    let x1 = ((p.x + r).ceil() as isize).min(grid.width as isize - 1);
    let y1 = ((p.y + r).ceil() as isize).min(grid.height as isize - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let dx = x as f64 - p.x;
            let dy = y as f64 - p.y;
            if dx * dx + dy * dy <= r * r {
                grid.set(x, y, value);
            }
        }
    }
}

impl ObservationProvider for SyntheticClip {
    fn observation(&self, frame: usize) -> Result<Cow<'_, FrameObservation>> {
        if frame >= self.frames() {
            return Ok(Cow::Owned(FrameObservation::default()));
        }
        let mut obs = FrameObservation {
            landmarks: self.landmarks[frame].clone(),
            image: None,
            flow: None,
        };
        if !self.options.landmarks_only {
            obs.image = Some(self.render_image(frame)?);
            obs.flow = self.render_flow(frame)?;
        }
        Ok(Cow::Owned(obs))
    }
}
