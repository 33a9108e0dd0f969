use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::kv;

/// Weights `w1..w7` of the per-frame objective, in the order landmark,
/// photometric, suppression, activation, flow, temporal, range.
pub type LossWeights = [f64; 7];

pub const DEFAULT_LOSS_WEIGHTS: LossWeights = [0.8, 1.0, 800.0, 150.0, 1.0, 300.0, 100.0];

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub weights: LossWeights,
    /// Top-`m` window for suppression.
    pub m: usize,
    /// Top-`n` of the current frame for activation.
    pub n: usize,
    /// Half-width in frames of the suppression neighbourhood.
    pub radius: usize,
    pub iters: usize,
    pub lr0: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Forward-backward flow consistency threshold, pixels.
    pub tau_flow: f64,
    /// Procedural values below this never count towards a top-k.
    pub eps_act: f64,
    pub intrinsics: Intrinsics,
    /// Starting pose of the first frame.
    pub init_rotation: Quaternion<f64>,
    pub init_translation: Vector3<f64>,
    /// Landmark weight used when the landmark file leaves it blank.
    pub beta: f64,
    pub mouth_beta: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: DEFAULT_LOSS_WEIGHTS,
            m: 3,
            n: 2,
            radius: 2,
            iters: 250,
            lr0: 0.1,
            decay_every: 10,
            decay_factor: 0.9,
            tau_flow: 1.0,
            eps_act: 0.01,
            intrinsics: Intrinsics::default(),
            init_rotation: Quaternion::identity(),
            init_translation: Vector3::new(0.0, 0.0, 5.0),
            beta: 1.0,
            mouth_beta: 5.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n > self.m {
            return Err(Error::Config(format!("n ({}) must not exceed m ({})", self.n, self.m)));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.decay_factor > 0.0) {
            return Err(Error::Config("lr0 and decay_factor must be positive".into()));
        }
        if !(self.tau_flow > 0.0) {
            return Err(Error::Config("tau_flow must be positive".into()));
        }
        if !(self.intrinsics.focal > 0.0) {
            return Err(Error::Config("focal must be positive".into()));
        }
        if self.init_rotation.norm() == 0.0 {
            return Err(Error::Config("init rotation must be non-zero".into()));
        }
        if !(self.beta > 0.0 && self.mouth_beta > 0.0) {
            return Err(Error::Config("landmark weights must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for 0-based iteration `it`: `lr0 * decay^(it / every)`.
    pub fn lr_at(&self, it: usize) -> f64 {
        self.lr0 * self.decay_factor.powi((it / self.decay_every) as i32)
    }

    pub fn initial_pose(&self) -> Pose {
        let mut p = Pose::new(self.init_rotation, self.init_translation, self.intrinsics);
        p.normalize_rotation();
        p
    }

    pub fn parse(origin: &str, text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in kv::parse(origin, text)? {
            let key = e.key.as_str();
            match key {
                "m" => cfg.m = kv::parse_usize(origin, &e)?,
                "n" => cfg.n = kv::parse_usize(origin, &e)?,
                "radius" => cfg.radius = kv::parse_usize(origin, &e)?,
                "iters" => cfg.iters = kv::parse_usize(origin, &e)?,
                "decay_every" => cfg.decay_every = kv::parse_usize(origin, &e)?,
                "init_pose" => {
                    let nums: Vec<f64> = e
                        .value
                        .split_whitespace()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::parse(origin, e.line, "init_pose needs 7 numbers"))?;
                    if nums.len() != 7 {
                        return Err(Error::parse(origin, e.line, "init_pose needs `qw qx qy qz tx ty tz`"));
                    }
                    cfg.init_rotation = Quaternion::new(nums[0], nums[1], nums[2], nums[3]);
                    cfg.init_translation = Vector3::new(nums[4], nums[5], nums[6]);
                }
                _ => {
                    let v = kv::parse_f64(origin, &e)?;
                    match key {
                        "w1" | "w2" | "w3" | "w4" | "w5" | "w6" | "w7" => {
                            let i = key[1..].parse::<usize>().unwrap() - 1;
                            cfg.weights[i] = v;
                        }
                        "lr0" => cfg.lr0 = v,
                        "decay_factor" => cfg.decay_factor = v,
                        "tau_flow" => cfg.tau_flow = v,
                        "eps_act" => cfg.eps_act = v,
                        "focal" => cfg.intrinsics.focal = v,
                        "cx" => cfg.intrinsics.cx = v,
                        "cy" => cfg.intrinsics.cy = v,
                        "beta" => cfg.beta = v,
                        "mouth_beta" => cfg.mouth_beta = v,
                        _ => return Err(Error::parse(origin, e.line, format!("unknown key `{key}`"))),
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.weights.iter().enumerate() {
            let _ = writeln!(out, "w{}={w}", i + 1);
        }
        let _ = writeln!(out, "m={}\nn={}\nradius={}", self.m, self.n, self.radius);
        let _ = writeln!(out, "iters={}\nlr0={}", self.iters, self.lr0);
        let _ = writeln!(out, "decay_every={}\ndecay_factor={}", self.decay_every, self.decay_factor);
        let _ = writeln!(out, "tau_flow={}\neps_act={}", self.tau_flow, self.eps_act);
        let i = self.intrinsics;
        let _ = writeln!(out, "focal={}\ncx={}\ncy={}", i.focal, i.cx, i.cy);
        let (q, t) = (self.init_rotation, self.init_translation);
        let _ = writeln!(out, "init_pose={} {} {} {} {} {} {}", q.w, q.i, q.j, q.k, t.x, t.y, t.z);
        let _ = writeln!(out, "beta={}\nmouth_beta={}", self.beta, self.mouth_beta);
        out
    }
}
