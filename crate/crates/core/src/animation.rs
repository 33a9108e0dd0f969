//! Applying curves to assets: resampling, blendshape baking and bone-pose
//! blending.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::rig::{blend_mesh, Mesh, Rig};
use crate::timeline::{frame_count, frame_time};

/// Linear interpolation of the curve at absolute time `t`, treating frame
/// `j` as the sample at its center time. Clamped at both ends.
pub fn sample_at(curve: &Curve, t: f64) -> Result<Vec<f64>> {
    if curve.is_empty() {
        return Err(Error::Config("cannot sample an empty curve".into()));
    }
    let last = curve.len() - 1;
    let u = (t * curve.fps - 0.5).clamp(0.0, last as f64);
    let i0 = (u.floor() as usize).min(last);
    let i1 = (i0 + 1).min(last);
    let f = u - i0 as f64;
    Ok(curve.frames[i0]
        .iter()
        .zip(&curve.frames[i1])
        .map(|(a, b)| if f == 0.0 { *a } else { a + (b - a) * f })
        .collect())
}

/// Resamples to `fps_out` over the same duration (`len / fps`).
pub fn resample_curve(curve: &Curve, fps_out: f64) -> Result<Curve> {
    if !(fps_out > 0.0 && fps_out.is_finite()) {
        return Err(Error::Config(format!("fps must be positive, got {fps_out}")));
    }
    if curve.is_empty() {
        return Err(Error::Config("cannot resample an empty curve".into()));
    }
    let n = frame_count(curve.len() as f64 / curve.fps, fps_out);
    let frames = (0..n)
        .map(|j| sample_at(curve, frame_time(j, fps_out)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve {
        fps: fps_out,
        labels: curve.labels.clone(),
        frames,
    })
}

/// Arc angles below this fall back to normalized linear interpolation.
pub const SLERP_LINEAR_THRESHOLD: f64 = 1e-6;

fn unit(q: &Quaternion<f64>) -> Result<Quaternion<f64>> {
    let n = q.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Numeric(format!("quaternion norm {n}")));
    }
    Ok(q / n)
}

/// Shortest-arc spherical interpolation between two rotations.
pub fn slerp(q0: &Quaternion<f64>, q1: &Quaternion<f64>, t: f64) -> Result<Quaternion<f64>> {
    let a = unit(q0)?;
    let mut b = unit(q1)?;
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let theta = dot.min(1.0).acos();
    let out = if theta < SLERP_LINEAR_THRESHOLD {
        a * (1.0 - t) + b * t
    } else {
        let s = theta.sin();
        a * (((1.0 - t) * theta).sin() / s) + b * ((t * theta).sin() / s)
    };
    unit(&out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneTransform {
    pub rotation: Quaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: Vector3<f64>,
}

/// One transform per bone, in the asset's bone order.
#[derive(Debug, Clone, PartialEq)]
pub struct BonePose {
    pub bones: Vec<BoneTransform>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BonePoseAssets {
    pub bone_names: Vec<String>,
    pub rest: BonePose,
    /// One pose per viseme, in label order.
    pub viseme_poses: Vec<BonePose>,
}

/// Below this the weighted quaternion sum is treated as degenerate.
const NLERP_DEGENERATE: f64 = 1e-9;

/// Translation and scale blend linearly from rest; rotation is the
/// normalized sum of rest (weight `max(0, 1 - sum w)`) and viseme rotations
/// (weight `w_i`), each sign-aligned with rest.
pub fn blend_bone_pose(assets: &BonePoseAssets, w: &[f64]) -> Result<BonePose> {
    if w.len() != assets.viseme_poses.len() {
        return Err(Error::Dimension {
            expected: assets.viseme_poses.len(),
            got: w.len(),
        });
    }
    let total: f64 = w.iter().sum();
    let rest_weight = (1.0 - total).max(0.0);
    let bones = assets
        .rest
        .bones
        .iter()
        .enumerate()
        .map(|(b, rest)| {
            // rest * (1 - sum w) + sum w_i * b_i: the same affine blend as
            // deltas from rest, but exact for one-hot and zero weights
            let mut translation = rest.translation * (1.0 - total);
            let mut scale = rest.scale * (1.0 - total);
            let mut q = rest.rotation * rest_weight;
            // a lone unit-weight contributor is returned as is, so one-hot
            // weights reproduce poses without a renormalization rounding
            let mut lone = (rest_weight != 0.0).then_some((rest_weight, rest.rotation));
            let mut contributors = usize::from(rest_weight != 0.0);
            for (pose, &wi) in assets.viseme_poses.iter().zip(w) {
                let bone = &pose.bones[b];
                translation += bone.translation * wi;
                scale += bone.scale * wi;
                let aligned = if bone.rotation.dot(&rest.rotation) < 0.0 {
                    -bone.rotation
                } else {
                    bone.rotation
                };
                q += aligned * wi;
                if wi != 0.0 {
                    contributors += 1;
                    lone = Some((wi, bone.rotation));
                }
            }
            let n = q.norm();
            let rotation = match lone {
                Some((1.0, r)) if contributors == 1 => r,
                _ if n < NLERP_DEGENERATE => rest.rotation,
                _ => q / n,
            };
            BoneTransform {
                rotation,
                translation,
                scale,
            }
        })
        .collect();
    Ok(BonePose { bones })
}

/// Parses `bone,pose_label,qx,qy,qz,qw,tx,ty,tz,sx,sy,sz` rows. `pose_label`
/// is `rest` or one of `labels`; every bone needs all of them.
pub fn parse_bone_assets(origin: &str, text: &str, labels: &[String]) -> Result<BonePoseAssets> {
    let mut names: Vec<String> = Vec::new();
    // slots[pose][bone], pose 0 = rest
    let mut slots: Vec<Vec<Option<BoneTransform>>> = vec![Vec::new(); labels.len() + 1];
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("bone,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 12 {
            return Err(Error::parse(origin, line_no, format!("expected 12 fields, got {}", f.len())));
        }
        let nums = f[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(origin, line_no, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let rotation = unit(&Quaternion::new(nums[3], nums[0], nums[1], nums[2]))
            .map_err(|_| Error::parse(origin, line_no, "zero rotation"))?;
        let scale = Vector3::new(nums[7], nums[8], nums[9]);
        if scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::parse(origin, line_no, "scales must be positive"));
        }
        let transform = BoneTransform {
            rotation,
            translation: Vector3::new(nums[4], nums[5], nums[6]),
            scale,
        };
        let pose = if f[1] == "rest" {
            0
        } else {
            1 + labels
                .iter()
                .position(|l| l == f[1])
                .ok_or_else(|| Error::parse(origin, line_no, format!("unknown pose `{}`", f[1])))?
        };
        let bone = match names.iter().position(|n| n == f[0]) {
            Some(b) => b,
            None => {
                names.push(f[0].to_string());
                for s in slots.iter_mut() {
                    s.push(None);
                }
                names.len() - 1
            }
        };
        if slots[pose][bone].replace(transform).is_some() {
            return Err(Error::parse(origin, line_no, format!("duplicate pose for bone `{}`", f[0])));
        }
    }
    let mut poses = Vec::with_capacity(slots.len());
    for (p, bones) in slots.into_iter().enumerate() {
        let pose_name = if p == 0 { "rest" } else { &labels[p - 1] };
        let bones = bones
            .into_iter()
            .zip(&names)
            .map(|(b, name)| {
                b.ok_or_else(|| Error::parse(origin, 0, format!("bone `{name}` lacks pose `{pose_name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        poses.push(BonePose { bones });
    }
    let rest = poses.remove(0);
    Ok(BonePoseAssets {
        bone_names: names,
        rest,
        viseme_poses: poses,
    })
}

pub fn read_bone_assets(path: &Path, labels: &[String]) -> Result<BonePoseAssets> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bone_assets(&path.display().to_string(), &text, labels)
}

fn write_transform(out: &mut String, t: &BoneTransform) {
    let (q, p, s) = (t.rotation, t.translation, t.scale);
    let _ = write!(
        out,
        "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        q.i, q.j, q.k, q.w, p.x, p.y, p.z, s.x, s.y, s.z
    );
}

pub fn write_bone_assets(assets: &BonePoseAssets, labels: &[String]) -> String {
    let mut out = String::from("bone,pose_label,qx,qy,qz,qw,tx,ty,tz,sx,sy,sz\n");
    let poses = std::iter::once(("rest", &assets.rest))
        .chain(labels.iter().map(String::as_str).zip(&assets.viseme_poses));
    for (label, pose) in poses {
        for (name, t) in assets.bone_names.iter().zip(&pose.bones) {
            let _ = write!(out, "{name},{label},");
            write_transform(&mut out, t);
            out.push('\n');
        }
    }
    out
}

/// Blends every frame of `curve`; rows are
/// `frame,bone,qx,qy,qz,qw,tx,ty,tz,sx,sy,sz`.
pub fn bone_animation(assets: &BonePoseAssets, curve: &Curve) -> Result<String> {
    let mut out = String::from("frame,bone,qx,qy,qz,qw,tx,ty,tz,sx,sy,sz\n");
    for (j, w) in curve.frames.iter().enumerate() {
        let pose = blend_bone_pose(assets, w)?;
        for (name, t) in assets.bone_names.iter().zip(&pose.bones) {
            let _ = write!(out, "{j},{name},");
            write_transform(&mut out, t);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn bake_mesh_sequence(rig: &Rig, curve: &Curve) -> Result<Vec<Mesh>> {
    curve.frames.iter().map(|w| blend_mesh(rig, w)).collect()
}
