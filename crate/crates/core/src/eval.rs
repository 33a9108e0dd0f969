//! Measurement tools: mouth keypoint error, lip distance curves and curve
//! total variation.

use std::fmt::Write as _;

use crate::camera::{Pose, Projector};
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::fit::Landmark;
use crate::rig::{LandmarkId, Rig};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub fps: f64,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Per frame, the mean pixel distance between projected bound vertices and
/// observed landmarks whose id is in `subset`. Ids without an observation
/// in a frame are skipped; a frame with none left is an error.
pub fn keypoint_error(
    rig: &Rig,
    curve: &Curve,
    poses: &[Pose],
    observations: &[Vec<Landmark>],
    subset: &[LandmarkId],
) -> Result<MetricSeries> {
    if poses.len() < curve.len() || observations.len() < curve.len() {
        return Err(Error::Dimension {
            expected: curve.len(),
            got: poses.len().min(observations.len()),
        });
    }
    let mut values = Vec::with_capacity(curve.len());
    for (j, w) in curve.frames.iter().enumerate() {
        let proj = Projector::new(&poses[j])?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for &id in subset {
            let Some(k) = rig.binding(id) else { continue };
            let Some(obs) = observations[j].iter().find(|l| l.id == id) else {
                continue;
            };
            let p = proj.project(&rig.blend_vertex(k, w))?;
            sum += (p.pixel - obs.position).norm();
            count += 1;
        }
        if count == 0 {
            return Err(Error::Config(format!("frame {j}: no observed landmark in the evaluated subset")));
        }
        values.push(sum / count as f64);
    }
    Ok(MetricSeries {
        name: "keypoint_error".into(),
        fps: curve.fps,
        values,
    })
}

/// Horizontal `|dx|` and vertical `|dy|` separations of the rig's lip pairs
/// on the blended mesh, in model units.
pub fn lip_distance_curves(rig: &Rig, curve: &Curve) -> Result<(MetricSeries, MetricSeries)> {
    let pairs = rig
        .lip_pairs
        .ok_or_else(|| Error::Config("rig declares no lip pairs".into()))?;
    let n = rig.vertex_count();
    let (a, b) = pairs.horizontal;
    let (c, d) = pairs.vertical;
    if [a, b, c, d].iter().any(|&v| v >= n) {
        return Err(Error::Topology("lip pair vertex out of range".into()));
    }
    let mut horizontal = Vec::with_capacity(curve.len());
    let mut vertical = Vec::with_capacity(curve.len());
    for w in &curve.frames {
        if w.len() != rig.viseme_count() {
            return Err(Error::Dimension {
                expected: rig.viseme_count(),
                got: w.len(),
            });
        }
        horizontal.push((rig.blend_vertex(a, w).x - rig.blend_vertex(b, w).x).abs());
        vertical.push((rig.blend_vertex(c, w).y - rig.blend_vertex(d, w).y).abs());
    }
    Ok((
        MetricSeries {
            name: "lip_horizontal".into(),
            fps: curve.fps,
            values: horizontal,
        },
        MetricSeries {
            name: "lip_vertical".into(),
            fps: curve.fps,
            values: vertical,
        },
    ))
}

/// `sum_j |x_i^j - x_i^(j-1)|` for each viseme `i`.
pub fn total_variation(curve: &Curve) -> Vec<f64> {
    let mut tv = vec![0.0; curve.viseme_count()];
    for pair in curve.frames.windows(2) {
        for (slot, (a, b)) in tv.iter_mut().zip(pair[1].iter().zip(&pair[0])) {
            *slot += (a - b).abs();
        }
    }
    tv
}

/// `# name=<name>` then `frame,value` rows.
pub fn write_metric(series: &MetricSeries) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# name={}", series.name);
    let _ = writeln!(out, "# fps={}", series.fps);
    out.push_str("frame,value\n");
    for (j, v) in series.values.iter().enumerate() {
        let _ = writeln!(out, "{j},{v:.6}");
    }
    out
}
