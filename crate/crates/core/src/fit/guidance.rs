//! Suppression and activation sets derived from the procedural curve.

use crate::curve::Curve;

use super::config::FitConfig;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GuidanceSets {
    /// Sorted viseme indices pushed towards zero.
    pub suppress: Vec<usize>,
    /// Sorted viseme indices pushed upwards.
    pub activate: Vec<usize>,
}

impl GuidanceSets {
    pub fn empty() -> Self {
        Self::default()
    }
}

/// Indices of the `k` largest entries that are at least `floor`. Ties go to
/// the lower index.
pub fn top_k(values: &[f64], k: usize, floor: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= floor).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Guidance for frame `j`: activate the top-`n` of frame `j`; suppress every
/// viseme outside the top-`m` of all frames in `[j - radius, j + radius]`.
pub fn guidance_sets(procedural: &Curve, j: usize, cfg: &FitConfig) -> GuidanceSets {
    let frames = &procedural.frames;
    let v = procedural.viseme_count();
    let mut activate = top_k(&frames[j], cfg.n, cfg.eps_act);
    activate.sort_unstable();

    let lo = j.saturating_sub(cfg.radius);
    let hi = (j + cfg.radius).min(frames.len() - 1);
    let mut significant = vec![false; v];
    for frame in &frames[lo..=hi] {
        for i in top_k(frame, cfg.m, cfg.eps_act) {
            significant[i] = true;
        }
    }
    let suppress = (0..v).filter(|&i| !significant[i]).collect();
    GuidanceSets { suppress, activate }
}
