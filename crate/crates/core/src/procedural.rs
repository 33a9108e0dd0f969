//! Rule-based viseme curves from a phoneme timeline: each mapped segment
//! contributes a smoothstep rise before its start, a sustain across the
//! segment, and a smoothstep fall after its end. Overlapping contributions
//! to the same viseme combine by pointwise max.

use std::collections::BTreeMap;
use std::path::Path;

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::kv;
use crate::timeline::{frame_count, frame_time, viseme_of, PhonemeVisemeMap, Timeline};

/// Labels whose apex defaults to full closure.
pub const CLOSURE_VISEMES: [&str; 1] = ["MBP"];

pub const DEFAULT_CLOSURE_APEX: f64 = 1.0;
pub const DEFAULT_APEX: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRule {
    pub onset_frac: f64,
    pub offset_frac: f64,
    pub apex_amplitude: f64,
    /// Seconds.
    pub min_onset: f64,
    pub min_offset: f64,
    pub max_onset: f64,
    pub max_offset: f64,
}

impl Default for EnvelopeRule {
    fn default() -> Self {
        Self {
            onset_frac: 0.25,
            offset_frac: 0.25,
            apex_amplitude: 1.0,
            min_onset: 0.040,
            min_offset: 0.040,
            max_onset: 0.120,
            max_offset: 0.120,
        }
    }
}

impl EnvelopeRule {
    pub fn validate(&self) -> Result<()> {
        let fracs_ok = self.onset_frac >= 0.0 && self.offset_frac >= 0.0 && self.onset_frac + self.offset_frac <= 1.0;
        if !fracs_ok {
            return Err(Error::Config(format!(
                "onset_frac {} + offset_frac {} must be non-negative and sum to at most 1",
                self.onset_frac, self.offset_frac
            )));
        }
        if !(self.apex_amplitude > 0.0 && self.apex_amplitude <= 1.0) {
            return Err(Error::Config(format!("apex amplitude {} not in (0, 1]", self.apex_amplitude)));
        }
        if !(0.0 <= self.min_onset && self.min_onset <= self.max_onset) {
            return Err(Error::Config("need 0 <= min_onset <= max_onset".into()));
        }
        if !(0.0 <= self.min_offset && self.min_offset <= self.max_offset) {
            return Err(Error::Config("need 0 <= min_offset <= max_offset".into()));
        }
        Ok(())
    }

    /// Rise and fall window lengths for a segment of `seg_duration` seconds.
    pub fn windows(&self, seg_duration: f64) -> (f64, f64) {
        let onset = (self.onset_frac * seg_duration).clamp(self.min_onset, self.max_onset);
        let offset = (self.offset_frac * seg_duration).clamp(self.min_offset, self.max_offset);
        (onset, offset)
    }
}

#[inline]
fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Envelope value at `t_rel` seconds after the segment start.
///
/// Zero before `-onset`, rising to the apex at `0`, held through
/// `seg_duration`, falling back to zero at `seg_duration + offset`.
pub fn envelope(t_rel: f64, seg_duration: f64, rule: &EnvelopeRule) -> f64 {
    let (onset, offset) = rule.windows(seg_duration);
    let apex = rule.apex_amplitude;
    if t_rel < 0.0 {
        if onset <= 0.0 || t_rel <= -onset {
            return 0.0;
        }
        apex * smoothstep((t_rel + onset) / onset)
    } else if t_rel <= seg_duration {
        apex
    } else {
        let past = t_rel - seg_duration;
        if offset <= 0.0 || past >= offset {
            return 0.0;
        }
        apex * smoothstep(1.0 - past / offset)
    }
}

/// Timing rule shared by all visemes plus per-label apex overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProceduralRules {
    pub timing: EnvelopeRule,
    pub apex: BTreeMap<String, f64>,
}

impl ProceduralRules {
    pub fn apex_for(&self, label: &str) -> f64 {
        self.apex.get(label).copied().unwrap_or(if CLOSURE_VISEMES.contains(&label) {
            DEFAULT_CLOSURE_APEX
        } else {
            DEFAULT_APEX
        })
    }

    pub fn rule_for(&self, label: &str) -> EnvelopeRule {
        EnvelopeRule {
            apex_amplitude: self.apex_for(label),
            ..self.timing
        }
    }

    /// Keys: `onset_frac`, `offset_frac`, `min_onset_ms`, `min_offset_ms`,
    /// `max_onset_ms`, `max_offset_ms`, `apex.<label>`.
    pub fn parse(origin: &str, text: &str) -> Result<Self> {
        let mut rules = Self::default();
        for e in kv::parse(origin, text)? {
            let v = kv::parse_f64(origin, &e)?;
            match e.key.as_str() {
                "onset_frac" => rules.timing.onset_frac = v,
                "offset_frac" => rules.timing.offset_frac = v,
                "min_onset_ms" => rules.timing.min_onset = v / 1000.0,
                "min_offset_ms" => rules.timing.min_offset = v / 1000.0,
                "max_onset_ms" => rules.timing.max_onset = v / 1000.0,
                "max_offset_ms" => rules.timing.max_offset = v / 1000.0,
                key => match key.strip_prefix("apex.") {
                    Some(label) => {
                        rules.apex.insert(label.to_string(), v);
                    }
                    None => return Err(Error::parse(origin, e.line, format!("unknown key `{key}`"))),
                },
            }
        }
        rules.timing.validate()?;
        for (label, a) in &rules.apex {
            if !(*a > 0.0 && *a <= 1.0) {
                return Err(Error::Config(format!("apex.{label}={a} not in (0, 1]")));
            }
        }
        Ok(rules)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }
}

/// Procedural curve over `ceil(duration * fps)` frames, sampled at frame
/// centers, with columns in the map's label order.
pub fn generate_procedural(
    timeline: &Timeline,
    fps: f64,
    map: &PhonemeVisemeMap,
    rules: &ProceduralRules,
) -> Result<Curve> {
    if !(fps > 0.0) {
        return Err(Error::Config(format!("fps must be positive, got {fps}")));
    }
    let labels = map.labels().to_vec();
    let n = frame_count(timeline.duration(), fps);
    let mut curve = Curve::zeros(fps, labels, n);
    for seg in timeline.segments() {
        let Some(vis) = viseme_of(&seg.phoneme, map)? else {
            continue;
        };
        let rule = rules.rule_for(&curve.labels[vis]);
        let d = seg.duration();
        let (onset, offset) = rule.windows(d);
        // frames whose center lies in the support
        let lo = ((seg.start - onset) * fps - 0.5).floor().max(0.0) as usize;
        let hi = (((seg.end + offset) * fps - 0.5).ceil().max(0.0) as usize).min(n.saturating_sub(1));
        if n == 0 {
            continue;
        }
        for j in lo..=hi {
            let value = envelope(frame_time(j, fps) - seg.start, d, &rule);
            let slot = &mut curve.frames[j][vis];
            if value > *slot {
                *slot = value;
            }
        }
    }
    Ok(curve)
}

/// Procedural weights at an arbitrary time `t` (seconds).
pub fn procedural_at(timeline: &Timeline, t: f64, map: &PhonemeVisemeMap, rules: &ProceduralRules) -> Result<Vec<f64>> {
    let labels = map.labels();
    let mut out = vec![0.0; labels.len()];
    for seg in timeline.segments() {
        let Some(vis) = viseme_of(&seg.phoneme, map)? else {
            continue;
        };
        let value = envelope(t - seg.start, seg.duration(), &rules.rule_for(&labels[vis]));
        if value > out[vis] {
            out[vis] = value;
        }
    }
    Ok(out)
}
