//! Phoneme alignments and the phoneme to viseme map.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv;

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeSegment {
    pub phoneme: String,
    pub start: f64,
    pub end: f64,
}

impl PhonemeSegment {
    pub fn new(phoneme: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            phoneme: phoneme.into(),
            start,
            end,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Sorted, non-overlapping phoneme segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    segments: Vec<PhonemeSegment>,
    duration: f64,
}

impl Timeline {
    /// Builds a timeline from segments already in time order. `duration`
    /// defaults to the last segment end and may not be shorter than it.
    pub fn new(segments: Vec<PhonemeSegment>, duration: Option<f64>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite()) || s.end <= s.start {
                return Err(Error::Config(format!(
                    "segment {i} `{}` has end {} <= start {}",
                    s.phoneme, s.end, s.start
                )));
            }
            if i > 0 && s.start < segments[i - 1].end {
                return Err(Error::Overlap { first: i, second: i + 1 });
            }
        }
        let last_end = segments.last().map_or(0.0, |s| s.end);
        let duration = duration.unwrap_or(last_end);
        if duration < last_end {
            return Err(Error::Config(format!(
                "duration {duration} ends before the last segment ({last_end})"
            )));
        }
        Ok(Self { segments, duration })
    }

    pub fn segments(&self) -> &[PhonemeSegment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment covering absolute time `t` (start inclusive, end exclusive).
    pub fn segment_at(&self, t: f64) -> Option<&PhonemeSegment> {
        let idx = self.segments.partition_point(|s| s.start <= t);
        let seg = self.segments.get(idx.checked_sub(1)?)?;
        (t < seg.end).then_some(seg)
    }
}

/// Number of frames covering `duration` at `fps`: `ceil(duration * fps)`,
/// with a relative guard so `100/30 * 30` still counts as 100.
pub fn frame_count(duration: f64, fps: f64) -> usize {
    let x = duration * fps;
    let guard = 1e-9 * x.abs().max(1.0);
    (x - guard).ceil().max(0.0) as usize
}

/// Center time of frame `j`.
#[inline]
pub fn frame_time(j: usize, fps: f64) -> f64 {
    (j as f64 + 0.5) / fps
}

/// Parses `phoneme<TAB>start<TAB>end` lines. A `# duration=<sec>` comment
/// extends the timeline past its last segment.
pub fn parse_alignment(origin: &str, text: &str) -> Result<Timeline> {
    let mut rows: Vec<(usize, PhonemeSegment)> = Vec::new();
    let mut duration = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches(['\r', '\n']);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("duration=") {
                let d: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(origin, line_no, format!("bad duration `{v}`")))?;
                duration = Some(d);
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let phoneme = fields[0].trim();
        if phoneme.is_empty() {
            return Err(Error::parse(origin, line_no, "empty phoneme"));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(origin, line_no, format!("non-numeric timestamp `{s}`")))
        };
        let (start, end) = (num(fields[1])?, num(fields[2])?);
        if end <= start {
            return Err(Error::parse(origin, line_no, format!("end {end} <= start {start}")));
        }
        rows.push((line_no, PhonemeSegment::new(phoneme, start, end)));
    }
    rows.sort_by(|a, b| a.1.start.total_cmp(&b.1.start).then(a.0.cmp(&b.0)));
    for pair in rows.windows(2) {
        if pair[1].1.start < pair[0].1.end {
            let (a, b) = (pair[0].0.min(pair[1].0), pair[0].0.max(pair[1].0));
            return Err(Error::Overlap { first: a, second: b });
        }
    }
    let segments: Vec<PhonemeSegment> = rows.into_iter().map(|(_, s)| s).collect();
    Timeline::new(segments, duration).map_err(|e| match e {
        Error::Config(msg) => Error::parse(origin, 0, msg),
        other => other,
    })
}

pub fn read_alignment(path: &Path) -> Result<Timeline> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment(&path.display().to_string(), &text)
}

pub fn write_alignment(t: &Timeline) -> String {
    let mut out = String::new();
    let last_end = t.segments.last().map_or(0.0, |s| s.end);
    if t.duration != last_end {
        let _ = writeln!(out, "# duration={}", t.duration);
    }
    for s in &t.segments {
        let _ = writeln!(out, "{}\t{}\t{}", s.phoneme, s.start, s.end);
    }
    out
}

/// Phoneme covering the center of every frame; `None` is silence.
pub fn sample_frames(timeline: &Timeline, fps: f64) -> Vec<Option<&str>> {
    assert!(fps > 0.0, "fps must be positive");
    (0..frame_count(timeline.duration, fps))
        .map(|j| timeline.segment_at(frame_time(j, fps)).map(|s| s.phoneme.as_str()))
        .collect()
}

/// Tokens the built-in map treats as silence.
pub const DEFAULT_SILENCE: [&str; 4] = ["sil", "sp", "spn", "<sil>"];

// IPA plus common Pinyin initials/finals, grouped onto the default labels.
const DEFAULT_MAP: &[(&str, &[&str])] = &[
    ("MBP", &["m", "b", "p"]),
    ("SSS", &["s", "z", "c"]),
    ("WWW", &["w"]),
    ("FFF", &["f", "v"]),
    ("TTH", &["θ", "ð"]),
    ("SSH", &["ʃ", "ʒ", "tʃ", "dʒ", "sh", "zh", "ch", "x", "j", "q"]),
    ("GK", &["k", "g", "ŋ", "h", "ng"]),
    ("LNTD", &["l", "n", "t", "d"]),
    ("RRR", &["ɹ", "r"]),
    ("AAA", &["ɑ", "a"]),
    ("EH", &["ɛ", "e"]),
    ("AHH", &["ʌ", "æ"]),
    ("OHH", &["ɔ", "o"]),
    ("UUU", &["u", "ʊ"]),
    ("IEE", &["i", "ɪ"]),
    ("SCHWA", &["ə"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeVisemeMap {
    entries: HashMap<String, usize>,
    silence: HashSet<String>,
    labels: Vec<String>,
}

impl PhonemeVisemeMap {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            entries: HashMap::new(),
            silence: HashSet::new(),
            labels,
        }
    }

    /// Built-in map onto `labels`. Groups whose label is absent are skipped.
    pub fn default_for(labels: &[String]) -> Self {
        let mut map = Self::new(labels.to_vec());
        for (label, phonemes) in DEFAULT_MAP {
            if let Some(idx) = labels.iter().position(|l| l == label) {
                for p in *phonemes {
                    map.entries.insert((*p).to_string(), idx);
                }
            }
        }
        map.silence = DEFAULT_SILENCE.iter().map(|s| s.to_string()).collect();
        map
    }

    pub fn insert(&mut self, phoneme: &str, viseme: usize) -> Result<()> {
        if viseme >= self.labels.len() {
            return Err(Error::Dimension {
                expected: self.labels.len(),
                got: viseme,
            });
        }
        self.entries.insert(phoneme.to_string(), viseme);
        Ok(())
    }

    pub fn add_silence(&mut self, token: &str) {
        self.silence.insert(token.to_string());
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn viseme_count(&self) -> usize {
        self.labels.len()
    }

    /// Parses `phoneme=LABEL` lines plus `silence=<tokens>` (comma or space
    /// separated). Labels must be among `labels`.
    pub fn parse(origin: &str, text: &str, labels: &[String]) -> Result<Self> {
        let mut map = Self::new(labels.to_vec());
        for e in kv::parse(origin, text)? {
            if e.key == "silence" {
                for tok in e.value.split([',', ' ', '\t']).filter(|t| !t.is_empty()) {
                    map.add_silence(tok);
                }
                continue;
            }
            let idx = labels
                .iter()
                .position(|l| *l == e.value)
                .ok_or_else(|| Error::parse(origin, e.line, format!("unknown viseme label `{}`", e.value)))?;
            map.entries.insert(e.key.clone(), idx);
        }
        Ok(map)
    }

    pub fn read(path: &Path, labels: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text, labels)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut silence: Vec<&String> = self.silence.iter().collect();
        silence.sort();
        let joined: Vec<&str> = silence.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "silence={}", joined.join(" "));
        let mut entries: Vec<(&String, &usize)> = self.entries.iter().collect();
        entries.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)));
        for (p, &i) in entries {
            let _ = writeln!(out, "{p}={}", self.labels[i]);
        }
        out
    }
}

/// Viseme index for a phoneme; `Ok(None)` for silence tokens.
pub fn viseme_of(phoneme: &str, map: &PhonemeVisemeMap) -> Result<Option<usize>> {
    if map.silence.contains(phoneme) {
        return Ok(None);
    }
    map.entries
        .get(phoneme)
        .copied()
        .map(Some)
        .ok_or_else(|| Error::UnmappedPhoneme(phoneme.to_string()))
}
