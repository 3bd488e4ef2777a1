use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Frame-wise phase labels for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSequence {
    pub video_id: String,
    pub labels: Vec<usize>,
    pub fps: f64,
}

impl PhaseSequence {
    pub fn new(video_id: impl Into<String>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("phase sequence must contain at least one frame"));
        }
        Ok(PhaseSequence { video_id: video_id.into(), labels, fps: 1.0 })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check_phases(&self, n_phases: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= n_phases) {
            Some(t) => Err(Error::domain(format!(
                "{}: frame {t} has phase {} outside [0, {n_phases})",
                self.video_id, self.labels[t]
            ))),
            None => Ok(()),
        }
    }

    pub fn segments(&self) -> Vec<Segment> {
        segments(&self.labels)
    }
}

/// A maximal run of one phase, `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub phase: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn segments(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &phase) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(seg) if seg.phase == phase => seg.end = t,
            _ => out.push(Segment { phase, start: t, end: t }),
        }
    }
    out
}

/// Maps phase names to ids; the id of a name is its line index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i).is_some() {
                return Err(Error::domain(format!("duplicate phase name `{n}`")));
            }
        }
        Ok(Vocabulary { names, ids })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.ids.get(name).copied().ok_or_else(|| Error::Vocabulary(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Parses `frame_index,phase` lines. The phase column is an id, or a name
/// when a vocabulary is given.
pub fn parse_annotations(
    video_id: &str,
    text: &str,
    vocab: Option<&Vocabulary>,
) -> Result<PhaseSequence> {
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let (frame, phase) = raw
            .split_once(',')
            .ok_or_else(|| Error::format(line, "expected `frame_index,phase_id`"))?;
        let frame: usize = frame
            .trim()
            .parse()
            .map_err(|_| Error::format(line, format!("bad frame index `{}`", frame.trim())))?;
        if frame != labels.len() {
            let msg = if frame < labels.len() {
                format!("duplicate or out-of-order frame {frame}")
            } else {
                format!("gap: expected frame {}, found {frame}", labels.len())
            };
            return Err(Error::format(line, msg));
        }
        let phase = phase.trim();
        let id = match (phase.parse::<usize>(), vocab) {
            (_, Some(v)) => v.id(phase)?,
            (Ok(id), None) => id,
            (Err(_), None) => return Err(Error::Vocabulary(phase.to_string())),
        };
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(Error::format(1, "annotation file has no frames"));
    }
    PhaseSequence::new(video_id, labels)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<PhaseSequence> {
    load_annotations_with(path, None)
}

pub fn load_annotations_with(
    path: impl AsRef<Path>,
    vocab: Option<&Vocabulary>,
) -> Result<PhaseSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("video");
    parse_annotations(id, &text, vocab)
}

pub fn annotations_to_string(labels: &[usize]) -> String {
    let mut s = String::with_capacity(labels.len() * 6);
    for (t, l) in labels.iter().enumerate() {
        s.push_str(&format!("{t},{l}\n"));
    }
    s
}

pub fn write_annotations(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, annotations_to_string(labels)).map_err(|e| Error::io(path, e))
}
