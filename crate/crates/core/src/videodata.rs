//! Labeled demonstration clips and the adjacent-state pairs derived from them.
//!
//! Clip files are line-delimited JSON. The first line is a header
//! `{"format":"skilllab-clips","version":1}`; every following line holds one
//! clip `{"label","env_id","behavior_id","seed","frames"}` with floats written
//! at 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{scripted_demo, BehaviorId, EnvId, EnvSpec, Observation};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

pub const CLIP_FORMAT: &str = "skilllab-clips";
pub const CLIP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClipLabel {
    #[serde(rename = "DO")]
    Do,
    #[serde(rename = "DONT")]
    Dont,
}

impl ClipLabel {
    pub fn target(self) -> u8 {
        match self {
            ClipLabel::Do => 1,
            ClipLabel::Dont => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClipLabel::Do => "DO",
            ClipLabel::Dont => "DONT",
        }
    }
}

impl std::str::FromStr for ClipLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DO" => Ok(ClipLabel::Do),
            "DONT" | "DON'T" => Ok(ClipLabel::Dont),
            _ => Err(Error::InvalidConfig(format!("unknown clip label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip<T> {
    pub label: ClipLabel,
    pub frames: Vec<Observation<T>>,
    pub env_id: EnvId,
    pub behavior_id: BehaviorId,
    pub seed: u64,
}

impl<T: Scalar> VideoClip<T> {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Validation(format!(
                "clip has {} frames, need at least 2",
                self.frames.len()
            )));
        }
        let dim = self.env_id.obs_dim();
        if let Some((i, f)) = self.frames.iter().enumerate().find(|(_, f)| f.len() != dim) {
            return Err(Error::Validation(format!(
                "frame {i} has dimension {}, {} expects {dim}",
                f.len(),
                self.env_id
            )));
        }
        Ok(())
    }
}

/// Records a clip of `length` frames from a scripted demonstrator.
pub fn record_clip<T: Scalar>(
    spec: &EnvSpec,
    behavior: BehaviorId,
    label: ClipLabel,
    seed: u64,
    length: usize,
) -> Result<VideoClip<T>> {
    let clip = VideoClip {
        label,
        frames: scripted_demo(spec, behavior, seed, length)?,
        env_id: spec.env_id,
        behavior_id: behavior,
        seed,
    };
    clip.validate()?;
    Ok(clip)
}

/// Training unit for the instruction network.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample<T> {
    pub s: Vec<T>,
    pub s_next: Vec<T>,
    pub y: u8,
}

#[derive(Serialize)]
struct Header<'a> {
    format: &'a str,
    version: u32,
}

#[derive(Deserialize)]
struct HeaderIn {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct ClipRecord {
    label: ClipLabel,
    env_id: EnvId,
    behavior_id: BehaviorId,
    seed: u64,
    frames: Vec<Vec<f64>>,
}

fn encode_clip<T: Scalar>(clip: &VideoClip<T>, out: &mut String) {
    write!(
        out,
        "{{\"label\":\"{}\",\"env_id\":\"{}\",\"behavior_id\":\"{}\",\"seed\":{},\"frames\":[",
        clip.label.name(),
        clip.env_id.name(),
        clip.behavior_id.name(),
        clip.seed
    )
    .unwrap();
    for (i, frame) in clip.frames.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, v) in frame.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{:.16e}", v.to_f64_lossy()).unwrap();
        }
        out.push(']');
    }
    out.push_str("]}\n");
}

pub fn clips_to_string<T: Scalar>(clips: &[VideoClip<T>]) -> Result<String> {
    let mut out = serde_json::to_string(&Header {
        format: CLIP_FORMAT,
        version: CLIP_FORMAT_VERSION,
    })
    .expect("header serializes");
    out.push('\n');
    for clip in clips {
        clip.validate()?;
        if !clip.frames.iter().all(|f| f.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric("clip contains non-finite values".into()));
        }
        encode_clip(clip, &mut out);
    }
    Ok(out)
}

pub fn clips_from_str<T: Scalar>(text: &str) -> Result<Vec<VideoClip<T>>> {
    let mut clips = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderIn>(line) {
                if h.format != CLIP_FORMAT || h.version != CLIP_FORMAT_VERSION {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unsupported clip format {} v{}", h.format, h.version),
                    });
                }
                continue;
            }
        }
        let rec: ClipRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let clip = VideoClip {
            label: rec.label,
            frames: rec
                .frames
                .into_iter()
                .map(|f| Observation::new(f.into_iter().map(T::lit).collect()))
                .collect(),
            env_id: rec.env_id,
            behavior_id: rec.behavior_id,
            seed: rec.seed,
        };
        clip.validate().map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        clips.push(clip);
    }
    Ok(clips)
}

pub fn save_clips<T: Scalar>(path: &Path, clips: &[VideoClip<T>]) -> Result<()> {
    let text = clips_to_string(clips)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_clips<T: Scalar>(path: &Path) -> Result<Vec<VideoClip<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    clips_from_str(&text)
}

/// Each clip of `T` frames contributes `T - 1` pairs, in order.
pub fn make_pairs<T: Scalar>(clips: &[VideoClip<T>]) -> Result<Vec<PairSample<T>>> {
    if clips.is_empty() {
        return Err(Error::Validation("no clips to pair".into()));
    }
    let total: usize = clips.iter().map(|c| c.frames.len().saturating_sub(1)).sum();
    let mut pairs = Vec::with_capacity(total);
    for clip in clips {
        clip.validate()?;
        let y = clip.label.target();
        pairs.extend(clip.frames.windows(2).map(|w| PairSample {
            s: w[0].as_slice().to_vec(),
            s_next: w[1].as_slice().to_vec(),
            y,
        }));
    }
    Ok(pairs)
}

/// Seeded shuffle, then the first `round(n * holdout_fraction)` pairs become
/// the validation set (clamped so both sides are non-empty).
pub fn split_pairs<T: Scalar>(
    pairs: &[PairSample<T>],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<PairSample<T>>, Vec<PairSample<T>>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction {holdout_fraction} not in (0, 1)"
        )));
    }
    if pairs.len() < 2 {
        return Err(Error::Validation("need at least 2 pairs to split".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_val = ((pairs.len() as f64 * holdout_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let validation = order[..n_val].iter().map(|&i| pairs[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| pairs[i].clone()).collect();
    Ok((train, validation))
}
