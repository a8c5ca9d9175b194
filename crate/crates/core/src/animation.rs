//! Blendshape animation sequences and their CSV / container encodings.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use crate::container::Container;
use crate::error::{Result, S2aError};
use crate::features::{FeatureKind, FeatureSequence};
use crate::numerics::Tensor;

/// Pronunciation-related blendshape channels, in model output order.
pub const CHANNEL_NAMES: [&str; 32] = [
    "jawOpen",
    "jawForward",
    "jawLeft",
    "jawRight",
    "mouthClose",
    "mouthFunnel",
    "mouthPucker",
    "mouthLeft",
    "mouthRight",
    "mouthSmileLeft",
    "mouthSmileRight",
    "mouthFrownLeft",
    "mouthFrownRight",
    "mouthDimpleLeft",
    "mouthDimpleRight",
    "mouthStretchLeft",
    "mouthStretchRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
    "mouthPressLeft",
    "mouthPressRight",
    "mouthLowerDownLeft",
    "mouthLowerDownRight",
    "mouthUpperUpLeft",
    "mouthUpperUpRight",
    "cheekPuff",
    "cheekSquintLeft",
    "cheekSquintRight",
    "tongueOut",
    "noseSneerLeft",
];

pub const NUM_CHANNELS: usize = CHANNEL_NAMES.len();
pub const JAW_OPEN: usize = 0;
pub const MOUTH_CLOSE: usize = 4;
/// The two channels reported separately in RMSE tables.
pub const CRUCIAL_CHANNELS: [usize; 2] = [JAW_OPEN, MOUTH_CLOSE];

pub fn channel_index(name: &str) -> Option<usize> {
    CHANNEL_NAMES.iter().position(|&n| n == name)
}

/// Per-frame blendshape coefficients, `T×32`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimationSequence {
    pub utterance_id: String,
    pub frames: Tensor<f32>,
    pub fps: f64,
}

impl AnimationSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Tensor<f32>, fps: f64) -> Result<Self> {
        if frames.rank() != 2 || frames.cols() != NUM_CHANNELS {
            return Err(S2aError::InvalidInput(format!(
                "animation must be T×{NUM_CHANNELS}, got {:?}",
                frames.shape()
            )));
        }
        Ok(AnimationSequence {
            utterance_id: utterance_id.into(),
            frames,
            fps,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.frames.column(c)
    }

    /// `frame,<channel names>` header, one row per frame, 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame");
        for n in CHANNEL_NAMES {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for r in 0..self.len() {
            write!(s, "{r}").unwrap();
            for &v in self.frames.row(r) {
                write!(s, ",{v:.6}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(utterance_id: &str, text: &str, fps: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| S2aError::InvalidInput("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() != NUM_CHANNELS + 1 || cols[0] != "frame" || cols[1..] != CHANNEL_NAMES[..] {
            return Err(S2aError::InvalidInput("unexpected CSV header".into()));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != NUM_CHANNELS + 1 {
                return Err(S2aError::InvalidInput(format!("CSV line {}: wrong field count", i + 2)));
            }
            for f in &fields[1..] {
                data.push(f.trim().parse::<f32>().map_err(|e| {
                    S2aError::InvalidInput(format!("CSV line {}: {e}", i + 2))
                })?);
            }
            rows += 1;
        }
        Self::new(utterance_id, Tensor::new(vec![rows, NUM_CHANNELS], data)?, fps)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "animation",
            "utterance_id": self.utterance_id,
            "fps": self.fps,
            "channels": CHANNEL_NAMES,
        }));
        c.push("animation", self.frames.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta["kind"] != "animation" {
            return Err(S2aError::InvalidInput("container is not an animation".into()));
        }
        let id = c.meta["utterance_id"].as_str().unwrap_or_default();
        let fps = c.meta["fps"].as_f64().unwrap_or(crate::features::ANIMATION_FPS);
        Self::new(id, c.require("animation")?.clone(), fps)
    }

    /// Reads either a `.csv` or an `S2A1` animation file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "csv") {
            let id = utterance_stem(path);
            Self::from_csv(&id, &std::fs::read_to_string(path)?, crate::features::ANIMATION_FPS)
        } else {
            Self::from_container(&Container::read(path)?)
        }
    }
}

/// Utterance id from a file name: strips `.csv` and the `.s2a1` container suffixes.
pub fn utterance_stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    for suffix in [".anim.s2a1", ".feat.s2a1", ".dense.s2a1", ".s2a1", ".csv"] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    name.to_string()
}

impl FeatureSequence {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(json!({
            "kind": "features",
            "feature_kind": self.kind,
            "utterance_id": self.utterance_id,
            "frame_rate_hz": self.frame_rate_hz,
        }));
        c.push("ppg", self.ppg.clone());
        c.push("pitch", Tensor::new(vec![self.len()], self.pitch.clone())?);
        c.push("energy", Tensor::new(vec![self.len()], self.energy.clone())?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta["kind"] != "features" {
            return Err(S2aError::InvalidInput("container is not a feature sequence".into()));
        }
        let kind: FeatureKind = serde_json::from_value(c.meta["feature_kind"].clone())?;
        let id = c.meta["utterance_id"].as_str().unwrap_or_default();
        let rate = c.meta["frame_rate_hz"]
            .as_f64()
            .ok_or_else(|| S2aError::InvalidInput("missing frame_rate_hz".into()))?;
        FeatureSequence::new(
            id,
            kind,
            c.require("ppg")?.clone(),
            c.require("pitch")?.data().to_vec(),
            c.require("energy")?.data().to_vec(),
            rate,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
