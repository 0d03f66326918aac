//! Sequence manifests, timestamp alignment across sensor streams, and keyframe sampling.
//!
//! Manifest JSON:
//!
//! ```json
//! {
//!   "version": 1,
//!   "sequence_id": "seq_0001",
//!   "scene": "campus",
//!   "lighting": "night",
//!   "split": "train",
//!   "streams": {
//!     "lidar": [{ "timestamp": "1699990000.100000000", "path": "lidar/000001.bin" }],
//!     "pal":   [{ "timestamp": "1699990000.101200000", "path": "pal/000001.png" }]
//!   }
//! }
//! ```
//!
//! Timestamps are decimal seconds written as strings and held as integer nanoseconds,
//! so they never pass through binary floating point.

use std::collections::BTreeMap;
use std::fmt;
use std::num::NonZeroUsize;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::raster;

pub const MANIFEST_VERSION: u32 = 1;
/// Half the 10 Hz LiDAR period.
pub const DEFAULT_TOLERANCE_S: f64 = 0.05;
pub const DEFAULT_KEYFRAME_STRIDE: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    InvariantViolation { path: String, message: String },
    #[error("anchor stream {0} is missing")]
    MissingAnchor(Modality),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error(transparent)]
    Io(#[from] raster::RasterError),
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::InvariantViolation { path: path.into(), message: message.into() }
}

/// Nanoseconds since an arbitrary epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_nanos(ns: i64) -> Self {
        Self(ns)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    /// `other − self` in seconds.
    pub fn seconds_until(self, other: Timestamp) -> f64 {
        (other.0 - self.0) as f64 * 1e-9
    }
}

impl FromStr for Timestamp {
    type Err = String;

    /// Decimal seconds with at most nine fractional digits, optionally signed.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid timestamp {s:?}");
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 9 {
            return Err(format!("timestamp {s:?} has more than nanosecond precision"));
        }
        let secs: i64 = int.parse().map_err(|_| bad())?;
        let nanos: i64 = if frac.is_empty() { 0 } else { format!("{frac:0<9}").parse().map_err(|_| bad())? };
        let total = secs.checked_mul(1_000_000_000).and_then(|v| v.checked_add(nanos)).ok_or_else(bad)?;
        Ok(Self(if neg { -total } else { total }))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:09}", abs / 1_000_000_000, abs % 1_000_000_000)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(serde_json::Number),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(t) => t,
            Raw::Number(n) => n.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Pal,
    Thermal,
    Polar,
    Lidar,
    Imu,
}

impl Modality {
    pub const ALL: [Modality; 5] = [Modality::Pal, Modality::Thermal, Modality::Polar, Modality::Lidar, Modality::Imu];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Pal => "pal",
            Modality::Thermal => "thermal",
            Modality::Polar => "polar",
            Modality::Lidar => "lidar",
            Modality::Imu => "imu",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub timestamp: Timestamp,
    pub path: String,
}

/// Entries of one sensor stream with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamIndex {
    modality: Modality,
    entries: Vec<StreamEntry>,
}

impl StreamIndex {
    pub fn new(modality: Modality, entries: Vec<StreamEntry>) -> Result<Self, DataError> {
        if let Some(i) = entries.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(violation(
                format!("streams.{modality}[{}].timestamp", i + 1),
                format!("{} does not follow {}", entries[i + 1].timestamp, entries[i].timestamp),
            ));
        }
        Ok(Self { modality, entries })
    }

    /// Stream with synthetic paths, for tests and fixtures.
    pub fn from_timestamps(modality: Modality, times: &[Timestamp]) -> Result<Self, DataError> {
        let entries = times
            .iter()
            .enumerate()
            .map(|(i, &timestamp)| StreamEntry { timestamp, path: format!("{modality}/{i:06}") })
            .collect();
        Self::new(modality, entries)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn entries(&self) -> &[StreamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry closest in time to `t`; the earlier one wins a tie.
    pub fn nearest(&self, t: Timestamp) -> Option<&StreamEntry> {
        let i = self.entries.partition_point(|e| e.timestamp < t);
        let after = self.entries.get(i);
        let before = i.checked_sub(1).and_then(|j| self.entries.get(j));
        match (before, after) {
            (Some(b), Some(a)) => Some(if t.0 - b.timestamp.0 <= a.timestamp.0 - t.0 { b } else { a }),
            (b, a) => b.or(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scene {
    Urban,
    Residential,
    Campus,
    Green,
    Rural,
    Forest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lighting {
    Day,
    Night,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub scene: Scene,
    pub lighting: Lighting,
    pub split: Split,
    pub streams: BTreeMap<Modality, StreamIndex>,
}

/// Loosely typed mirror of the JSON, so closed-set and ordering errors can name the offending field.
#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    #[serde(default = "default_version")]
    version: u32,
    sequence_id: String,
    scene: String,
    lighting: String,
    split: String,
    streams: BTreeMap<String, Vec<StreamEntry>>,
}

fn default_version() -> u32 {
    MANIFEST_VERSION
}

fn closed_set<T: for<'de> Deserialize<'de>>(field: &str, value: &str, allowed: &str) -> Result<T, DataError> {
    serde_json::from_value(serde_json::Value::String(value.into()))
        .map_err(|_| violation(field, format!("{value:?} is not one of {allowed}")))
}

impl SequenceManifest {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| DataError::Parse(e.to_string()))?;
        if doc.version != MANIFEST_VERSION {
            return Err(violation("version", format!("unsupported version {}", doc.version)));
        }
        if doc.sequence_id.trim().is_empty() {
            return Err(violation("sequence_id", "must not be empty"));
        }
        let scene = closed_set("scene", &doc.scene, "urban, residential, campus, green, rural, forest")?;
        let lighting = closed_set("lighting", &doc.lighting, "day, night")?;
        let split = closed_set("split", &doc.split, "train, test")?;
        if doc.streams.is_empty() {
            return Err(violation("streams", "at least one stream is required"));
        }
        let mut streams = BTreeMap::new();
        for (name, entries) in doc.streams {
            let modality: Modality = name.parse().map_err(|m: String| violation(format!("streams.{name}"), m))?;
            streams.insert(modality, StreamIndex::new(modality, entries)?);
        }
        Ok(Self { sequence_id: doc.sequence_id, scene, lighting, split, streams })
    }

    pub fn to_json(&self) -> String {
        let doc = ManifestDoc {
            version: MANIFEST_VERSION,
            sequence_id: self.sequence_id.clone(),
            scene: enum_name(&self.scene),
            lighting: enum_name(&self.lighting),
            split: enum_name(&self.split),
            streams: self.streams.iter().map(|(m, s)| (m.name().to_string(), s.entries.clone())).collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn stream_list(&self) -> Vec<StreamIndex> {
        self.streams.values().cloned().collect()
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("closed-set enums serialize as strings"),
    }
}

pub fn load_manifest(path: &Path) -> Result<SequenceManifest, DataError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| raster::RasterError::Io { path: path.to_path_buf(), source })?;
    SequenceManifest::from_json(&text)
}

pub fn save_manifest(path: &Path, manifest: &SequenceManifest) -> Result<(), DataError> {
    Ok(raster::write_atomic(path, manifest.to_json().as_bytes())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedEntry {
    pub timestamp: Timestamp,
    pub path: String,
    /// Matched minus anchor time, seconds.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    pub anchor: Timestamp,
    pub anchor_path: String,
    pub matches: BTreeMap<Modality, MatchedEntry>,
}

/// For every anchor entry, the nearest entry of each other stream. Anchor frames for
/// which any stream is empty or farther than `tolerance` seconds are dropped.
pub fn align_streams(
    streams: &[StreamIndex],
    anchor: Modality,
    tolerance: f64,
) -> Result<Vec<AlignedFrame>, DataError> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(DataError::InvalidTolerance(tolerance));
    }
    let tol_ns = (tolerance * 1e9).round() as i64;
    let anchor_stream = streams.iter().find(|s| s.modality == anchor).ok_or(DataError::MissingAnchor(anchor))?;
    let others: Vec<&StreamIndex> = streams.iter().filter(|s| s.modality != anchor).collect();
    let mut frames = Vec::new();
    'anchors: for a in &anchor_stream.entries {
        let mut matches = BTreeMap::new();
        for s in &others {
            match s.nearest(a.timestamp) {
                Some(e) if (e.timestamp.0 - a.timestamp.0).abs() <= tol_ns => {
                    let offset = a.timestamp.seconds_until(e.timestamp);
                    matches.insert(s.modality, MatchedEntry { timestamp: e.timestamp, path: e.path.clone(), offset });
                }
                _ => continue 'anchors,
            }
        }
        frames.push(AlignedFrame { anchor: a.timestamp, anchor_path: a.path.clone(), matches });
    }
    Ok(frames)
}

/// Items at indices `0, stride, 2·stride, …`.
pub fn keyframe_sample<T: Clone>(frames: &[T], stride: NonZeroUsize) -> Vec<T> {
    frames.iter().step_by(stride.get()).cloned().collect()
}
