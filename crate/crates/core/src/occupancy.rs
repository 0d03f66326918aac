//! Semantic occupancy grids: voxelization, label files and mIoU evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::raster::{self, RasterError};

/// Class id excluded from evaluation.
pub const IGNORE_LABEL: u8 = 255;
/// Semantic classes `1..=12`; `0` is free space.
pub const NUM_CLASSES: u8 = 12;
/// Points retained per voxel.
pub const DEFAULT_VOXEL_CAP: usize = 10;

const LABEL_MAGIC: &[u8; 8] = b"OCCGRID\0";
const LABEL_VERSION: u32 = 1;
const INTEGRAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum OccupancyError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("grid specs differ")]
    SpecMismatch,
    #[error("label {label} at {index:?} is outside 0..={max} and is not the ignore id")]
    InvalidLabel { label: u8, index: [usize; 3], max: u8 },
    #[error("point {index} has {got} features, expected {expected}")]
    FeatureWidthMismatch { index: usize, expected: usize, got: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("class {class} is outside the confusion matrix (0..={max})")]
    UnknownClass { class: u8, max: u8 },
    #[error("voxel cap must be at least 1")]
    ZeroCap,
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] RasterError),
}

/// Axis-aligned voxel lattice; each range is half-open `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecDoc", into = "GridSpecDoc")]
pub struct GridSpec {
    min: [f64; 3],
    max: [f64; 3],
    voxel: f64,
    dims: [usize; 3],
}

impl Default for GridSpec {
    /// 25.6 m × 25.6 m × 6.4 m at 0.4 m: 64 × 64 × 16 voxels.
    fn default() -> Self {
        Self::new([-12.8, -12.8, -2.4], [12.8, 12.8, 4.0], 0.4).expect("default spec is valid")
    }
}

impl GridSpec {
    pub fn new(min: [f64; 3], max: [f64; 3], voxel: f64) -> Result<Self, OccupancyError> {
        if !(voxel > 0.0 && voxel.is_finite()) {
            return Err(OccupancyError::InvalidSpec(format!("voxel size {voxel}")));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let extent = max[a] - min[a];
            if !(extent > 0.0 && extent.is_finite()) {
                return Err(OccupancyError::InvalidSpec(format!("axis {a} range [{}, {}]", min[a], max[a])));
            }
            let cells = extent / voxel;
            if (cells - cells.round()).abs() > INTEGRAL_TOLERANCE {
                return Err(OccupancyError::InvalidSpec(format!(
                    "axis {a} extent {extent} is not a multiple of the voxel size {voxel}"
                )));
            }
            dims[a] = cells.round() as usize;
        }
        Ok(Self { min, max, voxel, dims })
    }

    pub fn min(&self) -> [f64; 3] {
        self.min
    }

    pub fn max(&self) -> [f64; 3] {
        self.max
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxel containing `p`, or `None` outside the grid. Coordinates within 1e-9 voxels
    /// of a boundary snap to it so that decimal boundaries land where expected.
    pub fn world_to_voxel(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let c = (p[a] - self.min[a]) / self.voxel;
            if !c.is_finite() {
                return None;
            }
            let snapped = if (c - c.round()).abs() <= INTEGRAL_TOLERANCE { c.round() } else { c.floor() };
            if snapped < 0.0 || snapped >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = snapped as usize;
        }
        Some(idx)
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> Vec3 {
        Vec3::from_fn(|a, _| self.min[a] + (idx[a] as f64 + 0.5) * self.voxel)
    }

    /// Position of `idx` in x-major flattened order.
    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    fn approx_eq(&self, other: &GridSpec) -> bool {
        self.dims == other.dims
            && (self.voxel - other.voxel).abs() <= INTEGRAL_TOLERANCE
            && (0..3).all(|a| (self.min[a] - other.min[a]).abs() <= INTEGRAL_TOLERANCE)
    }
}

#[derive(Serialize, Deserialize)]
struct GridSpecDoc {
    min: [f64; 3],
    max: [f64; 3],
    voxel_size: f64,
    dims: [usize; 3],
}

impl TryFrom<GridSpecDoc> for GridSpec {
    type Error = OccupancyError;

    fn try_from(d: GridSpecDoc) -> Result<Self, Self::Error> {
        let spec = GridSpec::new(d.min, d.max, d.voxel_size)?;
        if spec.dims != d.dims {
            return Err(OccupancyError::InvalidSpec(format!(
                "dims {:?} disagree with ranges ({:?})",
                d.dims, spec.dims
            )));
        }
        Ok(spec)
    }
}

impl From<GridSpec> for GridSpecDoc {
    fn from(s: GridSpec) -> Self {
        GridSpecDoc { min: s.min, max: s.max, voxel_size: s.voxel, dims: s.dims }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: GridSpec,
    labels: Array3<u8>,
}

impl OccupancyGrid {
    pub fn new(spec: GridSpec, labels: Array3<u8>) -> Result<Self, OccupancyError> {
        let d = spec.dims;
        if labels.dim() != (d[0], d[1], d[2]) {
            return Err(OccupancyError::SpecMismatch);
        }
        if let Some(((x, y, z), &label)) = labels.indexed_iter().find(|(_, &l)| l > NUM_CLASSES && l != IGNORE_LABEL) {
            return Err(OccupancyError::InvalidLabel { label, index: [x, y, z], max: NUM_CLASSES });
        }
        Ok(Self { spec, labels })
    }

    pub fn empty(spec: GridSpec) -> Self {
        let d = spec.dims;
        Self { spec, labels: Array3::zeros((d[0], d[1], d[2])) }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &Array3<u8> {
        &self.labels
    }

    pub fn get(&self, idx: [usize; 3]) -> u8 {
        self.labels[idx]
    }

    pub fn set(&mut self, idx: [usize; 3], label: u8) -> Result<(), OccupancyError> {
        if label > NUM_CLASSES && label != IGNORE_LABEL {
            return Err(OccupancyError::InvalidLabel { label, index: idx, max: NUM_CLASSES });
        }
        self.labels[idx] = label;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub intensity: Option<Vec<f64>>,
    /// Per-point feature vectors; all of one width.
    pub features: Option<Vec<Vec<f64>>>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        Self { positions, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(OccupancyError::NonFinitePoint(i));
        }
        if let Some(intensity) = &self.intensity {
            if intensity.len() != self.len() {
                return Err(OccupancyError::FeatureWidthMismatch {
                    index: intensity.len().min(self.len()),
                    expected: 1,
                    got: 0,
                });
            }
        }
        if let Some(features) = &self.features {
            let expected = features.first().map_or(0, Vec::len);
            if features.len() != self.len() {
                return Err(OccupancyError::FeatureWidthMismatch {
                    index: features.len().min(self.len()),
                    expected,
                    got: 0,
                });
            }
            if let Some(index) = features.iter().position(|f| f.len() != expected) {
                return Err(OccupancyError::FeatureWidthMismatch { index, expected, got: features[index].len() });
            }
        }
        Ok(())
    }

    fn feature(&self, i: usize) -> Vec<f64> {
        match &self.features {
            Some(f) => f[i].clone(),
            None => self.positions[i].iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelFeature {
    pub mean: Vec<f64>,
    pub count: usize,
}

/// Occupied voxels keyed by index, iterated in x-major order.
pub type VoxelFeatureSet = BTreeMap<[usize; 3], VoxelFeature>;

/// Buckets points by voxel, keeps the first `cap` of each bucket in input order and
/// averages their features (coordinates when the cloud carries none). Points outside
/// the grid are dropped.
pub fn voxelize(cloud: &PointCloud, spec: &GridSpec, cap: usize) -> Result<VoxelFeatureSet, OccupancyError> {
    if cap == 0 {
        return Err(OccupancyError::ZeroCap);
    }
    cloud.validate()?;
    let mut voxels = VoxelFeatureSet::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let Some(idx) = spec.world_to_voxel(p) else { continue };
        let f = cloud.feature(i);
        let entry = voxels.entry(idx).or_insert_with(|| VoxelFeature { mean: vec![0.0; f.len()], count: 0 });
        if entry.count < cap {
            // running mean: exact for repeated values
            entry.count += 1;
            let k = entry.count as f64;
            entry.mean.iter_mut().zip(&f).for_each(|(m, v)| *m += (v - *m) / k);
        }
    }
    Ok(voxels)
}

/// Rows are ground truth, columns predictions, over labels `0..=classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn zeros(classes: u8) -> Self {
        let n = classes as usize + 1;
        Self { counts: vec![vec![0; n]; n], total: 0 }
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.size()).filter(|&g| g != c).map(|g| self.counts[g][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.size()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    /// Element-wise sum, for accumulating over frames.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), OccupancyError> {
        if other.size() != self.size() {
            return Err(OccupancyError::SpecMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.total += other.total;
        Ok(())
    }
}

/// Tally over every voxel whose ground-truth label is not `ignore` (nor 255). A
/// prediction of 255 at a counted voxel is scored as free space (label 0).
pub fn confusion(pred: &OccupancyGrid, gt: &OccupancyGrid, ignore: u8) -> Result<ConfusionMatrix, OccupancyError> {
    if !pred.spec.approx_eq(&gt.spec) {
        return Err(OccupancyError::SpecMismatch);
    }
    let mut cm = ConfusionMatrix::zeros(NUM_CLASSES);
    for (&p, &g) in pred.labels.iter().zip(gt.labels.iter()) {
        if g == ignore || g == IGNORE_LABEL {
            continue;
        }
        let p = if p == IGNORE_LABEL { 0 } else { p };
        cm.counts[g as usize][p as usize] += 1;
        cm.total += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: u8,
    pub iou: f64,
    /// No TP, FP or FN: the class never occurs in either grid.
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub miou: f64,
    pub per_class: Vec<ClassIou>,
}

/// Semantic classes `1..=12`.
pub fn default_class_set() -> Vec<u8> {
    (1..=NUM_CLASSES).collect()
}

/// `IoU = TP / (TP + FP + FN)` per class; absent classes count as 0 and are flagged.
/// The mean is unweighted over `classes`.
pub fn miou(cm: &ConfusionMatrix, classes: &[u8]) -> Result<MiouReport, OccupancyError> {
    if classes.is_empty() {
        return Err(OccupancyError::EmptyClassSet);
    }
    let max = (cm.size() - 1) as u8;
    let per_class = classes
        .iter()
        .map(|&class| {
            if class as usize >= cm.size() {
                return Err(OccupancyError::UnknownClass { class, max });
            }
            let c = class as usize;
            let tp = cm.true_positives(c);
            let denom = tp + cm.false_positives(c) + cm.false_negatives(c);
            Ok(if denom == 0 {
                ClassIou { class, iou: 0.0, absent: true }
            } else {
                ClassIou { class, iou: tp as f64 / denom as f64, absent: false }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let miou = per_class.iter().map(|c| c.iou).sum::<f64>() / per_class.len() as f64;
    Ok(MiouReport { miou, per_class })
}

/// Label file: 8-byte magic, `u32` version, `u32` JSON length (all little-endian),
/// the JSON grid spec, then one byte per voxel in x-major, then y, then z order.
pub fn write_labels(path: &Path, grid: &OccupancyGrid) -> Result<(), OccupancyError> {
    raster::write_atomic(path, &encode_labels(grid))?;
    Ok(())
}

pub fn encode_labels(grid: &OccupancyGrid) -> Vec<u8> {
    let json = serde_json::to_vec(&grid.spec).expect("spec serializes");
    let mut out = Vec::with_capacity(16 + json.len() + grid.spec.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&LABEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    // standard layout of Array3 is x-major already
    out.extend(grid.labels.iter());
    out
}

pub fn read_labels(path: &Path) -> Result<OccupancyGrid, OccupancyError> {
    let bytes = std::fs::read(path).map_err(|source| RasterError::Io { path: path.to_path_buf(), source })?;
    decode_labels(&bytes)
}

pub fn decode_labels(bytes: &[u8]) -> Result<OccupancyGrid, OccupancyError> {
    if bytes.len() < 16 {
        return Err(OccupancyError::CorruptFile(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != LABEL_MAGIC {
        return Err(OccupancyError::CorruptFile("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != LABEL_VERSION {
        return Err(OccupancyError::CorruptFile(format!("unsupported version {version}")));
    }
    let json_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < json_len {
        return Err(OccupancyError::CorruptFile("truncated spec block".into()));
    }
    let spec: GridSpec = serde_json::from_slice(&body[..json_len])
        .map_err(|e| OccupancyError::CorruptFile(format!("spec block: {e}")))?;
    let labels = &body[json_len..];
    if labels.len() != spec.len() {
        return Err(OccupancyError::CorruptFile(format!("expected {} labels, found {}", spec.len(), labels.len())));
    }
    let d = spec.dims;
    let labels = Array3::from_shape_vec((d[0], d[1], d[2]), labels.to_vec()).expect("length checked");
    OccupancyGrid::new(spec, labels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudSidecar {
    pub count: usize,
    pub fields: Vec<String>,
}

/// Reads `x y z [intensity]` lines. Blank lines and `#` comments are skipped.
pub fn parse_ascii_cloud(text: &str) -> Result<PointCloud, OccupancyError> {
    let mut positions = Vec::new();
    let mut intensity = Vec::new();
    let mut with_intensity = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| OccupancyError::CorruptFile(format!("line {}: {e}", lineno + 1)))?;
        let has_i = match vals.len() {
            3 => false,
            4 => true,
            n => return Err(OccupancyError::CorruptFile(format!("line {}: {n} columns", lineno + 1))),
        };
        if *with_intensity.get_or_insert(has_i) != has_i {
            return Err(OccupancyError::CorruptFile(format!("line {}: inconsistent column count", lineno + 1)));
        }
        positions.push(Vec3::new(vals[0], vals[1], vals[2]));
        if has_i {
            intensity.push(vals[3]);
        }
    }
    let cloud =
        PointCloud { positions, intensity: with_intensity.unwrap_or(false).then_some(intensity), features: None };
    cloud.validate()?;
    Ok(cloud)
}

/// ASCII for `.txt`/`.xyz`/`.asc`, otherwise binary float32 quadruples with a sidecar.
pub fn read_cloud(path: &Path) -> Result<PointCloud, OccupancyError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    if matches!(ext, "txt" | "xyz" | "asc") {
        let text =
            std::fs::read_to_string(path).map_err(|source| RasterError::Io { path: path.to_path_buf(), source })?;
        return parse_ascii_cloud(&text);
    }
    let side: CloudSidecar = raster::read_json(&raster::sidecar_path(path))?;
    let width = side.fields.len();
    if width != 4 {
        return Err(OccupancyError::CorruptFile(format!("expected 4 fields, sidecar lists {width}")));
    }
    let data = raster::read_f32_le(path)?;
    if data.len() != side.count * width {
        return Err(OccupancyError::CorruptFile(format!(
            "sidecar says {} points, file holds {} floats",
            side.count,
            data.len()
        )));
    }
    let positions = data.chunks_exact(4).map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect();
    let intensity = data.chunks_exact(4).map(|c| c[3] as f64).collect();
    let cloud = PointCloud { positions, intensity: Some(intensity), features: None };
    cloud.validate()?;
    Ok(cloud)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), OccupancyError> {
    let values = cloud.positions.iter().enumerate().flat_map(|(i, p)| {
        let it = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        [p.x as f32, p.y as f32, p.z as f32, it as f32]
    });
    raster::write_atomic(path, &raster::f32_le_bytes(values))?;
    let side = CloudSidecar { count: cloud.len(), fields: ["x", "y", "z", "intensity"].map(String::from).to_vec() };
    raster::write_json(&raster::sidecar_path(path), &side)?;
    Ok(())
}
