use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::mipf::PromptMlp;
use super::{FeatureMap, FusionError, Linear, MipfWeights, VjcWeights};
use crate::raster;

pub const BUNDLE_MAGIC: &[u8; 8] = b"WBUNDLE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDims {
    pub dims: Vec<usize>,
}

/// Named float32 tensors with a JSON header: `WBUNDLE1`, `u32` header length,
/// header `{kind, params, tensors: [{name, dims}]}`, then the tensors back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub kind: String,
    pub params: Map<String, Value>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    params: Map<String, Value>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dims: Vec<usize>,
}

impl WeightBundle {
    pub fn new(kind: &str, params: Value) -> Self {
        let params = params.as_object().cloned().unwrap_or_default();
        Self { kind: kind.into(), params, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: &str, dims: &[usize], values: impl IntoIterator<Item = f64>) {
        self.tensors.push((name.into(), dims.to_vec(), values.into_iter().collect()));
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            params: self.params.clone(),
            tensors: self.tensors.iter().map(|(n, d, _)| Entry { name: n.clone(), dims: d.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = BUNDLE_MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, v) in &self.tensors {
            out.extend(raster::f32_le_bytes(v.iter().map(|&x| x as f32)));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FusionError> {
        let bad = |m: &str| FusionError::CorruptBundle(m.into());
        if bytes.len() < 12 || &bytes[..8] != BUNDLE_MAGIC {
            return Err(bad("missing magic"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let rest = &bytes[12..];
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..len]).map_err(|e| bad(&e.to_string()))?;
        let mut data = &rest[len..];
        let mut tensors = Vec::new();
        for e in header.tensors {
            let n: usize = e.dims.iter().product();
            if data.len() < 4 * n {
                return Err(bad(&format!("tensor {} is truncated", e.name)));
            }
            let values = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            data = &data[4 * n..];
            tensors.push((e.name, e.dims, values));
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { kind: header.kind, params: header.params, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        Ok(raster::write_atomic(path, &self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let bytes =
            std::fs::read(path).map_err(|source| raster::RasterError::Io { path: path.to_path_buf(), source })?;
        Self::decode(&bytes)
    }

    fn tensor(&self, name: &str, dims: &[usize]) -> Result<&[f64], FusionError> {
        let (_, d, v) = self
            .tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| FusionError::CorruptBundle(format!("missing tensor {name}")))?;
        if d != dims {
            return Err(FusionError::ShapeMismatch(format!("{name} is {d:?}, expected {dims:?}")));
        }
        Ok(v)
    }

    fn param(&self, name: &str) -> Result<usize, FusionError> {
        self.params
            .get(name)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| FusionError::CorruptBundle(format!("missing parameter {name}")))
    }

    fn expect_kind(&self, kind: &str) -> Result<(), FusionError> {
        if self.kind != kind {
            return Err(FusionError::CorruptBundle(format!("bundle holds {} weights, expected {kind}", self.kind)));
        }
        Ok(())
    }

    fn array1(&self, name: &str, n: usize) -> Result<Array1<f64>, FusionError> {
        Ok(Array1::from(self.tensor(name, &[n])?.to_vec()))
    }

    fn array2(&self, name: &str, r: usize, c: usize) -> Result<Array2<f64>, FusionError> {
        Ok(Array2::from_shape_vec((r, c), self.tensor(name, &[r, c])?.to_vec()).expect("dims checked"))
    }

    fn array3(&self, name: &str, d: (usize, usize, usize)) -> Result<Array3<f64>, FusionError> {
        Ok(Array3::from_shape_vec(d, self.tensor(name, &[d.0, d.1, d.2])?.to_vec()).expect("dims checked"))
    }

    fn push_linear(&mut self, name: &str, l: &Linear) {
        self.push(&format!("{name}.weight"), &[l.output(), l.input()], l.weight.iter().copied());
        self.push(&format!("{name}.bias"), &[l.output()], l.bias.iter().copied());
    }

    fn linear(&self, name: &str, input: usize, output: usize) -> Result<Linear, FusionError> {
        Ok(Linear {
            weight: self.array2(&format!("{name}.weight"), output, input)?,
            bias: self.array1(&format!("{name}.bias"), output)?,
        })
    }
}

impl VjcWeights {
    pub fn to_bundle(&self) -> WeightBundle {
        let (c, h) = (self.channels(), self.hidden());
        let mut b = WeightBundle::new("vjc", json!({ "channels": c, "hidden": h }));
        b.push("conv1.weight", &[h, c, 3], self.conv1_weight.iter().copied());
        b.push("conv1.bias", &[h], self.conv1_bias.iter().copied());
        b.push("conv2.weight", &[h, h, 3], self.conv2_weight.iter().copied());
        b.push("conv2.bias", &[h], self.conv2_bias.iter().copied());
        b.push("regressor.weight", &[h], self.regressor_weight.iter().copied());
        b.push("regressor.bias", &[1], [self.regressor_bias]);
        b
    }

    pub fn from_bundle(b: &WeightBundle) -> Result<Self, FusionError> {
        b.expect_kind("vjc")?;
        let (c, h) = (b.param("channels")?, b.param("hidden")?);
        let w = Self {
            conv1_weight: b.array3("conv1.weight", (h, c, 3))?,
            conv1_bias: b.array1("conv1.bias", h)?,
            conv2_weight: b.array3("conv2.weight", (h, h, 3))?,
            conv2_bias: b.array1("conv2.bias", h)?,
            regressor_weight: b.array1("regressor.weight", h)?,
            regressor_bias: b.tensor("regressor.bias", &[1])?[0],
        };
        w.validate()?;
        Ok(w)
    }
}

impl MipfWeights {
    pub fn to_bundle(&self) -> WeightBundle {
        let d = self.embed();
        let params = json!({
            "embed": d,
            "heads": self.heads,
            "prompt_width": self.prompt_width(),
            "lidar_channels": self.lidar_projection.input(),
            "pal_channels": self.image_projections[0].input(),
            "thermal_channels": self.image_projections[1].input(),
            "polar_channels": self.image_projections[2].input(),
        });
        let mut b = WeightBundle::new("mipf", params);
        b.push_linear("proj.lidar", &self.lidar_projection);
        for (m, name) in super::mipf::MODALITIES.iter().enumerate() {
            b.push_linear(&format!("proj.{name}"), &self.image_projections[m]);
            b.push_linear(&format!("prompt.{name}.hidden"), &self.prompts[m].hidden);
            b.push_linear(&format!("prompt.{name}.output"), &self.prompts[m].output);
        }
        b.push("key.weight", &[d, d], self.key.iter().copied());
        b.push("value.weight", &[d, d], self.value.iter().copied());
        b.push_linear("gate", &self.gate);
        b
    }

    pub fn from_bundle(b: &WeightBundle) -> Result<Self, FusionError> {
        b.expect_kind("mipf")?;
        let d = b.param("embed")?;
        let pw = b.param("prompt_width")?;
        let mut proj = Vec::new();
        let mut prompts = Vec::new();
        for name in super::mipf::MODALITIES {
            proj.push(b.linear(&format!("proj.{name}"), b.param(&format!("{name}_channels"))?, d)?);
            prompts.push(PromptMlp {
                hidden: b.linear(&format!("prompt.{name}.hidden"), d, pw)?,
                output: b.linear(&format!("prompt.{name}.output"), pw, d)?,
            });
        }
        let w = Self {
            lidar_projection: b.linear("proj.lidar", b.param("lidar_channels")?, d)?,
            image_projections: proj.try_into().expect("three modalities"),
            prompts: prompts.try_into().expect("three modalities"),
            key: b.array2("key.weight", d, d)?,
            value: b.array2("value.weight", d, d)?,
            gate: b.linear("gate", d, d)?,
            heads: b.param("heads")?,
        };
        w.validate()?;
        Ok(w)
    }
}

/// Raw float32 tensor with a `{"dims": [...]}` sidecar.
pub fn save_tensor(path: &Path, dims: &[usize], values: impl IntoIterator<Item = f64>) -> Result<(), FusionError> {
    let values: Vec<f64> = values.into_iter().collect();
    if values.len() != dims.iter().product::<usize>() {
        return Err(FusionError::ShapeMismatch(format!("{} values for dims {dims:?}", values.len())));
    }
    raster::write_atomic(path, &raster::f32_le_bytes(values.iter().map(|&v| v as f32)))?;
    raster::write_json(&raster::sidecar_path(path), &TensorDims { dims: dims.to_vec() })?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>), FusionError> {
    let TensorDims { dims } = raster::read_json(&raster::sidecar_path(path))?;
    let values = raster::read_f32_le(path)?;
    if values.len() != dims.iter().product::<usize>() {
        return Err(FusionError::ShapeMismatch(format!("{} values for dims {dims:?}", values.len())));
    }
    Ok((dims, values.into_iter().map(f64::from).collect()))
}

impl FeatureMap {
    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let (dims, values) = load_tensor(path)?;
        let [c, h, w] = dims[..] else {
            return Err(FusionError::ShapeMismatch(format!("feature map needs 3 dims, got {dims:?}")));
        };
        FeatureMap::new(Array3::from_shape_vec((c, h, w), values).expect("length checked"))
    }

    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        let (c, h, w) = self.dim();
        save_tensor(path, &[c, h, w], self.data().iter().copied())
    }
}
