//! Reference forward passes for vertical jitter compensation (VJC), multimodal
//! prompt fusion (MIPF), the occupancy head reshape and the segmentation losses.
//!
//! Everything is plain `f64` arithmetic with loops in a fixed order, so results are
//! bit-reproducible across runs and platforms with IEEE-754 doubles.

mod bundle;
mod head;
mod mipf;
mod vjc;

pub use bundle::{load_tensor, save_tensor, TensorDims, WeightBundle, BUNDLE_MAGIC};
pub use head::{bev_to_voxel_logits, cross_entropy, lovasz_grad, lovasz_softmax, softmax_probs, voxel_logits_to_bev};
pub use mipf::{
    mipf_forward, MipfInputs, MipfOutput, MipfWeights, PromptMlp, DEFAULT_HEADS, DEFAULT_PROMPT_WIDTH, MODALITIES,
};
pub use vjc::{
    grid_sample_bilinear, identity_grid, shifted_grid, vjc_forward, vjc_offset, width_mean, VjcWeights, DEFAULT_HIDDEN,
};

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::raster::RasterError;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("embedding width {embed} is not divisible by {heads} heads")]
    HeadDivisibility { embed: usize, heads: usize },
    #[error("{channels} channels cannot be split into {bins} bins of {classes} classes")]
    ChannelMismatch { channels: usize, bins: usize, classes: usize },
    #[error("probabilities at voxel {index:?} sum to {sum}")]
    NotNormalized { index: [usize; 3], sum: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("bad weight bundle: {0}")]
    CorruptBundle(String),
    #[error(transparent)]
    Io(#[from] RasterError),
}

/// Dense `C × H × W` tensor with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Array3<f64>);

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self, FusionError> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(FusionError::ShapeMismatch(format!("empty feature map {c}×{h}×{w}")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FusionError::NonFinite("feature map".into()));
        }
        Ok(Self(data))
    }

    pub fn from_fn(
        dim: (usize, usize, usize),
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Result<Self, FusionError> {
        Self::new(Array3::from_shape_fn(dim, f))
    }

    /// Entries drawn uniformly from `[-1, 1)`.
    pub fn random(dim: (usize, usize, usize), seed: u64) -> Self {
        let mut rng = crate::synthetic::rng(seed);
        Self::new(Array3::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0))).expect("finite")
    }

    pub fn channels(&self) -> usize {
        self.0.dim().0
    }

    pub fn height(&self) -> usize {
        self.0.dim().1
    }

    pub fn width(&self) -> usize {
        self.0.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Affine layer `y = W x + b`, also used as a 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Array2::zeros((output, input)), bias: Array1::zeros(output) }
    }

    /// Uniform in `±1/√in` for weights and biases.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || rng.random_range(-bound..bound)),
            bias: Array1::from_shape_simple_fn(output, || rng.random_range(-bound..bound)),
        }
    }

    pub fn input(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output(&self) -> usize {
        self.weight.nrows()
    }

    fn check(&self, name: &str) -> Result<(), FusionError> {
        if self.bias.len() != self.output() {
            return Err(FusionError::ShapeMismatch(format!(
                "{name}: bias has {} entries for {} outputs",
                self.bias.len(),
                self.output()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input());
        (0..self.output())
            .map(|o| {
                let mut acc = self.bias[o];
                for (i, xi) in x.iter().enumerate() {
                    acc += self.weight[[o, i]] * xi;
                }
                acc
            })
            .collect()
    }

    /// Per-pixel application over a `C × H × W` map.
    pub fn apply_map(&self, map: &Array3<f64>) -> Array3<f64> {
        let (_, h, w) = map.dim();
        let mut out = Array3::zeros((self.output(), h, w));
        let mut px = vec![0.0; self.input()];
        for y in 0..h {
            for x in 0..w {
                for (c, v) in px.iter_mut().enumerate() {
                    *v = map[[c, y, x]];
                }
                for (o, v) in self.apply(&px).into_iter().enumerate() {
                    out[[o, y, x]] = v;
                }
            }
        }
        out
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
