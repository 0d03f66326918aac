use ndarray::{Array2, Array3, Array4};

use super::{relu, sigmoid, FeatureMap, FusionError, Linear};

pub const DEFAULT_HEADS: usize = 8;
pub const DEFAULT_PROMPT_WIDTH: usize = 8;

/// Image modalities in prompt order.
pub const MODALITIES: [&str; 3] = ["pal", "thermal", "polar"];

/// One-hidden-layer prompt MLP `D → prompt_width → D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptMlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl PromptMlp {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.hidden.apply(x).into_iter().map(relu).collect();
        self.output.apply(&h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipfWeights {
    pub lidar_projection: Linear,
    /// Indexed like [`MODALITIES`].
    pub image_projections: [Linear; 3],
    pub prompts: [PromptMlp; 3],
    /// `D × D`, no bias.
    pub key: Array2<f64>,
    /// `D × D`, no bias.
    pub value: Array2<f64>,
    pub gate: Linear,
    pub heads: usize,
}

impl MipfWeights {
    pub fn random(
        lidar_channels: usize,
        image_channels: [usize; 3],
        embed: usize,
        prompt_width: usize,
        heads: usize,
        seed: u64,
    ) -> Self {
        use rand::Rng;
        let mut rng = crate::synthetic::rng(seed);
        let lidar_projection = Linear::random(lidar_channels, embed, &mut rng);
        let image_projections = image_channels.map(|c| Linear::random(c, embed, &mut rng));
        let prompts = [(); 3].map(|_| PromptMlp {
            hidden: Linear::random(embed, prompt_width, &mut rng),
            output: Linear::random(prompt_width, embed, &mut rng),
        });
        let bound = 1.0 / (embed as f64).sqrt();
        let key = Array2::from_shape_simple_fn((embed, embed), || rng.random_range(-bound..bound));
        let value = Array2::from_shape_simple_fn((embed, embed), || rng.random_range(-bound..bound));
        let gate = Linear::random(embed, embed, &mut rng);
        Self { lidar_projection, image_projections, prompts, key, value, gate, heads }
    }

    pub fn embed(&self) -> usize {
        self.lidar_projection.output()
    }

    pub fn prompt_width(&self) -> usize {
        self.prompts[0].hidden.output()
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let d = self.embed();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(FusionError::HeadDivisibility { embed: d, heads: self.heads });
        }
        self.lidar_projection.check("lidar projection")?;
        for (m, name) in MODALITIES.iter().enumerate() {
            let p = &self.image_projections[m];
            p.check(name)?;
            let mlp = &self.prompts[m];
            mlp.hidden.check(name)?;
            mlp.output.check(name)?;
            if p.output() != d
                || mlp.hidden.input() != d
                || mlp.output.input() != mlp.hidden.output()
                || mlp.output.output() != d
            {
                return Err(FusionError::ShapeMismatch(format!(
                    "{name} projection or prompt MLP does not match width {d}"
                )));
            }
        }
        self.gate.check("gate")?;
        if self.key.dim() != (d, d) || self.value.dim() != (d, d) || self.gate.input() != d || self.gate.output() != d {
            return Err(FusionError::ShapeMismatch(format!("key, value and gate must be {d}×{d}")));
        }
        Ok(())
    }
}

pub struct MipfInputs<'a> {
    pub lidar: &'a FeatureMap,
    /// Indexed like [`MODALITIES`].
    pub images: [&'a FeatureMap; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipfOutput {
    /// `D × H × W`
    pub fused: FeatureMap,
    /// Projected LiDAR features, `D × H × W`.
    pub lidar_embedding: FeatureMap,
    /// Prompt-attended features before the gate, `D × H × W`.
    pub attended: FeatureMap,
    /// Sigmoid gate, `D × H × W`.
    pub gate: FeatureMap,
    /// Attention weights, `H × W × heads × 3`.
    pub attention: Array4<f64>,
    /// One prompt per image modality, `3 × D`.
    pub prompts: Array2<f64>,
}

fn matvec(m: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|r| {
            let mut acc = 0.0;
            for (c, xc) in x.iter().enumerate() {
                acc += m[[r, c]] * xc;
            }
            acc
        })
        .collect()
}

fn global_average(map: &Array3<f64>) -> Vec<f64> {
    let (c, h, w) = map.dim();
    let n = (h * w) as f64;
    (0..c)
        .map(|ci| {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += map[[ci, y, x]];
                }
            }
            acc / n
        })
        .collect()
}

/// LiDAR BEV cells attend to one pooled prompt per image modality; the attended
/// features drive a sigmoid gate that rescales the projected LiDAR features,
/// `fused = lidar + sigmoid(gate(attended)) * lidar`, elementwise.
pub fn mipf_forward(inputs: &MipfInputs<'_>, weights: &MipfWeights) -> Result<MipfOutput, FusionError> {
    weights.validate()?;
    let (cl, h, w) = inputs.lidar.dim();
    if cl != weights.lidar_projection.input() {
        return Err(FusionError::ShapeMismatch(format!(
            "lidar map has {cl} channels, projection expects {}",
            weights.lidar_projection.input()
        )));
    }
    for (m, img) in inputs.images.iter().enumerate() {
        let (c, ih, iw) = img.dim();
        if (ih, iw) != (h, w) {
            return Err(FusionError::ShapeMismatch(format!("{} map is {ih}×{iw}, lidar is {h}×{w}", MODALITIES[m])));
        }
        if c != weights.image_projections[m].input() {
            return Err(FusionError::ShapeMismatch(format!(
                "{} map has {c} channels, projection expects {}",
                MODALITIES[m],
                weights.image_projections[m].input()
            )));
        }
    }
    let d = weights.embed();
    let heads = weights.heads;
    let head_dim = d / heads;
    let scale = (head_dim as f64).sqrt();

    let lidar = weights.lidar_projection.apply_map(inputs.lidar.data());
    let mut prompts = Array2::zeros((3, d));
    let mut keys = Vec::with_capacity(3);
    let mut values = Vec::with_capacity(3);
    for m in 0..3 {
        let projected = weights.image_projections[m].apply_map(inputs.images[m].data());
        let p = weights.prompts[m].apply(&global_average(&projected));
        keys.push(matvec(&weights.key, &p));
        values.push(matvec(&weights.value, &p));
        prompts.row_mut(m).assign(&ndarray::ArrayView1::from(&p));
    }

    let mut attended = Array3::zeros((d, h, w));
    let mut gate = Array3::zeros((d, h, w));
    let mut fused = Array3::zeros((d, h, w));
    let mut attention = Array4::zeros((h, w, heads, 3));
    let mut query = vec![0.0; d];
    let mut out = vec![0.0; d];
    for y in 0..h {
        for x in 0..w {
            for (c, q) in query.iter_mut().enumerate() {
                *q = lidar[[c, y, x]];
            }
            for head in 0..heads {
                let span = head * head_dim..(head + 1) * head_dim;
                let mut scores = [0.0; 3];
                for (m, s) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in span.clone() {
                        acc += query[k] * keys[m][k];
                    }
                    *s = acc / scale;
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps = scores.map(|s| (s - max).exp());
                let total = exps[0] + exps[1] + exps[2];
                for m in 0..3 {
                    attention[[y, x, head, m]] = exps[m] / total;
                }
                for k in span {
                    let mut acc = 0.0;
                    for m in 0..3 {
                        acc += attention[[y, x, head, m]] * values[m][k];
                    }
                    out[k] = acc;
                }
            }
            let g = weights.gate.apply(&out);
            for c in 0..d {
                attended[[c, y, x]] = out[c];
                let mask = sigmoid(g[c]);
                gate[[c, y, x]] = mask;
                fused[[c, y, x]] = query[c] + mask * query[c];
            }
        }
    }
    Ok(MipfOutput {
        fused: FeatureMap::new(fused)?,
        lidar_embedding: FeatureMap::new(lidar)?,
        attended: FeatureMap::new(attended)?,
        gate: FeatureMap::new(gate)?,
        attention,
        prompts,
    })
}
