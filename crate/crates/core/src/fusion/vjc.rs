use ndarray::{Array1, Array2, Array3};

use super::{relu, FeatureMap, FusionError};

/// Hidden width of the height-axis encoder.
pub const DEFAULT_HIDDEN: usize = 64;

/// Sample coordinates within this many pixels of an integer are treated as integral,
/// which makes identity and whole-pixel shifts exact.
const PIXEL_SNAP: f64 = 1e-9;

/// Height-axis encoder (two kernel-3, padding-1 convolutions with ReLU) and the
/// offset regressor applied after mean pooling over height.
#[derive(Debug, Clone, PartialEq)]
pub struct VjcWeights {
    /// `hidden × channels × 3`
    pub conv1_weight: Array3<f64>,
    pub conv1_bias: Array1<f64>,
    /// `hidden × hidden × 3`
    pub conv2_weight: Array3<f64>,
    pub conv2_bias: Array1<f64>,
    pub regressor_weight: Array1<f64>,
    pub regressor_bias: f64,
}

impl VjcWeights {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            conv1_weight: Array3::zeros((hidden, channels, 3)),
            conv1_bias: Array1::zeros(hidden),
            conv2_weight: Array3::zeros((hidden, hidden, 3)),
            conv2_bias: Array1::zeros(hidden),
            regressor_weight: Array1::zeros(hidden),
            regressor_bias: 0.0,
        }
    }

    /// Uniform `±1/√fan_in` initialization.
    pub fn random(channels: usize, hidden: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = crate::synthetic::rng(seed);
        let mut u = |fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            rng.random_range(-b..b)
        };
        Self {
            conv1_weight: Array3::from_shape_simple_fn((hidden, channels, 3), || u(3 * channels)),
            conv1_bias: Array1::from_shape_simple_fn(hidden, || u(3 * channels)),
            conv2_weight: Array3::from_shape_simple_fn((hidden, hidden, 3), || u(3 * hidden)),
            conv2_bias: Array1::from_shape_simple_fn(hidden, || u(3 * hidden)),
            regressor_weight: Array1::from_shape_simple_fn(hidden, || u(hidden)),
            regressor_bias: u(hidden),
        }
    }

    /// Weights that ignore the input and always predict `offset` pixels.
    pub fn constant_offset(channels: usize, hidden: usize, offset: f64) -> Self {
        Self { regressor_bias: offset, ..Self::zeros(channels, hidden) }
    }

    pub fn channels(&self) -> usize {
        self.conv1_weight.dim().1
    }

    pub fn hidden(&self) -> usize {
        self.conv1_weight.dim().0
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let (h, c, k) = self.conv1_weight.dim();
        let ok = k == 3
            && self.conv1_bias.len() == h
            && self.conv2_weight.dim() == (h, h, 3)
            && self.conv2_bias.len() == h
            && self.regressor_weight.len() == h
            && c > 0
            && h > 0;
        if !ok {
            return Err(FusionError::ShapeMismatch("inconsistent VJC weight shapes".into()));
        }
        Ok(())
    }
}

/// Mean over the width axis: `C × H × W → C × H`.
pub fn width_mean(map: &FeatureMap) -> Array2<f64> {
    let (c, h, w) = map.dim();
    let data = map.data();
    Array2::from_shape_fn((c, h), |(ci, y)| {
        let mut acc = 0.0;
        for x in 0..w {
            acc += data[[ci, y, x]];
        }
        acc / w as f64
    })
}

/// Kernel-3 convolution along the second axis with one zero of padding on each side, then ReLU.
fn conv1d_relu(input: &Array2<f64>, weight: &Array3<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let (outc, inc, _) = weight.dim();
    let len = input.ncols();
    Array2::from_shape_fn((outc, len), |(o, t)| {
        let mut acc = bias[o];
        for i in 0..inc {
            for k in 0..3 {
                let src = t as isize + k as isize - 1;
                if src >= 0 && (src as usize) < len {
                    acc += weight[[o, i, k]] * input[[i, src as usize]];
                }
            }
        }
        relu(acc)
    })
}

/// Predicted vertical offset as `(pixels, normalized)`, with `normalized = 2·pixels/H`.
pub fn vjc_offset(map: &FeatureMap, weights: &VjcWeights) -> Result<(f64, f64), FusionError> {
    weights.validate()?;
    if map.channels() != weights.channels() {
        return Err(FusionError::ShapeMismatch(format!(
            "map has {} channels, weights expect {}",
            map.channels(),
            weights.channels()
        )));
    }
    let profile = width_mean(map);
    let hidden = conv1d_relu(&profile, &weights.conv1_weight, &weights.conv1_bias);
    let encoded = conv1d_relu(&hidden, &weights.conv2_weight, &weights.conv2_bias);
    let height = map.height();
    let mut raw = weights.regressor_bias;
    for (o, w) in weights.regressor_weight.iter().enumerate() {
        let mut pooled = 0.0;
        for t in 0..height {
            pooled += encoded[[o, t]];
        }
        raw += w * (pooled / height as f64);
    }
    Ok((raw, 2.0 * raw / height as f64))
}

/// `H × W × 2` grid of `(x, y)` pixel centers in normalized coordinates.
pub fn identity_grid(height: usize, width: usize) -> Array3<f64> {
    shifted_grid(height, width, 0.0)
}

/// Identity grid with `dy` added to every vertical coordinate.
pub fn shifted_grid(height: usize, width: usize, dy: f64) -> Array3<f64> {
    Array3::from_shape_fn((height, width, 2), |(y, x, a)| {
        if a == 0 {
            (2 * x + 1) as f64 / width as f64 - 1.0
        } else {
            (2 * y + 1) as f64 / height as f64 - 1.0 + dy
        }
    })
}

/// Normalized coordinate to a pixel coordinate clamped to the border.
fn to_pixel(g: f64, size: usize) -> f64 {
    let p = ((g + 1.0) * size as f64 - 1.0) / 2.0;
    let r = p.round();
    let p = if (p - r).abs() <= PIXEL_SNAP { r } else { p };
    p.clamp(0.0, (size - 1) as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

/// Bilinear sampling with pixel centers at `(2i + 1)/N − 1` and border clamping.
pub fn grid_sample_bilinear(map: &FeatureMap, grid: &Array3<f64>) -> Result<FeatureMap, FusionError> {
    let (c, h, w) = map.dim();
    if grid.dim() != (h, w, 2) {
        return Err(FusionError::ShapeMismatch(format!("grid is {:?}, map is {h}×{w}", grid.dim())));
    }
    if !grid.iter().all(|v| v.is_finite()) {
        return Err(FusionError::NonFinite("sampling grid".into()));
    }
    let data = map.data();
    let mut out = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let px = to_pixel(grid[[y, x, 0]], w);
            let py = to_pixel(grid[[y, x, 1]], h);
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            let (fx, fy) = (px - x0 as f64, py - y0 as f64);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            for ci in 0..c {
                let top = lerp(data[[ci, y0, x0]], data[[ci, y0, x1]], fx);
                let bottom = lerp(data[[ci, y1, x0]], data[[ci, y1, x1]], fx);
                out[[ci, y, x]] = lerp(top, bottom, fy);
            }
        }
    }
    FeatureMap::new(out)
}

/// Predicts the offset, shifts the identity grid vertically by it and resamples.
pub fn vjc_forward(map: &FeatureMap, weights: &VjcWeights) -> Result<(FeatureMap, f64), FusionError> {
    let (raw, normalized) = vjc_offset(map, weights)?;
    let grid = shifted_grid(map.height(), map.width(), normalized);
    Ok((grid_sample_bilinear(map, &grid)?, raw))
}
