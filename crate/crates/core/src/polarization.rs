//! Stokes parameters and linear-polarization maps from four-angle captures.

use std::f64::consts::FRAC_PI_2;

use ndarray::{Array2, Zip};

/// Pixels with `S0` at or below this are treated as too dark to carry a polarization state.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolarizationError {
    #[error("image {name} is {got:?}, expected {expected:?}")]
    DimensionMismatch { name: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("image {name} has a negative or non-finite value at {at:?}")]
    InvalidIntensity { name: &'static str, at: (usize, usize) },
}

/// Intensities behind linear polarizers at 0°, 45°, 90° and 135°.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationCapture {
    i0: Array2<f64>,
    i45: Array2<f64>,
    i90: Array2<f64>,
    i135: Array2<f64>,
}

impl PolarizationCapture {
    pub fn new(
        i0: Array2<f64>,
        i45: Array2<f64>,
        i90: Array2<f64>,
        i135: Array2<f64>,
    ) -> Result<Self, PolarizationError> {
        let expected = i0.dim();
        for (name, img) in [("I0", &i0), ("I45", &i45), ("I90", &i90), ("I135", &i135)] {
            if img.dim() != expected {
                return Err(PolarizationError::DimensionMismatch { name, expected, got: img.dim() });
            }
            if let Some((at, _)) = img.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return Err(PolarizationError::InvalidIntensity { name, at });
            }
        }
        Ok(Self { i0, i45, i90, i135 })
    }

    /// Capture with the same value in every pixel of each channel.
    pub fn uniform(dim: (usize, usize), i0: f64, i45: f64, i90: f64, i135: f64) -> Result<Self, PolarizationError> {
        Self::new(
            Array2::from_elem(dim, i0),
            Array2::from_elem(dim, i45),
            Array2::from_elem(dim, i90),
            Array2::from_elem(dim, i135),
        )
    }

    pub fn dim(&self) -> (usize, usize) {
        self.i0.dim()
    }

    pub fn channels(&self) -> [&Array2<f64>; 4] {
        [&self.i0, &self.i45, &self.i90, &self.i135]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StokesImage {
    pub s0: Array2<f64>,
    pub s1: Array2<f64>,
    pub s2: Array2<f64>,
    /// Pixels where `|S1| > S0` or `|S2| > S0`. Counted, not rejected.
    pub inconsistent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationMaps {
    /// Degree of linear polarization in `[0, 1]`.
    pub dolp: Array2<f64>,
    /// Angle of linear polarization in `(−π/2, π/2]`.
    pub aolp: Array2<f64>,
    pub valid: Array2<bool>,
    /// Valid pixels whose DoLP exceeded 1 before clamping.
    pub clamped: usize,
}

impl PolarizationMaps {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// `S0 = I0 + I90`, `S1 = I0 − I90`, `S2 = I45 − I135`.
pub fn stokes_from_capture(cap: &PolarizationCapture) -> StokesImage {
    let s0 = &cap.i0 + &cap.i90;
    let s1 = &cap.i0 - &cap.i90;
    let s2 = &cap.i45 - &cap.i135;
    let inconsistent =
        Zip::from(&s0).and(&s1).and(&s2).fold(0, |n, &a, &b, &c| n + usize::from(b.abs() > a || c.abs() > a));
    StokesImage { s0, s1, s2, inconsistent }
}

/// Half the two-argument arctangent, folded into `(−π/2, π/2]`; `0` when `S1 = S2 = 0`.
pub fn aolp(s1: f64, s2: f64) -> f64 {
    if s1 == 0.0 && s2 == 0.0 {
        return 0.0;
    }
    let a = 0.5 * s2.atan2(s1);
    if a <= -FRAC_PI_2 {
        a + std::f64::consts::PI
    } else {
        a
    }
}

pub fn polarization_maps(s: &StokesImage, epsilon: f64) -> PolarizationMaps {
    let dim = s.s0.dim();
    let mut dolp = Array2::zeros(dim);
    let mut angle = Array2::zeros(dim);
    let mut valid = Array2::from_elem(dim, false);
    let mut clamped = 0;
    Zip::from(&mut dolp).and(&mut angle).and(&mut valid).and(&s.s0).and(&s.s1).and(&s.s2).for_each(
        |d, a, ok, &s0, &s1, &s2| {
            let usable = s0 > epsilon && s1.is_finite() && s2.is_finite();
            if !usable {
                return;
            }
            let raw = s1.hypot(s2) / s0;
            if raw > 1.0 {
                clamped += 1;
            }
            *d = raw.min(1.0);
            *a = aolp(s1, s2);
            *ok = true;
        },
    );
    if clamped > 0 {
        log::warn!("{clamped} pixels had DoLP above 1 before clamping");
    }
    PolarizationMaps { dolp, aolp: angle, valid, clamped }
}
