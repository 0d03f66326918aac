//! Vertical-acceleration jitter analysis: detrending, smoothing, decimation and
//! spectral peak picking.

use std::io::Read;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("time series needs at least {required} samples, got {got}")]
    TooShort { got: usize, required: usize },
    #[error("window must be odd and at least 1, got {0}")]
    EvenWindow(usize),
    #[error("factor must be at least 1")]
    ZeroFactor,
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    samples: Vec<f64>,
    rate: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, rate: f64) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::TooShort { got: 0, required: 1 });
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SignalError::InvalidRate(rate));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { samples, rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Hz
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self { samples, rate: self.rate }
    }
}

/// Subtracts the arithmetic mean.
pub fn detrend_mean(s: &TimeSeries) -> TimeSeries {
    let m = s.mean();
    s.with_samples(s.samples.iter().map(|v| v - m).collect())
}

/// Centered moving average. Near the ends the window is cut off by the series
/// boundary, so the first output of `[0, 3, 0, 3, 0]` with window 3 is `(0 + 3) / 2`.
pub fn moving_average(s: &TimeSeries, window: usize) -> Result<TimeSeries, SignalError> {
    if window == 0 || window % 2 == 0 {
        return Err(SignalError::EvenWindow(window));
    }
    let half = window / 2;
    let n = s.len();
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            s.samples[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    Ok(s.with_samples(out))
}

/// Keeps every `factor`-th sample starting at index 0.
pub fn downsample(s: &TimeSeries, factor: usize) -> Result<TimeSeries, SignalError> {
    if factor == 0 {
        return Err(SignalError::ZeroFactor);
    }
    Ok(TimeSeries { samples: s.samples.iter().step_by(factor).copied().collect(), rate: s.rate / factor as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterStats {
    pub samples: usize,
    pub sample_rate: f64,
    /// RMS of the mean-removed series.
    pub rms: f64,
    pub peak_to_peak: f64,
    /// Frequency of the largest DFT magnitude among the positive bins; `None` for a flat series.
    pub dominant_frequency: Option<f64>,
}

/// Magnitudes of DFT bins `1..=n/2`.
pub fn positive_spectrum(s: &TimeSeries) -> Vec<f64> {
    let n = s.len();
    let mut buf: Vec<Complex<f64>> = s.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[1..=n / 2].iter().map(|c| c.norm()).collect()
}

pub fn jitter_stats(s: &TimeSeries) -> Result<JitterStats, SignalError> {
    const MIN_SAMPLES: usize = 4;
    if s.len() < MIN_SAMPLES {
        return Err(SignalError::TooShort { got: s.len(), required: MIN_SAMPLES });
    }
    let d = detrend_mean(s);
    let n = d.len();
    let rms = (d.samples.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let max = d.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = d.samples.iter().copied().fold(f64::INFINITY, f64::min);

    let spectrum = positive_spectrum(&d);
    let scale = s.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // ties go to the lower bin
    let (bin, peak) = spectrum
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let flat = peak <= 1e-12 * n as f64 * scale;
    let dominant_frequency = (!flat).then(|| (bin + 1) as f64 * s.rate / n as f64);
    Ok(JitterStats { samples: n, sample_rate: s.rate, rms, peak_to_peak: max - min, dominant_frequency })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImuAxis {
    X,
    Y,
    Z,
}

impl ImuAxis {
    fn column(self) -> &'static str {
        match self {
            ImuAxis::X => "ax",
            ImuAxis::Y => "ay",
            ImuAxis::Z => "az",
        }
    }
}

/// Parses `timestamp,ax,ay,az` CSV (with header, timestamps in seconds). The sample
/// rate is derived from the first and last timestamps, which must be strictly increasing.
pub fn read_imu_csv(reader: impl Read, axis: ImuAxis) -> Result<TimeSeries, SignalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| SignalError::Csv(e.to_string()))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| SignalError::Csv(format!("missing column {name}")))
    };
    let (tcol, vcol) = (find("timestamp")?, find(axis.column())?);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SignalError::Csv(e.to_string()))?;
        let parse = |col: usize| -> Result<f64, SignalError> {
            rec.get(col)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| SignalError::Csv(format!("row {}: {e}", row + 2)))
        };
        let t = parse(tcol)?;
        if times.last().is_some_and(|&prev| t <= prev) {
            return Err(SignalError::Csv(format!("row {}: timestamps must increase", row + 2)));
        }
        times.push(t);
        values.push(parse(vcol)?);
    }
    if values.len() < 2 {
        return Err(SignalError::TooShort { got: values.len(), required: 2 });
    }
    let rate = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
    TimeSeries::new(values, rate)
}
