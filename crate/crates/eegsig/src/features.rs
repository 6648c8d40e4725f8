use std::f64::consts::PI;

use crate::error::{EegError, Result};
use crate::filter::{SosFilter, BANDS};
use crate::recording::EegRecording;

/// Variances below this are clamped before taking the logarithm.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Differential entropy of a window under a Gaussian model,
/// `½·ln(2πe·σ²)` with the unbiased sample variance.
///
/// Panics if the window has fewer than two samples.
pub fn differential_entropy(window: &[f64]) -> f64 {
    assert!(window.len() >= 2, "differential entropy needs at least two samples");
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    0.5 * (2.0 * PI * std::f64::consts::E * var.max(VARIANCE_FLOOR)).ln()
}

/// Per-window, per-channel, per-band DE features in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    values: Vec<f64>,
    n_windows: usize,
    n_channels: usize,
    window_seconds: f64,
    label: Option<usize>,
}

impl FeatureTensor {
    /// `values` is `[n_windows × n_channels × 5]`.
    pub fn new(
        values: Vec<f64>,
        n_windows: usize,
        n_channels: usize,
        window_seconds: f64,
        label: Option<usize>,
    ) -> Result<Self> {
        let n_bands = BANDS.len();
        if values.len() != n_windows * n_channels * n_bands {
            return Err(EegError::Parameter(format!(
                "{} feature values for {n_windows} windows × {n_channels} channels × {n_bands} bands",
                values.len()
            )));
        }
        if n_windows == 0 || n_channels == 0 {
            return Err(EegError::Parameter("feature tensor must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EegError::Parameter(format!("non-finite feature at index {i}")));
        }
        if !(window_seconds > 0.0) {
            return Err(EegError::Parameter(format!("window of {window_seconds} s")));
        }
        Ok(FeatureTensor {
            values,
            n_windows,
            n_channels,
            window_seconds,
            label,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_bands(&self) -> usize {
        BANDS.len()
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    pub fn band_edges(&self) -> Vec<(f64, f64)> {
        BANDS.iter().map(|b| (b.low_hz, b.high_hz)).collect()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    pub fn get(&self, window: usize, channel: usize, band: usize) -> f64 {
        self.values[(window * self.n_channels + channel) * BANDS.len() + band]
    }
}

/// DE features over non-overlapping windows of `window_seconds`. Each band
/// is filtered over the whole recording first; a trailing partial window is
/// dropped.
pub fn extract_features(rec: &EegRecording, window_seconds: f64) -> Result<FeatureTensor> {
    if !(window_seconds > 0.0) || !window_seconds.is_finite() {
        return Err(EegError::Parameter(format!("window of {window_seconds} s")));
    }
    let win = (window_seconds * rec.sample_rate_hz()).round() as usize;
    if win < 2 {
        return Err(EegError::Parameter(format!(
            "window of {window_seconds} s holds fewer than two samples"
        )));
    }
    let n_windows = rec.n_samples() / win;
    if n_windows == 0 {
        return Err(EegError::EmptyFeatures {
            seconds: rec.duration_seconds(),
            window: window_seconds,
        });
    }
    let (nc, nb) = (rec.n_channels(), BANDS.len());
    let mut values = vec![0.0; n_windows * nc * nb];
    for (b, band) in BANDS.iter().enumerate() {
        let filter = SosFilter::butter_bandpass(band.low_hz, band.high_hz, rec.sample_rate_hz())?;
        for c in 0..nc {
            let filtered = filter.filtfilt(rec.channel(c));
            for w in 0..n_windows {
                values[(w * nc + c) * nb + b] = differential_entropy(&filtered[w * win..(w + 1) * win]);
            }
        }
    }
    FeatureTensor::new(values, n_windows, nc, window_seconds, rec.label())
}

/// Overlapping runs of `t` consecutive feature windows.
///
/// Segment `s`, channel `c` holds the `t·f` values
/// `features[s·stride + τ][c][band]` ordered by `τ`, then band.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBatch {
    segments: Vec<f64>,
    n_segments: usize,
    n_channels: usize,
    t: usize,
    n_bands: usize,
    stride: usize,
    labels: Vec<usize>,
}

impl SegmentBatch {
    pub fn segments(&self) -> &[f64] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.n_segments
    }

    pub fn is_empty(&self) -> bool {
        self.n_segments == 0
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    /// Width of one channel token, `t·f`.
    pub fn token_width(&self) -> usize {
        self.t * self.n_bands
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[n_channels × t·f]` block of segment `s`.
    pub fn segment(&self, s: usize) -> &[f64] {
        let size = self.n_channels * self.token_width();
        &self.segments[s * size..(s + 1) * size]
    }
}

/// Cuts `features` into segments of `t` windows advancing by `stride`.
pub fn segment(features: &FeatureTensor, t: usize, stride: usize) -> Result<SegmentBatch> {
    if t == 0 || stride == 0 {
        return Err(EegError::Parameter(format!(
            "segment length {t} and stride {stride} must be positive"
        )));
    }
    let have = features.n_windows();
    if have < t {
        return Err(EegError::InsufficientData { needed: t, have });
    }
    let label = features.label().ok_or(EegError::Unlabelled)?;
    let n_segments = (have - t) / stride + 1;
    let (nc, nb) = (features.n_channels(), features.n_bands());
    let mut segments = Vec::with_capacity(n_segments * nc * t * nb);
    for s in 0..n_segments {
        for c in 0..nc {
            for tau in 0..t {
                let w = s * stride + tau;
                let start = (w * nc + c) * nb;
                segments.extend_from_slice(&features.values()[start..start + nb]);
            }
        }
    }
    Ok(SegmentBatch {
        segments,
        n_segments,
        n_channels: nc,
        t,
        n_bands: nb,
        stride,
        labels: vec![label; n_segments],
    })
}
