use crate::error::{EegError, Result};

/// Raw multichannel EEG in microvolts, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    channel_names: Vec<String>,
    sample_rate_hz: f64,
    n_samples: usize,
    samples: Vec<f64>,
    label: Option<usize>,
}

/// The γ band reaches 50 Hz, so anything at or below 100 Hz aliases it.
const MIN_SAMPLE_RATE: f64 = 100.0;

impl EegRecording {
    /// `samples` is `[n_channels × n_samples]`, row per channel.
    pub fn new(
        channel_names: Vec<String>,
        sample_rate_hz: f64,
        samples: Vec<f64>,
        label: Option<usize>,
    ) -> Result<Self> {
        if channel_names.is_empty() {
            return Err(EegError::Parameter("recording has no channels".into()));
        }
        if !(sample_rate_hz > MIN_SAMPLE_RATE) || !sample_rate_hz.is_finite() {
            return Err(EegError::Parameter(format!(
                "sample rate {sample_rate_hz} Hz must exceed {MIN_SAMPLE_RATE} Hz"
            )));
        }
        if !samples.len().is_multiple_of(channel_names.len()) {
            return Err(EegError::Parameter(format!(
                "{} samples do not split evenly over {} channels",
                samples.len(),
                channel_names.len()
            )));
        }
        let n_samples = samples.len() / channel_names.len();
        Ok(EegRecording {
            channel_names,
            sample_rate_hz,
            n_samples,
            samples,
            label,
        })
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c * self.n_samples..(c + 1) * self.n_samples]
    }
}
