//! Signal side of the pipeline: raw multichannel recordings in, per-band
//! differential-entropy features and sliding-window segments out.

mod error;
mod features;
pub mod filter;
pub mod io;
mod recording;
mod synth;

pub use error::{EegError, Result};
pub use features::{
    differential_entropy, extract_features, segment, FeatureTensor, SegmentBatch, VARIANCE_FLOOR,
};
pub use filter::{bandpass_decompose, Band, BANDS};
pub use recording::EegRecording;
pub use synth::{synth_dataset, SynthSpec, SynthTrial};
