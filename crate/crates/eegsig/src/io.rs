//! Binary recording (`.eegr`) and feature (`.deft`) files, each paired with
//! a JSON manifest holding channel names, the label and the data file name.
//!
//! All integers and floats are little-endian; samples and features are f32.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EegError, Result};
use crate::features::FeatureTensor;
use crate::filter::BANDS;
use crate::recording::EegRecording;

pub const EEGR_MAGIC: &[u8; 4] = b"EEGR";
pub const DEFT_MAGIC: &[u8; 4] = b"DEFT";
pub const FORMAT_VERSION: u16 = 1;

const EEGR_HEADER: usize = 4 + 2 + 2 + 4 + 8;
const DEFT_HEADER: usize = 4 + 2 + 4 + 2 + 2 + 4;

/// Sidecar for a binary file. `file` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub channels: Vec<String>,
    pub label: Option<usize>,
    pub file: String,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Location of the data file for a manifest stored at `manifest_path`.
    pub fn data_path(&self, manifest_path: &Path) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&self.file)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| EegError::Format {
            format: self.format,
            msg: format!("truncated at byte {}", self.pos),
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("slice has length N"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if &self.take::<4>()? != magic {
            return Err(self.error("bad magic"));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(self.error(&format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn f32_body(&mut self, count: usize) -> Result<Vec<f64>> {
        let rest = &self.bytes[self.pos..];
        if rest.len() != count * 4 {
            return Err(self.error(&format!(
                "expected {} payload bytes, found {}",
                count * 4,
                rest.len()
            )));
        }
        self.pos = self.bytes.len();
        Ok(rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn error(&self, msg: &str) -> EegError {
        EegError::Format {
            format: self.format,
            msg: msg.to_string(),
        }
    }
}

fn narrow(value: usize, what: &str, max: usize, format: &'static str) -> Result<usize> {
    if value > max {
        return Err(EegError::Format {
            format,
            msg: format!("{what} = {value} exceeds {max}"),
        });
    }
    Ok(value)
}

/// Serialises samples (rounded to f32) in the `.eegr` layout.
pub fn encode_eegr(rec: &EegRecording) -> Result<Vec<u8>> {
    let nc = narrow(rec.n_channels(), "n_channels", u16::MAX as usize, "EEGR")?;
    let mut out = Vec::with_capacity(EEGR_HEADER + rec.samples().len() * 4);
    out.extend_from_slice(EEGR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(nc as u16).to_le_bytes());
    out.extend_from_slice(&(rec.sample_rate_hz() as f32).to_le_bytes());
    out.extend_from_slice(&(rec.n_samples() as u64).to_le_bytes());
    for v in rec.samples() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses `.eegr` bytes; names and label come from the manifest.
pub fn decode_eegr(bytes: &[u8], channels: Vec<String>, label: Option<usize>) -> Result<EegRecording> {
    let mut r = Reader { bytes, pos: 0, format: "EEGR" };
    r.header(EEGR_MAGIC)?;
    let nc = r.u16()? as usize;
    let rate = r.f32()? as f64;
    let ns = usize::try_from(r.u64()?).map_err(|_| r.error("n_samples overflows usize"))?;
    if nc != channels.len() {
        return Err(r.error(&format!("header has {nc} channels, manifest lists {}", channels.len())));
    }
    let count = nc.checked_mul(ns).ok_or_else(|| r.error("sample count overflows"))?;
    let samples = r.f32_body(count)?;
    EegRecording::new(channels, rate, samples, label)
}

/// Serialises features (rounded to f32) in the `.deft` layout.
pub fn encode_deft(features: &FeatureTensor) -> Result<Vec<u8>> {
    let nw = narrow(features.n_windows(), "n_windows", u32::MAX as usize, "DEFT")?;
    let nc = narrow(features.n_channels(), "n_channels", u16::MAX as usize, "DEFT")?;
    let mut out = Vec::with_capacity(DEFT_HEADER + features.values().len() * 4);
    out.extend_from_slice(DEFT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(nw as u32).to_le_bytes());
    out.extend_from_slice(&(nc as u16).to_le_bytes());
    out.extend_from_slice(&(features.n_bands() as u16).to_le_bytes());
    out.extend_from_slice(&(features.window_seconds() as f32).to_le_bytes());
    for v in features.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_deft(bytes: &[u8], label: Option<usize>) -> Result<FeatureTensor> {
    let mut r = Reader { bytes, pos: 0, format: "DEFT" };
    r.header(DEFT_MAGIC)?;
    let nw = r.u32()? as usize;
    let nc = r.u16()? as usize;
    let nb = r.u16()? as usize;
    if nb != BANDS.len() {
        return Err(r.error(&format!("{nb} bands; expected {}", BANDS.len())));
    }
    let window = r.f32()? as f64;
    let values = r.f32_body(nw * nc * nb)?;
    FeatureTensor::new(values, nw, nc, window, label).map_err(|e| r.error(&e.to_string()))
}

fn write_pair(dir: &Path, stem: &str, ext: &str, bytes: &[u8], manifest: Manifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(&manifest.file), bytes)?;
    let path = dir.join(format!("{stem}{ext}"));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Writes `dir/stem.eegr` and its manifest `dir/stem.json`; returns the
/// manifest path.
pub fn save_recording(dir: &Path, stem: &str, rec: &EegRecording) -> Result<PathBuf> {
    let manifest = Manifest {
        channels: rec.channel_names().to_vec(),
        label: rec.label(),
        file: format!("{stem}.eegr"),
    };
    write_pair(dir, stem, ".json", &encode_eegr(rec)?, manifest)
}

pub fn load_recording(manifest_path: &Path) -> Result<EegRecording> {
    let m = Manifest::read(manifest_path)?;
    let bytes = fs::read(m.data_path(manifest_path))?;
    decode_eegr(&bytes, m.channels, m.label)
}

/// Writes `dir/stem.deft` and `dir/stem.features.json`; returns the manifest
/// path.
pub fn save_features(
    dir: &Path,
    stem: &str,
    features: &FeatureTensor,
    channels: &[String],
) -> Result<PathBuf> {
    if channels.len() != features.n_channels() {
        return Err(EegError::Parameter(format!(
            "{} channel names for {} feature channels",
            channels.len(),
            features.n_channels()
        )));
    }
    let manifest = Manifest {
        channels: channels.to_vec(),
        label: features.label(),
        file: format!("{stem}.deft"),
    };
    write_pair(dir, stem, ".features.json", &encode_deft(features)?, manifest)
}

/// Features plus channel names from a `.features.json` manifest.
pub fn load_features(manifest_path: &Path) -> Result<(FeatureTensor, Vec<String>)> {
    let m = Manifest::read(manifest_path)?;
    let bytes = fs::read(m.data_path(manifest_path))?;
    let features = decode_deft(&bytes, m.label)?;
    if features.n_channels() != m.channels.len() {
        return Err(EegError::Format {
            format: "DEFT",
            msg: format!(
                "header has {} channels, manifest lists {}",
                features.n_channels(),
                m.channels.len()
            ),
        });
    }
    Ok((features, m.channels))
}
