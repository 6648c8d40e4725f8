//! Loading layouts, schemes and feature directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eegsig::FeatureTensor;
use mvgt::train::Dataset;
use spatial::{ElectrodeLayout, RegionScheme, SchemeKind};

use crate::Usage;

/// A bundled scheme by name, or a JSON scheme file.
pub fn scheme(spec: &str) -> Result<RegionScheme> {
    let kind: SchemeKind = spec.parse().expect("infallible");
    if !matches!(kind, SchemeKind::Custom(_)) {
        return Ok(RegionScheme::builtin(kind)?);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(Usage(format!(
            "scheme {spec:?} is neither lobe, general, frontal, hemisphere nor a readable file"
        ))
        .into());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading scheme {}", path.display()))?;
    RegionScheme::from_json(&text).with_context(|| format!("scheme file {}", path.display()))
}

/// The standard montage, or a JSON layout file.
pub fn layout(file: Option<&Path>) -> Result<ElectrodeLayout> {
    match file {
        None => Ok(ElectrodeLayout::standard_62()),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading layout {}", path.display()))?;
            Ok(ElectrodeLayout::from_json(&text).with_context(|| format!("layout file {}", path.display()))?)
        }
    }
}

/// Files in `dir` whose names end with `suffix`, sorted by name.
pub fn files_with_suffix(dir: &Path, suffix: &str, exclude: Option<&str>) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(suffix) && !exclude.is_some_and(|e| name.ends_with(e)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem<'a>(path: &'a Path, suffix: &str) -> &'a str {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.strip_suffix(suffix).unwrap_or(name)
}

pub struct FeatureSet {
    pub channels: Vec<String>,
    pub trials: Vec<(String, FeatureTensor)>,
}

/// Every `*.features.json` manifest in `dir`, in file-name order. All must
/// share one channel list.
pub fn features(dir: &Path) -> Result<FeatureSet> {
    let manifests = files_with_suffix(dir, ".features.json", None)?;
    if manifests.is_empty() {
        return Err(mvgt::MvgtError::Data(format!("no .features.json manifests in {}", dir.display())).into());
    }
    let mut channels: Option<Vec<String>> = None;
    let mut trials = Vec::with_capacity(manifests.len());
    for m in &manifests {
        let (f, names) = eegsig::io::load_features(m).with_context(|| format!("loading {}", m.display()))?;
        match &channels {
            None => channels = Some(names),
            Some(c) if *c != names => {
                return Err(mvgt::MvgtError::Data(format!(
                    "{} lists different channels from the first manifest",
                    m.display()
                ))
                .into())
            }
            Some(_) => {}
        }
        trials.push((stem(m, ".features.json").to_string(), f));
    }
    Ok(FeatureSet {
        channels: channels.expect("at least one manifest"),
        trials,
    })
}

impl FeatureSet {
    pub fn dataset(&self, t: usize, stride: usize, n_classes: Option<usize>) -> Result<Dataset> {
        Ok(Dataset::from_trials(&self.trials, &self.channels, t, stride, n_classes)?)
    }
}

/// Layout restricted to the feature channels, in feature order.
pub fn montage(file: Option<&Path>, channels: &[String]) -> Result<ElectrodeLayout> {
    Ok(layout(file)?.subset(channels)?)
}
