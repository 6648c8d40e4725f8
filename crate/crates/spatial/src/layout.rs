use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpatialError};

const STANDARD_62: &str = include_str!("../data/standard_62.json");

/// Electrode names with their positions on a unit-sphere head model.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeLayout {
    names: Vec<String>,
    coords: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    channels: Vec<ChannelEntry>,
}

#[derive(Serialize, Deserialize)]
struct ChannelEntry {
    name: String,
    xyz: [f64; 3],
}

impl ElectrodeLayout {
    pub fn new(names: Vec<String>, coords: Vec<[f64; 3]>) -> Result<Self> {
        if names.len() != coords.len() {
            return Err(SpatialError::Layout(format!(
                "{} names but {} coordinate rows",
                names.len(),
                coords.len()
            )));
        }
        if names.is_empty() {
            return Err(SpatialError::Layout("no channels".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(SpatialError::Layout(format!("duplicate channel name {n:?}")));
            }
        }
        if let Some(i) = coords.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(SpatialError::Layout(format!(
                "non-finite coordinate for channel {:?}",
                names[i]
            )));
        }
        Ok(ElectrodeLayout { names, coords })
    }

    /// The bundled 62-channel 10-10 montage.
    pub fn standard_62() -> Self {
        Self::from_json(STANDARD_62).expect("bundled layout is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LayoutFile = serde_json::from_str(text)?;
        let (names, coords) = file.channels.into_iter().map(|c| (c.name, c.xyz)).unzip();
        Self::new(names, coords)
    }

    pub fn to_json(&self) -> String {
        let file = LayoutFile {
            channels: self
                .names
                .iter()
                .zip(&self.coords)
                .map(|(name, xyz)| ChannelEntry {
                    name: name.clone(),
                    xyz: *xyz,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("layout serialises")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Restricts the layout to `names`, in the given order.
    pub fn subset(&self, names: &[String]) -> Result<Self> {
        let coords = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .map(|i| self.coords[i])
                    .ok_or_else(|| SpatialError::Layout(format!("unknown channel {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(names.to_vec(), coords)
    }
}

/// Euclidean distance matrix `φ(i, j)`, row-major `[n × n]`.
pub fn pairwise_distances(layout: &ElectrodeLayout) -> Vec<f64> {
    let c = layout.coords();
    let n = c.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = c[i]
                .iter()
                .zip(&c[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}
