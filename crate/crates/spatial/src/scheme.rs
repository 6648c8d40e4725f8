use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpatialError};
use crate::layout::ElectrodeLayout;

/// Which partition of the scalp a [`RegionScheme`] implements.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// Five lobes.
    Lobe,
    /// Ten sub-lobe regions.
    General,
    /// `General` with the frontal row split into left and right.
    Frontal,
    /// Every lateral region split by hemisphere plus a midline region.
    Hemisphere,
    Custom(String),
}

impl SchemeKind {
    pub const BUILTIN: [SchemeKind; 4] = [
        SchemeKind::Lobe,
        SchemeKind::General,
        SchemeKind::Frontal,
        SchemeKind::Hemisphere,
    ];

    fn bundled(&self) -> Option<&'static str> {
        match self {
            SchemeKind::Lobe => Some(include_str!("../data/scheme_lobe.json")),
            SchemeKind::General => Some(include_str!("../data/scheme_general.json")),
            SchemeKind::Frontal => Some(include_str!("../data/scheme_frontal.json")),
            SchemeKind::Hemisphere => Some(include_str!("../data/scheme_hemisphere.json")),
            SchemeKind::Custom(_) => None,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Lobe => f.write_str("LOBE"),
            SchemeKind::General => f.write_str("GENERAL"),
            SchemeKind::Frontal => f.write_str("FRONTAL"),
            SchemeKind::Hemisphere => f.write_str("HEMISPHERE"),
            SchemeKind::Custom(name) => f.write_str(name),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "LOBE" => SchemeKind::Lobe,
            "GENERAL" => SchemeKind::General,
            "FRONTAL" => SchemeKind::Frontal,
            "HEMISPHERE" => SchemeKind::Hemisphere,
            _ => SchemeKind::Custom(s.to_string()),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SchemeFile {
    name: String,
    tags: BTreeMap<String, String>,
}

/// Assignment of every channel to a brain-region tag.
///
/// Region indices follow the lexicographic order of the distinct tags, so a
/// scheme always maps to the same embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionScheme {
    kind: SchemeKind,
    tags: BTreeMap<String, String>,
    regions: Vec<String>,
}

impl RegionScheme {
    pub fn new(kind: SchemeKind, tags: BTreeMap<String, String>) -> Result<Self> {
        let regions: Vec<String> = tags
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if regions.len() < 2 {
            return Err(SpatialError::Scheme {
                scheme: kind.to_string(),
                msg: format!("needs at least two regions, found {}", regions.len()),
            });
        }
        Ok(RegionScheme {
            kind,
            tags,
            regions,
        })
    }

    /// One of the four bundled schemes for the standard 62-channel montage.
    pub fn builtin(kind: SchemeKind) -> Result<Self> {
        let text = kind.bundled().ok_or_else(|| SpatialError::Scheme {
            scheme: kind.to_string(),
            msg: "not a bundled scheme".into(),
        })?;
        Self::from_json(text)
    }

    /// All four bundled schemes, validated against `layout`.
    pub fn builtin_schemes(layout: &ElectrodeLayout) -> Result<[RegionScheme; 4]> {
        let load = |k: SchemeKind| -> Result<RegionScheme> {
            let s = Self::builtin(k)?;
            s.validate(layout)?;
            Ok(s)
        };
        Ok([
            load(SchemeKind::Lobe)?,
            load(SchemeKind::General)?,
            load(SchemeKind::Frontal)?,
            load(SchemeKind::Hemisphere)?,
        ])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)?;
        let kind = file.name.parse().expect("infallible");
        Self::new(kind, file.tags)
    }

    pub fn to_json(&self) -> String {
        let file = SchemeFile {
            name: self.kind.to_string(),
            tags: self.tags.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scheme serialises")
    }

    pub fn kind(&self) -> &SchemeKind {
        &self.kind
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// Distinct tags in index order.
    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn tag(&self, channel: &str) -> Option<&str> {
        self.tags.get(channel).map(String::as_str)
    }

    pub fn region_index(&self, tag: &str) -> Option<usize> {
        self.regions.binary_search_by(|r| r.as_str().cmp(tag)).ok()
    }

    /// Checks that every layout channel is tagged and that the scheme names
    /// no channel the layout lacks.
    pub fn validate(&self, layout: &ElectrodeLayout) -> Result<()> {
        self.tag_indices(layout)?;
        if let Some(extra) = self.tags.keys().find(|c| layout.index_of(c).is_none()) {
            return Err(SpatialError::Scheme {
                scheme: self.kind.to_string(),
                msg: format!("tags unknown channel {extra:?}"),
            });
        }
        Ok(())
    }

    /// The scheme cut down to the channels of `layout`, which must all be
    /// tagged. Regions left without channels are dropped, so indices can
    /// shift.
    pub fn restrict(&self, layout: &ElectrodeLayout) -> Result<Self> {
        self.tag_indices(layout)?;
        let tags = layout
            .names()
            .iter()
            .map(|n| (n.clone(), self.tags[n].clone()))
            .collect();
        Self::new(self.kind.clone(), tags)
    }

    /// Region index of every layout channel, in layout order.
    pub fn tag_indices(&self, layout: &ElectrodeLayout) -> Result<Vec<usize>> {
        layout
            .names()
            .iter()
            .map(|name| {
                let tag = self.tag(name).ok_or_else(|| SpatialError::UntaggedChannel {
                    channel: name.clone(),
                    scheme: self.kind.to_string(),
                })?;
                Ok(self.region_index(tag).expect("tag comes from this scheme"))
            })
            .collect()
    }
}
