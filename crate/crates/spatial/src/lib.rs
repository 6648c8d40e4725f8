//! Spatial side of the EEG graph: where electrodes sit, which brain region
//! each belongs to, and the learnable encodings derived from both.

mod encoding;
mod error;
mod layout;
mod scheme;

pub use encoding::{
    bias_projection, centrality_encoding, gaussian_basis, region_encoding, GaussianBasisBank,
    ProjectionParams, SpatialParams, SpatialVars, SIGMA_MIN,
};
pub use error::{Result, SpatialError};
pub use layout::{pairwise_distances, ElectrodeLayout};
pub use scheme::{RegionScheme, SchemeKind};
