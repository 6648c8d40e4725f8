use serde::{Deserialize, Serialize};

use crate::error::{MvgtError, Result};

/// How raw segment features are normalised before tokenisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphNormMode {
    /// `γ·(x − α·mean)/std + β` per feature over the nodes of one segment.
    Standard,
    /// `γ·(x − min)/(max − min) + β` per feature, squashing into `[0, 1]`.
    MinMax,
}

/// Which encodings and embedding style a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub use_centrality: bool,
    pub use_bre: bool,
    pub use_gse: bool,
    pub use_inverted: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        use_centrality: true,
        use_bre: true,
        use_gse: true,
        use_inverted: true,
    };

    /// The nine component combinations of the ablation study, from the bare
    /// point-wise transformer up to the full model.
    pub const ROWS: [Ablation; 9] = [
        Ablation::flags(false, false, false, false),
        Ablation::flags(false, false, false, true),
        Ablation::flags(false, true, false, true),
        Ablation::flags(true, false, false, true),
        Ablation::flags(true, true, false, true),
        Ablation::flags(false, false, true, true),
        Ablation::flags(false, true, true, true),
        Ablation::flags(true, false, true, true),
        Ablation::flags(true, true, true, true),
    ];

    pub const fn flags(centrality: bool, bre: bool, gse: bool, inverted: bool) -> Self {
        Ablation {
            use_centrality: centrality,
            use_bre: bre,
            use_gse: gse,
            use_inverted: inverted,
        }
    }

    pub fn any_spatial(&self) -> bool {
        self.use_centrality || self.use_bre || self.use_gse
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width.
    pub d: usize,
    /// Gaussian basis functions.
    pub k: usize,
    /// Transformer blocks per pass.
    pub layers: usize,
    pub heads: usize,
    /// Passes through the block stack.
    pub recycles: usize,
    pub ffn_multiplier: usize,
    pub dropout: f64,
    pub n_classes: usize,
    /// Feature windows per segment.
    pub t: usize,
    /// Frequency bands per window.
    pub f: usize,
    pub ablation: Ablation,
    pub graph_norm: GraphNormMode,
    /// Cut gradients between recycling passes.
    pub detach_recycles: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            k: 32,
            layers: 4,
            heads: 2,
            recycles: 3,
            ffn_multiplier: 4,
            dropout: 0.1,
            n_classes: 3,
            t: 5,
            f: 5,
            ablation: Ablation::FULL,
            graph_norm: GraphNormMode::Standard,
            detach_recycles: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MvgtError::Config(msg));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return fail(format!("hidden width {} is not divisible by {} heads", self.d, self.heads));
        }
        if self.recycles == 0 || self.layers == 0 {
            return fail(format!("{} recycles × {} layers; both must be ≥ 1", self.recycles, self.layers));
        }
        if self.k == 0 || self.ffn_multiplier == 0 || self.t == 0 || self.f == 0 {
            return fail("k, ffn_multiplier, t and f must all be positive".into());
        }
        if self.n_classes < 2 {
            return fail(format!("{} classes; need at least 2", self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.ablation.use_inverted && self.ablation.any_spatial() {
            return fail(
                "spatial encodings need channel tokens; they cannot be combined with the point-wise embedding"
                    .into(),
            );
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Token count and token width for a montage of `n_channels`.
    pub fn token_shape(&self, n_channels: usize) -> (usize, usize) {
        if self.ablation.use_inverted {
            (n_channels, self.t * self.f)
        } else {
            (self.t, n_channels * self.f)
        }
    }
}
