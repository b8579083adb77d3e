//! Adapting a source-trained classifier to a target domain.

pub mod last_layer;
pub mod spottune;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use last_layer::{finetune_last_layer, last_layer_step};
pub use spottune::{
    policy_stats, sample_gumbel, spottune_step, spottune_train, spottune_trainable, PolicyNet, PolicyStats, Routing,
    SpotTuneNet, DEFAULT_TEMPERATURE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Apply the source model unchanged.
    TestOnly,
    /// Retrain the final fully-connected layer.
    LastLayer,
    /// Per-instance routing between frozen and fine-tuned blocks.
    Spottune,
}

impl FinetuneMode {
    pub const ALL: [FinetuneMode; 3] = [FinetuneMode::TestOnly, FinetuneMode::LastLayer, FinetuneMode::Spottune];

    pub fn as_str(self) -> &'static str {
        match self {
            FinetuneMode::TestOnly => "test_only",
            FinetuneMode::LastLayer => "last_layer",
            FinetuneMode::Spottune => "spottune",
        }
    }
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for FinetuneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FinetuneMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected test_only, last_layer or spottune)"))
    }
}
