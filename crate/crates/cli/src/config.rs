use std::path::Path;

use reco_core::dedup::DedupConfig;
use reco_core::probe::ProbeConfig;
use reco_core::synth::SynthSpec;
use reco_core::taxonomy::SimilarityConfig;
use reco_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every module's settings in one file. All keys are optional; unknown keys are rejected.
///
/// Randomness flows from the single top-level `seed`, which is copied into the synth and
/// train sections; likewise `[similarity]` is shared by the taxonomy export and training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub similarity: SimilarityConfig,
    pub curate: CurateConfig,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateConfig {
    pub min_images: u64,
    pub min_classes: usize,
    pub dedup: DedupConfig,
}

impl Default for CurateConfig {
    fn default() -> Self {
        Self {
            min_images: 200,
            min_classes: 20,
            dedup: DedupConfig::default(),
        }
    }
}

/// Keys that exist on the module types but are owned by a top-level key here.
const DERIVED_KEYS: [(&str, &str, &str); 3] = [
    ("synth", "seed", "seed"),
    ("train", "seed", "seed"),
    ("train", "similarity", "[similarity]"),
];

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let bad = |message: String| CliError::Config(format!("{}: {message}", origin.display()));
        let table: toml::Table = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        for (section, key, owner) in DERIVED_KEYS {
            if table.get(section).and_then(|s| s.get(key)).is_some() {
                return Err(bad(format!("`{section}.{key}` is not settable; use `{owner}`")));
            }
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.propagate();
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => {
                let mut cfg = RunConfig::default();
                cfg.propagate();
                Ok(cfg)
            }
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text, p)
            }
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.propagate();
        self
    }

    fn propagate(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.train.similarity = self.similarity;
    }

    /// The effective configuration as written into output directories. Keys owned by a
    /// top-level key are dropped so the echo parses back as a valid config file.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for (section, key, _) in DERIVED_KEYS {
            if let Some(toml::Value::Table(s)) = table.get_mut(section) {
                s.remove(key);
            }
        }
        toml::to_string(&table).expect("config serializes")
    }
}
