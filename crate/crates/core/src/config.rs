//! The run configuration file: one TOML document with sections mirroring
//! the library's types. Unknown keys are rejected everywhere so a typo
//! cannot silently fall back to a default.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_dataset, load_manifest, Dataset, StreamManifest, SynthConfig};
use crate::error::{Error, Result};
use crate::simulate::SimConfig;
use crate::util::mix_seed;

/// Paths to a pre-generated dataset and its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub data: PathBuf,
    pub manifest: PathBuf,
}

/// Top-level run configuration: a data source (inline synthetic generator
/// or files on disk) plus the simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub dataset: Option<DatasetPaths>,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synth, &self.dataset) {
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "config needs a [synth] or a [dataset] section".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "config has both [synth] and [dataset]; pick one".into(),
                ))
            }
            _ => {}
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        self.sim.validate()
    }

    /// Build the data for one run seed. Inline synthetic data is
    /// re-generated per seed (the generator seed is folded with the run
    /// seed, so different run seeds see independent draws of the same
    /// scenario, and identical run seeds see identical data). File-backed
    /// data is loaded as-is, independent of the run seed.
    pub fn materialize(&self, run_seed: u64) -> Result<(Arc<Dataset>, Arc<StreamManifest>)> {
        if let Some(synth) = &self.synth {
            let mut cfg = synth.clone();
            cfg.seed = synth.seed ^ mix_seed(run_seed, "data");
            let (dataset, manifest) = gen_synthetic(&cfg)?;
            return Ok((Arc::new(dataset), Arc::new(manifest)));
        }
        let paths = self.dataset.as_ref().expect("validated");
        let dataset = load_dataset(&paths.data)?;
        let manifest = load_manifest(&paths.manifest)?;
        manifest.validate(&dataset)?;
        Ok((Arc::new(dataset), Arc::new(manifest)))
    }
}
