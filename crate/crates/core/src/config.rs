use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::{QuantileThresholds, DEFAULT_SAMPLES};
use crate::error::{Error, Result};
use crate::eval::Criterion;

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "SELQA_CONFIG";

pub const DEFAULT_BINS: usize = 10;

/// Pipeline settings, loadable from TOML:
///
/// ```toml
/// global_seed = 7
/// n_samples = 30
/// bins = 10
/// length_normalize = true
/// criterion = "ensemble"
///
/// [quantiles]
/// t1 = 0.3
/// t2 = 0.6
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub global_seed: u64,
    pub n_samples: usize,
    pub bins: usize,
    pub length_normalize: bool,
    pub criterion: Criterion,
    pub quantiles: QuantileSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            global_seed: 0,
            n_samples: DEFAULT_SAMPLES,
            bins: DEFAULT_BINS,
            length_normalize: true,
            criterion: Criterion::Ensemble,
            quantiles: QuantileSource::default(),
        }
    }
}

/// Where consistency-bucket thresholds come from. With neither field set,
/// thresholds are fit on the records being labeled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantileSource {
    /// Record file whose consistency labels the thresholds are fit on.
    pub fit_from: Option<PathBuf>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
}

impl QuantileSource {
    pub fn explicit(&self) -> Result<Option<QuantileThresholds>> {
        match (self.t1, self.t2, &self.fit_from) {
            (Some(_), Some(_), Some(_)) => Err(Error::invalid(
                "quantiles: give either fit_from or explicit t1/t2, not both",
            )),
            (Some(t1), Some(t2), None) => QuantileThresholds::new(t1, t2).map(Some),
            (None, None, _) => Ok(None),
            _ => Err(Error::invalid("quantiles: t1 and t2 must be given together")),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        if self.bins == 0 {
            return Err(Error::invalid("bins must be positive"));
        }
        self.quantiles.explicit()?;
        Ok(())
    }
}
