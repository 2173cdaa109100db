//! The JSON document that fully determines a pipeline run.

use std::fs;
use std::path::{Path, PathBuf};

use archetype_core::{ClusterSettings, SplitSpec, TrainConfig, WindowSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Long-format `site_id,date,kwh` input. Exclusive with `synth_spec`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_csv: Option<PathBuf>,
    /// Synthetic dataset spec. Exclusive with `input_csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_spec: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Cluster count for `run`.
    pub k: usize,
    /// Cluster counts for `sweep`.
    pub ks: Vec<usize>,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let s = ClusterSettings::default();
        Self {
            k: 6,
            ks: (1..=10).collect(),
            seed: s.seed,
            max_iters: s.max_iters,
            tol: s.tol,
        }
    }
}

impl ClusteringConfig {
    pub fn settings(&self) -> ClusterSettings {
        ClusterSettings {
            seed: self.seed,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

/// Scalar fields that may be overridden from the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<usize>,
    pub ks: Option<Vec<usize>>,
    /// Replaces the split, training and clustering seeds.
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

/// A parsed config together with the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    /// Relative paths are taken relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out_dir)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let c = &mut self.config;
        if let Some(k) = o.k {
            c.clustering.k = k;
            c.clustering.ks = vec![k];
        }
        if let Some(ks) = &o.ks {
            c.clustering.ks = ks.clone();
        }
        if let Some(seed) = o.seed {
            c.split.seed = seed;
            c.train.seed = seed;
            c.clustering.seed = seed;
        }
        if let Some(epochs) = o.epochs {
            c.train.epochs = epochs;
        }
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        match (&c.input_csv, &c.synth_spec) {
            (Some(_), None) | (None, Some(_)) => {}
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "config sets both input_csv and synth_spec; choose one".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "config needs a data source: input_csv or synth_spec".into(),
                ))
            }
        }
        let usage = |e: archetype_core::Error| CliError::Usage(format!("config: {e}"));
        c.split.validate().map_err(usage)?;
        c.window.validate().map_err(usage)?;
        c.train.validate().map_err(usage)?;
        c.clustering.settings().params().validate().map_err(usage)?;
        if c.clustering.k == 0 {
            return Err(CliError::Usage("clustering.k must be at least 1".into()));
        }
        if c.clustering.ks.is_empty() || c.clustering.ks.contains(&0) {
            return Err(CliError::Usage(
                "clustering.ks must be nonempty and every k at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Data source path, resolved and checked for existence.
    pub fn source(&self) -> Result<DataSource, CliError> {
        let c = &self.config;
        let (path, kind) = match (&c.input_csv, &c.synth_spec) {
            (Some(p), _) => (self.resolve(p), SourceKind::Csv),
            (None, Some(p)) => (self.resolve(p), SourceKind::Synth),
            (None, None) => return Err(CliError::Usage("no data source configured".into())),
        };
        if !path.is_file() {
            return Err(CliError::Usage(format!("input file not found: {}", path.display())));
        }
        Ok(DataSource { kind, path })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Csv,
    Synth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub kind: SourceKind,
    pub path: PathBuf,
}
