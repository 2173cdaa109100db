//! The end-to-end experiment: split, featurize, cluster, train, evaluate.

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_fit, Assignment, ClusterModel, KMeansParams};
use crate::domain::{filter_min_history, split_sites, Dataset, SplitSpec, WindowSpec};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::features::{
    block_canonical_features, featurize_history, fit_standardizer, FeatureVector, Standardizer, MIN_CANONICAL_DAYS,
};
use crate::forecaster::{build_windows, train, train_expert_set, ExpertSet, ForecastModel, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSettings {
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        let p = KMeansParams::default();
        Self {
            seed: 0,
            max_iters: p.max_iters,
            tol: p.tol,
        }
    }
}

impl ClusterSettings {
    pub fn params(&self) -> KMeansParams {
        KMeansParams {
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }

    /// k-means seed for a given cluster count.
    pub fn seed_for(&self, k: usize) -> u64 {
        derive_seed(self.seed, &[k as u64])
    }
}

/// Block length for training-site features: the context length, but never
/// shorter than canonical features allow.
pub fn feature_block_len(w: &WindowSpec) -> usize {
    w.context_len.max(MIN_CANONICAL_DAYS)
}

/// State shared by every k: the split, training features and the global model.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: Dataset,
    pub test: Dataset,
    pub window: WindowSpec,
    pub train_config: TrainConfig,
    pub cluster: ClusterSettings,
    pub standardizer: Standardizer,
    pub train_features: Vec<FeatureVector>,
    pub global: ForecastModel,
    /// Sites dropped for having fewer than `L + H` days.
    pub dropped_short: usize,
}

/// One cluster count's artifacts and evaluation.
#[derive(Debug, Clone)]
pub struct KRun {
    pub k: usize,
    pub kmeans_iterations: usize,
    pub assignment: Assignment,
    pub experts: ExpertSet,
    pub report: EvalReport,
}

impl Experiment {
    /// Filters short sites, splits by site, featurizes training sites on
    /// context-length blocks of their full history and trains the global model on all training windows.
    pub fn prepare(
        d: &Dataset,
        split: &SplitSpec,
        window: &WindowSpec,
        cfg: &TrainConfig,
        cluster: &ClusterSettings,
    ) -> Result<Self> {
        window.validate()?;
        cfg.validate()?;
        split.validate()?;
        let filtered = filter_min_history(d, window.total());
        let dropped_short = d.len() - filtered.len();
        if filtered.len() < 2 {
            return Err(Error::Split(format!(
                "need at least 2 sites with {} days of history, got {}",
                window.total(),
                filtered.len()
            )));
        }
        let (train_set, test_set) = split_sites(&filtered, split)?;

        let block_len = feature_block_len(window);
        let mut raw = Vec::new();
        for s in train_set.sites() {
            raw.extend(block_canonical_features(s, block_len)?);
        }
        let standardizer = fit_standardizer(&raw)?;
        let train_features = train_set
            .sites()
            .iter()
            .map(|s| featurize_history(s, block_len, &standardizer))
            .collect::<Result<Vec<_>>>()?;

        let windows = build_windows(&train_set, window, cfg.max_windows_per_site, cfg.seed);
        let global = train(&windows, window, cfg)?;

        Ok(Self {
            train: train_set,
            test: test_set,
            window: *window,
            train_config: cfg.clone(),
            cluster: *cluster,
            standardizer,
            train_features,
            global,
            dropped_short,
        })
    }

    pub fn feature_matrix(&self) -> Vec<&[f64]> {
        self.train_features.iter().map(|f| f.combined.as_slice()).collect()
    }

    /// Clusters the training sites into `k` groups, trains the experts and
    /// evaluates both model kinds on the test sites.
    pub fn run_k(&self, k: usize) -> Result<KRun> {
        let points = self.feature_matrix();
        let fit = kmeans_fit(&points, k, self.cluster.seed_for(k), self.cluster.params())?;
        let cm = ClusterModel::from_fit(&fit, self.standardizer.clone());
        let ids: Vec<&str> = self.train_features.iter().map(|f| f.site_id.as_str()).collect();
        let assignment = Assignment::from_labels(&ids, &fit.labels);
        let experts = train_expert_set(
            &self.train,
            &cm,
            &assignment,
            &self.window,
            &self.train_config,
            &self.global,
        )?;
        let mut report = evaluate(&self.test, &experts, &self.global, &self.window)?;
        for c in &experts.fallback_clusters {
            report
                .notes
                .push(format!("cluster {c} had no training windows; using the global model"));
        }
        Ok(KRun {
            k,
            kmeans_iterations: fit.iterations,
            assignment,
            experts,
            report,
        })
    }
}
