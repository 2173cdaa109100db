//! Behavioral archetypes of daily demand series.
//!
//! Sites are represented by a weekly utilization profile plus canonical
//! statistics, grouped with k-means, and served by one feed-forward
//! forecaster per group. The cluster count is chosen by how well those
//! per-group experts forecast sites that were held out entirely.

pub mod clustering;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod forecaster;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod synthgen;

pub use clustering::{
    cluster_barycenter, kmeans_fit, kmeans_predict, Assignment, ClusterModel, KMeansFit, KMeansParams,
};
pub use domain::{
    day_of_week, filter_min_history, load_csv, read_csv, split_sites, Dataset, SiteSeries, SplitSpec, WindowSpec,
};
pub use error::{Error, Result};
pub use evaluation::{evaluate, rmse, smape, sweep_k, EvalReport, SiteResult, SweepCurve, SweepPoint};
pub use features::{
    canonical_features, featurize, fit_standardizer, weekly_profile, FeatureVector, Standardizer, LAYOUT_VERSION,
};
pub use forecaster::{
    build_windows, forward, gradient_check, predict, train, train_expert_set, ExpertSet, ForecastModel, TrainConfig,
    WindowSample,
};
pub use pipeline::{ClusterSettings, Experiment, KRun};
pub use synthgen::{generate_dataset, generate_site, ArchetypeTemplate, SynthSpec};
