//! The four pipeline commands. Each returns what it wrote so callers and tests
//! can inspect results without re-reading files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use archetype_core::domain::format_day;
use archetype_core::evaluation::SweepResult;
use archetype_core::features::{write_features_csv, FeatureSidecar};
use archetype_core::forecaster::{load_model_dir, save_model_dir};
use archetype_core::synthgen::SynthSpec;
use archetype_core::{
    day_of_week, featurize, generate_dataset, kmeans_predict, load_csv, predict, sweep_k, Dataset, Error, EvalReport,
    Experiment, KRun, SweepCurve,
};
use serde_json::json;

use crate::artifacts::{ArtifactSet, DataSummary, Manifest};
use crate::config::{LoadedConfig, SourceKind};
use crate::error::{CliError, StageExt};

pub const DATASET_CSV: &str = "dataset.csv";
pub const GROUND_TRUTH_CSV: &str = "ground_truth.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const MODELS_DIR: &str = "models";

#[derive(Debug)]
pub struct SynthOutput {
    pub out_dir: PathBuf,
    pub dataset: Dataset,
    pub ground_truth: BTreeMap<String, String>,
    pub manifest: Manifest,
}

#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub experiment: Experiment,
    pub run: KRun,
    pub manifest: Manifest,
}

impl RunOutput {
    pub fn report(&self) -> &EvalReport {
        &self.run.report
    }
}

#[derive(Debug)]
pub struct SweepOutput {
    pub out_dir: PathBuf,
    pub result: SweepResult,
    pub manifest: Manifest,
}

impl SweepOutput {
    pub fn curve(&self) -> &SweepCurve {
        &self.result.curve
    }
}

fn config_echo(cfg: &LoadedConfig) -> serde_json::Value {
    serde_json::to_value(&cfg.config).expect("config serializes")
}

fn read_synth_spec(path: &Path) -> Result<SynthSpec, CliError> {
    SynthSpec::from_json_file(path).stage("synth spec")
}

/// Loads the configured data source and describes it for the manifest.
fn load_data(cfg: &LoadedConfig) -> Result<(Dataset, String), CliError> {
    let src = cfg.source()?;
    match src.kind {
        SourceKind::Csv => {
            let d = load_csv(&src.path).stage("load")?;
            let shown = cfg.config.input_csv.as_ref().expect("csv source").display();
            Ok((d, format!("csv:{shown}")))
        }
        SourceKind::Synth => {
            let spec = read_synth_spec(&src.path)?;
            let (d, _) = generate_dataset(&spec).stage("synth")?;
            let shown = cfg.config.synth_spec.as_ref().expect("synth source").display();
            Ok((d, format!("synth:{shown} seed={}", spec.seed)))
        }
    }
}

fn seeds(cfg: &LoadedConfig) -> BTreeMap<String, u64> {
    let c = &cfg.config;
    BTreeMap::from([
        ("split".to_string(), c.split.seed),
        ("train".to_string(), c.train.seed),
        ("clustering".to_string(), c.clustering.seed),
    ])
}

/// Generates the configured synthetic dataset into `out_dir`.
///
/// `seed` replaces the seed in the synth spec file.
pub fn cmd_synth(cfg: &LoadedConfig, seed: Option<u64>) -> Result<SynthOutput, CliError> {
    let path = match &cfg.config.synth_spec {
        Some(p) => cfg.resolve(p),
        None => return Err(CliError::Usage("synth needs synth_spec in the config".into())),
    };
    if !path.is_file() {
        return Err(CliError::Usage(format!("input file not found: {}", path.display())));
    }
    let mut spec = read_synth_spec(&path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (dataset, ground_truth) = generate_dataset(&spec).stage("synth")?;

    let out_dir = cfg.out_dir();
    let mut art = ArtifactSet::new(&out_dir);
    art.write_csv(DATASET_CSV, |buf| dataset.write_csv(buf))
        .stage("write")?;
    art.write_csv(GROUND_TRUTH_CSV, |buf| write_ground_truth(&ground_truth, buf))
        .stage("write")?;

    let data = DataSummary {
        source: format!("synth:{}", cfg.config.synth_spec.as_ref().expect("checked").display()),
        sites: dataset.len(),
        ..DataSummary::default()
    };
    let mut manifest = Manifest::new("synth", serde_json::to_value(&spec).expect("spec serializes"), data);
    manifest.seeds.insert("synth".into(), spec.seed);
    manifest.results.insert("rows".into(), json!(dataset.total_days()));
    let manifest = art.finish(manifest).stage("write")?;
    Ok(SynthOutput {
        out_dir,
        dataset,
        ground_truth,
        manifest,
    })
}

fn write_ground_truth(truth: &BTreeMap<String, String>, buf: &mut Vec<u8>) -> archetype_core::Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["site_id", "template"])?;
    for (site, template) in truth {
        w.write_record([site, template])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })?;
    Ok(())
}

fn summary(exp: &Experiment, source: String) -> DataSummary {
    DataSummary {
        source,
        sites: exp.train.len() + exp.test.len() + exp.dropped_short,
        dropped_short: Some(exp.dropped_short),
        train_sites: Some(exp.train.len()),
        test_sites: Some(exp.test.len()),
    }
}

fn overall_json(r: &EvalReport) -> serde_json::Value {
    serde_json::to_value(&r.overall).expect("summary serializes")
}

/// Runs the full pipeline at the configured `k` and writes every artifact.
pub fn cmd_run(cfg: &LoadedConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let (data, source) = load_data(cfg)?;
    let c = &cfg.config;
    let settings = c.clustering.settings();
    let experiment = Experiment::prepare(&data, &c.split, &c.window, &c.train, &settings).stage("prepare")?;
    let mut run = experiment.run_k(c.clustering.k).stage("fit")?;
    let echo = config_echo(cfg);
    run.report.config = echo.clone();

    let out_dir = cfg.out_dir();
    let mut art = ArtifactSet::new(&out_dir);
    art.write_csv("features.csv", |buf| {
        write_features_csv(&experiment.train_features, buf)
    })
    .stage("write")?;
    art.write_json("features.json", &FeatureSidecar::new(experiment.standardizer.clone()))
        .stage("write")?;
    art.write_csv("assignment.csv", |buf| run.assignment.write_csv(buf))
        .stage("write")?;
    save_model_dir(&art.path(MODELS_DIR), &run.experts, &experiment.global).stage("write")?;
    for rel in model_files(run.experts.k()) {
        art.record(&rel).stage("write")?;
    }
    art.write_json("report.json", &run.report).stage("write")?;
    art.write_csv("report.csv", |buf| run.report.write_csv(buf))
        .stage("write")?;

    let mut manifest = Manifest::new("run", echo, summary(&experiment, source));
    manifest.seeds = seeds(cfg);
    manifest.seeds.insert("kmeans".into(), settings.seed_for(run.k));
    manifest.results.insert("k".into(), json!(run.k));
    manifest
        .results
        .insert("kmeans_iterations".into(), json!(run.kmeans_iterations));
    manifest
        .results
        .insert("fallback_clusters".into(), json!(run.experts.fallback_clusters));
    manifest.results.insert("overall".into(), overall_json(&run.report));
    let manifest = art.finish(manifest).stage("write")?;
    Ok(RunOutput {
        out_dir,
        experiment,
        run,
        manifest,
    })
}

fn model_files(k: usize) -> Vec<String> {
    let mut files = vec![
        format!("{MODELS_DIR}/cluster_model.json"),
        format!("{MODELS_DIR}/global.json"),
    ];
    files.extend((0..k).map(|c| format!("{MODELS_DIR}/expert_{c}.json")));
    files
}

/// Runs the pipeline for every configured k and writes the curve plus one
/// report per k.
pub fn cmd_sweep(cfg: &LoadedConfig) -> Result<SweepOutput, CliError> {
    cfg.validate()?;
    let (data, source) = load_data(cfg)?;
    let c = &cfg.config;
    let settings = c.clustering.settings();
    let mut result = sweep_k(&data, &c.clustering.ks, &c.train, &c.split, &c.window, &settings).stage("sweep")?;
    let echo = config_echo(cfg);

    let out_dir = cfg.out_dir();
    let mut art = ArtifactSet::new(&out_dir);
    art.write_csv(SWEEP_CSV, |buf| result.curve.write_csv(buf))
        .stage("write")?;
    for run in &mut result.runs {
        run.report.config = echo.clone();
        let stem = format!("reports/k{:02}", run.k);
        art.write_json(&format!("{stem}.json"), &run.report).stage("write")?;
        art.write_csv(&format!("{stem}.csv"), |buf| run.report.write_csv(buf))
            .stage("write")?;
    }

    let mut manifest = Manifest::new("sweep", echo, summary(&result.experiment, source));
    manifest.seeds = seeds(cfg);
    for run in &result.runs {
        manifest
            .seeds
            .insert(format!("kmeans_k{}", run.k), settings.seed_for(run.k));
    }
    let curve = &result.curve;
    manifest
        .results
        .insert("argmin_smape".into(), json!(curve.argmin_smape));
    manifest.results.insert("argmin_rmse".into(), json!(curve.argmin_rmse));
    manifest.results.insert("curve".into(), json!(curve.points));
    if !curve.notes.is_empty() {
        manifest.results.insert("notes".into(), json!(curve.notes));
    }
    let manifest = art.finish(manifest).stage("write")?;
    Ok(SweepOutput {
        out_dir,
        result,
        manifest,
    })
}

/// One forecast row.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub date: String,
    pub kwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub site_id: String,
    pub cluster: usize,
    pub rows: Vec<ForecastRow>,
}

impl Prediction {
    pub fn to_csv(&self) -> archetype_core::Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["date", "kwh_forecast"])?;
            for r in &self.rows {
                w.write_record([r.date.clone(), r.kwh.to_string()])?;
            }
            w.flush().map_err(|e| Error::Io {
                path: "<csv>".into(),
                source: e,
            })?;
        }
        Ok(buf)
    }
}

/// Forecasts the 7 days after the end of a single-site CSV with the expert
/// of the cluster its trailing context falls into.
pub fn cmd_predict(models_dir: &Path, input: &Path, output: Option<&Path>) -> Result<Prediction, CliError> {
    if !models_dir.is_dir() {
        return Err(CliError::Usage(format!(
            "model directory not found: {}",
            models_dir.display()
        )));
    }
    if !input.is_file() {
        return Err(CliError::Usage(format!("input file not found: {}", input.display())));
    }
    let (experts, _global) = load_model_dir(models_dir).stage("load models")?;
    let cm = &experts.cluster_model;
    cm.check_layout().stage("load models")?;

    let data = load_csv(input).stage("load")?;
    if data.len() != 1 {
        return Err(CliError::Usage(format!(
            "predict needs exactly one contiguous site series, found {}",
            data.len()
        )));
    }
    let series = &data.sites()[0];
    let model0 = experts.model(0).stage("load models")?;
    let w = model0.window_spec();
    if series.len() < w.context_len {
        return Err(CliError::Stage {
            stage: "load",
            source: Error::InsufficientData {
                needed: w.context_len,
                got: series.len(),
            },
        });
    }
    let context = series.tail(w.context_len);
    let features = featurize(&context, &cm.standardizer).stage("featurize")?;
    let cluster = kmeans_predict(cm, &features.combined).stage("featurize")?;
    let model = experts.model(cluster).stage("load models")?;
    let end = series.end_day();
    let forecast = predict(model, &context.values, day_of_week(end + 1)).stage("predict")?;
    let rows = forecast
        .iter()
        .enumerate()
        .map(|(i, &kwh)| ForecastRow {
            date: format_day(end + 1 + i as i64),
            kwh,
        })
        .collect();
    let prediction = Prediction {
        site_id: series.site_id.clone(),
        cluster,
        rows,
    };
    if let Some(out) = output {
        let bytes = prediction.to_csv().stage("write")?;
        archetype_core::io::write_atomic(out, &bytes).stage("write")?;
    }
    Ok(prediction)
}
