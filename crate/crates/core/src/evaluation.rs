//! Forecast accuracy metrics, unseen-site evaluation and the k sweep.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::kmeans_predict;
use crate::domain::{day_of_week, Dataset, SiteSeries, SplitSpec, WindowSpec};
use crate::error::{Error, Result};
use crate::features::featurize;
use crate::forecaster::{predict, ExpertSet, ForecastModel, TrainConfig};
use crate::pipeline::{ClusterSettings, Experiment, KRun};

const EPS: f64 = 1e-9;

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Parameter("metrics need at least one value".into()));
    }
    Ok(())
}

/// Symmetric MAPE in percent, in `[0, 200]`. Terms where both values are
/// (near) zero count as 0.
pub fn smape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, f)| {
            let denom = a.abs() + f.abs();
            if denom < EPS {
                0.0
            } else {
                2.0 * (f - a).abs() / denom
            }
        })
        .sum();
    Ok(100.0 * total / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, f)| (f - a) * (f - a)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteResult {
    pub site_id: String,
    pub assigned_cluster: usize,
    pub smape_global: f64,
    pub smape_expert: f64,
    pub rmse_global: f64,
    pub rmse_expert: f64,
}

/// Unweighted means over a group of sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n_sites: usize,
    pub smape_global: f64,
    pub smape_expert: f64,
    pub rmse_global: f64,
    pub rmse_expert: f64,
}

impl MetricSummary {
    fn of<'a>(rows: impl IntoIterator<Item = &'a SiteResult>) -> Self {
        let mut s = MetricSummary {
            n_sites: 0,
            smape_global: 0.0,
            smape_expert: 0.0,
            rmse_global: 0.0,
            rmse_expert: 0.0,
        };
        for r in rows {
            s.n_sites += 1;
            s.smape_global += r.smape_global;
            s.smape_expert += r.smape_expert;
            s.rmse_global += r.rmse_global;
            s.rmse_expert += r.rmse_expert;
        }
        if s.n_sites > 0 {
            let n = s.n_sites as f64;
            s.smape_global /= n;
            s.smape_expert /= n;
            s.rmse_global /= n;
            s.rmse_expert /= n;
        }
        s
    }
}

pub const AGGREGATION: &str = "macro: unweighted mean over test sites, one window per site";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub aggregation: String,
    pub sites: Vec<SiteResult>,
    /// Per-cluster averages, only for clusters with at least one test site.
    pub clusters: BTreeMap<usize, MetricSummary>,
    pub overall: MetricSummary,
    pub notes: Vec<String>,
    /// Free-form echo of the configuration that produced the report.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Writes `site_id,cluster,smape_g,smape_e,rmse_g,rmse_e`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["site_id", "cluster", "smape_g", "smape_e", "rmse_g", "rmse_e"])?;
        for r in &self.sites {
            out.write_record([
                r.site_id.clone(),
                r.assigned_cluster.to_string(),
                r.smape_global.to_string(),
                r.smape_expert.to_string(),
                r.rmse_global.to_string(),
                r.rmse_expert.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Scores the global model and the routed expert on the last `L + H` days of
/// every test site. Routing uses features of the `L`-day context only.
pub fn evaluate(test: &Dataset, es: &ExpertSet, global: &ForecastModel, w: &WindowSpec) -> Result<EvalReport> {
    let span = w.total();
    let mut notes = Vec::new();
    let mut sites = Vec::new();
    for site in test.sites() {
        if site.len() < span {
            notes.push(format!(
                "skipped {}: {} days of history, need {span}",
                site.site_id,
                site.len()
            ));
            continue;
        }
        let tail = site.tail(span);
        let context = SiteSeries {
            site_id: site.site_id.clone(),
            start_day: tail.start_day,
            values: tail.values[..w.context_len].to_vec(),
        };
        let target = &tail.values[w.context_len..];
        let dow = day_of_week(tail.start_day + w.context_len as i64);

        let fv = featurize(&context, &es.cluster_model.standardizer)?;
        let cluster = kmeans_predict(&es.cluster_model, &fv.combined)?;
        let f_global = predict(global, &context.values, dow)?;
        let f_expert = predict(es.model(cluster)?, &context.values, dow)?;
        sites.push(SiteResult {
            site_id: site.site_id.clone(),
            assigned_cluster: cluster,
            smape_global: smape(target, &f_global)?,
            smape_expert: smape(target, &f_expert)?,
            rmse_global: rmse(target, &f_global)?,
            rmse_expert: rmse(target, &f_expert)?,
        });
    }
    if sites.is_empty() {
        return Err(Error::Evaluation("no test site has enough history".into()));
    }
    let mut clusters = BTreeMap::new();
    for c in 0..es.k() {
        let members: Vec<&SiteResult> = sites.iter().filter(|r| r.assigned_cluster == c).collect();
        if !members.is_empty() {
            clusters.insert(c, MetricSummary::of(members));
        }
    }
    let overall = MetricSummary::of(&sites);
    Ok(EvalReport {
        k: es.k(),
        aggregation: AGGREGATION.to_string(),
        sites,
        clusters,
        overall,
        notes,
        config: serde_json::Value::Null,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    /// Overall macro sMAPE of the expert models.
    pub smape: f64,
    /// Overall macro RMSE of the expert models.
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    pub argmin_smape: usize,
    pub argmin_rmse: usize,
    pub notes: Vec<String>,
}

impl SweepCurve {
    fn from_points(points: Vec<SweepPoint>, notes: Vec<String>) -> Result<Self> {
        let argmin = |f: fn(&SweepPoint) -> f64| {
            points
                .iter()
                .min_by(|a, b| f(a).total_cmp(&f(b)).then(a.k.cmp(&b.k)))
                .map(|p| p.k)
        };
        let argmin_smape = argmin(|p| p.smape).ok_or_else(|| Error::Evaluation("sweep produced no points".into()))?;
        let argmin_rmse = argmin(|p| p.rmse).expect("nonempty");
        Ok(Self {
            points,
            argmin_smape,
            argmin_rmse,
            notes,
        })
    }

    pub fn point(&self, k: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.k == k)
    }

    /// Writes `k,smape,rmse`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "smape", "rmse"])?;
        for p in &self.points {
            out.write_record([p.k.to_string(), p.smape.to_string(), p.rmse.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Everything a sweep produced: the curve and the full run for every k.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub experiment: Experiment,
    pub curve: SweepCurve,
    pub runs: Vec<KRun>,
}

/// Runs the whole pipeline once per cluster count, holding the split, the
/// global model and all seeds fixed across k.
pub fn sweep_k(
    d: &Dataset,
    ks: &[usize],
    cfg: &TrainConfig,
    s: &SplitSpec,
    w: &WindowSpec,
    cluster: &ClusterSettings,
) -> Result<SweepResult> {
    if ks.is_empty() {
        return Err(Error::Parameter("ks must not be empty".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Parameter("every k must be at least 1".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let experiment = Experiment::prepare(d, s, w, cfg, cluster)?;
    sweep_prepared(experiment, &ks)
}

/// [`sweep_k`] on an already prepared experiment; `ks` must be sorted.
pub fn sweep_prepared(experiment: Experiment, ks: &[usize]) -> Result<SweepResult> {
    let n_train = experiment.train.len();
    let mut notes = Vec::new();
    let usable: Vec<usize> = ks
        .iter()
        .copied()
        .filter(|&k| {
            let ok = k <= n_train;
            if !ok {
                notes.push(format!("skipped k={k}: only {n_train} training sites"));
            }
            ok
        })
        .collect();
    let runs: Vec<KRun> = usable.par_iter().map(|&k| experiment.run_k(k)).collect::<Result<_>>()?;
    let points = runs
        .iter()
        .map(|r| SweepPoint {
            k: r.k,
            smape: r.report.overall.smape_expert,
            rmse: r.report.overall.rmse_expert,
        })
        .collect();
    let curve = SweepCurve::from_points(points, notes)?;
    Ok(SweepResult {
        experiment,
        curve,
        runs,
    })
}
