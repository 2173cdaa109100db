//! Per-site clustering representation: a weekly utilization profile plus
//! standardized canonical statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{day_of_week, SiteSeries};
use crate::error::{Error, Result};

/// Version tag of the combined vector layout. Artifacts carrying a different
/// tag are rejected on load.
pub const LAYOUT_VERSION: &str = "profile7+canonical12/v1";

pub const PROFILE_LEN: usize = 7;
pub const N_CANONICAL: usize = 12;
pub const FEATURE_DIM: usize = PROFILE_LEN + N_CANONICAL;

/// Shortest series accepted by [`canonical_features`].
pub const MIN_CANONICAL_DAYS: usize = 14;

const EPS: f64 = 1e-9;
const MAX_DECORRELATION_LAG: usize = 14;

pub const CANONICAL_NAMES: [&str; N_CANONICAL] = [
    "mean",
    "std",
    "coef_variation",
    "skewness",
    "acf_lag1",
    "acf_lag7",
    "first_acf_below_inv_e",
    "trend_slope_rel",
    "outlier_fraction_2sd",
    "longest_run_above_mean",
    "median_over_mean",
    "high_fluctuation_fraction",
];

/// Names of all combined dimensions, in layout order.
pub fn feature_names() -> Vec<String> {
    ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]
        .iter()
        .map(|d| format!("profile_{d}"))
        .chain(CANONICAL_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

/// Day-of-week mean demand divided by overall mean demand, Monday first.
pub fn weekly_profile(x: &SiteSeries) -> Result<[f64; PROFILE_LEN]> {
    let n = x.values.len();
    if n < PROFILE_LEN {
        return Err(Error::InsufficientData {
            needed: PROFILE_LEN,
            got: n,
        });
    }
    let overall = mean(&x.values);
    if overall < EPS {
        return Ok([1.0; PROFILE_LEN]);
    }
    let mut sums = [0.0; PROFILE_LEN];
    let mut counts = [0usize; PROFILE_LEN];
    for (j, v) in x.values.iter().enumerate() {
        let d = day_of_week(x.start_day + j as i64);
        sums[d] += v;
        counts[d] += 1;
    }
    let mut profile = [0.0; PROFILE_LEN];
    for d in 0..PROFILE_LEN {
        profile[d] = sums[d] / counts[d] as f64 / overall;
    }
    Ok(profile)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pop_std(x: &[f64], mu: f64) -> f64 {
    (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Sample autocorrelation at `lag`; 0 when the series has no variance.
pub fn acf(x: &[f64], lag: usize) -> f64 {
    let mu = mean(x);
    let denom: f64 = x.iter().map(|v| (v - mu).powi(2)).sum();
    if denom < EPS || lag >= x.len() {
        return 0.0;
    }
    let num: f64 = x.iter().zip(&x[lag..]).map(|(a, b)| (a - mu) * (b - mu)).sum();
    num / denom
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// The twelve canonical statistics in [`CANONICAL_NAMES`] order.
pub fn canonical_features(x: &SiteSeries) -> Result<[f64; N_CANONICAL]> {
    let v = &x.values;
    let n = v.len();
    if n < MIN_CANONICAL_DAYS {
        return Err(Error::InsufficientData {
            needed: MIN_CANONICAL_DAYS,
            got: n,
        });
    }
    let nf = n as f64;
    let mu = mean(v);
    let sd = pop_std(v, mu);
    let mean_guard = mu.max(EPS);

    let skew = if sd < EPS {
        0.0
    } else {
        v.iter().map(|a| ((a - mu) / sd).powi(3)).sum::<f64>() / nf
    };

    let decorrelation = (1..=MAX_DECORRELATION_LAG)
        .find(|&l| acf(v, l) < (-1.0f64).exp())
        .unwrap_or(MAX_DECORRELATION_LAG) as f64;

    let t_mean = (nf - 1.0) / 2.0;
    let (sxy, sxx) = v.iter().enumerate().fold((0.0, 0.0), |(sxy, sxx), (t, a)| {
        let dt = t as f64 - t_mean;
        (sxy + dt * (a - mu), sxx + dt * dt)
    });
    let slope = sxy / sxx;

    let outliers = v.iter().filter(|a| (*a - mu).abs() > 2.0 * sd).count() as f64 / nf;

    let mut longest = 0usize;
    let mut run = 0usize;
    for a in v {
        if *a > mu {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }

    let diffs: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let d_sd = pop_std(&diffs, mean(&diffs));
    let high_fluct = diffs.iter().filter(|d| d.abs() > d_sd).count() as f64 / diffs.len() as f64;

    Ok([
        mu,
        sd,
        sd / mean_guard,
        skew,
        acf(v, 1),
        acf(v, 7),
        decorrelation,
        slope / mean_guard,
        outliers,
        longest as f64 / nf,
        median(v) / mean_guard,
        high_fluct,
    ])
}

/// Per-dimension z-scoring of canonical features, fitted on training sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Means 0, stds 1.
    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

/// Fits means and population standard deviations; a standard deviation
/// below 1e-9 is replaced by 1.
pub fn fit_standardizer<V: AsRef<[f64]>>(train_features: &[V]) -> Result<Standardizer> {
    let first = train_features
        .first()
        .ok_or_else(|| Error::Parameter("cannot fit a standardizer on no vectors".into()))?;
    let dim = first.as_ref().len();
    for v in train_features {
        if v.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.as_ref().len(),
            });
        }
    }
    let n = train_features.len() as f64;
    let mut means = vec![0.0; dim];
    for v in train_features {
        for (m, x) in means.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; dim];
    for v in train_features {
        for ((s, x), m) in stds.iter_mut().zip(v.as_ref()).zip(&means) {
            *s += (x - m).powi(2);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s < EPS {
            *s = 1.0;
        }
    }
    Ok(Standardizer { means, stds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub site_id: String,
    pub profile: [f64; PROFILE_LEN],
    /// Standardized canonical features.
    pub canonical: Vec<f64>,
    /// `profile ++ canonical`.
    pub combined: Vec<f64>,
}

/// Profile (unstandardized) followed by the standardized canonical features.
pub fn featurize(x: &SiteSeries, s: &Standardizer) -> Result<FeatureVector> {
    let profile = weekly_profile(x)?;
    let canonical = s.apply(&canonical_features(x)?)?;
    let combined = profile.iter().chain(&canonical).copied().collect();
    Ok(FeatureVector {
        site_id: x.site_id.clone(),
        profile,
        canonical,
        combined,
    })
}

/// Non-overlapping `len`-day blocks aligned to the end of the series; a
/// leading remainder shorter than `len` is dropped. A series shorter than
/// `len` yields itself.
pub fn trailing_blocks(x: &SiteSeries, len: usize) -> Vec<SiteSeries> {
    let n = x.values.len();
    if len == 0 || n <= len {
        return vec![x.clone()];
    }
    let offset = n % len;
    (offset..n)
        .step_by(len)
        .map(|start| SiteSeries {
            site_id: x.site_id.clone(),
            start_day: x.start_day + start as i64,
            values: x.values[start..start + len].to_vec(),
        })
        .collect()
}

/// Canonical features of every trailing block, for fitting a standardizer on
/// the same window length that unseen sites are observed with.
pub fn block_canonical_features(x: &SiteSeries, block_len: usize) -> Result<Vec<[f64; N_CANONICAL]>> {
    trailing_blocks(x, block_len).iter().map(canonical_features).collect()
}

/// Featurizes each trailing block and averages the results coordinate-wise.
///
/// Training sites have long histories while unseen sites are described by a
/// single context window; averaging block features keeps both on the same
/// footing while still using the whole history.
pub fn featurize_history(x: &SiteSeries, block_len: usize, s: &Standardizer) -> Result<FeatureVector> {
    let blocks = trailing_blocks(x, block_len);
    let mut acc: Option<FeatureVector> = None;
    for b in &blocks {
        let f = featurize(b, s)?;
        match acc.as_mut() {
            None => acc = Some(f),
            Some(a) => {
                a.profile.iter_mut().zip(&f.profile).for_each(|(x, y)| *x += y);
                a.canonical.iter_mut().zip(&f.canonical).for_each(|(x, y)| *x += y);
            }
        }
    }
    let mut fv = acc.expect("at least one block");
    let n = blocks.len() as f64;
    fv.profile.iter_mut().for_each(|x| *x /= n);
    fv.canonical.iter_mut().for_each(|x| *x /= n);
    fv.site_id = x.site_id.clone();
    fv.combined = fv.profile.iter().chain(&fv.canonical).copied().collect();
    Ok(fv)
}

/// Sidecar metadata for a features CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub layout_version: String,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
}

impl FeatureSidecar {
    pub fn new(standardizer: Standardizer) -> Self {
        Self {
            layout_version: LAYOUT_VERSION.to_string(),
            feature_names: feature_names(),
            standardizer,
        }
    }
}

/// Writes `site_id,f0..f18`.
pub fn write_features_csv<W: Write>(features: &[FeatureVector], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["site_id".to_string()];
    header.extend((0..FEATURE_DIM).map(|i| format!("f{i}")));
    out.write_record(&header)?;
    for f in features {
        let mut row = vec![f.site_id.clone()];
        row.extend(f.combined.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
