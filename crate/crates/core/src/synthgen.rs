//! Synthetic site histories generated from archetype templates.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{day_of_week, parse_day, Dataset, SiteSeries};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Xoshiro256};

/// Minimum synthetic series length: one 28-day context plus a 7-day horizon.
pub const MIN_SYNTH_DAYS: usize = 35;

/// A parametric daily demand shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeTemplate {
    pub name: String,
    /// Mean daily demand level, kWh.
    pub base_kwh: f64,
    /// Day-of-week multipliers, Monday first.
    pub dow_mult: [f64; 7],
    /// Relative linear growth per year.
    #[serde(default)]
    pub trend_per_year: f64,
    /// Relative amplitude of the annual sinusoid.
    #[serde(default)]
    pub season_amp: f64,
    /// Standard deviation of the log-normal noise.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub spike_prob: f64,
    #[serde(default = "one")]
    pub spike_mult: f64,
}

fn one() -> f64 {
    1.0
}

impl ArchetypeTemplate {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Validation(format!("template {}: {msg}", self.name)));
        if !(self.base_kwh > 0.0 && self.base_kwh.is_finite()) {
            return bad("base_kwh must be positive");
        }
        if !self.dow_mult.iter().all(|m| *m > 0.0 && m.is_finite()) {
            return bad("dow_mult entries must be positive");
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return bad("spike_prob must be in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.trend_per_year.is_finite() && self.season_amp.is_finite() && self.spike_mult.is_finite()) {
            return bad("parameters must be finite");
        }
        Ok(())
    }

    /// Noise-free demand on day index `j` of a series starting at `start_day`.
    pub fn expected(&self, start_day: i64, j: usize) -> f64 {
        let t = j as f64;
        let v = self.base_kwh
            * self.dow_mult[day_of_week(start_day + j as i64)]
            * (1.0 + self.trend_per_year * t / 365.0)
            * (1.0 + self.season_amp * (2.0 * PI * t / 365.0).sin());
        v.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateCount {
    pub template: ArchetypeTemplate,
    pub sites: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub templates: Vec<TemplateCount>,
    pub days: usize,
    pub seed: u64,
    /// First calendar day of every series, `YYYY-MM-DD`.
    #[serde(default = "default_start_date")]
    pub start_date: String,
}

fn default_start_date() -> String {
    "2023-01-02".to_string()
}

impl SynthSpec {
    /// The six built-in archetypes with `sites_per_template` sites each.
    pub fn with_default_templates(sites_per_template: usize, days: usize, seed: u64) -> Self {
        Self {
            templates: default_templates()
                .into_iter()
                .map(|template| TemplateCount {
                    template,
                    sites: sites_per_template,
                })
                .collect(),
            days,
            seed,
            start_date: default_start_date(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_reader(BufReader::new(f))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days < MIN_SYNTH_DAYS {
            return Err(Error::Validation(format!(
                "days must be at least {MIN_SYNTH_DAYS}, got {}",
                self.days
            )));
        }
        if self.templates.is_empty() {
            return Err(Error::Validation("at least one template is required".into()));
        }
        for tc in &self.templates {
            tc.template.validate()?;
            if tc.sites == 0 {
                return Err(Error::Validation(format!(
                    "template {} has a site count of 0",
                    tc.template.name
                )));
            }
        }
        self.start_day()?;
        Ok(())
    }

    pub fn start_day(&self) -> Result<i64> {
        parse_day(&self.start_date)
            .ok_or_else(|| Error::Validation(format!("invalid start_date {:?}", self.start_date)))
    }

    /// A copy with every template's noise scale capped at `max_sigma`.
    pub fn with_noise_cap(&self, max_sigma: f64) -> Self {
        let mut out = self.clone();
        for tc in &mut out.templates {
            tc.template.noise_sigma = tc.template.noise_sigma.min(max_sigma);
        }
        out
    }
}

/// Six archetypes at desk scale. Day-of-week multipliers are relative peak
/// ratios loosely following the shapes of retail, corridor, downtown,
/// commuter, leisure and erratic sites. The five regular archetypes share one
/// noise and spike level; the erratic one is low-volume and very noisy, which
/// is where a single global model struggles most.
pub fn default_templates() -> Vec<ArchetypeTemplate> {
    vec![
        ArchetypeTemplate {
            name: "steady_retail".into(),
            base_kwh: 520.0,
            dow_mult: [1.0, 1.0, 1.02, 1.02, 1.05, 1.1, 0.95],
            trend_per_year: 0.10,
            season_amp: 0.03,
            noise_sigma: 0.06,
            spike_prob: 0.06,
            spike_mult: 2.0,
        },
        ArchetypeTemplate {
            name: "weekend_corridor".into(),
            base_kwh: 360.0,
            dow_mult: [0.8, 0.75, 0.75, 0.8, 1.1, 2.6, 2.3],
            trend_per_year: 0.05,
            season_amp: 0.08,
            noise_sigma: 0.06,
            spike_prob: 0.06,
            spike_mult: 2.0,
        },
        ArchetypeTemplate {
            name: "weekday_ramp".into(),
            base_kwh: 640.0,
            dow_mult: [1.3, 1.4, 1.45, 1.4, 1.2, 0.55, 0.45],
            trend_per_year: 0.08,
            season_amp: 0.02,
            noise_sigma: 0.06,
            spike_prob: 0.06,
            spike_mult: 2.0,
        },
        ArchetypeTemplate {
            name: "commuter".into(),
            base_kwh: 450.0,
            dow_mult: [1.25, 1.1, 1.1, 1.2, 1.45, 1.9, 0.7],
            trend_per_year: 0.06,
            season_amp: 0.05,
            noise_sigma: 0.06,
            spike_prob: 0.06,
            spike_mult: 2.0,
        },
        ArchetypeTemplate {
            name: "seasonal_leisure".into(),
            base_kwh: 260.0,
            dow_mult: [0.6, 0.55, 0.55, 0.7, 1.6, 2.3, 1.8],
            trend_per_year: 0.0,
            season_amp: 0.1,
            noise_sigma: 0.06,
            spike_prob: 0.06,
            spike_mult: 2.0,
        },
        ArchetypeTemplate {
            name: "erratic".into(),
            base_kwh: 90.0,
            dow_mult: [1.0, 0.9, 1.1, 1.0, 0.9, 1.2, 1.0],
            trend_per_year: 0.0,
            season_amp: 0.0,
            noise_sigma: 0.8,
            spike_prob: 0.05,
            spike_mult: 1.5,
        },
    ]
}

/// Generates one site from a template. Identical inputs give bit-identical
/// output.
pub fn generate_site(
    t: &ArchetypeTemplate,
    site_id: impl Into<String>,
    site_seed: u64,
    days: usize,
    start_day: i64,
) -> SiteSeries {
    let mut rng = Xoshiro256::seed_from_u64(site_seed);
    let values = (0..days)
        .map(|j| {
            // Both draws are taken every day so the stream layout does not
            // depend on the template parameters.
            let eps = rng.normal() * t.noise_sigma;
            let spike = if rng.next_f64() < t.spike_prob {
                t.spike_mult
            } else {
                1.0
            };
            (t.expected(start_day, j) * eps.exp() * spike).max(0.0)
        })
        .collect();
    SiteSeries {
        site_id: site_id.into(),
        start_day,
        values,
    }
}

/// Site id for site `site_index` of template `template_index`.
pub fn synth_site_id(template: &ArchetypeTemplate, site_index: usize) -> String {
    format!("{}-{:04}", template.name, site_index)
}

/// Generates the full dataset plus a site → template-name map.
pub fn generate_dataset(s: &SynthSpec) -> Result<(Dataset, BTreeMap<String, String>)> {
    s.validate()?;
    let start_day = s.start_day()?;
    let jobs: Vec<(usize, usize)> = s
        .templates
        .iter()
        .enumerate()
        .flat_map(|(ti, tc)| (0..tc.sites).map(move |si| (ti, si)))
        .collect();
    let sites: Vec<SiteSeries> = jobs
        .par_iter()
        .map(|&(ti, si)| {
            let t = &s.templates[ti].template;
            let seed = derive_seed(s.seed, &[ti as u64, si as u64]);
            generate_site(t, synth_site_id(t, si), seed, s.days, start_day)
        })
        .collect();
    let truth = jobs
        .iter()
        .zip(&sites)
        .map(|(&(ti, _), site)| (site.site_id.clone(), s.templates[ti].template.name.clone()))
        .collect();
    Ok((Dataset::new(sites)?, truth))
}
