//! Site series, datasets, CSV/JSON ingestion and the site-level split.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

/// Longest run of missing days that is filled by interpolation. Longer gaps
/// split the site into separate series.
pub const MAX_INTERPOLATED_GAP: i64 = 7;

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

/// Days since 1970-01-01.
pub fn date_to_day(date: NaiveDate) -> i64 {
    (date - EPOCH).num_days()
}

pub fn day_to_date(day: i64) -> NaiveDate {
    EPOCH + chrono::Duration::days(day)
}

/// Parses a `YYYY-MM-DD` date into an epoch day.
pub fn parse_day(s: &str) -> Option<i64> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok().map(date_to_day)
}

pub fn format_day(day: i64) -> String {
    day_to_date(day).format("%Y-%m-%d").to_string()
}

/// Day of week with 0 = Monday … 6 = Sunday. 1970-01-01 was a Thursday.
pub fn day_of_week(day: i64) -> usize {
    (day + 3).rem_euclid(7) as usize
}

/// One site's contiguous daily demand history in kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSeries {
    pub site_id: String,
    pub start_day: i64,
    pub values: Vec<f64>,
}

impl SiteSeries {
    pub fn new(site_id: impl Into<String>, start_day: i64, values: Vec<f64>) -> Result<Self> {
        let s = Self {
            site_id: site_id.into(),
            start_day,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Validation(format!("site {} has no values", self.site_id)));
        }
        if let Some((j, v)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Validation(format!(
                "site {} day {j}: value {v} is not a finite non-negative number",
                self.site_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end_day(&self) -> i64 {
        self.start_day + self.values.len() as i64 - 1
    }

    /// The trailing `n` days as a new series (same id).
    pub fn tail(&self, n: usize) -> SiteSeries {
        let n = n.min(self.values.len());
        let skip = self.values.len() - n;
        SiteSeries {
            site_id: self.site_id.clone(),
            start_day: self.start_day + skip as i64,
            values: self.values[skip..].to_vec(),
        }
    }
}

/// A collection of site series with unique ids, kept sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    sites: Vec<SiteSeries>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    sites: Vec<SiteSeries>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::new(r.sites)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr { sites: d.sites }
    }
}

impl Dataset {
    pub fn new(mut sites: Vec<SiteSeries>) -> Result<Self> {
        for s in &sites {
            s.validate()?;
        }
        sites.sort_by(|a, b| a.site_id.cmp(&b.site_id));
        if let Some(w) = sites.windows(2).find(|w| w[0].site_id == w[1].site_id) {
            return Err(Error::Validation(format!("duplicate site id {}", w[0].site_id)));
        }
        Ok(Self { sites })
    }

    pub fn sites(&self) -> &[SiteSeries] {
        &self.sites
    }

    pub fn into_sites(self) -> Vec<SiteSeries> {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn get(&self, site_id: &str) -> Option<&SiteSeries> {
        self.sites
            .binary_search_by(|s| s.site_id.as_str().cmp(site_id))
            .ok()
            .map(|i| &self.sites[i])
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.sites {
            s.validate()?;
        }
        Ok(())
    }

    /// Total number of daily observations.
    pub fn total_days(&self) -> usize {
        self.sites.iter().map(SiteSeries::len).sum()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Writes `site_id,date,kwh` rows in site-then-date order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["site_id", "date", "kwh"])?;
        for s in &self.sites {
            for (j, v) in s.values.iter().enumerate() {
                out.write_record([s.site_id.as_str(), &format_day(s.start_day + j as i64), &v.to_string()])?;
            }
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Reads a `site_id,date,kwh` CSV file.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(f))
}

/// Parses `site_id,date,kwh` rows. Duplicate (site, date) rows are summed,
/// gaps of up to [`MAX_INTERPOLATED_GAP`] missing days are filled linearly,
/// and longer gaps split the site into `<id>-a`, `<id>-b`, … segments.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut saw_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if !saw_header {
            let header: Vec<&str> = rec.iter().collect();
            if header != ["site_id", "date", "kwh"] {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header site_id,date,kwh, found {}", header.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let site = rec[0].to_string();
        if site.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty site_id".into(),
            });
        }
        let day = parse_day(&rec[1]).ok_or_else(|| Error::Parse {
            line,
            message: format!("invalid date {:?}", &rec[1]),
        })?;
        let kwh: f64 = rec[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid kwh {:?}", &rec[2]),
        })?;
        if !kwh.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite kwh {:?}", &rec[2]),
            });
        }
        if kwh < 0.0 {
            return Err(Error::Validation(format!("line {line}: negative kwh {kwh}")));
        }
        *rows.entry(site).or_default().entry(day).or_insert(0.0) += kwh;
    }

    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut sites = Vec::new();
    for (site_id, days) in rows {
        let segments = assemble_segments(&days);
        if segments.len() == 1 {
            let (start, values) = segments.into_iter().next().expect("one segment");
            sites.push(SiteSeries::new(site_id, start, values)?);
        } else {
            for (i, (start, values)) in segments.into_iter().enumerate() {
                sites.push(SiteSeries::new(
                    format!("{site_id}-{}", segment_suffix(i)),
                    start,
                    values,
                )?);
            }
        }
    }
    Dataset::new(sites)
}

/// "a", "b", …, "z", "aa", "ab", …
fn segment_suffix(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

fn assemble_segments(days: &BTreeMap<i64, f64>) -> Vec<(i64, Vec<f64>)> {
    let mut segments: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut prev: Option<(i64, f64)> = None;
    for (&day, &v) in days {
        match prev {
            Some((pd, pv)) if day - pd - 1 <= MAX_INTERPOLATED_GAP => {
                let seg = &mut segments.last_mut().expect("open segment").1;
                let span = (day - pd) as f64;
                for m in 1..(day - pd) {
                    let f = m as f64 / span;
                    seg.push(pv + (v - pv) * f);
                }
                seg.push(v);
            }
            _ => segments.push((day, vec![v])),
        }
        prev = Some((day, v));
    }
    segments
}

/// Keeps the sites with at least `min_days` observations.
pub fn filter_min_history(d: &Dataset, min_days: usize) -> Dataset {
    Dataset {
        sites: d.sites.iter().filter(|s| s.len() >= min_days).cloned().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Number of training sites out of `n`: `ceil(train_fraction * n)`,
    /// kept within `1..n` so both sides are nonempty.
    pub fn train_count(&self, n: usize) -> usize {
        // The small offset absorbs representation error, e.g. 0.8 * 5.
        let raw = (self.train_fraction * n as f64 - 1e-9).ceil() as usize;
        raw.clamp(1, n.saturating_sub(1).max(1))
    }
}

/// Context length `L` and forecast horizon `H`, in days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub context_len: usize,
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            context_len: 28,
            horizon: 7,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.context_len == 0 || self.horizon == 0 {
            return Err(Error::Parameter("context_len and horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.context_len + self.horizon
    }
}

/// Partitions sites (not time) into train and test sets with a seeded shuffle.
pub fn split_sites(d: &Dataset, s: &SplitSpec) -> Result<(Dataset, Dataset)> {
    s.validate()?;
    let n = d.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 sites, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Xoshiro256::seed_from_u64(s.seed).shuffle(&mut order);
    let n_train = s.train_count(n);
    let mut train_flags = vec![false; n];
    for &i in &order[..n_train] {
        train_flags[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = d.sites.iter().cloned().zip(train_flags).partition(|(_, t)| *t);
    Ok((
        Dataset {
            sites: train.into_iter().map(|(s, _)| s).collect(),
        },
        Dataset {
            sites: test.into_iter().map(|(s, _)| s).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes())
    }

    fn day(s: &str) -> i64 {
        parse_day(s).unwrap()
    }

    #[test]
    fn loads_three_consecutive_days() {
        let d = parse("site_id,date,kwh\ns1,2024-01-01,10\ns1,2024-01-02,20\ns1,2024-01-03,30\n").unwrap();
        assert_eq!(d.len(), 1);
        let s = &d.sites()[0];
        assert_eq!(s.start_day, day("2024-01-01"));
        assert_eq!(s.values, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn interpolates_single_day_gap() {
        let d = parse("site_id,date,kwh\ns1,2024-01-01,10\ns1,2024-01-03,30\n").unwrap();
        assert_eq!(d.sites()[0].values, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn sums_duplicate_rows() {
        let d = parse("site_id,date,kwh\ns1,2024-01-01,5\ns1,2024-01-01,7\n").unwrap();
        assert_eq!(d.sites()[0].values, vec![12.0]);
    }

    #[test]
    fn seven_day_gap_is_filled_eight_day_gap_splits() {
        let d = parse("site_id,date,kwh\ns1,2024-01-01,0\ns1,2024-01-09,8\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.sites()[0].values, (0..=8).map(f64::from).collect::<Vec<_>>());

        let d = parse("site_id,date,kwh\ns1,2024-01-01,1\ns1,2024-01-10,2\ns1,2024-01-11,3\n").unwrap();
        let ids: Vec<_> = d.sites().iter().map(|s| s.site_id.as_str()).collect();
        assert_eq!(ids, ["s1-a", "s1-b"]);
        assert_eq!(d.get("s1-b").unwrap().values, vec![2.0, 3.0]);
        assert_eq!(d.get("s1-b").unwrap().start_day, day("2024-01-10"));
    }

    #[test]
    fn reports_malformed_line() {
        let err = parse("site_id,date,kwh\ns1,2024-01-01,5\ns1,2024-13-01,7\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse("site_id,date,kwh\ns1,2024-01-01,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("site,date,kwh\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_negative_and_empty() {
        assert!(matches!(
            parse("site_id,date,kwh\ns1,2024-01-01,-1\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(parse(""), Err(Error::EmptyDataset)));
        assert!(matches!(parse("site_id,date,kwh\n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = SiteSeries::new("a", 0, vec![1.0]).unwrap();
        assert!(Dataset::new(vec![s.clone(), s]).is_err());
    }

    #[test]
    fn weekday_arithmetic() {
        assert_eq!(day_of_week(day("2024-01-01")), 0);
        assert_eq!(day_of_week(0), 3);
        assert_eq!(day_of_week(-1), 2);
        assert_eq!(format_day(day("2023-12-31")), "2023-12-31");
    }

    fn lengths(d: &Dataset) -> Vec<usize> {
        let mut v: Vec<_> = d.sites().iter().map(SiteSeries::len).collect();
        v.sort();
        v
    }

    fn dataset_with_lengths(lens: &[usize]) -> Dataset {
        Dataset::new(
            lens.iter()
                .enumerate()
                .map(|(i, &n)| SiteSeries::new(format!("s{i}"), 0, vec![1.0; n]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn filter_keeps_sites_at_threshold() {
        let d = dataset_with_lengths(&[34, 35, 100]);
        assert_eq!(lengths(&filter_min_history(&d, 35)), vec![35, 100]);
        assert_eq!(filter_min_history(&d, 1), d);
        assert!(filter_min_history(&Dataset::default(), 35).is_empty());
    }

    #[test]
    fn split_counts() {
        let spec = SplitSpec::default();
        let (tr, te) = split_sites(&dataset_with_lengths(&[1; 10]), &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr, te) = split_sites(&dataset_with_lengths(&[1; 5]), &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));
        let (tr, te) = split_sites(&dataset_with_lengths(&[1; 2]), &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        assert!(matches!(
            split_sites(&dataset_with_lengths(&[1]), &spec),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn json_round_trip_rejects_duplicates() {
        let d = dataset_with_lengths(&[3, 4]);
        let back: Dataset = serde_json::from_str(&d.to_json_string().unwrap()).unwrap();
        assert_eq!(back, d);
        let dup =
            r#"{"sites":[{"site_id":"a","start_day":0,"values":[1]},{"site_id":"a","start_day":0,"values":[2]}]}"#;
        assert!(serde_json::from_str::<Dataset>(dup).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_reproducible_partition(n in 2usize..60, seed: u64) {
            let d = dataset_with_lengths(&vec![1; n]);
            let spec = SplitSpec { train_fraction: 0.8, seed };
            let (tr, te) = split_sites(&d, &spec).unwrap();
            let (tr2, te2) = split_sites(&d, &spec).unwrap();
            prop_assert_eq!(&tr, &tr2);
            prop_assert_eq!(&te, &te2);
            prop_assert_eq!(tr.len() + te.len(), n);
            prop_assert!(tr.sites().iter().all(|s| te.get(&s.site_id).is_none()));
            let expected = ((0.8 * n as f64) - 1e-9).ceil() as usize;
            prop_assert_eq!(tr.len(), expected.min(n - 1));
        }

        #[test]
        fn row_order_does_not_matter(
            rows in proptest::collection::vec((0usize..3, 0i64..20, 0u32..1000), 1..40),
            seed: u64,
        ) {
            let render = |rows: &[(usize, i64, u32)]| {
                let mut text = String::from("site_id,date,kwh\n");
                for (s, d, v) in rows {
                    text.push_str(&format!("s{s},{},{v}\n", format_day(19_000 + d)));
                }
                text
            };
            let mut shuffled = rows.clone();
            Xoshiro256::seed_from_u64(seed).shuffle(&mut shuffled);
            prop_assert_eq!(parse(&render(&rows)).unwrap(), parse(&render(&shuffled)).unwrap());
        }

        #[test]
        fn weekday_is_periodic(d in -100_000i64..100_000) {
            prop_assert_eq!(day_of_week(d + 7), day_of_week(d));
            prop_assert_eq!(day_of_week(d + 1), (day_of_week(d) + 1) % 7);
        }
    }
}
