//! k-means (Lloyd iterations from a k-means++ start), nearest-centroid
//! prediction and cluster barycenters.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::features::{weekly_profile, Standardizer, LAYOUT_VERSION, PROFILE_LEN};
use crate::rng::Xoshiro256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

impl KMeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Parameter(format!(
                "tol must be finite and >= 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Raw result of [`kmeans_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input point.
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step, in order.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_points<V: AsRef<[f64]>>(points: &[V]) -> Result<usize> {
    let dim = points
        .first()
        .ok_or_else(|| Error::Parameter("k-means needs at least one point".into()))?
        .as_ref()
        .len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("k-means input contains non-finite values".into()));
        }
    }
    Ok(dim)
}

fn plus_plus_init<V: AsRef<[f64]>>(points: &[V], k: usize, rng: &mut Xoshiro256) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.below(n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final partial sum.
            chosen.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).expect("positive weight"))
        } else {
            // Every point coincides with a chosen centroid.
            rng.below(n)
        };
        let c = points[pick].as_ref().to_vec();
        for (dist, p) in d2.iter_mut().zip(points) {
            *dist = dist.min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign<V: AsRef<[f64]>>(points: &[V], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (i, d) = nearest(centroids, p.as_ref());
            inertia += d;
            i
        })
        .collect();
    (labels, inertia)
}

/// Recomputes centroids as member means. Empty clusters take the point
/// farthest from its own centroid (lowest index on ties); each point is used
/// at most once for reseeding.
fn update<V: AsRef<[f64]>>(points: &[V], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    let old = centroids.to_vec();
    for c in 0..k {
        if counts[c] > 0 {
            for (dst, s) in centroids[c].iter_mut().zip(&sums[c]) {
                *dst = s / counts[c] as f64;
            }
        }
    }
    let mut used = vec![false; points.len()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, (p, &l)) in points.iter().zip(labels).enumerate() {
            if used[i] {
                continue;
            }
            let d = sq_dist(p.as_ref(), &old[l]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            centroids[c] = points[i].as_ref().to_vec();
        }
    }
}

/// Fits k-means with a k-means++ start drawn from `seed`.
///
/// Iterates assignment and mean updates until the assignment stops changing,
/// the relative inertia improvement drops below `tol`, or `max_iters` is hit.
/// The returned labels are always the nearest-centroid assignment of the
/// returned centroids. Clusters are renumbered by descending size (ties keep
/// their original order).
pub fn kmeans_fit<V: AsRef<[f64]>>(points: &[V], k: usize, seed: u64, params: KMeansParams) -> Result<KMeansFit> {
    check_points(points)?;
    if k < 1 || k > points.len() {
        return Err(Error::Parameter(format!("k must be in 1..={}, got {k}", points.len())));
    }
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let centroids = plus_plus_init(points, k, &mut rng);
    kmeans_refine(points, centroids, params)
}

/// Runs Lloyd iterations from the given initial centroids. See [`kmeans_fit`].
pub fn kmeans_refine<V: AsRef<[f64]>>(
    points: &[V],
    mut centroids: Vec<Vec<f64>>,
    params: KMeansParams,
) -> Result<KMeansFit> {
    params.validate()?;
    let dim = check_points(points)?;
    let k = centroids.len();
    if k < 1 || k > points.len() {
        return Err(Error::Parameter(format!("k must be in 1..={}, got {k}", points.len())));
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: c.len(),
        });
    }
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < params.max_iters {
        update(points, &labels, &mut centroids);
        iterations += 1;
        let (new_labels, new_inertia) = assign(points, &centroids);
        history.push(new_inertia);
        let unchanged = new_labels == labels;
        let improvement = if inertia > 0.0 {
            (inertia - new_inertia) / inertia
        } else {
            0.0
        };
        labels = new_labels;
        inertia = new_inertia;
        if unchanged || improvement < params.tol {
            break;
        }
    }

    // Canonical labels: largest cluster first.
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let centroids: Vec<Vec<f64>> = order.iter().map(|&o| centroids[o].clone()).collect();
    // Relabelling can change tie-breaking between coincident centroids, so
    // assign once more against the reordered centroids.
    let (labels, inertia) = assign(points, &centroids);

    Ok(KMeansFit {
        centroids,
        labels,
        inertia,
        history,
        iterations,
    })
}

/// Fitted centroids together with the standardizer needed to place unseen sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub standardizer: Standardizer,
    pub inertia: f64,
    pub layout_version: String,
}

impl ClusterModel {
    pub fn from_fit(fit: &KMeansFit, standardizer: Standardizer) -> Self {
        Self {
            k: fit.centroids.len(),
            centroids: fit.centroids.clone(),
            standardizer,
            inertia: fit.inertia,
            layout_version: LAYOUT_VERSION.to_string(),
        }
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn check_layout(&self) -> Result<()> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::LayoutVersion {
                found: self.layout_version.clone(),
                expected: LAYOUT_VERSION.to_string(),
            });
        }
        if self.k == 0 || self.centroids.len() != self.k {
            return Err(Error::Validation(format!(
                "cluster model declares k={} but has {} centroids",
                self.k,
                self.centroids.len()
            )));
        }
        Ok(())
    }
}

/// Nearest centroid by Euclidean distance, lowest index on ties.
pub fn kmeans_predict(m: &ClusterModel, v: &[f64]) -> Result<usize> {
    if v.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: v.len(),
        });
    }
    Ok(nearest(&m.centroids, v).0)
}

/// Site id → cluster index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment(pub BTreeMap<String, usize>);

impl Assignment {
    pub fn from_labels<S: AsRef<str>>(site_ids: &[S], labels: &[usize]) -> Self {
        Self(
            site_ids
                .iter()
                .zip(labels)
                .map(|(s, &l)| (s.as_ref().to_string(), l))
                .collect(),
        )
    }

    pub fn get(&self, site_id: &str) -> Option<usize> {
        self.0.get(site_id).copied()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = &str> {
        self.0
            .iter()
            .filter(move |(_, &c)| c == cluster)
            .map(|(s, _)| s.as_str())
    }

    /// Writes `site_id,cluster`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["site_id", "cluster"])?;
        for (s, c) in &self.0 {
            out.write_record([s.as_str(), &c.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut map = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let c = rec.get(1).and_then(|c| c.parse().ok()).ok_or(Error::Parse {
                line,
                message: "invalid cluster index".into(),
            })?;
            map.insert(rec[0].to_string(), c);
        }
        Ok(Self(map))
    }
}

/// Mean weekly profile of the sites assigned to `cluster`.
pub fn cluster_barycenter(d: &Dataset, a: &Assignment, cluster: usize) -> Result<[f64; PROFILE_LEN]> {
    let mut acc = [0.0; PROFILE_LEN];
    let mut n = 0usize;
    for site in a.members(cluster) {
        let series = d
            .get(site)
            .ok_or_else(|| Error::Validation(format!("assigned site {site} is not in the dataset")))?;
        let p = weekly_profile(series)?;
        for (s, x) in acc.iter_mut().zip(p) {
            *s += x;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyCluster(cluster));
    }
    Ok(acc.map(|s| s / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SiteSeries;
    use proptest::prelude::*;

    fn one_d(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    fn model(centroids: Vec<Vec<f64>>) -> ClusterModel {
        ClusterModel {
            k: centroids.len(),
            centroids,
            standardizer: Standardizer::identity(1),
            inertia: 0.0,
            layout_version: LAYOUT_VERSION.into(),
        }
    }

    #[test]
    fn two_clusters_on_a_line() {
        let fit = kmeans_fit(&one_d(&[0.0, 1.0, 10.0, 11.0]), 2, 1, KMeansParams::default()).unwrap();
        let mut c: Vec<f64> = fit.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert!((fit.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let fit = kmeans_fit(&pts, 1, 0, KMeansParams::default()).unwrap();
        assert!((fit.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((fit.centroids[0][1] - 3.0).abs() < 1e-12);
        let sse: f64 = pts.iter().map(|p| sq_dist(p, &fit.centroids[0])).sum();
        assert!((fit.inertia - sse).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = one_d(&[3.0, -1.0, 8.0, 2.5, 0.0]);
        let fit = kmeans_fit(&pts, 5, 11, KMeansParams::default()).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut labels = fit.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn parameter_and_dimension_errors() {
        let pts = one_d(&[1.0, 2.0]);
        assert!(matches!(
            kmeans_fit(&pts, 0, 0, KMeansParams::default()),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            kmeans_fit(&pts, 3, 0, KMeansParams::default()),
            Err(Error::Parameter(_))
        ));
        let ragged = vec![vec![1.0], vec![1.0, 2.0]];
        assert!(matches!(
            kmeans_fit(&ragged, 1, 0, KMeansParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(kmeans_predict(&model(vec![vec![0.0]]), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn predict_ties_and_nearest() {
        let m = model(vec![vec![0.5], vec![10.5]]);
        assert_eq!(kmeans_predict(&m, &[5.5]).unwrap(), 0);
        assert_eq!(kmeans_predict(&m, &[9.0]).unwrap(), 1);
        assert_eq!(kmeans_predict(&m, &[10.5]).unwrap(), 1);
    }

    #[test]
    fn duplicate_points_with_large_k() {
        let pts = one_d(&[1.0, 1.0, 1.0, 5.0]);
        let fit = kmeans_fit(&pts, 3, 2, KMeansParams::default()).unwrap();
        assert_eq!(fit.inertia, 0.0);
        assert_eq!(fit.centroids.len(), 3);
    }

    #[test]
    fn labels_sorted_by_cluster_size() {
        let pts = one_d(&[0.0, 0.1, 0.2, 50.0, 100.0, 100.1]);
        let fit = kmeans_fit(&pts, 3, 4, KMeansParams::default()).unwrap();
        let mut counts = vec![0; 3];
        for &l in &fit.labels {
            counts[l] += 1;
        }
        assert_eq!(counts, vec![3, 2, 1]);
    }

    #[test]
    fn barycenter_of_members() {
        let mk = |id: &str, v: Vec<f64>| SiteSeries::new(id, 0, v).unwrap();
        let a = mk("a", (0..14).map(|i| (i % 7 + 1) as f64).collect());
        let b = mk("b", vec![2.0; 14]);
        let d = Dataset::new(vec![a.clone(), b]).unwrap();
        let asg = Assignment::from_labels(&["a", "b"], &[0, 0]);
        let pa = weekly_profile(&a).unwrap();
        let bc = cluster_barycenter(&d, &asg, 0).unwrap();
        for i in 0..7 {
            assert!((bc[i] - (pa[i] + 1.0) / 2.0).abs() < 1e-12);
        }
        let solo = Assignment::from_labels(&["a", "b"], &[0, 1]);
        assert_eq!(cluster_barycenter(&d, &solo, 0).unwrap(), pa);
        assert!(matches!(cluster_barycenter(&d, &solo, 2), Err(Error::EmptyCluster(2))));
    }

    #[test]
    fn assignment_csv_round_trip() {
        let a = Assignment::from_labels(&["x", "y"], &[1, 0]);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "site_id,cluster\nx,1\ny,0\n");
        assert_eq!(Assignment::read_csv(buf.as_slice()).unwrap(), a);
    }

    fn arb_points() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, u64)> {
        (2usize..4, 3usize..40).prop_flat_map(|(dim, n)| {
            (
                proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, dim), n),
                1..=n.min(6),
                any::<u64>(),
            )
        })
    }

    proptest! {
        #[test]
        fn fit_invariants((pts, k, seed) in arb_points()) {
            let fit = kmeans_fit(&pts, k, seed, KMeansParams::default()).unwrap();
            prop_assert!(fit.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12));
            let (relabels, _) = assign(&pts, &fit.centroids);
            prop_assert_eq!(&relabels, &fit.labels);
            let m = model(fit.centroids.clone());
            for (i, c) in fit.centroids.iter().enumerate() {
                let hit = kmeans_predict(&m, c).unwrap();
                // Coincident centroids resolve to the lowest index.
                prop_assert!(hit == i || fit.centroids[hit] == *c);
            }
            prop_assert!(fit.inertia >= 0.0);
        }

        #[test]
        fn permutation_keeps_partition((pts, k, seed) in arb_points(), shuffle_seed: u64) {
            let init = plus_plus_init(&pts, k, &mut Xoshiro256::seed_from_u64(seed));
            let a = kmeans_refine(&pts, init.clone(), KMeansParams::default()).unwrap();
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            Xoshiro256::seed_from_u64(shuffle_seed).shuffle(&mut perm);
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
            let b = kmeans_refine(&shuffled, init, KMeansParams::default()).unwrap();
            prop_assert!((a.inertia - b.inertia).abs() < 1e-9 * (1.0 + a.inertia));
            // Same partition: points grouped together in one run are grouped in the other.
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let pi = perm.iter().position(|&x| x == i).unwrap();
                    let pj = perm.iter().position(|&x| x == j).unwrap();
                    prop_assert_eq!(a.labels[i] == a.labels[j], b.labels[pi] == b.labels[pj]);
                }
            }
        }
    }
}
