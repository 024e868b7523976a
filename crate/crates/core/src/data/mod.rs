//! Labeled datasets, subset partitions and synthetic generators.

pub mod pixmap;
pub mod regions;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use pixmap::{load_pixmap, save_pixmap, Image};
pub use regions::{image_to_coord_dataset, two_region_fixture, CoordConvention, RegionMap};

/// Fixed-width feature rows with an integer class per row.
///
/// `targets` carries dense regression targets (RGB values for coordinate
/// datasets) when the task is not classification.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub targets: Option<Tensor>,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Invalid(format!("label {bad} not below class count {class_count}")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            targets: None,
        })
    }

    pub fn with_targets(mut self, targets: Tensor) -> Result<Self> {
        if targets.rows() != self.len() {
            return Err(Error::Shape(format!(
                "{} target rows for {} samples",
                targets.rows(),
                self.len()
            )));
        }
        self.targets = Some(targets);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes one row per sample: features, then (for regression data)
    /// targets, then the label.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        if let Some(t) = &self.targets {
            header.extend((0..t.cols()).map(|i| format!("y{i}")));
        }
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(t) = &self.targets {
                row.extend(t.row(i).iter().map(|v| v.to_string()));
            }
            row.push(self.labels[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`write_csv`](Self::write_csv). The
    /// class count is one past the largest label, or `class_count` if given.
    pub fn read_csv<R: Read>(reader: R, class_count: Option<usize>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let dim = header.iter().filter(|h| h.starts_with('x')).count();
        let tdim = header.iter().filter(|h| h.starts_with('y')).count();
        if header.len() != dim + tdim + 1 || header.get(header.len() - 1) != Some("label") {
            return Err(Error::Format {
                what: "dataset csv",
                detail: "expected columns x0.., optional y0.., label".into(),
            });
        }
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| Error::Format {
                    what: "dataset csv",
                    detail: format!("row {}: {e}", line + 1),
                })
            };
            for v in record.iter().take(dim) {
                features.push(parse(v)?);
            }
            for v in record.iter().skip(dim).take(tdim) {
                targets.push(parse(v)?);
            }
            let label = record[dim + tdim].trim().parse::<usize>().map_err(|e| Error::Format {
                what: "dataset csv",
                detail: format!("row {}: {e}", line + 1),
            })?;
            labels.push(label);
        }
        let n = labels.len();
        let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let ds = Self::new(Tensor::matrix(n, dim, features)?, labels, classes)?;
        if tdim > 0 {
            ds.with_targets(Tensor::matrix(n, tdim, targets)?)
        } else {
            Ok(ds)
        }
    }
}

/// Disjoint, covering split of sample indices into K non-empty subsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    subsets: Vec<Vec<usize>>,
    subset_ids: Vec<usize>,
    sample_count: usize,
}

impl Partition {
    pub fn new(subset_ids: Vec<usize>, subsets: Vec<Vec<usize>>, sample_count: usize) -> Result<Self> {
        if subsets.is_empty() || subset_ids.len() != subsets.len() {
            return Err(Error::Invalid(format!(
                "{} subset ids for {} subsets",
                subset_ids.len(),
                subsets.len()
            )));
        }
        let mut seen = vec![false; sample_count];
        for (k, s) in subsets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::EmptySubset(subset_ids[k]));
            }
            for &i in s {
                if i >= sample_count || seen[i] {
                    return Err(Error::Invalid(format!(
                        "sample {i} out of range or assigned twice"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::Invalid(format!("sample {i} belongs to no subset")));
        }
        Ok(Self {
            subsets,
            subset_ids,
            sample_count,
        })
    }

    /// A single subset holding every sample.
    pub fn trivial(sample_count: usize) -> Result<Self> {
        Self::new(vec![0], vec![(0..sample_count).collect()], sample_count)
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn subset(&self, k: usize) -> &[usize] {
        &self.subsets[k]
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn subset_ids(&self) -> &[usize] {
        &self.subset_ids
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Subset index (position, not id) of every sample.
    pub fn membership(&self) -> Vec<usize> {
        let mut m = vec![0; self.sample_count];
        for (k, s) in self.subsets.iter().enumerate() {
            for &i in s {
                m[i] = k;
            }
        }
        m
    }
}

/// Label → subset id. Serialized as a JSON object of string keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMapping(pub BTreeMap<usize, usize>);

impl LabelMapping {
    pub fn identity(class_count: usize) -> Self {
        Self((0..class_count).map(|c| (c, c)).collect())
    }

    pub fn get(&self, label: usize) -> Result<usize> {
        self.0.get(&label).copied().ok_or(Error::UnmappedLabel(label))
    }

    /// Distinct subset ids, ascending.
    pub fn subset_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.0.values().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn to_json(&self) -> Result<String> {
        let obj: BTreeMap<String, usize> = self.0.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Ok(serde_json::to_string_pretty(&obj)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let obj: BTreeMap<String, usize> = serde_json::from_str(text)?;
        let mut map = BTreeMap::new();
        for (k, v) in obj {
            let label = k.trim().parse::<usize>().map_err(|_| Error::Format {
                what: "label mapping",
                detail: format!("key {k:?} is not a non-negative integer"),
            })?;
            map.insert(label, v);
        }
        Ok(Self(map))
    }
}

/// Groups samples by the subset their label maps to. Subsets are ordered by
/// ascending subset id.
pub fn partition_by_label(dataset: &LabeledDataset, mapping: &LabelMapping) -> Result<Partition> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for id in mapping.subset_ids() {
        groups.insert(id, Vec::new());
    }
    for (i, &label) in dataset.labels.iter().enumerate() {
        groups.get_mut(&mapping.get(label)?).expect("id from mapping").push(i);
    }
    let (ids, subsets): (Vec<_>, Vec<_>) = groups.into_iter().unzip();
    Partition::new(ids, subsets, dataset.len())
}

/// Isotropic Gaussian clusters around well separated centers.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianClusters {
    pub centers: Vec<Vec<f64>>,
    pub spread: f64,
}

/// Default nearest-center distance as a multiple of the spread. Anything at
/// or above 4 keeps the clusters separable; 5 puts the pairwise Bayes error
/// under 1%.
pub const DEFAULT_SEPARATION: f64 = 5.0;

impl GaussianClusters {
    /// Centers on a seeded regular simplex when `k ≤ dim` (random orthonormal
    /// directions, so every pair is equally far apart), otherwise random
    /// Gaussian points. Either way the set is scaled so the nearest pair of
    /// centers sits exactly `separation × spread` apart (or 1.0 apart when
    /// the spread is zero).
    pub fn new(k: usize, dim: usize, spread: f64, separation: f64, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Invalid(format!("need at least 2 clusters, got {k}")));
        }
        if dim < 2 {
            return Err(Error::Invalid(format!("dimension must be at least 2, got {dim}")));
        }
        if !(spread >= 0.0) || !(separation > 0.0) {
            return Err(Error::Invalid("spread must be >= 0 and separation > 0".into()));
        }
        let mut r = rng::derive(seed, &[rng::tag::DATA, 0]);
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        while centers.len() < k {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            if k <= dim {
                for c in &centers {
                    let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
                }
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm < 1e-6 {
                    continue;
                }
                v.iter_mut().for_each(|a| *a /= norm);
            }
            centers.push(v);
        }
        let mut nearest = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                let d = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                nearest = nearest.min(d);
            }
        }
        let wanted = if spread > 0.0 { separation * spread } else { 1.0 };
        let scale = wanted / nearest;
        centers.iter_mut().flatten().for_each(|a| *a *= scale);
        Ok(Self { centers, spread })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// `per_cluster` samples from each cluster, cluster-major order.
    pub fn sample(&self, per_cluster: usize, seed: u64, stream: u64) -> Result<LabeledDataset> {
        if per_cluster == 0 {
            return Err(Error::Invalid("need at least one sample per cluster".into()));
        }
        let mut r = rng::derive(seed, &[rng::tag::DATA, 1, stream]);
        let (k, dim) = (self.k(), self.dim());
        let mut features = Vec::with_capacity(k * per_cluster * dim);
        let mut labels = Vec::with_capacity(k * per_cluster);
        for (c, center) in self.centers.iter().enumerate() {
            for _ in 0..per_cluster {
                for &mu in center {
                    let z: f64 = StandardNormal.sample(&mut r);
                    features.push(mu + self.spread * z);
                }
                labels.push(c);
            }
        }
        LabeledDataset::new(Tensor::matrix(k * per_cluster, dim, features)?, labels, k)
    }
}

/// `k` Gaussian clusters of `per_cluster_n` samples each, nearest centers
/// [`DEFAULT_SEPARATION`]` × spread` apart.
pub fn gen_gaussian_clusters(k: usize, per_cluster_n: usize, dim: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    GaussianClusters::new(k, dim, spread, DEFAULT_SEPARATION, seed)?.sample(per_cluster_n, seed, 0)
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, r: &mut rng::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(r);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_class() -> LabeledDataset {
        let f = Tensor::matrix(6, 2, vec![0.0; 12]).unwrap();
        LabeledDataset::new(f, vec![0, 1, 2, 2, 1, 2], 3).unwrap()
    }

    #[test]
    fn identity_partition_matches_label_counts() {
        let ds = three_class();
        let p = partition_by_label(&ds, &LabelMapping::identity(3)).unwrap();
        let sizes: Vec<usize> = p.subsets().iter().map(Vec::len).collect();
        assert_eq!(sizes, ds.class_counts());
    }

    #[test]
    fn many_to_one_mapping() {
        let ds = three_class();
        let m = LabelMapping([(0, 0), (1, 0), (2, 1)].into_iter().collect());
        let p = partition_by_label(&ds, &m).unwrap();
        assert_eq!(p.subset(0), &[0, 1, 4]);
        assert_eq!(p.subset(1), &[2, 3, 5]);
    }

    #[test]
    fn unmapped_label_and_empty_subset_are_errors() {
        let ds = three_class();
        let m = LabelMapping([(0, 0), (1, 0)].into_iter().collect());
        assert!(matches!(partition_by_label(&ds, &m), Err(Error::UnmappedLabel(2))));
        let m = LabelMapping([(0, 0), (1, 0), (2, 0), (7, 3)].into_iter().collect());
        assert!(matches!(partition_by_label(&ds, &m), Err(Error::EmptySubset(3))));
    }

    #[test]
    fn mapping_json_round_trip() {
        let m = LabelMapping([(0, 2), (10, 1), (3, 2)].into_iter().collect());
        assert_eq!(LabelMapping::from_json(&m.to_json().unwrap()).unwrap(), m);
        assert!(LabelMapping::from_json(r#"{"a": 1}"#).is_err());
    }

    #[test]
    fn zero_spread_collapses_to_centers() {
        let g = GaussianClusters::new(3, 4, 0.0, 4.0, 1).unwrap();
        let ds = g.sample(5, 1, 0).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features.row(i), &g.centers[ds.labels[i]][..]);
        }
    }

    #[test]
    fn one_sample_per_cluster() {
        let ds = gen_gaussian_clusters(4, 1, 3, 0.5, 2).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(gen_gaussian_clusters(4, 1, 1, 0.5, 2).is_err());
    }

    #[test]
    fn centers_respect_separation() {
        for (k, dim) in [(4, 8), (6, 2)] {
            let g = GaussianClusters::new(k, dim, 0.7, 4.0, 3).unwrap();
            let mut nearest = f64::INFINITY;
            for i in 0..k {
                for j in i + 1..k {
                    let d: f64 = g.centers[i].iter().zip(&g.centers[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    nearest = nearest.min(d.sqrt());
                }
            }
            assert!((nearest - 2.8).abs() < 1e-9, "{nearest}");
        }
    }

    #[test]
    fn nearest_centroid_oracle_separates_two_clusters() {
        let ds = gen_gaussian_clusters(2, 500, 2, 1.0, 4).unwrap();
        let g = GaussianClusters::new(2, 2, 1.0, DEFAULT_SEPARATION, 4).unwrap();
        let correct = (0..ds.len())
            .filter(|&i| {
                let x = ds.features.row(i);
                let d = |c: &[f64]| -> f64 { x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum() };
                let guess = if d(&g.centers[0]) <= d(&g.centers[1]) { 0 } else { 1 };
                guess == ds.labels[i]
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 >= 0.99, "{correct}");
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_gaussian_clusters(3, 4, 2, 0.3, 9).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = LabeledDataset::read_csv(&buf[..], Some(3)).unwrap();
        assert_eq!(back, ds);
    }
}
