//! Routed one-vs-rest evaluation and parameter accounting.
//!
//! Every subnetwork is scored as a binary detector over the whole test set:
//! it predicts "belongs to my subset" when its logit is above zero.
//! Precision and recall are per-detector, then macro-averaged.

use serde::{Deserialize, Serialize};

use crate::data::{LabelMapping, LabeledDataset};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskSet};
use crate::network::{predict, ParamSet};
use crate::tensor::{Activation, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl BinaryConfusion {
    /// Tallies `score > threshold` against the truth flags.
    pub fn tally(scores: &[f64], truth: &[bool], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&s, &t) in scores.iter().zip(truth) {
            match (s > threshold, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn true_positive_rate(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn true_negative_rate(&self) -> Option<f64> {
        Self::ratio(self.tn, self.tn + self.fp)
    }

    /// Mean of the defined rates; with one class absent only the other
    /// rate counts.
    pub fn balanced_accuracy(&self) -> f64 {
        match (self.true_positive_rate(), self.true_negative_rate()) {
            (Some(a), Some(b)) => (a + b) / 2.0,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => 0.0,
        }
    }

    /// Zero when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp).unwrap_or(0.0)
    }

    /// Zero when the subset has no positives.
    pub fn recall(&self) -> f64 {
        self.true_positive_rate().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub subset_id: usize,
    pub confusion: BinaryConfusion,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Surviving parameter counts. `reported` is the footprint a method pays
/// for: the union of its masks plus dense parameters, summed over
/// separately stored networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub per_mask: Vec<usize>,
    pub union: usize,
    pub dense: usize,
    pub reported: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subsets: Vec<SubsetMetrics>,
    pub macro_balanced_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub params: ParamCounts,
}

/// Per-mask and union popcounts over a shared backbone.
pub fn count_params(masks: &MaskSet, dense: usize) -> Result<ParamCounts> {
    let per_mask: Vec<usize> = masks.masks().iter().map(BinaryMask::count_ones).collect();
    let mut union = masks.mask(0).clone();
    for m in &masks.masks()[1..] {
        union = union.union(m)?;
    }
    let union = union.count_ones();
    Ok(ParamCounts {
        per_mask,
        union,
        dense,
        reported: union + dense,
    })
}

/// How a method turns inputs into one score column per subset.
pub enum Detectors<'a> {
    /// One shared network; subnetwork `k` is the network through mask `k`,
    /// read at its single logit.
    Routed { params: &'a ParamSet, masks: &'a MaskSet },
    /// One network through one mask with a logit per subset.
    SharedHead {
        params: &'a ParamSet,
        mask: &'a BinaryMask,
        subset_ids: &'a [usize],
    },
    /// A separate network per subset, each through its own mask.
    Independent { params: &'a [ParamSet], masks: &'a MaskSet },
}

impl Detectors<'_> {
    pub fn subset_ids(&self) -> &[usize] {
        match self {
            Detectors::Routed { masks, .. } | Detectors::Independent { masks, .. } => masks.subset_ids(),
            Detectors::SharedHead { subset_ids, .. } => subset_ids,
        }
    }

    /// `scores[k][i]`: logit of detector `k` on sample `i`.
    pub fn scores(&self, inputs: &Tensor, activation: Activation) -> Result<Vec<Vec<f64>>> {
        let column = |out: &Tensor, c: usize| (0..out.rows()).map(|i| out.row(i)[c]).collect::<Vec<f64>>();
        match self {
            Detectors::Routed { params, masks } => masks
                .masks()
                .iter()
                .map(|m| Ok(column(&predict(params, m, inputs, activation)?, 0)))
                .collect(),
            Detectors::SharedHead {
                params,
                mask,
                subset_ids,
            } => {
                if params.output_dim() != subset_ids.len() {
                    return Err(Error::Shape(format!(
                        "head has {} logits for {} subsets",
                        params.output_dim(),
                        subset_ids.len()
                    )));
                }
                let out = predict(params, mask, inputs, activation)?;
                Ok((0..subset_ids.len()).map(|k| column(&out, k)).collect())
            }
            Detectors::Independent { params, masks } => {
                if params.len() != masks.len() {
                    return Err(Error::Shape(format!("{} networks for {} masks", params.len(), masks.len())));
                }
                params
                    .iter()
                    .zip(masks.masks())
                    .map(|(p, m)| Ok(column(&predict(p, m, inputs, activation)?, 0)))
                    .collect()
            }
        }
    }

    pub fn param_counts(&self) -> Result<ParamCounts> {
        match self {
            Detectors::Routed { params, masks } => count_params(masks, params.total_dense()),
            Detectors::SharedHead { params, mask, .. } => {
                let n = mask.count_ones();
                Ok(ParamCounts {
                    per_mask: vec![n],
                    union: n,
                    dense: params.total_dense(),
                    reported: n + params.total_dense(),
                })
            }
            Detectors::Independent { params, masks } => {
                let mut counts = count_params(masks, params.iter().map(ParamSet::total_dense).sum())?;
                counts.reported = counts.per_mask.iter().sum::<usize>() + counts.dense;
                Ok(counts)
            }
        }
    }
}

/// Scores every detector on `test` and tallies one-vs-rest metrics,
/// routing each detector to the subset with its id.
pub fn evaluate(
    detectors: &Detectors,
    test: &LabeledDataset,
    mapping: &LabelMapping,
    activation: Activation,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let truth_ids: Vec<usize> = test.labels.iter().map(|&l| mapping.get(l)).collect::<Result<_>>()?;
    let ids = detectors.subset_ids();
    for &id in &mapping.subset_ids() {
        if !ids.contains(&id) {
            return Err(Error::UnroutedSubset(id));
        }
    }
    let scores = detectors.scores(&test.features, activation)?;
    let subsets: Vec<SubsetMetrics> = ids
        .iter()
        .zip(&scores)
        .map(|(&id, s)| {
            let truth: Vec<bool> = truth_ids.iter().map(|&t| t == id).collect();
            let confusion = BinaryConfusion::tally(s, &truth, 0.0);
            SubsetMetrics {
                subset_id: id,
                confusion,
                balanced_accuracy: confusion.balanced_accuracy(),
                precision: confusion.precision(),
                recall: confusion.recall(),
            }
        })
        .collect();
    let mean = |f: fn(&SubsetMetrics) -> f64| subsets.iter().map(f).sum::<f64>() / subsets.len() as f64;
    Ok(MetricsReport {
        macro_balanced_accuracy: mean(|m| m.balanced_accuracy),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        params: detectors.param_counts()?,
        subsets,
    })
}

/// Routed evaluation of a shared network and its subset masks.
pub fn evaluate_routed(
    params: &ParamSet,
    masks: &MaskSet,
    test: &LabeledDataset,
    mapping: &LabelMapping,
    activation: Activation,
) -> Result<MetricsReport> {
    evaluate(&Detectors::Routed { params, masks }, test, mapping, activation)
}

/// One row of the method comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub sparsity: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub params: usize,
}

impl TableRow {
    pub fn new(method: &str, sparsity: f64, report: &MetricsReport) -> Self {
        Self {
            method: method.to_string(),
            sparsity,
            balanced_accuracy: report.macro_balanced_accuracy,
            precision: report.macro_precision,
            recall: report.macro_recall,
            params: report.params.reported,
        }
    }
}
