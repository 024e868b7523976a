//! Mask overlap diagnostics.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskSet};

/// `|a ∩ b| / |a ∪ b|`; two empty masks count as identical.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.layer_shapes() != b.layer_shapes() {
        return Err(Error::Shape(format!(
            "masks over {:?} and {:?}",
            a.layer_shapes(),
            b.layer_shapes()
        )));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        let (i, u) = word_counts(la.words(), lb.words());
        inter += i;
        union += u;
    }
    Ok(ratio(inter, union))
}

fn word_counts(a: &[u64], b: &[u64]) -> (u64, u64) {
    a.iter().zip(b).fold((0, 0), |(i, u), (x, y)| {
        (i + u64::from((x & y).count_ones()), u + u64::from((x | y).count_ones()))
    })
}

fn ratio(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Global,
    Layer(usize),
}

impl Scope {
    pub fn label(self) -> String {
        match self {
            Scope::Global => "global".into(),
            Scope::Layer(l) => format!("layer{l}"),
        }
    }
}

/// Pairwise Jaccard of all masks in a set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub scope: Scope,
    pub subset_ids: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Strictly-upper-triangle entries in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let k = self.len();
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| self.values[i][j]).collect()
    }

    /// Mean similarity of subset `k` to every other subset; 1.0 when alone.
    pub fn mean_to_others(&self, k: usize) -> f64 {
        let n = self.len();
        if n < 2 {
            return 1.0;
        }
        (0..n).filter(|&j| j != k).map(|j| self.values[k][j]).sum::<f64>() / (n - 1) as f64
    }

    /// Mean over all off-diagonal pairs; 1.0 for a single mask.
    pub fn mean_pairwise(&self) -> f64 {
        let tri = self.upper_triangle();
        if tri.is_empty() {
            1.0
        } else {
            tri.iter().sum::<f64>() / tri.len() as f64
        }
    }

    /// Header row of subset ids, then one row per subset.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.subset_ids.iter().map(usize::to_string))?;
        for row in &self.values {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

pub fn similarity_matrix(masks: &MaskSet, scope: Scope) -> Result<SimilarityMatrix> {
    let layers = masks.layer_shapes().len();
    if let Scope::Layer(l) = scope {
        if l >= layers {
            return Err(Error::Invalid(format!("layer {l} out of range for {layers} layers")));
        }
    }
    let k = masks.len();
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let v = match scope {
                Scope::Global => jaccard(masks.mask(i), masks.mask(j))?,
                Scope::Layer(l) => {
                    let (inter, union) = word_counts(masks.mask(i).layer(l).words(), masks.mask(j).layer(l).words());
                    ratio(inter, union)
                }
            };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(SimilarityMatrix {
        scope,
        subset_ids: masks.subset_ids().to_vec(),
        values,
    })
}

/// Mean pairwise similarity at each sparsity level. Carries no labels or
/// accuracy, so collapse detection cannot peek at them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTrace {
    pub sparsity: Vec<f64>,
    pub mean_jaccard: Vec<f64>,
}

impl SimilarityTrace {
    /// Builds the trace from mask sets at increasing sparsity.
    pub fn from_levels(levels: &[(f64, MaskSet)], scope: Scope) -> Result<Self> {
        let mut sparsity = Vec::with_capacity(levels.len());
        let mut mean_jaccard = Vec::with_capacity(levels.len());
        for (s, masks) in levels {
            if sparsity.last().is_some_and(|&prev| *s <= prev) {
                return Err(Error::Invalid("sparsity levels must be strictly increasing".into()));
            }
            sparsity.push(*s);
            mean_jaccard.push(similarity_matrix(masks, scope)?.mean_pairwise());
        }
        Ok(Self { sparsity, mean_jaccard })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum CollapseRule {
    /// Flag the level reached by a rise in mean similarity larger than `tau`.
    Spike { tau: f64 },
    /// Flag the first level whose mean similarity falls below `floor`.
    Floor { floor: f64 },
}

impl Default for CollapseRule {
    fn default() -> Self {
        CollapseRule::Spike { tau: 0.15 }
    }
}

/// First flagged sparsity level, or `None`. Needs at least three levels.
pub fn detect_collapse(trace: &SimilarityTrace, rule: CollapseRule) -> Option<f64> {
    let j = &trace.mean_jaccard;
    if j.len() < 3 || trace.sparsity.len() != j.len() {
        return None;
    }
    match rule {
        CollapseRule::Spike { tau } => (1..j.len()).find(|&i| j[i] - j[i - 1] > tau),
        CollapseRule::Floor { floor } => (0..j.len()).find(|&i| j[i] < floor),
    }
    .map(|i| trace.sparsity[i])
}

/// One row of a collapse curve: a subset's task metric and its mean
/// similarity to the other subsets at one sparsity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub sparsity: f64,
    pub subset_id: usize,
    pub metric: f64,
    pub mean_jaccard: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapseCurve {
    pub points: Vec<CollapsePoint>,
}

impl CollapseCurve {
    /// `metrics[level][k]` is subset `k`'s metric at that level.
    pub fn build(levels: &[(f64, MaskSet)], metrics: &[Vec<f64>]) -> Result<Self> {
        if metrics.len() != levels.len() {
            return Err(Error::Shape(format!("{} metric rows for {} levels", metrics.len(), levels.len())));
        }
        let mut points = Vec::new();
        for ((s, masks), row) in levels.iter().zip(metrics) {
            if row.len() != masks.len() {
                return Err(Error::Shape(format!("{} metrics for {} subsets", row.len(), masks.len())));
            }
            if points.last().is_some_and(|p: &CollapsePoint| *s <= p.sparsity) {
                return Err(Error::Invalid("sparsity levels must be strictly increasing".into()));
            }
            let sim = similarity_matrix(masks, Scope::Global)?;
            for (k, &metric) in row.iter().enumerate() {
                points.push(CollapsePoint {
                    sparsity: *s,
                    subset_id: masks.subset_ids()[k],
                    metric,
                    mean_jaccard: sim.mean_to_others(k),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        crate::io::csv_bytes(&self.points)
    }
}

/// Ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation. `None` when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Invalid(format!(
            "spearman needs two equal-length lists of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Externally supplied pairwise similarity between subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticMatrix {
    pub subset_ids: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl SemanticMatrix {
    pub fn new(subset_ids: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        let k = subset_ids.len();
        if values.len() != k || values.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("semantic matrix is not {k}x{k}")));
        }
        for i in 0..k {
            for j in 0..k {
                let v = values[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invalid(format!("semantic similarity {v} outside [0, 1]")));
                }
                if v != values[j][i] {
                    return Err(Error::Invalid(format!("semantic matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { subset_ids, values })
    }

    /// Header row of subset ids followed by the symmetric body.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let bad = |detail: String| Error::Format {
            what: "semantic matrix",
            detail,
        };
        let ids = r
            .headers()?
            .iter()
            .map(|h| h.trim().parse::<usize>().map_err(|_| bad(format!("subset id {h:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::new();
        for rec in r.records() {
            values.push(
                rec?.iter()
                    .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("value {v:?}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Self::new(ids, values)
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let k = self.subset_ids.len();
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| self.values[i][j]).collect()
    }
}

fn aligned(masks: &MaskSet, semantic: &SemanticMatrix, scope: Scope) -> Result<SimilarityMatrix> {
    if masks.subset_ids() != semantic.subset_ids.as_slice() {
        return Err(Error::Shape(format!(
            "masks cover subsets {:?} but the semantic matrix covers {:?}",
            masks.subset_ids(),
            semantic.subset_ids
        )));
    }
    similarity_matrix(masks, scope)
}

/// Rank correlation between mask similarity and semantic similarity over
/// all distinct subset pairs. Needs at least three subsets.
pub fn semantic_alignment(masks: &MaskSet, semantic: &SemanticMatrix, scope: Scope) -> Result<Option<f64>> {
    if masks.len() < 3 {
        return Err(Error::Invalid(format!("alignment needs at least 3 subsets, got {}", masks.len())));
    }
    let sim = aligned(masks, semantic, scope)?;
    spearman(&sim.upper_triangle(), &semantic.upper_triangle())
}

/// The same correlation restricted to one subset's row (its pairs with
/// every other subset).
pub fn row_alignment(masks: &MaskSet, semantic: &SemanticMatrix, scope: Scope, row: usize) -> Result<Option<f64>> {
    let sim = aligned(masks, semantic, scope)?;
    if row >= sim.len() {
        return Err(Error::Invalid(format!("row {row} out of range")));
    }
    let others: Vec<usize> = (0..sim.len()).filter(|&j| j != row).collect();
    let a: Vec<f64> = others.iter().map(|&j| sim.values[row][j]).collect();
    let b: Vec<f64> = others.iter().map(|&j| semantic.values[row][j]).collect();
    spearman(&a, &b)
}

/// Scope label to correlation, for the alignment summary file.
pub fn alignment_summary(
    masks: &MaskSet,
    semantic: &SemanticMatrix,
    scopes: &[Scope],
) -> Result<BTreeMap<String, Option<f64>>> {
    scopes
        .iter()
        .map(|&s| Ok((s.label(), semantic_alignment(masks, semantic, s)?)))
        .collect()
}
