//! Binary masks over prunable weights, magnitude pruning, rewinding and
//! sparsity accounting.
//!
//! Only weight matrices carry mask bits. Biases are always dense.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ParamSet;

/// Bit array for one weight matrix, packed into 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayerBits {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl LayerBits {
    fn filled(rows: usize, cols: usize, on: bool) -> Self {
        let len = rows * cols;
        let mut words = vec![if on { u64::MAX } else { 0 }; len.div_ceil(64)];
        if on && !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        Self { rows, cols, words }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, on: bool) {
        let bit = 1u64 << (i % 64);
        if on {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// One bit per prunable weight, 1 = kept.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    layers: Vec<LayerBits>,
}

impl BinaryMask {
    /// All-ones mask for the given `(out_dim, in_dim)` layer shapes.
    pub fn ones(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| LayerBits::filled(r, c, true)).collect(),
        }
    }

    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| LayerBits::filled(r, c, false)).collect(),
        }
    }

    pub fn ones_like(params: &ParamSet) -> Self {
        Self::ones(&params.layer_shapes())
    }

    /// Builds a mask from per-layer boolean arrays.
    pub fn from_bools(shapes: &[(usize, usize)], bits: &[Vec<bool>]) -> Result<Self> {
        if shapes.len() != bits.len() {
            return Err(Error::Shape(format!(
                "{} layer shapes but {} bit arrays",
                shapes.len(),
                bits.len()
            )));
        }
        let mut mask = Self::zeros(shapes);
        for (l, (layer, src)) in mask.layers.iter_mut().zip(bits).enumerate() {
            if layer.len() != src.len() {
                return Err(Error::LayerShape {
                    layer: l,
                    expected: format!("{} bits", layer.len()),
                    actual: format!("{} bits", src.len()),
                });
            }
            for (i, &b) in src.iter().enumerate() {
                layer.set(i, b);
            }
        }
        Ok(mask)
    }

    pub fn layers(&self) -> &[LayerBits] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerBits {
        &self.layers[l]
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(LayerBits::shape).collect()
    }

    pub fn get(&self, layer: usize, i: usize) -> bool {
        self.layers[layer].get(i)
    }

    pub fn set(&mut self, layer: usize, i: usize, on: bool) {
        self.layers[layer].set(i, on);
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(LayerBits::len).sum()
    }

    pub fn count_ones(&self) -> usize {
        self.layers.iter().map(LayerBits::count_ones).sum()
    }

    pub fn to_bools(&self) -> Vec<Vec<bool>> {
        self.layers.iter().map(|l| l.iter().collect()).collect()
    }

    /// Bitwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.shape() == b.shape() && a.words.iter().zip(&b.words).all(|(x, y)| x & !y == 0))
    }

    pub fn check_congruent(&self, params: &ParamSet) -> Result<()> {
        let shapes = params.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "mask has {} layers, parameters have {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (l, (bits, shape)) in self.layers.iter().zip(shapes).enumerate() {
            if bits.shape() != shape {
                return Err(Error::LayerShape {
                    layer: l,
                    expected: format!("{}x{}", shape.0, shape.1),
                    actual: format!("{}x{}", bits.rows, bits.cols),
                });
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.layer_shapes() != other.layer_shapes() {
            return Err(Error::Shape(format!(
                "masks have layer shapes {:?} and {:?}",
                self.layer_shapes(),
                other.layer_shapes()
            )));
        }
        Ok(())
    }

    /// Bitwise OR with another mask of the same shape.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_shape(other)?;
        Ok(self.zip_words(other, |a, b| a | b))
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_shape(other)?;
        Ok(self.zip_words(other, |a, b| a & b))
    }

    fn zip_words(&self, other: &BinaryMask, f: impl Fn(u64, u64) -> u64) -> BinaryMask {
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| LayerBits {
                rows: a.rows,
                cols: a.cols,
                words: a.words.iter().zip(&b.words).map(|(&x, &y)| f(x, y)).collect(),
            })
            .collect();
        BinaryMask { layers }
    }
}

/// Fraction of prunable weights kept.
pub fn density(mask: &BinaryMask) -> f64 {
    let total = mask.total();
    if total == 0 {
        return 1.0;
    }
    mask.count_ones() as f64 / total as f64
}

/// Fraction of prunable weights removed.
pub fn sparsity_of(mask: &BinaryMask) -> f64 {
    1.0 - density(mask)
}

/// Clears the `amount` smallest-magnitude surviving weights, ranked globally
/// across layers.
///
/// Ties are broken by `(layer index, flat index)`, so the result is fully
/// deterministic. Previously pruned weights are never revived.
pub fn magnitude_prune(params: &ParamSet, mask: &BinaryMask, amount: usize) -> Result<BinaryMask> {
    mask.check_congruent(params)?;
    let survivors = mask.count_ones();
    if amount > survivors {
        return Err(Error::PruneExceedsSurvivors {
            requested: amount,
            available: survivors,
        });
    }
    let mut pruned = mask.clone();
    if amount == 0 {
        return Ok(pruned);
    }

    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(survivors);
    for (l, layer) in params.layers().iter().enumerate() {
        let bits = mask.layer(l);
        for (i, w) in layer.weight.iter().enumerate() {
            if bits.get(i) {
                candidates.push((w.abs(), l, i));
            }
        }
    }
    let key = |a: &(f64, usize, usize), b: &(f64, usize, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    if amount < candidates.len() {
        candidates.select_nth_unstable_by(amount - 1, key);
    }
    for &(_, l, i) in &candidates[..amount] {
        pruned.set(l, i, false);
    }
    Ok(pruned)
}

/// Resets parameters to their initial snapshot. Masks are applied at use
/// time, so the snapshot is returned unchanged.
pub fn rewind(params: &ParamSet, init: &ParamSet) -> Result<ParamSet> {
    params.check_congruent(init)?;
    Ok(init.clone())
}

/// How many weights to remove per round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum PruneMode {
    /// Remove `⌈p · survivors⌉` each round.
    Fraction(f64),
    /// Remove a fixed number of weights each round.
    Count(usize),
}

/// Per-round pruning amounts up to a target sparsity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    #[serde(flatten)]
    pub mode: PruneMode,
    /// Fraction of prunable weights removed at the end, in `[0, 1)`.
    pub target_sparsity: f64,
    /// Intermediate sparsity levels the schedule must land on exactly.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<f64>,
}

impl PruneSchedule {
    pub fn fraction(p: f64, target_sparsity: f64) -> Result<Self> {
        Self {
            mode: PruneMode::Fraction(p),
            target_sparsity,
            checkpoints: Vec::new(),
        }
        .validated()
    }

    pub fn count(c: usize, target_sparsity: f64) -> Result<Self> {
        Self {
            mode: PruneMode::Count(c),
            target_sparsity,
            checkpoints: Vec::new(),
        }
        .validated()
    }

    pub fn with_target(mut self, target_sparsity: f64) -> Result<Self> {
        self.target_sparsity = target_sparsity;
        self.validated()
    }

    /// Adds checkpoint levels (each below the target) where the schedule
    /// pauses exactly.
    pub fn with_checkpoints(mut self, mut levels: Vec<f64>) -> Result<Self> {
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        self.checkpoints = levels;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        match self.mode {
            PruneMode::Fraction(p) if !(p > 0.0 && p < 1.0) => {
                return Err(Error::Invalid(format!("pruning fraction {p} outside (0, 1)")));
            }
            PruneMode::Count(0) => {
                return Err(Error::Invalid("pruning count must be at least 1".into()));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(Error::Invalid(format!(
                "target sparsity {} outside [0, 1)",
                self.target_sparsity
            )));
        }
        if let Some(c) = self
            .checkpoints
            .iter()
            .find(|&&c| !(c > 0.0 && c <= self.target_sparsity))
        {
            return Err(Error::Invalid(format!(
                "checkpoint {c} outside (0, {}]",
                self.target_sparsity
            )));
        }
        Ok(self)
    }

    /// Number of weights removed once `fraction` sparsity is reached.
    pub fn removed_at(fraction: f64, total: usize) -> usize {
        // The epsilon keeps exactly representable products such as 0.75 * 1312
        // from rounding up one weight too far.
        ((fraction * total as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn target_removed(&self, total: usize) -> usize {
        Self::removed_at(self.target_sparsity, total).min(total)
    }

    /// Weight counts at which checkpoints are reached, ascending.
    pub fn checkpoint_removals(&self, total: usize) -> Vec<usize> {
        self.checkpoints
            .iter()
            .map(|&c| Self::removed_at(c, total))
            .collect()
    }

    /// Amount to prune in the next round given how many weights are
    /// already gone. Never overshoots the next checkpoint or the target.
    pub fn next_amount(&self, removed: usize, total: usize) -> usize {
        let target = self.target_removed(total);
        if removed >= target {
            return 0;
        }
        let survivors = total - removed;
        let raw = match self.mode {
            PruneMode::Fraction(p) => (p * survivors as f64).ceil() as usize,
            PruneMode::Count(c) => c,
        };
        let stop = self
            .checkpoint_removals(total)
            .into_iter()
            .find(|&c| c > removed)
            .unwrap_or(target)
            .min(target);
        raw.max(1).min(stop - removed)
    }

    /// Number of pruning rounds needed to reach the target.
    pub fn rounds(&self, total: usize) -> usize {
        let mut removed = 0;
        let mut rounds = 0;
        loop {
            let a = self.next_amount(removed, total);
            if a == 0 {
                return rounds;
            }
            removed += a;
            rounds += 1;
        }
    }
}

/// K masks over one shared backbone, one per data subset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskSet {
    subset_ids: Vec<usize>,
    masks: Vec<BinaryMask>,
}

pub const MASKSET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MaskSetDoc {
    version: u32,
    layer_shapes: Vec<[usize; 2]>,
    subset_ids: Vec<usize>,
    masks: Vec<Vec<Vec<u8>>>,
}

impl MaskSet {
    pub fn new(subset_ids: Vec<usize>, masks: Vec<BinaryMask>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::Invalid("a mask set needs at least one mask".into()));
        }
        if subset_ids.len() != masks.len() {
            return Err(Error::Invalid(format!(
                "{} subset ids for {} masks",
                subset_ids.len(),
                masks.len()
            )));
        }
        let shapes = masks[0].layer_shapes();
        if let Some(k) = masks.iter().position(|m| m.layer_shapes() != shapes) {
            return Err(Error::Shape(format!("mask {k} differs in shape from mask 0")));
        }
        Ok(Self { subset_ids, masks })
    }

    /// `k` all-ones masks.
    pub fn ones(subset_ids: Vec<usize>, shapes: &[(usize, usize)]) -> Result<Self> {
        let masks = subset_ids.iter().map(|_| BinaryMask::ones(shapes)).collect();
        Self::new(subset_ids, masks)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn subset_ids(&self) -> &[usize] {
        &self.subset_ids
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn mask(&self, k: usize) -> &BinaryMask {
        &self.masks[k]
    }

    /// Mask routed to the given subset id.
    pub fn for_subset(&self, id: usize) -> Result<&BinaryMask> {
        self.subset_ids
            .iter()
            .position(|&s| s == id)
            .map(|k| &self.masks[k])
            .ok_or(Error::UnroutedSubset(id))
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.masks[0].layer_shapes()
    }

    pub fn check_congruent(&self, params: &ParamSet) -> Result<()> {
        self.masks[0].check_congruent(params)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MaskSetDoc {
            version: MASKSET_VERSION,
            layer_shapes: self.layer_shapes().into_iter().map(|(r, c)| [r, c]).collect(),
            subset_ids: self.subset_ids.clone(),
            masks: self
                .masks
                .iter()
                .map(|m| {
                    m.layers()
                        .iter()
                        .map(|l| l.iter().map(u8::from).collect())
                        .collect()
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MaskSetDoc = serde_json::from_str(text)?;
        if doc.version != MASKSET_VERSION {
            return Err(Error::Version {
                what: "mask set",
                found: doc.version,
                expected: MASKSET_VERSION,
            });
        }
        let shapes: Vec<(usize, usize)> = doc.layer_shapes.iter().map(|s| (s[0], s[1])).collect();
        let masks = doc
            .masks
            .iter()
            .map(|layers| {
                let mut bools = Vec::with_capacity(layers.len());
                for layer in layers {
                    let mut row = Vec::with_capacity(layer.len());
                    for &b in layer {
                        match b {
                            0 => row.push(false),
                            1 => row.push(true),
                            other => {
                                return Err(Error::Format {
                                    what: "mask set",
                                    detail: format!("mask bit {other} is not 0 or 1"),
                                })
                            }
                        }
                    }
                    bools.push(row);
                }
                BinaryMask::from_bools(&shapes, &bools)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.subset_ids, masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Layer, ParamSet};

    fn flat_params(weights: &[f64]) -> ParamSet {
        ParamSet::new(vec![Layer::new(1, weights.len(), weights.to_vec(), vec![0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn density_and_sparsity_examples() {
        let all = BinaryMask::ones(&[(10, 10)]);
        assert_eq!(density(&all), 1.0);
        assert_eq!(sparsity_of(&all), 0.0);
        assert_eq!(density(&BinaryMask::zeros(&[(10, 10)])), 0.0);

        let mut m = BinaryMask::zeros(&[(8, 19)]);
        for i in 0..38 {
            m.set(0, i * 3, true);
        }
        assert_eq!(density(&m), 0.25);
        assert_eq!(sparsity_of(&m), 0.75);
    }

    #[test]
    fn prune_smallest_magnitudes() {
        let p = flat_params(&[0.5, -0.1, 0.9, 0.2]);
        let m = magnitude_prune(&p, &BinaryMask::ones_like(&p), 2).unwrap();
        assert_eq!(m.to_bools()[0], vec![true, false, true, false]);
    }

    #[test]
    fn prune_zero_is_identity() {
        let p = flat_params(&[0.5, -0.1, 0.9, 0.2]);
        let ones = BinaryMask::ones_like(&p);
        assert_eq!(magnitude_prune(&p, &ones, 0).unwrap(), ones);
    }

    #[test]
    fn ties_prune_lower_flat_index() {
        let p = flat_params(&[0.3, 0.3]);
        let m = magnitude_prune(&p, &BinaryMask::ones_like(&p), 1).unwrap();
        assert_eq!(m.to_bools()[0], vec![false, true]);
    }

    #[test]
    fn prune_more_than_survivors_fails() {
        let p = flat_params(&[0.3, 0.3]);
        let mut m = BinaryMask::ones_like(&p);
        m.set(0, 0, false);
        assert!(matches!(
            magnitude_prune(&p, &m, 2),
            Err(Error::PruneExceedsSurvivors { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn previously_pruned_bits_stay_pruned() {
        // The pruned weight is the largest; it must not come back.
        let p = flat_params(&[9.0, 0.1, 0.2, 0.3]);
        let mut m = BinaryMask::ones_like(&p);
        m.set(0, 0, false);
        let next = magnitude_prune(&p, &m, 1).unwrap();
        assert_eq!(next.to_bools()[0], vec![false, false, true, true]);
        assert!(next.is_subset_of(&m));
    }

    #[test]
    fn rewind_returns_init() {
        let init = ParamSet::kaiming_normal(&[3, 4, 2], 5);
        let trained = ParamSet::kaiming_normal(&[3, 4, 2], 6);
        assert_eq!(rewind(&trained, &init).unwrap(), init);
        assert_eq!(rewind(&init, &init).unwrap(), init);
        let other = ParamSet::kaiming_normal(&[3, 5, 2], 6);
        assert!(rewind(&other, &init).is_err());
    }

    #[test]
    fn schedule_lands_exactly_on_target_and_checkpoints() {
        let s = PruneSchedule::fraction(0.2, 0.75)
            .unwrap()
            .with_checkpoints(vec![0.5])
            .unwrap();
        let total = 1312;
        let mut removed = 0;
        let mut seen = Vec::new();
        loop {
            let a = s.next_amount(removed, total);
            if a == 0 {
                break;
            }
            removed += a;
            seen.push(removed);
        }
        assert_eq!(removed, 984);
        assert!(seen.contains(&656));
        assert_eq!(s.rounds(total), seen.len());

        let c = PruneSchedule::count(64, 0.5).unwrap();
        assert_eq!(c.target_removed(4256), 2128);
        assert_eq!(c.rounds(4256), 34);
    }

    #[test]
    fn schedule_validation() {
        assert!(PruneSchedule::fraction(0.0, 0.5).is_err());
        assert!(PruneSchedule::fraction(1.0, 0.5).is_err());
        assert!(PruneSchedule::count(0, 0.5).is_err());
        assert!(PruneSchedule::count(3, 1.0).is_err());
        assert!(PruneSchedule::count(3, 0.0).is_ok());
        assert_eq!(PruneSchedule::count(3, 0.0).unwrap().rounds(100), 0);
    }

    #[test]
    fn paper_accounting_convention() {
        // A 126K-prunable backbone at 25% sparsity keeps about 94K weights.
        let s = PruneSchedule::count(4096, 0.25).unwrap();
        let kept = 126_000 - s.target_removed(126_000);
        assert_eq!(kept, 94_500);
    }

    #[test]
    fn maskset_json_rejects_bad_versions_and_bits() {
        let set = MaskSet::ones(vec![0, 1], &[(2, 3)]).unwrap();
        let json = set.to_json().unwrap();
        assert_eq!(MaskSet::from_json(&json).unwrap(), set);
        let bumped = json.replace("\"version\":1", "\"version\":9");
        assert!(matches!(MaskSet::from_json(&bumped), Err(Error::Version { found: 9, .. })));
        let bad_bit = json.replacen("[1,", "[2,", 1);
        assert!(MaskSet::from_json(&bad_bit).is_err());
    }

    #[test]
    fn maskset_requires_congruent_masks() {
        let a = BinaryMask::ones(&[(2, 3)]);
        let b = BinaryMask::ones(&[(3, 3)]);
        assert!(MaskSet::new(vec![0, 1], vec![a, b]).is_err());
        assert!(MaskSet::new(vec![], vec![]).is_err());
    }
}
