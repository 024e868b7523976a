//! Joint retraining of all subnetworks over one shared parameter set.
//!
//! Every epoch walks batch index `m` in order and, for each `m`, updates
//! every subnetwork once on its own batch. By default each subnetwork keeps
//! its own Adam state.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data::Partition;
use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::network::ParamSet;
use crate::rng;
use crate::task::{train_step, Task};

/// Equal-length batch lists, one per subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalancedBatchPlan {
    /// Position of each planned subset within the task's partition.
    subset_indices: Vec<usize>,
    subset_ids: Vec<usize>,
    /// `batches[j][m]` holds sample indices.
    batches: Vec<Vec<Vec<usize>>>,
    natural: Vec<usize>,
}

impl BalancedBatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Batches per subset per epoch.
    pub fn batches_per_epoch(&self) -> usize {
        self.batches.first().map_or(0, Vec::len)
    }

    pub fn batches(&self, j: usize) -> &[Vec<usize>] {
        &self.batches[j]
    }

    /// Batch counts before cyclic extension.
    pub fn natural_counts(&self) -> &[usize] {
        &self.natural
    }

    pub fn subset_ids(&self) -> &[usize] {
        &self.subset_ids
    }

    pub fn subset_indices(&self) -> &[usize] {
        &self.subset_indices
    }

    /// A plan holding only the `j`-th subset, keeping its extended length.
    pub fn select(&self, j: usize) -> BalancedBatchPlan {
        BalancedBatchPlan {
            subset_indices: vec![self.subset_indices[j]],
            subset_ids: vec![self.subset_ids[j]],
            batches: vec![self.batches[j].clone()],
            natural: vec![self.natural[j]],
        }
    }
}

/// Shuffles each subset with its own seeded stream, cuts it into
/// `⌈n / batch_size⌉` batches, then repeats shorter lists cyclically up to
/// the longest.
pub fn balance_batches(partition: &Partition, batch_size: usize, seed: u64) -> Result<BalancedBatchPlan> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut natural_batches = Vec::with_capacity(partition.len());
    for (k, &id) in partition.subset_ids().iter().enumerate() {
        let members = partition.subset(k);
        if members.is_empty() {
            return Err(Error::EmptySubset(id));
        }
        let mut order = members.to_vec();
        order.shuffle(&mut rng::derive(seed, &[rng::tag::PLAN, id as u64]));
        natural_batches.push(order.chunks(batch_size).map(<[usize]>::to_vec).collect::<Vec<_>>());
    }
    let m = natural_batches.iter().map(Vec::len).max().unwrap_or(0);
    let natural = natural_batches.iter().map(Vec::len).collect();
    let batches = natural_batches
        .into_iter()
        .map(|b| b.iter().cycle().take(m).cloned().collect())
        .collect();
    Ok(BalancedBatchPlan {
        subset_indices: (0..partition.len()).collect(),
        subset_ids: partition.subset_ids().to_vec(),
        batches,
        natural,
    })
}

/// Which Adam moments a subnetwork's update reads and writes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerState {
    /// One state per subnetwork.
    #[default]
    PerSubnet,
    /// One state for the whole parameter set, updated by every subnetwork.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer_state: OptimizerState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub subset_id: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainOutcome {
    pub params: ParamSet,
    /// Ordered by epoch, then subset.
    pub trace: Vec<EpochRecord>,
    /// Gradient updates applied per subnetwork.
    pub updates: Vec<usize>,
}

impl RetrainOutcome {
    pub fn trace_csv(&self) -> Result<Vec<u8>> {
        crate::io::csv_bytes(&self.trace)
    }
}

/// Retrains the shared `params` through every mask in `masks`, one masked
/// Adam update per subnetwork per batch index.
pub fn joint_retrain(
    params: &ParamSet,
    masks: &MaskSet,
    task: &Task,
    plan: &BalancedBatchPlan,
    cfg: &RetrainConfig,
) -> Result<RetrainOutcome> {
    masks.check_congruent(params)?;
    task.check_network(params)?;
    if masks.len() != plan.len() || masks.subset_ids() != plan.subset_ids() {
        return Err(Error::Shape(format!(
            "mask set covers subsets {:?} but the plan covers {:?}",
            masks.subset_ids(),
            plan.subset_ids()
        )));
    }
    let loss_kind = task.objective.loss_kind();
    let mut theta = params.clone();
    let n_states = match cfg.optimizer_state {
        OptimizerState::PerSubnet => plan.len(),
        OptimizerState::Shared => 1,
    };
    let mut states: Vec<AdamState> = (0..n_states).map(|_| AdamState::new(params, cfg.adam)).collect();
    let mut updates = vec![0; plan.len()];
    let mut trace = Vec::with_capacity(cfg.epochs * plan.len());
    for epoch in 0..cfg.epochs {
        let mut sums = vec![0.0; plan.len()];
        for m in 0..plan.batches_per_epoch() {
            for j in 0..plan.len() {
                let id = plan.subset_ids[j];
                let mut r = rng::derive(cfg.seed, &[rng::tag::RETRAIN, epoch as u64, m as u64, id as u64]);
                let (x, y) = task.batch(plan.subset_indices[j], &plan.batches[j][m], &mut r);
                sums[j] += train_step(&mut theta, masks.mask(j), &mut states[j % n_states], &x, &y, loss_kind, task.activation)?;
                updates[j] += 1;
            }
        }
        let m = plan.batches_per_epoch().max(1) as f64;
        trace.extend(sums.iter().enumerate().map(|(j, s)| EpochRecord {
            epoch,
            subset_id: plan.subset_ids[j],
            loss: s / m,
        }));
    }
    Ok(RetrainOutcome {
        params: theta,
        trace,
        updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partition(sizes: &[usize]) -> Partition {
        let mut start = 0;
        let subsets = sizes
            .iter()
            .map(|&n| {
                start += n;
                (start - n..start).collect()
            })
            .collect();
        Partition::new((0..sizes.len()).collect(), subsets, start).unwrap()
    }

    #[test]
    fn equal_subsets_need_no_repetition() {
        let plan = balance_batches(&partition(&[10, 10]), 5, 1).unwrap();
        assert_eq!(plan.batches_per_epoch(), 2);
        assert_eq!(plan.natural_counts(), &[2, 2]);
    }

    #[test]
    fn short_subsets_cycle_in_order() {
        let plan = balance_batches(&partition(&[10, 4]), 2, 1).unwrap();
        assert_eq!(plan.batches_per_epoch(), 5);
        let b = plan.batches(1);
        assert_eq!(b[2], b[0]);
        assert_eq!(b[3], b[1]);
        assert_eq!(b[4], b[0]);
        assert_ne!(b[0], b[1]);
    }

    #[test]
    fn natural_batches_partition_the_subset() {
        let plan = balance_batches(&partition(&[50, 20, 7]), 5, 3).unwrap();
        assert_eq!(plan.batches_per_epoch(), 10);
        assert_eq!(plan.natural_counts(), &[10, 4, 2]);
        for (j, start, n) in [(0, 0, 50), (1, 50, 20), (2, 70, 7)] {
            let mut seen: Vec<usize> = plan.batches(j)[..plan.natural_counts()[j]].concat();
            seen.sort_unstable();
            assert_eq!(seen, (start..start + n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_subset_plan_is_its_own_batches() {
        let plan = balance_batches(&partition(&[9]), 4, 0).unwrap();
        assert_eq!(plan.batches_per_epoch(), 3);
        assert_eq!(plan.batches(0)[2].len(), 1);
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(balance_batches(&partition(&[3]), 0, 0).is_err());
    }
}
