//! The comparison arms: a single pruned network for all subsets, and one
//! independently trained network per subset.

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::data::Partition;
use crate::error::{Error, Result};
use crate::extract::ExtractionConfig;
use crate::mask::{magnitude_prune, BinaryMask, MaskSet};
use crate::network::ParamSet;
use crate::retrain::{joint_retrain, BalancedBatchPlan, RetrainConfig, RetrainOutcome};
use crate::rng;
use crate::task::{train_step, BatchCursor, Objective, Task};
use crate::tensor::{Activation, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Shared weights, one routed mask per subset.
    Rtl,
    /// One mask and one network with a logit per subset.
    ImpSingle,
    /// The per-subset masks, each with its own separately trained weights.
    ImpMulti,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rtl, Method::ImpSingle, Method::ImpMulti];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rtl => "rtl",
            Method::ImpSingle => "imp-single",
            Method::ImpMulti => "imp-multi",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Single-mask iterative magnitude pruning on a one-subset task, written
/// as a plain loop to cross-check extraction.
pub fn reference_imp(init: &ParamSet, task: &Task, cfg: &ExtractionConfig) -> Result<BinaryMask> {
    if task.subset_count() != 1 {
        return Err(Error::Invalid("reference pruning runs on exactly one subset".into()));
    }
    let members = task.partition.subset(0);
    let id = task.partition.subset_ids()[0] as u64;
    let total = init.total_prunable();
    let target = cfg.schedule.target_removed(total);
    let mut mask = BinaryMask::ones_like(init);
    let mut removed = 0;
    let mut round = 0u64;
    while removed < target {
        let amount = cfg.schedule.next_amount(removed, total);
        let mut theta = init.clone();
        let mut adam = AdamState::new(init, cfg.adam);
        let mut r = rng::derive(cfg.seed, &[rng::tag::EXTRACT, id, round]);
        let mut cursor = BatchCursor::new(members, cfg.batch_size);
        for _ in 0..cfg.steps_per_round {
            let batch = cursor.next_batch(&mut r);
            let (x, y) = task.batch(0, &batch, &mut r);
            train_step(&mut theta, &mask, &mut adam, &x, &y, task.objective.loss_kind(), task.activation)?;
        }
        mask = magnitude_prune(&theta, &mask, amount)?;
        removed += amount;
        round += 1;
    }
    Ok(mask)
}

/// The single-network task: every sample in one subset, targets one-hot
/// over the original subsets.
pub fn imp_single_task(inputs: Tensor, partition: &Partition, activation: Activation) -> Result<Task> {
    let objective = Objective::MultiLabel {
        groups: partition.membership(),
        width: partition.len(),
    };
    Task::new(inputs, Partition::trivial(partition.sample_count())?, objective, activation)
}

/// Extraction budget for the single network over `k` subsets: the routed
/// method trains `k` subnetworks per round on batches of positives plus as
/// many negatives, so the single network gets `2k` times the steps to see
/// the same number of samples.
pub fn imp_single_extraction(cfg: &ExtractionConfig, k: usize) -> ExtractionConfig {
    ExtractionConfig {
        steps_per_round: cfg.steps_per_round * 2 * k,
        ..cfg.clone()
    }
}

/// Retraining budget for the single network: twice the epochs.
pub fn imp_single_retrain(cfg: &RetrainConfig) -> RetrainConfig {
    RetrainConfig {
        epochs: cfg.epochs * 2,
        ..cfg.clone()
    }
}

/// Retrains a separate copy of `init` through each mask on its own subset.
pub fn retrain_independent(
    init: &ParamSet,
    masks: &MaskSet,
    task: &Task,
    plan: &BalancedBatchPlan,
    cfg: &RetrainConfig,
) -> Result<Vec<RetrainOutcome>> {
    (0..masks.len())
        .map(|j| {
            let single = MaskSet::new(vec![masks.subset_ids()[j]], vec![masks.mask(j).clone()])?;
            joint_retrain(init, &single, task, &plan.select(j), cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("imp".parse::<Method>().is_err());
    }

    #[test]
    fn single_task_groups_follow_the_partition() {
        let inputs = Tensor::matrix(4, 1, vec![0.0; 4]).unwrap();
        let partition = Partition::new(vec![3, 5], vec![vec![1, 2], vec![0, 3]], 4).unwrap();
        let task = imp_single_task(inputs, &partition, Activation::Relu).unwrap();
        assert_eq!(task.subset_count(), 1);
        assert_eq!(
            task.objective,
            Objective::MultiLabel {
                groups: vec![1, 0, 0, 1],
                width: 2
            }
        );
    }
}
