//! Per-subset ticket extraction: train through the current mask, prune the
//! smallest surviving weights, rewind to the shared initialization, repeat.

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::mask::{magnitude_prune, sparsity_of, BinaryMask, MaskSet, PruneSchedule};
use crate::network::ParamSet;
use crate::rng;
use crate::task::{train_step, BatchCursor, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Optimizer steps per pruning round.
    pub steps_per_round: usize,
    pub schedule: PruneSchedule,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Run subsets on separate threads. Results are identical either way.
    #[serde(default)]
    pub parallel: bool,
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_round == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps_per_round and batch_size must be at least 1".into()));
        }
        self.schedule.clone().validated().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub subset_id: usize,
    /// Sparsity after this round's pruning.
    pub sparsity: f64,
    /// Mean training loss over the round's steps.
    pub loss: f64,
}

/// Everything one subset's extraction produced.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetRun {
    pub mask: BinaryMask,
    pub records: Vec<RoundRecord>,
    /// Mask snapshots at each schedule checkpoint, ascending.
    pub checkpoints: Vec<BinaryMask>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionTrace {
    /// Ordered by round, then subset.
    pub records: Vec<RoundRecord>,
    pub total_steps: usize,
    /// One mask set per schedule checkpoint level.
    pub checkpoints: Vec<(f64, MaskSet)>,
}

impl ExtractionTrace {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        crate::io::csv_bytes(&self.records)
    }
}

/// Runs extraction for subset `k` of `task` in isolation.
pub fn extract_subset(init: &ParamSet, task: &Task, k: usize, cfg: &ExtractionConfig) -> Result<SubsetRun> {
    let members = task.partition.subset(k);
    let subset_id = task.partition.subset_ids()[k];
    if members.is_empty() {
        return Err(Error::EmptySubset(subset_id));
    }
    let total = init.total_prunable();
    let checkpoint_at = cfg.schedule.checkpoint_removals(total);
    let loss_kind = task.objective.loss_kind();

    let mut mask = BinaryMask::ones_like(init);
    let mut removed = 0;
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let mut steps = 0;
    for round in 0.. {
        let amount = cfg.schedule.next_amount(removed, total);
        if amount == 0 {
            break;
        }
        let mut params = init.clone();
        let mut state = AdamState::new(init, cfg.adam);
        let mut r = rng::derive(cfg.seed, &[rng::tag::EXTRACT, subset_id as u64, round as u64]);
        let mut cursor = BatchCursor::new(members, cfg.batch_size);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.steps_per_round {
            let batch = cursor.next_batch(&mut r);
            let (x, y) = task.batch(k, &batch, &mut r);
            loss_sum += train_step(&mut params, &mask, &mut state, &x, &y, loss_kind, task.activation)?;
        }
        steps += cfg.steps_per_round;
        mask = magnitude_prune(&params, &mask, amount)?;
        removed += amount;
        records.push(RoundRecord {
            round,
            subset_id,
            sparsity: sparsity_of(&mask),
            loss: loss_sum / cfg.steps_per_round as f64,
        });
        if checkpoint_at.contains(&removed) {
            checkpoints.push(mask.clone());
        }
    }
    Ok(SubsetRun {
        mask,
        records,
        checkpoints,
        steps,
    })
}

/// Extracts one mask per subset from the shared initialization.
pub fn extract_tickets(init: &ParamSet, task: &Task, cfg: &ExtractionConfig) -> Result<(MaskSet, ExtractionTrace)> {
    cfg.validate()?;
    task.check_network(init)?;
    let k_count = task.subset_count();
    let runs: Vec<SubsetRun> = if cfg.parallel && k_count > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..k_count)
                .map(|k| s.spawn(move || extract_subset(init, task, k, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("extraction thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..k_count)
            .map(|k| extract_subset(init, task, k, cfg))
            .collect::<Result<Vec<_>>>()?
    };

    let ids = task.partition.subset_ids().to_vec();
    let mut records: Vec<RoundRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    records.sort_by_key(|r| r.round);
    let checkpoints = cfg
        .schedule
        .checkpoints
        .iter()
        .enumerate()
        .map(|(c, &level)| {
            let masks = runs.iter().map(|r| r.checkpoints[c].clone()).collect();
            Ok((level, MaskSet::new(ids.clone(), masks)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let trace = ExtractionTrace {
        records,
        total_steps: runs.iter().map(|r| r.steps).sum(),
        checkpoints,
    };
    let masks = MaskSet::new(ids, runs.into_iter().map(|r| r.mask).collect())?;
    Ok((masks, trace))
}
