//! The classification pipeline end to end: data, shared initialization,
//! extraction, retraining and evaluation for each method.

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::baseline::{imp_single_extraction, imp_single_retrain, imp_single_task, retrain_independent, Method};
use crate::data::{partition_by_label, GaussianClusters, LabelMapping, LabeledDataset, DEFAULT_SEPARATION};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Detectors, MetricsReport, TableRow};
use crate::extract::{extract_tickets, ExtractionConfig, ExtractionTrace};
use crate::mask::{sparsity_of, MaskSet, PruneSchedule};
use crate::network::ParamSet;
use crate::retrain::{balance_batches, joint_retrain, OptimizerState, RetrainConfig, RetrainOutcome};
use crate::task::{Objective, Task};
use crate::tensor::Activation;

/// Synthetic Gaussian-cluster classification data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    #[serde(default)]
    pub test_per_cluster: Option<usize>,
    pub dim: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_spread() -> f64 {
    1.0
}

fn default_separation() -> f64 {
    DEFAULT_SEPARATION
}

impl SyntheticSpec {
    /// Train and test draws from the same clusters, identity mapping.
    pub fn generate(&self, seed: u64) -> Result<ClassificationData> {
        let clusters = GaussianClusters::new(self.clusters, self.dim, self.spread, self.separation, seed)?;
        let train = clusters.sample(self.per_cluster, seed, 0)?;
        let test = clusters.sample(self.test_per_cluster.unwrap_or(self.per_cluster), seed, 1)?;
        Ok(ClassificationData {
            train,
            test,
            mapping: LabelMapping::identity(self.clusters),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub mapping: LabelMapping,
}

/// Backbone and training budget shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationConfig {
    pub hidden: Vec<usize>,
    pub extraction: ExtractionConfig,
    pub retrain: RetrainConfig,
}

impl ClassificationConfig {
    /// Desk-scale defaults: two hidden layers of 32, fraction-mode pruning,
    /// a short full-subset retraining pass.
    pub fn desk(target_sparsity: f64) -> Self {
        Self {
            hidden: vec![32, 32],
            extraction: ExtractionConfig {
                steps_per_round: 300,
                schedule: PruneSchedule::fraction(0.2, target_sparsity).expect("valid schedule"),
                batch_size: 16,
                adam: AdamConfig::with_lr(1e-2),
                seed: 0,
                parallel: false,
            },
            retrain: RetrainConfig {
                epochs: 1,
                batch_size: 200,
                adam: AdamConfig::with_lr(1e-2),
                seed: 0,
                optimizer_state: OptimizerState::PerSubnet,
            },
        }
    }

    /// Copies with every stage seeded from `seed`.
    pub fn seeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.extraction.seed = seed;
        c.retrain.seed = seed;
        c
    }

    pub fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(output);
        w
    }
}

/// The method's training task over the training split.
pub fn method_task(data: &ClassificationData, method: Method) -> Result<Task> {
    let partition = partition_by_label(&data.train, &data.mapping)?;
    let inputs = data.train.features.clone();
    match method {
        Method::ImpSingle => imp_single_task(inputs, &partition, Activation::Relu),
        Method::Rtl | Method::ImpMulti => Task::new(inputs, partition, Objective::Detection, Activation::Relu),
    }
}

/// Shared initialization for a method. Output rows are drawn in order, so
/// the one-logit networks share every weight with the wider head.
pub fn method_init(data: &ClassificationData, cfg: &ClassificationConfig, method: Method, seed: u64) -> ParamSet {
    let k = data.mapping.subset_ids().len();
    let out = if method == Method::ImpSingle { k } else { 1 };
    ParamSet::kaiming_normal(&cfg.widths(data.train.dim(), out), seed)
}

pub fn extraction_config(cfg: &ClassificationConfig, method: Method, k: usize) -> ExtractionConfig {
    match method {
        Method::ImpSingle => imp_single_extraction(&cfg.extraction, k),
        _ => cfg.extraction.clone(),
    }
}

pub fn retrain_config(cfg: &ClassificationConfig, method: Method) -> RetrainConfig {
    match method {
        Method::ImpSingle => imp_single_retrain(&cfg.retrain),
        _ => cfg.retrain.clone(),
    }
}

/// Trains weights for already extracted masks.
pub fn retrain_method(
    task: &Task,
    init: &ParamSet,
    masks: &MaskSet,
    cfg: &RetrainConfig,
    method: Method,
) -> Result<Vec<RetrainOutcome>> {
    let plan = balance_batches(&task.partition, cfg.batch_size, cfg.seed)?;
    match method {
        Method::ImpMulti => retrain_independent(init, masks, task, &plan, cfg),
        _ => Ok(vec![joint_retrain(init, masks, task, &plan, cfg)?]),
    }
}

pub fn evaluate_method(
    data: &ClassificationData,
    method: Method,
    params: &[ParamSet],
    masks: &MaskSet,
) -> Result<MetricsReport> {
    let ids = data.mapping.subset_ids();
    let detectors = match method {
        Method::Rtl => Detectors::Routed {
            params: &params[0],
            masks,
        },
        Method::ImpSingle => Detectors::SharedHead {
            params: &params[0],
            mask: masks.mask(0),
            subset_ids: &ids,
        },
        Method::ImpMulti => Detectors::Independent { params, masks },
    };
    evaluate(&detectors, &data.test, &data.mapping, Activation::Relu)
}

/// Everything one method produced on one seed.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub init: ParamSet,
    pub masks: MaskSet,
    pub extraction: ExtractionTrace,
    pub retrain: Vec<RetrainOutcome>,
    pub metrics: MetricsReport,
}

impl MethodRun {
    pub fn params(&self) -> Vec<ParamSet> {
        self.retrain.iter().map(|r| r.params.clone()).collect()
    }

    pub fn sparsity(&self) -> f64 {
        sparsity_of(self.masks.mask(0))
    }

    pub fn retrain_steps(&self) -> usize {
        self.retrain.iter().flat_map(|r| &r.updates).sum()
    }

    pub fn table_row(&self, target_sparsity: f64) -> TableRow {
        TableRow::new(self.method.name(), target_sparsity, &self.metrics)
    }
}

/// Runs one method from data to metrics. `rtl_masks` lets the independent
/// arm reuse already extracted per-subset masks, which are identical by
/// construction.
pub fn run_method(
    data: &ClassificationData,
    cfg: &ClassificationConfig,
    method: Method,
    seed: u64,
    rtl: Option<&MethodRun>,
) -> Result<MethodRun> {
    let cfg = cfg.seeded(seed);
    let task = method_task(data, method)?;
    let init = method_init(data, &cfg, method, seed);
    let k = data.mapping.subset_ids().len();
    let (masks, extraction) = match (method, rtl) {
        (Method::ImpMulti, Some(r)) if r.method == Method::Rtl => {
            if r.init != init {
                return Err(Error::Invalid("reused masks come from a different initialization".into()));
            }
            (r.masks.clone(), r.extraction.clone())
        }
        _ => extract_tickets(&init, &task, &extraction_config(&cfg, method, k))?,
    };
    let retrain = retrain_method(&task, &init, &masks, &retrain_config(&cfg, method), method)?;
    let params: Vec<ParamSet> = retrain.iter().map(|r| r.params.clone()).collect();
    let metrics = evaluate_method(data, method, &params, &masks)?;
    Ok(MethodRun {
        method,
        init,
        masks,
        extraction,
        retrain,
        metrics,
    })
}

/// All three methods on one seed, in table order.
pub fn run_all(data: &ClassificationData, cfg: &ClassificationConfig, seed: u64) -> Result<Vec<MethodRun>> {
    let rtl = run_method(data, cfg, Method::Rtl, seed, None)?;
    let single = run_method(data, cfg, Method::ImpSingle, seed, None)?;
    let multi = run_method(data, cfg, Method::ImpMulti, seed, Some(&rtl))?;
    Ok(vec![rtl, single, multi])
}
