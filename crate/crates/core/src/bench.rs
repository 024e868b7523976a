//! Canned desk-scale experiments: the method comparison on synthetic
//! clusters, the region-INR comparison on the two-region fixture, and the
//! collapse sweep. Each reports per-seed results, aggregates and a
//! pass/fail verdict against fixed margins.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{detect_collapse, CollapseCurve, CollapseRule, Scope, SimilarityTrace};
use crate::baseline::Method;
use crate::data::two_region_fixture;
use crate::error::{Error, Result};
use crate::experiment::{
    evaluate_method, method_init, method_task, retrain_config, retrain_method, run_all, ClassificationConfig,
    SyntheticSpec,
};
use crate::extract::extract_tickets;
use crate::inr::{inr_sweep, InrConfig};
use crate::io;
use crate::mask::{MaskSet, PruneSchedule};

/// Mean and range over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    Ok(())
}

fn check_increasing(levels: &[f64], what: &str) -> Result<()> {
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{what} must be non-empty and strictly increasing")));
    }
    Ok(())
}

/// Runs `f` once per seed, on separate threads when `parallel` is set.
fn per_seed<T: Send>(seeds: &[u64], parallel: bool, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    if !parallel {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || f(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark thread panicked"))
            .collect()
    })
}

// Method comparison.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub data: SyntheticSpec,
    pub hidden: Vec<usize>,
    pub sparsities: Vec<f64>,
    /// Sparsity at which the verdict is taken.
    pub verdict_sparsity: f64,
    /// Required mean balanced-accuracy lead of RTL over imp-single.
    pub accuracy_margin: f64,
    /// Largest allowed ratio of RTL's parameters to imp-multi's.
    pub param_ratio: f64,
}

impl ComparisonSpec {
    pub fn desk() -> Self {
        Self {
            data: SyntheticSpec {
                clusters: 4,
                per_cluster: 200,
                test_per_cluster: Some(200),
                dim: 8,
                spread: 1.0,
                separation: 4.0,
            },
            hidden: vec![32, 32],
            sparsities: vec![0.75],
            verdict_sparsity: 0.75,
            accuracy_margin: 0.03,
            param_ratio: 0.5,
        }
    }

    pub fn config(&self, sparsity: f64) -> Result<ClassificationConfig> {
        let mut cfg = ClassificationConfig::desk(sparsity);
        cfg.hidden = self.hidden.clone();
        cfg.extraction.schedule = PruneSchedule::fraction(0.2, sparsity)?;
        Ok(cfg)
    }
}

/// One method at one sparsity on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub seed: u64,
    pub method: String,
    pub sparsity: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub params: usize,
    pub extraction_steps: usize,
    pub extraction_rounds: usize,
    pub retrain_updates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub sparsity: f64,
    pub balanced_accuracy: f64,
    pub balanced_accuracy_min: f64,
    pub balanced_accuracy_max: f64,
    pub precision: f64,
    pub recall: f64,
    pub params: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: Vec<MethodResult>,
    pub table: Vec<AggregateRow>,
    pub verdict: Verdict,
}

impl ComparisonReport {
    fn select(&self, method: Method, sparsity: f64) -> Vec<&MethodResult> {
        self.runs
            .iter()
            .filter(|r| r.method == method.name() && r.sparsity == sparsity)
            .collect()
    }

    pub fn mean(&self, method: Method, sparsity: f64, f: impl Fn(&MethodResult) -> f64) -> f64 {
        let rows = self.select(method, sparsity);
        rows.iter().map(|r| f(r)).sum::<f64>() / rows.len().max(1) as f64
    }
}

pub fn run_comparison(spec: &ComparisonSpec, seeds: &[u64], parallel: bool) -> Result<ComparisonReport> {
    check_seeds(seeds)?;
    check_increasing(&spec.sparsities, "sparsities")?;
    if !spec.sparsities.contains(&spec.verdict_sparsity) {
        return Err(Error::Config("verdict sparsity is not in the sweep".into()));
    }
    let per_seed_runs = per_seed(seeds, parallel, |seed| {
        let data = spec.data.generate(seed)?;
        let mut out = Vec::new();
        for &sparsity in &spec.sparsities {
            for run in run_all(&data, &spec.config(sparsity)?, seed)? {
                let rounds = run.extraction.records.iter().map(|r| r.round + 1).max().unwrap_or(0);
                out.push(MethodResult {
                    seed,
                    method: run.method.name().to_string(),
                    sparsity,
                    balanced_accuracy: run.metrics.macro_balanced_accuracy,
                    precision: run.metrics.macro_precision,
                    recall: run.metrics.macro_recall,
                    params: run.metrics.params.reported,
                    extraction_steps: run.extraction.total_steps,
                    extraction_rounds: rounds,
                    retrain_updates: run.retrain_steps(),
                });
            }
        }
        Ok(out)
    })?;
    let runs: Vec<MethodResult> = per_seed_runs.into_iter().flatten().collect();

    let mut report = ComparisonReport {
        runs,
        table: Vec::new(),
        verdict: Verdict::new("comparison", false, String::new()),
    };
    for &sparsity in &spec.sparsities {
        for method in Method::ALL {
            let rows = report.select(method, sparsity);
            let acc: Vec<f64> = rows.iter().map(|r| r.balanced_accuracy).collect();
            let s = Summary::of(&acc);
            report.table.push(AggregateRow {
                method: method.name().to_string(),
                sparsity,
                balanced_accuracy: s.mean,
                balanced_accuracy_min: s.min,
                balanced_accuracy_max: s.max,
                precision: report.mean(method, sparsity, |r| r.precision),
                recall: report.mean(method, sparsity, |r| r.recall),
                params: report.mean(method, sparsity, |r| r.params as f64),
            });
        }
    }
    let s = spec.verdict_sparsity;
    let gap = report.mean(Method::Rtl, s, |r| r.balanced_accuracy)
        - report.mean(Method::ImpSingle, s, |r| r.balanced_accuracy);
    let ratio = report.mean(Method::Rtl, s, |r| r.params as f64) / report.mean(Method::ImpMulti, s, |r| r.params as f64);
    report.verdict = Verdict::new(
        "specialization gap",
        gap >= spec.accuracy_margin && ratio <= spec.param_ratio,
        format!(
            "mean balanced accuracy gap {gap:.4} (need >= {}), param ratio {ratio:.3} (need <= {}) at sparsity {s} over {} seeds",
            spec.accuracy_margin,
            spec.param_ratio,
            seeds.len()
        ),
    );
    Ok(report)
}

// Region INR comparison.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InrBenchSpec {
    pub size: usize,
    pub sparsities: Vec<f64>,
    pub verdict_sparsity: f64,
    /// Required mean PSNR lead in dB.
    pub psnr_margin: f64,
    pub inr: InrConfig,
}

impl InrBenchSpec {
    pub fn desk() -> Self {
        Self {
            size: 16,
            sparsities: vec![0.5],
            verdict_sparsity: 0.5,
            psnr_margin: 0.5,
            inr: InrConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InrResult {
    pub seed: u64,
    pub sparsity: f64,
    pub psnr_rtl: f64,
    pub psnr_baseline: f64,
    pub mean_jaccard: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InrBenchReport {
    pub runs: Vec<InrResult>,
    pub verdict: Verdict,
}

pub fn run_inr_bench(spec: &InrBenchSpec, seeds: &[u64], parallel: bool) -> Result<InrBenchReport> {
    check_seeds(seeds)?;
    check_increasing(&spec.sparsities, "sparsities")?;
    if !spec.sparsities.contains(&spec.verdict_sparsity) {
        return Err(Error::Config("verdict sparsity is not in the sweep".into()));
    }
    let per = per_seed(seeds, parallel, |seed| {
        let (image, regions) = two_region_fixture(spec.size, seed)?;
        let cfg = spec.inr.seeded(seed);
        let sweep = inr_sweep(&image, &regions, &spec.sparsities, &cfg)?;
        Ok(sweep
            .levels
            .iter()
            .map(|l| InrResult {
                seed,
                sparsity: l.sparsity,
                psnr_rtl: l.psnr_rtl,
                psnr_baseline: l.psnr_baseline,
                mean_jaccard: l.region_similarity.iter().sum::<f64>() / l.region_similarity.len() as f64,
            })
            .collect::<Vec<_>>())
    })?;
    let runs: Vec<InrResult> = per.into_iter().flatten().collect();
    let at: Vec<&InrResult> = runs.iter().filter(|r| r.sparsity == spec.verdict_sparsity).collect();
    let gaps: Vec<f64> = at.iter().map(|r| r.psnr_rtl - r.psnr_baseline).collect();
    let gap = Summary::of(&gaps);
    let verdict = Verdict::new(
        "inr gap",
        gap.mean >= spec.psnr_margin,
        format!(
            "mean PSNR gap {:.3} dB (range {:.3}..{:.3}, need >= {}) at sparsity {} over {} seeds",
            gap.mean,
            gap.min,
            gap.max,
            spec.psnr_margin,
            spec.verdict_sparsity,
            seeds.len()
        ),
    );
    Ok(InrBenchReport { runs, verdict })
}

// Collapse sweep.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseSpec {
    pub data: SyntheticSpec,
    pub hidden: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub rule: CollapseRule,
    /// Required accuracy loss from the sweep peak at the last level.
    pub final_drop: f64,
    /// Loss from peak that marks the onset of the accuracy drop.
    pub onset_drop: f64,
    /// Seeds that must show the early warning.
    pub required_seeds: usize,
}

impl CollapseSpec {
    pub fn desk() -> Self {
        Self {
            data: ComparisonSpec::desk().data,
            hidden: vec![32, 32],
            sparsities: vec![0.5, 0.7, 0.8, 0.9, 0.95, 0.98],
            rule: CollapseRule::Spike { tau: 0.15 },
            final_drop: 0.10,
            onset_drop: 0.05,
            required_seeds: 3,
        }
    }
}

/// One seed's sweep: RTL extracted once with a checkpoint per level, then
/// retrained and evaluated at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseRun {
    pub seed: u64,
    pub sparsity: Vec<f64>,
    pub balanced_accuracy: Vec<f64>,
    pub mean_jaccard: Vec<f64>,
    pub flagged: Option<f64>,
    /// First level at or after the peak whose accuracy lost `onset_drop`.
    pub onset: Option<f64>,
    pub final_drop: f64,
    pub early_warning: bool,
    pub curve: CollapseCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub runs: Vec<CollapseRun>,
    pub verdict: Verdict,
}

/// Level sets of RTL masks along a sweep, from one extraction.
pub fn sweep_masks(data: &crate::experiment::ClassificationData, cfg: &ClassificationConfig, levels: &[f64], seed: u64) -> Result<Vec<(f64, MaskSet)>> {
    check_increasing(levels, "sparsities")?;
    let target = *levels.last().expect("non-empty levels");
    let mut cfg = cfg.seeded(seed);
    cfg.extraction.schedule = cfg.extraction.schedule.clone().with_target(target)?.with_checkpoints(levels.to_vec())?;
    let task = method_task(data, Method::Rtl)?;
    let init = method_init(data, &cfg, Method::Rtl, seed);
    let (_, trace) = extract_tickets(&init, &task, &cfg.extraction)?;
    Ok(trace.checkpoints)
}

pub fn collapse_run(spec: &CollapseSpec, seed: u64) -> Result<CollapseRun> {
    let data = spec.data.generate(seed)?;
    let target = *spec.sparsities.last().ok_or_else(|| Error::Config("no sparsity levels".into()))?;
    let mut cfg = ClassificationConfig::desk(target).seeded(seed);
    cfg.hidden = spec.hidden.clone();
    let levels = sweep_masks(&data, &cfg, &spec.sparsities, seed)?;
    let task = method_task(&data, Method::Rtl)?;
    let init = method_init(&data, &cfg, Method::Rtl, seed);
    let mut accuracy = Vec::with_capacity(levels.len());
    let mut per_subset = Vec::with_capacity(levels.len());
    for (_, masks) in &levels {
        let retrained = retrain_method(&task, &init, masks, &retrain_config(&cfg, Method::Rtl), Method::Rtl)?;
        let params: Vec<_> = retrained.into_iter().map(|r| r.params).collect();
        let report = evaluate_method(&data, Method::Rtl, &params, masks)?;
        accuracy.push(report.macro_balanced_accuracy);
        per_subset.push(report.subsets.iter().map(|m| m.balanced_accuracy).collect());
    }
    let trace = SimilarityTrace::from_levels(&levels, Scope::Global)?;
    let flagged = detect_collapse(&trace, spec.rule);
    let (onset, final_drop) = score_drop(&trace.sparsity, &accuracy, spec.onset_drop);
    let early_warning =
        final_drop >= spec.final_drop && matches!((flagged, onset), (Some(f), Some(o)) if f <= o);
    Ok(CollapseRun {
        seed,
        curve: CollapseCurve::build(&levels, &per_subset)?,
        sparsity: trace.sparsity,
        mean_jaccard: trace.mean_jaccard,
        balanced_accuracy: accuracy,
        flagged,
        onset,
        final_drop,
        early_warning,
    })
}

/// Onset of the accuracy drop after the sweep peak, and the loss from
/// peak to the last level.
pub fn score_drop(sparsity: &[f64], accuracy: &[f64], onset_drop: f64) -> (Option<f64>, f64) {
    let Some(peak_at) = (0..accuracy.len()).max_by(|&a, &b| accuracy[a].total_cmp(&accuracy[b]).then(b.cmp(&a))) else {
        return (None, 0.0);
    };
    let peak = accuracy[peak_at];
    let onset = (peak_at..accuracy.len())
        .find(|&i| accuracy[i] <= peak - onset_drop)
        .map(|i| sparsity[i]);
    (onset, peak - accuracy[accuracy.len() - 1])
}

pub fn run_collapse(spec: &CollapseSpec, seeds: &[u64], parallel: bool) -> Result<CollapseReport> {
    check_seeds(seeds)?;
    check_increasing(&spec.sparsities, "sparsities")?;
    let runs = per_seed(seeds, parallel, |seed| collapse_run(spec, seed))?;
    let hits = runs.iter().filter(|r| r.early_warning).count();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: flag {:?}, onset {:?}, final drop {:.3}",
                r.seed, r.flagged, r.onset, r.final_drop
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let verdict = Verdict::new(
        "collapse early warning",
        hits >= spec.required_seeds,
        format!("{hits}/{} seeds (need {}); {detail}", runs.len(), spec.required_seeds),
    );
    Ok(CollapseReport { runs, verdict })
}

// Everything together.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub inr_seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub comparison: Option<ComparisonSpec>,
    #[serde(default)]
    pub inr: Option<InrBenchSpec>,
    #[serde(default)]
    pub collapse: Option<CollapseSpec>,
    #[serde(default)]
    pub parallel: bool,
}

impl BenchmarkSpec {
    /// Five seeds for the classification experiments, three for the INR.
    pub fn desk() -> Self {
        Self {
            seeds: (0..5).collect(),
            inr_seeds: Some((0..3).collect()),
            comparison: Some(ComparisonSpec::desk()),
            inr: Some(InrBenchSpec::desk()),
            collapse: Some(CollapseSpec::desk()),
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub comparison: Option<ComparisonReport>,
    pub inr: Option<InrBenchReport>,
    pub collapse: Option<CollapseReport>,
}

impl BenchmarkReport {
    pub fn verdicts(&self) -> Vec<&Verdict> {
        let mut v = Vec::new();
        v.extend(self.comparison.as_ref().map(|r| &r.verdict));
        v.extend(self.inr.as_ref().map(|r| &r.verdict));
        v.extend(self.collapse.as_ref().map(|r| &r.verdict));
        v
    }

    /// Writes `report.json`, `verdicts.json` and one CSV per experiment.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join("report.json"), self)?;
        io::write_json(&dir.join("verdicts.json"), &self.verdicts())?;
        if let Some(c) = &self.comparison {
            io::write_csv(&dir.join("table1.csv"), &c.table)?;
            io::write_csv(&dir.join("comparison_runs.csv"), &c.runs)?;
        }
        if let Some(i) = &self.inr {
            io::write_csv(&dir.join("inr.csv"), &i.runs)?;
        }
        if let Some(c) = &self.collapse {
            for r in &c.runs {
                io::write_atomic(&dir.join(format!("collapse_seed{}.csv", r.seed)), &r.curve.to_csv()?)?;
            }
        }
        Ok(())
    }
}

pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    let inr_seeds = spec.inr_seeds.as_deref().unwrap_or(&spec.seeds);
    Ok(BenchmarkReport {
        comparison: spec
            .comparison
            .as_ref()
            .map(|c| run_comparison(c, &spec.seeds, spec.parallel))
            .transpose()?,
        inr: spec.inr.as_ref().map(|c| run_inr_bench(c, inr_seeds, spec.parallel)).transpose()?,
        collapse: spec
            .collapse
            .as_ref()
            .map(|c| run_collapse(c, &spec.seeds, spec.parallel))
            .transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_scoring() {
        let s = [0.5, 0.7, 0.8, 0.9];
        let (onset, drop) = score_drop(&s, &[0.8, 0.9, 0.84, 0.7], 0.05);
        assert_eq!(onset, Some(0.8));
        assert!((drop - 0.2).abs() < 1e-12);
        assert_eq!(score_drop(&s, &[0.9, 0.9, 0.88, 0.87], 0.05).0, None);
    }

    #[test]
    fn summary_range() {
        let s = Summary::of(&[1.0, 3.0, 2.0]);
        assert_eq!((s.mean, s.min, s.max), (2.0, 1.0, 3.0));
    }

    #[test]
    fn too_few_seeds() {
        assert!(run_comparison(&ComparisonSpec::desk(), &[0, 1], false).is_err());
    }
}
