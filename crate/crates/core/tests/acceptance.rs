//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use adaptive_tickets::adam::{adam_step, AdamConfig, AdamState};
use adaptive_tickets::analysis::{jaccard, semantic_alignment, similarity_matrix, spearman, Scope, SemanticMatrix};
use adaptive_tickets::baseline::{imp_single_task, reference_imp};
use adaptive_tickets::bench::{run_collapse, run_comparison, run_inr_bench, CollapseSpec, ComparisonSpec, InrBenchSpec};
use adaptive_tickets::data::{two_region_fixture, Image, Partition, RegionMap};
use adaptive_tickets::experiment::SyntheticSpec;
use adaptive_tickets::extract::{extract_tickets, ExtractionConfig};
use adaptive_tickets::inr::{fit_inr, InrConfig};
use adaptive_tickets::io::{params_from_bytes, params_to_bytes};
use adaptive_tickets::mask::{magnitude_prune, rewind, BinaryMask, MaskSet, PruneSchedule};
use adaptive_tickets::network::{backward, forward, predict, Gradients, ParamSet};
use adaptive_tickets::retrain::{balance_batches, joint_retrain, RetrainConfig};
use adaptive_tickets::task::{Objective, Task};
use adaptive_tickets::tensor::{loss_and_grad, Activation, LossKind, Tensor};
use rand::Rng as _;

use common::{bits_of, random_mask, random_matrix, random_params, uniform_vec};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient oracle", gradient_oracle),
        ("pruned-weight stasis", pruned_weight_stasis),
        ("single-subset degeneracy", single_subset_degeneracy),
        ("pruning oracle", pruning_oracle),
        ("jaccard and spearman oracles", overlap_oracles),
        ("balanced-batch fairness", balanced_batch_fairness),
        ("specialization gap", specialization_gap),
        ("inr gap", inr_gap),
        ("collapse early warning", collapse_early_warning),
        ("semantic alignment", semantic_alignment_sanity),
        ("determinism and formats", determinism_and_formats),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        if !outcome.passed {
            failed += 1;
        }
        println!(
            "{} criterion {} {}: {} [{:.1}s]",
            if outcome.passed { "PASS" } else { "FAIL" },
            i + 1,
            name,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn gradient_oracle() -> Outcome {
    const H: f64 = 1e-6;
    let start = Instant::now();
    let (mut worst, mut checked, mut bad) = (0.0f64, 0usize, 0usize);
    for seed in 0..20 {
        let mut r = common::rng(seed);
        let hidden = r.random_range(1..=3);
        let mut widths = vec![r.random_range(1..=5)];
        widths.extend((0..hidden).map(|_| r.random_range(2..=6)));
        widths.push(r.random_range(1..=3));
        let params = random_params(&mut r, &widths);
        let mask = random_mask(&mut r, &params.layer_shapes(), 0.7);
        let rows = r.random_range(1..=4);
        let x = random_matrix(&mut r, rows, widths[0]);
        let out_w = *widths.last().unwrap();
        let (kind, target) = if seed % 2 == 0 {
            (LossKind::MeanSquaredError, random_matrix(&mut r, rows, out_w))
        } else {
            (
                LossKind::BceWithLogits,
                Tensor::matrix(rows, out_w, uniform_vec(&mut r, rows * out_w, 0.0, 1.0)).unwrap(),
            )
        };
        let loss = |p: &ParamSet| {
            let out = predict(p, &mask, &x, Activation::Relu).unwrap();
            loss_and_grad(&out, &target, kind).unwrap().0
        };
        let (out, cache) = forward(&params, &mask, &x, Activation::Relu).unwrap();
        let (_, g) = loss_and_grad(&out, &target, kind).unwrap();
        let grads = backward(&cache, &g).unwrap();

        let mut compare = |analytic: f64, numeric: f64| {
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
            checked += 1;
            if err >= 1e-4 {
                bad += 1;
            }
        };
        for l in 0..params.layers().len() {
            for i in 0..params.layers()[l].weight.len() {
                let (mut plus, mut minus) = (params.clone(), params.clone());
                plus.layers_mut()[l].weight[i] += H;
                minus.layers_mut()[l].weight[i] -= H;
                compare(grads.weights[l][i], (loss(&plus) - loss(&minus)) / (2.0 * H));
            }
            for i in 0..params.layers()[l].bias.len() {
                let (mut plus, mut minus) = (params.clone(), params.clone());
                plus.layers_mut()[l].bias[i] += H;
                minus.layers_mut()[l].bias[i] -= H;
                compare(grads.biases[l][i], (loss(&plus) - loss(&minus)) / (2.0 * H));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        bad == 0 && secs < 30.0,
        format!("{checked} entries over 20 networks, worst relative error {worst:.2e}, {bad} above 1e-4, {secs:.2}s"),
    )
}

fn pruned_weight_stasis() -> Outcome {
    let mut r = common::rng(200);
    let init = random_params(&mut r, &[6, 10, 8, 3]);
    let mask = random_mask(&mut r, &init.layer_shapes(), 0.5);
    let mut params = init.clone();
    let mut state = AdamState::new(&params, AdamConfig::with_lr(1e-2));
    for _ in 0..100 {
        let mut g = Gradients::zeros_like(&params);
        for l in 0..g.weights.len() {
            g.weights[l] = uniform_vec(&mut r, g.weights[l].len(), -1.0, 1.0);
            g.biases[l] = uniform_vec(&mut r, g.biases[l].len(), -1.0, 1.0);
        }
        adam_step(&mut params, &g, &mask, &mut state).unwrap();
    }
    let (mut frozen, mut moved, mut stale) = (0, 0, 0);
    for (l, (a, b)) in init.layers().iter().zip(params.layers()).enumerate() {
        for i in 0..a.weight.len() {
            let same = a.weight[i].to_bits() == b.weight[i].to_bits();
            match (mask.get(l, i), same) {
                (false, true) => frozen += 1,
                (false, false) => stale += 1,
                (true, false) => moved += 1,
                (true, true) => {}
            }
        }
    }
    let rewound = rewind(&params, &init).unwrap();
    let exact = bits_of(&rewound) == bits_of(&init);
    Outcome::new(
        stale == 0 && moved > 0 && exact,
        format!("{frozen} pruned weights unchanged, {stale} changed, {moved} live weights moved; rewind bit-exact: {exact}"),
    )
}

fn single_subset_degeneracy() -> Outcome {
    let data = SyntheticSpec {
        clusters: 3,
        per_cluster: 40,
        test_per_cluster: None,
        dim: 5,
        spread: 1.0,
        separation: 4.0,
    }
    .generate(7)
    .unwrap();
    let mut matches = Vec::new();
    for (case, schedule) in [
        PruneSchedule::fraction(0.2, 0.8).unwrap(),
        PruneSchedule::count(37, 0.6).unwrap().with_checkpoints(vec![0.3]).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = ExtractionConfig {
            steps_per_round: 25,
            schedule,
            batch_size: 16,
            adam: AdamConfig::with_lr(1e-2),
            seed: 11 + case as u64,
            parallel: false,
        };
        let n = data.train.len();
        let trivial = Partition::trivial(n).unwrap();
        let tasks = [
            imp_single_task(data.train.features.clone(), &partition_of(&data.train.labels, 3), Activation::Relu).unwrap(),
            Task::new(
                data.train.features.clone(),
                trivial.clone(),
                Objective::Regression {
                    targets: random_matrix(&mut common::rng(case as u64), n, 2),
                },
                Activation::Relu,
            )
            .unwrap(),
        ];
        for task in &tasks {
            let out = task.objective.output_width().unwrap();
            let init = ParamSet::kaiming_normal(&[5, 12, 12, out], 3 + case as u64);
            let (masks, _) = extract_tickets(&init, task, &cfg).unwrap();
            let reference = reference_imp(&init, task, &cfg).unwrap();
            matches.push(masks.len() == 1 && *masks.mask(0) == reference);
        }
    }
    let ok = matches.iter().filter(|&&m| m).count();
    Outcome::new(
        ok == matches.len(),
        format!("{ok} of {} single-subset runs bit-identical to the reference loop", matches.len()),
    )
}

fn partition_of(labels: &[usize], k: usize) -> Partition {
    let subsets = (0..k)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    Partition::new((0..k).collect(), subsets, labels.len()).unwrap()
}

fn pruning_oracle() -> Outcome {
    let mut agree = 0;
    for case in 0..50u64 {
        let mut r = common::rng(1000 + case);
        let depth = r.random_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=18)).collect();
        let mut params = random_params(&mut r, &widths);
        // Coarse quantization forces magnitude ties across and within layers.
        let levels = r.random_range(2..=8) as f64;
        for layer in params.layers_mut() {
            for w in &mut layer.weight {
                *w = (*w * levels).round() / levels;
            }
        }
        assert!(params.total_prunable() <= 1000);
        let density = r.random_range(0.3..1.0);
        let mask = random_mask(&mut r, &params.layer_shapes(), density);
        let amount = r.random_range(0..=mask.count_ones());
        let pruned = magnitude_prune(&params, &mask, amount).unwrap();

        let mut survivors: Vec<(f64, usize, usize)> = Vec::new();
        for (l, layer) in params.layers().iter().enumerate() {
            for (i, w) in layer.weight.iter().enumerate() {
                if mask.get(l, i) {
                    survivors.push((w.abs(), l, i));
                }
            }
        }
        survivors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let expected: HashSet<(usize, usize)> = survivors[..amount].iter().map(|&(_, l, i)| (l, i)).collect();
        let mut removed = HashSet::new();
        for (l, layer) in params.layers().iter().enumerate() {
            for i in 0..layer.weight.len() {
                if mask.get(l, i) && !pruned.get(l, i) {
                    removed.insert((l, i));
                }
                assert!(mask.get(l, i) || !pruned.get(l, i), "pruned weight revived");
            }
        }
        if removed == expected {
            agree += 1;
        }
    }
    Outcome::new(agree == 50, format!("{agree} of 50 cases match the full-sort oracle"))
}

fn overlap_oracles() -> Outcome {
    let mut jaccard_ok = 0;
    for case in 0..100u64 {
        let mut r = common::rng(2000 + case);
        let shapes: Vec<(usize, usize)> = (0..r.random_range(1..=3))
            .map(|_| (r.random_range(1..=12), r.random_range(1..=12)))
            .collect();
        let (da, db) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let a = random_mask(&mut r, &shapes, da);
        let b = random_mask(&mut r, &shapes, db);
        let set = |m: &BinaryMask| -> HashSet<(usize, usize)> {
            let mut s = HashSet::new();
            for (l, &(o, i)) in shapes.iter().enumerate() {
                for k in 0..o * i {
                    if m.get(l, k) {
                        s.insert((l, k));
                    }
                }
            }
            s
        };
        let (sa, sb) = (set(&a), set(&b));
        let union = sa.union(&sb).count();
        let expected = if union == 0 {
            1.0
        } else {
            sa.intersection(&sb).count() as f64 / union as f64
        };
        if jaccard(&a, &b).unwrap() == expected {
            jaccard_ok += 1;
        }
    }

    let mut worst = 0.0f64;
    let mut spearman_ok = 0;
    for case in 0..20u64 {
        let mut r = common::rng(3000 + case);
        let n = r.random_range(3..=30);
        // Small integer ranges guarantee ties.
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0f64).round() + r.random_range(0..4) as f64).collect();
        let got = spearman(&a, &b).unwrap();
        let expected = rank_pearson(&a, &b);
        let ok = match (got, expected) {
            (Some(g), Some(e)) => {
                worst = worst.max((g - e).abs());
                (g - e).abs() <= 1e-12
            }
            (None, None) => true,
            _ => false,
        };
        if ok {
            spearman_ok += 1;
        }
    }
    Outcome::new(
        jaccard_ok == 100 && spearman_ok == 20,
        format!("jaccard {jaccard_ok}/100 exact, spearman {spearman_ok}/20 within 1e-12 (worst {worst:.1e})"),
    )
}

/// Mid-rank by counting, then the textbook Pearson formula.
fn rank_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn balanced_batch_fairness() -> Outcome {
    let mut r = common::rng(400);
    let task = common::detection_task(&mut r, &[50, 20, 7], 3);
    let plan = balance_batches(&task.partition, 5, 9).unwrap();
    let init = ParamSet::kaiming_normal(&[3, 8, 1], 4);
    let masks = MaskSet::ones((0..3).collect(), &init.layer_shapes()).unwrap();
    let epochs = 3;
    let cfg = RetrainConfig {
        epochs,
        batch_size: 5,
        adam: AdamConfig::with_lr(1e-3),
        seed: 9,
        optimizer_state: Default::default(),
    };
    let out = joint_retrain(&init, &masks, &task, &plan, &cfg).unwrap();
    let m = plan.batches_per_epoch();
    let expected = epochs * m;
    Outcome::new(
        m == 10 && out.updates.iter().all(|&u| u == expected),
        format!("M = {m}, updates per subnetwork {:?} over {epochs} epochs (expected {expected} each)", out.updates),
    )
}

fn specialization_gap() -> Outcome {
    let spec = ComparisonSpec::desk();
    let seeds: Vec<u64> = (0..5).collect();
    let start = Instant::now();
    let report = run_comparison(&spec, &seeds, false).unwrap();
    let per_seed = start.elapsed().as_secs_f64() / seeds.len() as f64;
    Outcome::new(
        report.verdict.passed && per_seed < 300.0,
        format!("{}; {per_seed:.1}s per seed", report.verdict.detail),
    )
}

fn inr_gap() -> Outcome {
    let spec = InrBenchSpec::desk();
    let seeds: Vec<u64> = (0..3).collect();
    let start = Instant::now();
    let report = run_inr_bench(&spec, &seeds, false).unwrap();
    let secs = start.elapsed().as_secs_f64();

    // Both arms start from the same weights.
    let (image, regions) = two_region_fixture(spec.size, 0).unwrap();
    let cfg = InrConfig {
        steps_per_round: 2,
        retrain_steps: 2,
        ..spec.inr.clone()
    };
    let schedule = cfg.schedule(0.1).unwrap();
    let routed = fit_inr(&image, &regions, &schedule, &cfg).unwrap();
    let single = fit_inr(&image, &RegionMap::uniform(image.width, image.height), &schedule, &cfg).unwrap();
    let shared = bits_of(&routed.init) == bits_of(&single.init);
    Outcome::new(
        report.verdict.passed && shared && secs < 300.0,
        format!("{}; shared init: {shared}; {secs:.1}s", report.verdict.detail),
    )
}

fn collapse_early_warning() -> Outcome {
    let spec = CollapseSpec::desk();
    let seeds: Vec<u64> = (0..5).collect();
    let report = run_collapse(&spec, &seeds, false).unwrap();
    Outcome::new(report.verdict.passed, report.verdict.detail)
}

fn semantic_alignment_sanity() -> Outcome {
    let data = SyntheticSpec {
        clusters: 5,
        per_cluster: 40,
        test_per_cluster: None,
        dim: 6,
        spread: 1.0,
        separation: 4.0,
    }
    .generate(3)
    .unwrap();
    let partition = partition_of(&data.train.labels, 5);
    let task = Task::new(data.train.features.clone(), partition, Objective::Detection, Activation::Relu).unwrap();
    let init = ParamSet::kaiming_normal(&[6, 16, 16, 1], 3);
    let cfg = ExtractionConfig {
        steps_per_round: 30,
        schedule: PruneSchedule::fraction(0.2, 0.8).unwrap(),
        batch_size: 16,
        adam: AdamConfig::with_lr(1e-2),
        seed: 3,
        parallel: false,
    };
    let (masks, _) = extract_tickets(&init, &task, &cfg).unwrap();
    let deep = Scope::Layer(masks.layer_shapes().len() - 2);
    let measured = similarity_matrix(&masks, deep).unwrap();
    let same = SemanticMatrix::new(measured.subset_ids.clone(), measured.values.clone()).unwrap();
    let reversed_values: Vec<Vec<f64>> = measured
        .values
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, v)| if i == j { 1.0 } else { 1.0 - v }).collect())
        .collect();
    let reversed = SemanticMatrix::new(measured.subset_ids.clone(), reversed_values).unwrap();
    let up = semantic_alignment(&masks, &same, deep).unwrap();
    let down = semantic_alignment(&masks, &reversed, deep).unwrap();
    Outcome::new(
        up == Some(1.0) && down == Some(-1.0),
        format!("rho {up:?} against itself, {down:?} against its reversal"),
    )
}

fn determinism_and_formats() -> Outcome {
    let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2).map(|_| pipeline_outputs(5)).collect();
    let files = runs[0].len();
    let identical = runs[0] == runs[1];

    let mut r = common::rng(1100);
    let mut json_ok = true;
    let mut bin_ok = true;
    for _ in 0..10 {
        let shapes = [(r.random_range(1..9), r.random_range(1..9)), (r.random_range(1..9), r.random_range(1..70))];
        let masks: Vec<BinaryMask> = (0..3).map(|_| random_mask(&mut r, &shapes, 0.4)).collect();
        let set = MaskSet::new(vec![0, 4, 9], masks).unwrap();
        json_ok &= MaskSet::from_json(&set.to_json().unwrap()).unwrap() == set;
        let params = random_params(&mut r, &[shapes[0].1, shapes[0].0, 3]);
        bin_ok &= bits_of(&params_from_bytes(&params_to_bytes(&params)).unwrap()) == bits_of(&params);
    }

    let (w, h) = (7, 5);
    let image = Image::new(w, h, 3, uniform_vec(&mut r, w * h * 3, 0.0, 1.0)).unwrap();
    let back = Image::from_pnm_bytes(&image.to_pnm_bytes()).unwrap();
    let worst = image.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pixmap_ok = worst <= 1.0 / 255.0;

    Outcome::new(
        identical && files > 0 && json_ok && bin_ok && pixmap_ok,
        format!(
            "{files} output files byte-identical across runs: {identical}; mask json: {json_ok}; params binary: {bin_ok}; pixmap worst error {worst:.2e}"
        ),
    )
}

/// Runs every subcommand for every method into a fresh directory and
/// returns all written files keyed by relative path.
fn pipeline_outputs(seed: u64) -> BTreeMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let config = out.join("config.json");
    std::fs::write(
        &config,
        r#"{
            "classification": {"kind": "synthetic", "clusters": 3, "per_cluster": 60, "dim": 5},
            "image": {"kind": "fixture", "size": 8},
            "hidden": [16, 16],
            "checkpoints": [0.5],
            "inr": {"hidden": [16, 16], "steps_per_round": 5, "retrain_steps": 20, "prune_per_round": 32},
            "inr_levels": [0.25, 0.5]
        }"#,
    )
    .unwrap();
    let seed = seed.to_string();
    let run = |args: &[&str]| {
        let mut argv = vec!["tickets"];
        argv.extend_from_slice(args);
        argv.extend(["--config", config.to_str().unwrap(), "--seed", &seed, "--out", out.to_str().unwrap()]);
        assert_eq!(adaptive_tickets::cli::main_with(argv), 0, "{args:?}");
    };
    run(&["gen-data"]);
    for baseline in [None, Some("imp-single"), Some("imp-multi")] {
        for cmd in ["extract", "retrain", "eval", "analyze"] {
            match baseline {
                Some(b) => run(&[cmd, "--baseline", b]),
                None => run(&[cmd]),
            }
        }
    }
    run(&["inr"]);
    let mut files = BTreeMap::new();
    collect(out, out, &mut files);
    files.remove("config.json");
    files
}

fn collect(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(root, &path, files);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            files.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}
