//! The `tickets` command line: each subcommand reads and writes artifacts
//! in one output directory, so stages can run separately.
//!
//! Layout of `--out DIR`:
//!
//! ```text
//! train.csv test.csv mapping.json     gen-data (classification)
//! image.ppm regions.pgm               gen-data (image)
//! <method>/init.bin masks.json        extract
//! <method>/extraction.csv checkpoint_<s>.json
//! <method>/params.bin | params_<id>.bin retrain.csv
//! <method>/metrics.json table1.csv    eval
//! inr/inr.csv inr/{rtl,baseline}_<s>.ppm inr/masks_<s>.json
//! analysis/...                        analyze
//! ```

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    alignment_summary, detect_collapse, similarity_matrix, CollapseRule, Scope, SemanticMatrix, SimilarityTrace,
};
use crate::baseline::Method;
use crate::bench::{run_benchmark, BenchmarkSpec};
use crate::data::{
    load_pixmap, save_pixmap, two_region_fixture, LabelMapping, LabeledDataset, RegionMap,
};
use crate::data::regions::DEFAULT_MIN_REGION;
use crate::error::{Error, Result};
use crate::experiment::{
    evaluate_method, extraction_config, method_init, method_task, retrain_config, retrain_method, ClassificationConfig,
    ClassificationData, SyntheticSpec,
};
use crate::extract::{extract_tickets, ExtractionConfig};
use crate::inr::{inr_sweep, InrConfig};
use crate::io;
use crate::mask::MaskSet;
use crate::network::ParamSet;
use crate::retrain::RetrainConfig;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tickets", about = "Subset-specific sparse subnetworks from one shared initialization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the classification data and the region image into --out.
    GenData(Common),
    /// Extract one mask per subset (or one mask for imp-single).
    Extract(MethodArgs),
    /// Retrain weights through extracted masks.
    Retrain(MethodArgs),
    /// Evaluate retrained detectors and refresh table1.csv.
    Eval(MethodArgs),
    /// Fit region subnetworks and the single-mask baseline to the image.
    Inr(Common),
    /// Mask similarity, collapse flag and semantic alignment.
    Analyze(MethodArgs),
    /// Run the canned desk-scale experiments; --seed offsets every seed.
    Bench(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured target sparsity.
    #[arg(long)]
    pub sparsity: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run a comparison arm instead of the routed method.
    #[arg(long, value_parser = parse_baseline)]
    pub baseline: Option<Method>,
}

fn parse_baseline(s: &str) -> std::result::Result<Method, String> {
    match s.parse::<Method>() {
        Ok(Method::Rtl) | Err(_) => Err(format!("expected imp-single or imp-multi, got {s:?}")),
        Ok(m) => Ok(m),
    }
}

impl MethodArgs {
    fn method(&self) -> Method {
        self.baseline.unwrap_or(Method::Rtl)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClassificationSource {
    Synthetic(SyntheticSpec),
    Csv {
        train: PathBuf,
        test: PathBuf,
        mapping: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ImageSource {
    Fixture {
        size: usize,
    },
    Pixmap {
        image: PathBuf,
        regions: PathBuf,
        #[serde(default = "default_min_region")]
        min_region: usize,
    },
}

fn default_min_region() -> usize {
    DEFAULT_MIN_REGION
}

/// Everything a run depends on besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub classification: ClassificationSource,
    pub image: ImageSource,
    pub sparsity: f64,
    pub hidden: Vec<usize>,
    /// Replaces the desk extraction settings; its schedule wins over `sparsity`.
    pub extraction: Option<ExtractionConfig>,
    pub retrain: Option<RetrainConfig>,
    /// Extra mask snapshots, each below `sparsity`, for the collapse trace.
    pub checkpoints: Vec<f64>,
    pub collapse_rule: CollapseRule,
    pub inr: InrConfig,
    pub inr_levels: Vec<f64>,
    /// CSV semantic similarity matrix for `analyze`.
    pub semantic: Option<PathBuf>,
    /// Used by `bench` only.
    pub bench: Option<BenchmarkSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            classification: ClassificationSource::Synthetic(crate::bench::ComparisonSpec::desk().data),
            image: ImageSource::Fixture { size: 16 },
            sparsity: 0.75,
            hidden: vec![32, 32],
            extraction: None,
            retrain: None,
            checkpoints: Vec::new(),
            collapse_rule: CollapseRule::default(),
            inr: InrConfig::default(),
            inr_levels: vec![0.25, 0.5, 0.75],
            semantic: None,
            bench: None,
        }
    }
}

impl RunConfig {
    pub fn load(common: &Common) -> Result<Self> {
        let mut cfg: RunConfig = match &common.config {
            Some(path) => serde_json::from_str(&io::read_artifact_string(path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.sparsity {
            cfg.sparsity = s;
            if let Some(e) = &mut cfg.extraction {
                e.schedule = e.schedule.clone().with_target(s).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(cfg)
    }

    /// The classification budget with every stage seeded.
    pub fn classification(&self, seed: u64) -> Result<ClassificationConfig> {
        self.classification_unchecked(seed).map_err(|e| match e {
            Error::Invalid(msg) => Error::Config(msg),
            other => other,
        })
    }

    fn classification_unchecked(&self, seed: u64) -> Result<ClassificationConfig> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!("sparsity {} outside [0, 1)", self.sparsity)));
        }
        let mut cfg = ClassificationConfig::desk(self.sparsity);
        cfg.hidden = self.hidden.clone();
        if let Some(e) = &self.extraction {
            cfg.extraction = e.clone();
        }
        if let Some(r) = &self.retrain {
            cfg.retrain = r.clone();
        }
        if !self.checkpoints.is_empty() {
            let levels = self.checkpoints.iter().copied().filter(|&c| c < cfg.extraction.schedule.target_sparsity);
            cfg.extraction.schedule = cfg.extraction.schedule.clone().with_checkpoints(levels.collect())?;
        }
        cfg.extraction.validate()?;
        Ok(cfg.seeded(seed))
    }
}

/// Maps an error to the documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::MissingArtifact(_) => EXIT_MISSING,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => 1,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenData(c) => cmd_gen_data(c),
        Command::Extract(m) => cmd_extract(m),
        Command::Retrain(m) => cmd_retrain(m),
        Command::Eval(m) => cmd_eval(m),
        Command::Inr(c) => cmd_inr(c),
        Command::Analyze(m) => cmd_analyze(m),
        Command::Bench(c) => cmd_bench(c),
    }
}

fn method_dir(out: &Path, method: Method) -> PathBuf {
    out.join(method.name())
}

fn level_name(s: f64) -> String {
    format!("{s}")
}

fn write_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let mut bytes = Vec::new();
    ds.write_csv(&mut bytes)?;
    io::write_atomic(path, &bytes)
}

pub fn cmd_gen_data(c: &Common) -> Result<()> {
    let cfg = RunConfig::load(c)?;
    let data = match &cfg.classification {
        ClassificationSource::Synthetic(spec) => spec.generate(c.seed)?,
        ClassificationSource::Csv { train, test, mapping } => {
            let train = LabeledDataset::read_csv(io::read_artifact(train)?.as_slice(), None)?;
            let test = LabeledDataset::read_csv(io::read_artifact(test)?.as_slice(), Some(train.class_count))?;
            let mapping = LabelMapping::from_json(&io::read_artifact_string(mapping)?)?;
            ClassificationData { train, test, mapping }
        }
    };
    write_dataset(&c.out.join("train.csv"), &data.train)?;
    write_dataset(&c.out.join("test.csv"), &data.test)?;
    io::write_string(&c.out.join("mapping.json"), &(data.mapping.to_json()? + "\n"))?;

    let (image, regions) = match &cfg.image {
        ImageSource::Fixture { size } => two_region_fixture(*size, c.seed)?,
        ImageSource::Pixmap {
            image,
            regions,
            min_region,
        } => {
            (load_pixmap(image)?, RegionMap::load(regions, *min_region)?)
        }
    };
    io::write_atomic(&c.out.join("image.ppm"), &image.to_pnm_bytes())?;
    io::write_atomic(&c.out.join("regions.pgm"), &regions.to_pgm_bytes()?)
}

fn load_data(out: &Path) -> Result<ClassificationData> {
    let train = LabeledDataset::read_csv(io::read_artifact(&out.join("train.csv"))?.as_slice(), None)?;
    let test = LabeledDataset::read_csv(io::read_artifact(&out.join("test.csv"))?.as_slice(), Some(train.class_count))?;
    let mapping = LabelMapping::from_json(&io::read_artifact_string(&out.join("mapping.json"))?)?;
    Ok(ClassificationData { train, test, mapping })
}

fn load_masks(path: &Path) -> Result<MaskSet> {
    MaskSet::from_json(&io::read_artifact_string(path)?)
}

fn load_init(dir: &Path) -> Result<ParamSet> {
    io::load_params(&dir.join("init.bin"))
}

pub fn cmd_extract(m: &MethodArgs) -> Result<()> {
    let c = &m.common;
    let cfg = RunConfig::load(c)?.classification(c.seed)?;
    let data = load_data(&c.out)?;
    let method = m.method();
    let task = method_task(&data, method)?;
    let init = method_init(&data, &cfg, method, c.seed);
    let k = data.mapping.subset_ids().len();
    // imp-multi keeps the routed masks; the same config and seed reproduce them.
    let (masks, trace) = extract_tickets(&init, &task, &extraction_config(&cfg, method, k))?;
    let dir = method_dir(&c.out, method);
    io::save_params(&init, &dir.join("init.bin"))?;
    io::write_string(&dir.join("masks.json"), &(masks.to_json()? + "\n"))?;
    io::write_atomic(&dir.join("extraction.csv"), &trace.to_csv()?)?;
    for (level, set) in &trace.checkpoints {
        io::write_string(
            &dir.join(format!("checkpoint_{}.json", level_name(*level))),
            &(set.to_json()? + "\n"),
        )?;
    }
    Ok(())
}

fn params_paths(dir: &Path, method: Method, masks: &MaskSet) -> Vec<PathBuf> {
    match method {
        Method::ImpMulti => masks
            .subset_ids()
            .iter()
            .map(|id| dir.join(format!("params_{id}.bin")))
            .collect(),
        _ => vec![dir.join("params.bin")],
    }
}

pub fn cmd_retrain(m: &MethodArgs) -> Result<()> {
    let c = &m.common;
    let cfg = RunConfig::load(c)?.classification(c.seed)?;
    let method = m.method();
    let dir = method_dir(&c.out, method);
    let init = load_init(&dir)?;
    let masks = load_masks(&dir.join("masks.json"))?;
    let data = load_data(&c.out)?;
    let task = method_task(&data, method)?;
    let outcomes = retrain_method(&task, &init, &masks, &retrain_config(&cfg, method), method)?;
    let mut trace = Vec::new();
    for (o, path) in outcomes.iter().zip(params_paths(&dir, method, &masks)) {
        if !o.params.is_finite() {
            return Err(Error::NonFinite("retrained parameters".into()));
        }
        io::save_params(&o.params, &path)?;
        trace.extend(o.trace.iter().cloned());
    }
    io::write_csv(&dir.join("retrain.csv"), &trace)
}

pub fn cmd_eval(m: &MethodArgs) -> Result<()> {
    let c = &m.common;
    let cfg = RunConfig::load(c)?;
    let method = m.method();
    let dir = method_dir(&c.out, method);
    let masks = load_masks(&dir.join("masks.json"))?;
    let params = params_paths(&dir, method, &masks)
        .iter()
        .map(|p| io::load_params(p))
        .collect::<Result<Vec<_>>>()?;
    let data = load_data(&c.out)?;
    let report = evaluate_method(&data, method, &params, &masks)?;
    io::write_json(&dir.join("metrics.json"), &report)?;
    write_table(&c.out, cfg.sparsity)
}

/// Rewrites `table1.csv` with a row for every method that has metrics.
fn write_table(out: &Path, sparsity: f64) -> Result<()> {
    let mut rows = Vec::new();
    for method in Method::ALL {
        let path = method_dir(out, method).join("metrics.json");
        if path.exists() {
            let report = serde_json::from_str(&io::read_artifact_string(&path)?)?;
            rows.push(crate::eval::TableRow::new(method.name(), sparsity, &report));
        }
    }
    io::write_csv(&out.join("table1.csv"), &rows)
}

pub fn cmd_inr(c: &Common) -> Result<()> {
    let cfg = RunConfig::load(c)?;
    let image = load_pixmap(c.out.join("image.ppm"))?;
    let regions = RegionMap::load(c.out.join("regions.pgm"), 0)?;
    let mut levels = cfg.inr_levels.clone();
    if let Some(s) = c.sparsity {
        levels = vec![s];
    }
    let sweep = inr_sweep(&image, &regions, &levels, &cfg.inr.seeded(c.seed))?;
    let dir = c.out.join("inr");
    io::write_atomic(&dir.join("inr.csv"), &sweep.to_csv()?)?;
    for l in &sweep.levels {
        let name = level_name(l.sparsity);
        save_pixmap(&l.rtl, dir.join(format!("rtl_{name}.ppm")))?;
        save_pixmap(&l.baseline, dir.join(format!("baseline_{name}.ppm")))?;
        io::write_string(&dir.join(format!("masks_{name}.json")), &(l.masks.to_json()? + "\n"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CollapseSummary {
    rule: CollapseRule,
    sparsity: Vec<f64>,
    mean_jaccard: Vec<f64>,
    flagged: Option<f64>,
}

pub fn cmd_analyze(m: &MethodArgs) -> Result<()> {
    let c = &m.common;
    let cfg = RunConfig::load(c)?;
    let dir = method_dir(&c.out, m.method());
    let masks = load_masks(&dir.join("masks.json"))?;
    let out = c.out.join("analysis").join(m.method().name());

    let mut scopes = vec![Scope::Global];
    scopes.extend((0..masks.layer_shapes().len()).map(Scope::Layer));
    for &scope in &scopes {
        let sim = similarity_matrix(&masks, scope)?;
        io::write_atomic(&out.join(format!("similarity_{}.csv", scope.label())), &sim.to_csv()?)?;
    }

    let mut levels = Vec::new();
    for &s in &cfg.checkpoints {
        let path = dir.join(format!("checkpoint_{}.json", level_name(s)));
        if path.exists() {
            levels.push((s, load_masks(&path)?));
        }
    }
    let extracted_at = crate::mask::sparsity_of(masks.mask(0));
    if levels.last().is_none_or(|(s, _)| *s < extracted_at) {
        levels.push((extracted_at, masks.clone()));
    }
    let trace = SimilarityTrace::from_levels(&levels, Scope::Global)?;
    let summary = CollapseSummary {
        rule: cfg.collapse_rule,
        flagged: detect_collapse(&trace, cfg.collapse_rule),
        sparsity: trace.sparsity,
        mean_jaccard: trace.mean_jaccard,
    };
    io::write_json(&out.join("collapse.json"), &summary)?;

    if let Some(path) = &cfg.semantic {
        let semantic = SemanticMatrix::from_csv(io::read_artifact(path)?.as_slice())?;
        io::write_json(&out.join("alignment.json"), &alignment_summary(&masks, &semantic, &scopes)?)?;
    }
    Ok(())
}

pub fn cmd_bench(c: &Common) -> Result<()> {
    let cfg = RunConfig::load(c)?;
    let mut spec = cfg.bench.unwrap_or_else(BenchmarkSpec::desk);
    spec.seeds.iter_mut().for_each(|s| *s += c.seed);
    if let Some(seeds) = &mut spec.inr_seeds {
        seeds.iter_mut().for_each(|s| *s += c.seed);
    }
    let report = run_benchmark(&spec)?;
    report.write(&c.out)?;
    for v in report.verdicts() {
        println!("{}", v.line());
    }
    Ok(())
}
