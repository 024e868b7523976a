//! Coordinate networks that fit a single image, with one subnetwork per
//! region of a segmentation map.
//!
//! Pixel coordinates in `[-1, 1]²` pass through a Fourier encoding and a
//! ReLU MLP with a linear RGB head. Region subnetworks are extracted with
//! prune-and-rewind on the region's pixels, then retrained jointly. A
//! uniform region map gives the single-mask baseline from the same seed and
//! initial weights.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::analysis::{similarity_matrix, Scope};
use crate::data::{image_to_coord_dataset, partition_by_label, CoordConvention, Image, LabelMapping, RegionMap};
use crate::error::{Error, Result};
use crate::extract::{extract_tickets, ExtractionConfig, ExtractionTrace};
use crate::mask::{MaskSet, PruneSchedule};
use crate::network::{predict, ParamSet};
use crate::retrain::{balance_batches, joint_retrain, EpochRecord, OptimizerState, RetrainConfig};
use crate::task::{Objective, Task};
use crate::tensor::{Activation, Tensor};

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Sinusoids of each coordinate at frequencies `2^j π`, `j < num_bands`,
/// optionally followed by the raw coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierEncoder {
    pub num_bands: usize,
    pub include_raw: bool,
}

impl Default for FourierEncoder {
    /// Eight bands plus raw coordinates: 34 features.
    fn default() -> Self {
        Self {
            num_bands: 8,
            include_raw: true,
        }
    }
}

impl FourierEncoder {
    pub fn width(&self) -> usize {
        4 * self.num_bands + if self.include_raw { 2 } else { 0 }
    }

    /// `[sin 2^j πx, cos 2^j πx, sin 2^j πy, cos 2^j πy]` for each band,
    /// then `(x, y)`.
    pub fn encode(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        for j in 0..self.num_bands {
            let f = (1u64 << j) as f64 * PI;
            out.extend([(f * x).sin(), (f * x).cos(), (f * y).sin(), (f * y).cos()]);
        }
        if self.include_raw {
            out.extend([x, y]);
        }
        out
    }

    /// Encodes every row of an `n × 2` coordinate matrix.
    pub fn encode_all(&self, coords: &Tensor) -> Result<Tensor> {
        if coords.shape().len() != 2 || coords.cols() != 2 {
            return Err(Error::Shape(format!("coordinates of shape {:?}", coords.shape())));
        }
        let data = (0..coords.rows())
            .flat_map(|i| self.encode(coords.row(i)[0], coords.row(i)[1]))
            .collect();
        Tensor::matrix(coords.rows(), self.width(), data)
    }
}

/// A coordinate network and the encoding in front of it.
#[derive(Clone, Debug, PartialEq)]
pub struct InrModel {
    pub params: ParamSet,
    pub encoder: FourierEncoder,
}

impl InrModel {
    /// Kaiming initialization, `encoder width → hidden… → channels`.
    pub fn init(encoder: FourierEncoder, hidden: &[usize], channels: usize, seed: u64) -> Self {
        let mut widths = vec![encoder.width()];
        widths.extend(hidden);
        widths.push(channels);
        Self {
            params: ParamSet::kaiming_normal(&widths, seed),
            encoder,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.params.input_dim() != self.encoder.width() {
            return Err(Error::Shape(format!(
                "network takes {} inputs but the encoder yields {}",
                self.params.input_dim(),
                self.encoder.width()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InrConfig {
    #[serde(default)]
    pub encoder: FourierEncoder,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Weights removed from each region mask per round.
    #[serde(default = "default_prune_per_round")]
    pub prune_per_round: usize,
    /// Full-batch Adam steps per pruning round.
    #[serde(default = "default_steps_per_round")]
    pub steps_per_round: usize,
    /// Full-batch updates per subnetwork during retraining.
    #[serde(default = "default_retrain_steps")]
    pub retrain_steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub convention: CoordConvention,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parallel: bool,
    /// Region subnetworks overlap heavily, so by default they share one
    /// set of Adam moments during retraining.
    #[serde(default = "default_optimizer_state")]
    pub optimizer_state: OptimizerState,
}

fn default_hidden() -> Vec<usize> {
    vec![32; 4]
}

fn default_prune_per_round() -> usize {
    64
}

fn default_steps_per_round() -> usize {
    100
}

fn default_retrain_steps() -> usize {
    3000
}

fn default_lr() -> f64 {
    1e-3
}

fn default_optimizer_state() -> OptimizerState {
    OptimizerState::Shared
}

impl Default for InrConfig {
    fn default() -> Self {
        Self {
            encoder: FourierEncoder::default(),
            hidden: default_hidden(),
            prune_per_round: default_prune_per_round(),
            steps_per_round: default_steps_per_round(),
            retrain_steps: default_retrain_steps(),
            lr: default_lr(),
            convention: CoordConvention::default(),
            seed: 0,
            parallel: false,
            optimizer_state: default_optimizer_state(),
        }
    }
}

impl InrConfig {
    pub fn seeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn schedule(&self, target_sparsity: f64) -> Result<PruneSchedule> {
        PruneSchedule::count(self.prune_per_round, target_sparsity)
    }

    pub fn init(&self, channels: usize) -> InrModel {
        InrModel::init(self.encoder, &self.hidden, channels, self.seed)
    }

    fn extraction(&self, schedule: &PruneSchedule, pixels: usize) -> ExtractionConfig {
        ExtractionConfig {
            steps_per_round: self.steps_per_round,
            schedule: schedule.clone(),
            batch_size: pixels,
            adam: AdamConfig::with_lr(self.lr),
            seed: self.seed,
            parallel: self.parallel,
        }
    }

    fn retrain(&self, pixels: usize) -> RetrainConfig {
        RetrainConfig {
            epochs: self.retrain_steps,
            batch_size: pixels,
            adam: AdamConfig::with_lr(self.lr),
            seed: self.seed,
            optimizer_state: self.optimizer_state,
        }
    }
}

/// The regression task over an image: one sample per pixel, one subset per
/// region.
pub fn inr_task(image: &Image, regions: &RegionMap, cfg: &InrConfig) -> Result<Task> {
    let ds = image_to_coord_dataset(image, regions, cfg.convention)?;
    let partition = partition_by_label(&ds, &LabelMapping::identity(regions.region_count()))?;
    let inputs = cfg.encoder.encode_all(&ds.features)?;
    let targets = ds.targets.ok_or_else(|| Error::Invalid("coordinate dataset without targets".into()))?;
    Task::new(inputs, partition, Objective::Regression { targets }, Activation::Relu)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InrTrace {
    pub extraction: ExtractionTrace,
    pub retrain: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InrFit {
    /// Shared initial weights every mask was extracted from.
    pub init: ParamSet,
    /// Retrained weights.
    pub model: InrModel,
    pub masks: MaskSet,
    pub trace: InrTrace,
}

impl InrFit {
    pub fn reconstruct(&self, regions: &RegionMap, convention: CoordConvention) -> Result<Image> {
        reconstruct(&self.model, &self.masks, regions, convention)
    }
}

/// Extracts one mask per region under `schedule`, then retrains all of
/// them jointly from the initial weights.
pub fn fit_inr(image: &Image, regions: &RegionMap, schedule: &PruneSchedule, cfg: &InrConfig) -> Result<InrFit> {
    let task = inr_task(image, regions, cfg)?;
    let init = cfg.init(image.channels);
    let pixels = image.pixel_count();
    let (masks, extraction) = extract_tickets(&init.params, &task, &cfg.extraction(schedule, pixels))?;
    let (model, retrain) = retrain_inr(&init, &masks, &task, cfg)?;
    Ok(InrFit {
        init: init.params,
        model,
        masks,
        trace: InrTrace { extraction, retrain },
    })
}

fn retrain_inr(init: &InrModel, masks: &MaskSet, task: &Task, cfg: &InrConfig) -> Result<(InrModel, Vec<EpochRecord>)> {
    let rcfg = cfg.retrain(task.partition.sample_count());
    let plan = balance_batches(&task.partition, rcfg.batch_size, rcfg.seed)?;
    let out = joint_retrain(&init.params, masks, task, &plan, &rcfg)?;
    Ok((
        InrModel {
            params: out.params,
            encoder: init.encoder,
        },
        out.trace,
    ))
}

/// Evaluates every pixel through the mask of its region, clamped to
/// `[0, 1]`.
pub fn reconstruct(model: &InrModel, masks: &MaskSet, regions: &RegionMap, convention: CoordConvention) -> Result<Image> {
    model.check()?;
    let (w, h) = (regions.width, regions.height);
    let channels = model.params.output_dim();
    let mut data = vec![0.0; w * h * channels];
    for id in 0..regions.region_count() {
        let mask = masks.for_subset(id)?;
        let pixels: Vec<usize> = (0..w * h).filter(|&i| regions.labels()[i] == id).collect();
        let coords: Vec<f64> = pixels
            .iter()
            .flat_map(|&i| model.encoder.encode(convention.coord(i % w, w), convention.coord(i / w, h)))
            .collect();
        let inputs = Tensor::matrix(pixels.len(), model.encoder.width(), coords)?;
        let out = predict(&model.params, mask, &inputs, Activation::Relu)?;
        for (r, &i) in pixels.iter().enumerate() {
            for (c, &v) in out.row(r).iter().enumerate() {
                data[i * channels + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(w, h, channels, data)
}

fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::Shape(format!(
            "{}x{}x{} image against {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

fn psnr_of_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// `10 log10(1 / MSE)` over all pixels and channels, capped.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a, b)?;
    let se: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(psnr_of_mse(se / a.data.len() as f64))
}

/// PSNR restricted to each region's pixels, indexed by region id.
pub fn region_psnr(a: &Image, b: &Image, regions: &RegionMap) -> Result<Vec<f64>> {
    check_same_dims(a, b)?;
    if (a.width, a.height) != (regions.width, regions.height) {
        return Err(Error::Shape("region map does not match the images".into()));
    }
    let c = a.channels;
    let mut se = vec![0.0; regions.region_count()];
    for (i, &r) in regions.labels().iter().enumerate() {
        se[r] += (i * c..(i + 1) * c).map(|j| (a.data[j] - b.data[j]).powi(2)).sum::<f64>();
    }
    Ok(se
        .iter()
        .zip(regions.region_sizes())
        .map(|(s, n)| psnr_of_mse(s / (n * c) as f64))
        .collect())
}

/// Both arms at one sparsity level.
#[derive(Clone, Debug, PartialEq)]
pub struct InrLevel {
    pub sparsity: f64,
    pub rtl: Image,
    pub baseline: Image,
    pub psnr_rtl: f64,
    pub psnr_baseline: f64,
    pub region_psnr: Vec<f64>,
    /// Mean Jaccard of each region mask to the others.
    pub region_similarity: Vec<f64>,
    pub masks: MaskSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InrSweep {
    pub region_count: usize,
    pub levels: Vec<InrLevel>,
}

impl InrSweep {
    /// Columns: sparsity, both PSNRs, then per-region PSNR and similarity.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sparsity".to_string(), "psnr_rtl".into(), "psnr_baseline".into()];
        header.extend((0..self.region_count).map(|r| format!("psnr_region_{r}")));
        header.extend((0..self.region_count).map(|r| format!("similarity_region_{r}")));
        w.write_record(&header)?;
        for l in &self.levels {
            let mut row = vec![l.sparsity, l.psnr_rtl, l.psnr_baseline];
            row.extend(&l.region_psnr);
            row.extend(&l.region_similarity);
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Fits region subnetworks and the single-mask baseline at each sparsity
/// level. Extraction runs once per arm with every level as a checkpoint;
/// each level is then retrained from the shared initial weights.
pub fn inr_sweep(image: &Image, regions: &RegionMap, levels: &[f64], cfg: &InrConfig) -> Result<InrSweep> {
    let mut levels = levels.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let target = *levels.last().ok_or_else(|| Error::Config("no sparsity levels".into()))?;
    let schedule = cfg.schedule(target)?.with_checkpoints(levels.clone())?;
    let uniform = RegionMap::uniform(image.width, image.height);
    let init = cfg.init(image.channels);
    let pixels = image.pixel_count();

    let mut arms = Vec::new();
    for map in [regions, &uniform] {
        let task = inr_task(image, map, cfg)?;
        let (_, trace) = extract_tickets(&init.params, &task, &cfg.extraction(&schedule, pixels))?;
        arms.push((task, trace.checkpoints));
    }

    let mut out = Vec::with_capacity(levels.len());
    for (i, &sparsity) in levels.iter().enumerate() {
        let masks = arms[0].1[i].1.clone();
        let (rtl_model, _) = retrain_inr(&init, &masks, &arms[0].0, cfg)?;
        let (base_model, _) = retrain_inr(&init, &arms[1].1[i].1, &arms[1].0, cfg)?;
        let rtl = reconstruct(&rtl_model, &masks, regions, cfg.convention)?;
        let baseline = reconstruct(&base_model, &arms[1].1[i].1, &uniform, cfg.convention)?;
        let sim = similarity_matrix(&masks, Scope::Global)?;
        out.push(InrLevel {
            sparsity,
            psnr_rtl: psnr(&rtl, image)?,
            psnr_baseline: psnr(&baseline, image)?,
            region_psnr: region_psnr(&rtl, image, regions)?,
            region_similarity: (0..masks.len()).map(|k| sim.mean_to_others(k)).collect(),
            rtl,
            baseline,
            masks,
        });
    }
    Ok(InrSweep {
        region_count: regions.region_count(),
        levels: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_encoding() {
        let e = FourierEncoder::default();
        let v = e.encode(0.0, 0.0);
        assert_eq!(v.len(), 34);
        for band in v[..32].chunks(4) {
            assert_eq!(band, [0.0, 1.0, 0.0, 1.0]);
        }
        assert_eq!(&v[32..], [0.0, 0.0]);
    }

    #[test]
    fn single_band_at_x_one() {
        let e = FourierEncoder {
            num_bands: 1,
            include_raw: true,
        };
        let v = e.encode(1.0, 0.0);
        assert!(v[0].abs() < 1e-15);
        assert_eq!(v[1], -1.0);
        assert_eq!(&v[2..], [0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn width_formula() {
        for l in 0..6 {
            for raw in [false, true] {
                let e = FourierEncoder {
                    num_bands: l,
                    include_raw: raw,
                };
                assert_eq!(e.encode(0.3, -0.7).len(), e.width());
            }
        }
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(4, 4, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(4, 4, &[0.6, 0.4, 0.6]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = Image::filled(4, 3, &[0.5, 0.5, 0.5]).unwrap();
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn uniform_region_psnr_is_global() {
        let a = Image::filled(3, 3, &[0.2]).unwrap();
        let b = Image::filled(3, 3, &[0.3]).unwrap();
        let r = region_psnr(&a, &b, &RegionMap::uniform(3, 3)).unwrap();
        assert_eq!(r, vec![psnr(&a, &b).unwrap()]);
    }

    #[test]
    fn model_widths_chain() {
        let m = InrModel::init(FourierEncoder::default(), &[32; 4], 3, 0);
        assert_eq!(m.params.widths(), vec![34, 32, 32, 32, 32, 3]);
        m.check().unwrap();
    }
}
