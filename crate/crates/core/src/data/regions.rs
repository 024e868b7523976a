//! Per-pixel region labels and coordinate datasets for image fitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::pixmap::Image;
use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Regions smaller than this many pixels are folded into a neighbor.
pub const DEFAULT_MIN_REGION: usize = 4;

/// Region id per pixel, ids compact in `0..region_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<usize>,
    region_count: usize,
}

impl RegionMap {
    /// Builds a map from raw labels, relabeling the distinct ids present to
    /// `0..n` in ascending order.
    pub fn new(width: usize, height: usize, raw: Vec<usize>) -> Result<Self> {
        if raw.len() != width * height || raw.is_empty() {
            return Err(Error::Shape(format!(
                "{width}x{height} region map given {} labels",
                raw.len()
            )));
        }
        let mut ids: Vec<usize> = raw.clone();
        ids.sort_unstable();
        ids.dedup();
        let remap: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Self {
            width,
            height,
            labels: raw.iter().map(|l| remap[l]).collect(),
            region_count: ids.len(),
        })
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            region_count: 1,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Folds every region with fewer than `min_pixels` pixels into the most
    /// frequent 4-neighbor label outside the small regions, then relabels
    /// compactly. Ties go to the lower region id. Repeats until stable.
    pub fn reassign_small_regions(&self, min_pixels: usize) -> Result<Self> {
        let mut labels = self.labels.clone();
        loop {
            let mut sizes = BTreeMap::<usize, usize>::new();
            for &l in &labels {
                *sizes.entry(l).or_default() += 1;
            }
            let small: Vec<usize> = sizes.iter().filter(|(_, &n)| n < min_pixels).map(|(&l, _)| l).collect();
            if small.is_empty() || small.len() == sizes.len() {
                break;
            }
            let is_small = |l: usize| small.binary_search(&l).is_ok();
            let mut changed = false;
            let snapshot = labels.clone();
            for y in 0..self.height {
                for x in 0..self.width {
                    let i = y * self.width + x;
                    if !is_small(snapshot[i]) {
                        continue;
                    }
                    let mut votes = BTreeMap::<usize, usize>::new();
                    let mut neighbor = |nx: usize, ny: usize| {
                        let l = snapshot[ny * self.width + nx];
                        if !is_small(l) {
                            *votes.entry(l).or_default() += 1;
                        }
                    };
                    if x > 0 {
                        neighbor(x - 1, y);
                    }
                    if x + 1 < self.width {
                        neighbor(x + 1, y);
                    }
                    if y > 0 {
                        neighbor(x, y - 1);
                    }
                    if y + 1 < self.height {
                        neighbor(x, y + 1);
                    }
                    if let Some((&best, _)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                        labels[i] = best;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Self::new(self.width, self.height, labels)
    }

    /// Reads a P5 graymap whose gray levels are region ids, then folds away
    /// regions smaller than `min_pixels`.
    pub fn load(path: impl AsRef<Path>, min_pixels: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_pgm_bytes(&bytes)?.reassign_small_regions(min_pixels)
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, offset) = super::pixmap::parse_header(bytes)?;
        if header.magic != b'5' {
            return Err(Error::Pixmap("region maps must be P5 graymaps".into()));
        }
        let n = header.width * header.height;
        let payload = bytes.get(offset..offset + n).ok_or_else(|| Error::Pixmap("payload truncated".into()))?;
        Self::new(header.width, header.height, payload.iter().map(|&b| b as usize).collect())
    }

    pub fn to_pgm_bytes(&self) -> Result<Vec<u8>> {
        if self.region_count > 256 {
            return Err(Error::Invalid("more than 256 regions cannot be stored in a P5 map".into()));
        }
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.labels.iter().map(|&l| l as u8));
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), &self.to_pgm_bytes()?)
    }
}

/// How pixel indices map to continuous coordinates in `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordConvention {
    /// Pixel centers with half-pixel insets: `-1 + (2i + 1) / n`.
    #[default]
    PixelCenter,
    /// First and last pixel exactly on `±1`: `-1 + 2i / (n - 1)`.
    CornerAnchored,
}

impl CoordConvention {
    pub fn coord(self, i: usize, n: usize) -> f64 {
        match self {
            CoordConvention::PixelCenter => -1.0 + (2 * i + 1) as f64 / n as f64,
            CoordConvention::CornerAnchored if n > 1 => -1.0 + 2.0 * i as f64 / (n - 1) as f64,
            CoordConvention::CornerAnchored => 0.0,
        }
    }

    /// Inverse of [`coord`](Self::coord) for in-range pixel coordinates.
    pub fn index(self, c: f64, n: usize) -> usize {
        let i = match self {
            CoordConvention::PixelCenter => ((c + 1.0) * n as f64 - 1.0) / 2.0,
            CoordConvention::CornerAnchored if n > 1 => (c + 1.0) * (n - 1) as f64 / 2.0,
            CoordConvention::CornerAnchored => 0.0,
        };
        i.round() as usize
    }
}

/// One sample per pixel in row-major order: features `(x, y)`, targets the
/// pixel's channel values, label its region id.
pub fn image_to_coord_dataset(image: &Image, regions: &RegionMap, convention: CoordConvention) -> Result<LabeledDataset> {
    if image.width != regions.width || image.height != regions.height {
        return Err(Error::Shape(format!(
            "image is {}x{} but region map is {}x{}",
            image.width, image.height, regions.width, regions.height
        )));
    }
    let n = image.pixel_count();
    let mut coords = Vec::with_capacity(2 * n);
    for y in 0..image.height {
        for x in 0..image.width {
            coords.push(convention.coord(x, image.width));
            coords.push(convention.coord(y, image.height));
        }
    }
    let features = Tensor::matrix(n, 2, coords)?;
    let targets = Tensor::matrix(n, image.channels, image.data.clone())?;
    LabeledDataset::new(features, regions.labels.clone(), regions.region_count)?.with_targets(targets)
}

/// A square RGB test image split into two regions: a disk in the middle
/// and the surrounding background, each with its own color wave. Deterministic in `seed`.
pub fn two_region_fixture(size: usize, seed: u64) -> Result<(Image, RegionMap)> {
    let mut r = rng::derive(seed, &[rng::tag::DATA, 2]);
    // Per-region, per-channel texture parameters.
    let mut params = [[[0.0f64; 5]; 3]; 2];
    for region in params.iter_mut() {
        for ch in region.iter_mut() {
            *ch = [
                r.random_range(0.3..0.7),  // base level
                r.random_range(0.1..0.25), // amplitude
                r.random_range(1.0..4.0),  // x frequency
                r.random_range(1.0..4.0),  // y frequency
                r.random_range(0.0..std::f64::consts::TAU),
            ];
        }
    }
    let c = (size as f64 - 1.0) / 2.0;
    let radius = size as f64 * 0.3;
    let mut labels = Vec::with_capacity(size * size);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let inside = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt() <= radius;
            let region = usize::from(inside);
            labels.push(region);
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            for p in &params[region] {
                let wave = (std::f64::consts::TAU * (p[2] * u + p[3] * v) + p[4]).sin();
                data.push((p[0] + p[1] * wave).clamp(0.0, 1.0));
            }
        }
    }
    Ok((Image::new(size, size, 3, data)?, RegionMap::new(size, size, labels)?))
}
