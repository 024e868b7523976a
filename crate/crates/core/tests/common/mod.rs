#![allow(dead_code)]

use adaptive_tickets::data::Partition;
use adaptive_tickets::mask::BinaryMask;
use adaptive_tickets::network::{Layer, ParamSet};
use adaptive_tickets::rng::{self, Rng};
use adaptive_tickets::task::{Objective, Task};
use adaptive_tickets::tensor::{Activation, Tensor};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::derive(seed, &[0x7e57])
}

pub fn uniform_vec(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Dense layers with uniform weights and biases in `[-1, 1)`.
pub fn random_params(r: &mut Rng, widths: &[usize]) -> ParamSet {
    let layers = widths
        .windows(2)
        .map(|w| Layer::new(w[1], w[0], uniform_vec(r, w[0] * w[1], -1.0, 1.0), uniform_vec(r, w[1], -1.0, 1.0)).unwrap())
        .collect();
    ParamSet::new(layers).unwrap()
}

pub fn random_mask(r: &mut Rng, shapes: &[(usize, usize)], density: f64) -> BinaryMask {
    let bits: Vec<Vec<bool>> = shapes
        .iter()
        .map(|&(o, i)| (0..o * i).map(|_| r.random_bool(density)).collect())
        .collect();
    BinaryMask::from_bools(shapes, &bits).unwrap()
}

pub fn random_matrix(r: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, uniform_vec(r, rows * cols, -1.0, 1.0)).unwrap()
}

/// Detection task over random inputs with the given subset sizes.
pub fn detection_task(r: &mut Rng, sizes: &[usize], dim: usize) -> Task {
    let n: usize = sizes.iter().sum();
    let mut subsets = Vec::new();
    let mut start = 0;
    for &s in sizes {
        subsets.push((start..start + s).collect());
        start += s;
    }
    let partition = Partition::new((0..sizes.len()).collect(), subsets, n).unwrap();
    Task::new(random_matrix(r, n, dim), partition, Objective::Detection, Activation::Relu).unwrap()
}

pub fn bits_of(p: &ParamSet) -> Vec<u64> {
    p.layers()
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias).map(|v| v.to_bits()))
        .collect()
}
