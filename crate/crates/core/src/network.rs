//! Fully connected networks evaluated through a weight mask, with
//! hand-written reverse-mode gradients.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::rng;
use crate::tensor::{Activation, Tensor};

/// One dense layer: `out_dim × in_dim` row-major weights plus a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {out_dim}x{in_dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.out_dim, self.in_dim)
    }
}

/// The dense parameter vector, organized per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

impl ParamSet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("a network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(Error::LayerShape {
                    layer: l + 1,
                    expected: format!("in_dim {}", pair[0].out_dim),
                    actual: format!("in_dim {}", pair[1].in_dim),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Zero network with layer widths `[input, hidden..., output]`.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        Self {
            layers: widths.windows(2).map(|w| Layer::zeros(w[1], w[0])).collect(),
        }
    }

    /// He (Kaiming) normal initialization: weights drawn from
    /// `N(0, 2 / fan_in)`, biases zero.
    ///
    /// Each layer draws from its own stream, row by row. Two networks with
    /// the same seed and hidden widths therefore share every hidden weight,
    /// and an output layer with fewer rows is a prefix of a wider one.
    pub fn kaiming_normal(widths: &[usize], seed: u64) -> Self {
        let mut params = Self::zeros(widths);
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let std = (KAIMING_GAIN / layer.in_dim as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut r = rng::derive(seed, &[rng::tag::INIT, l as u64]);
            for w in layer.weight.iter_mut() {
                *w = normal.sample(&mut r);
            }
        }
        params
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// `[input, hidden..., output]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Layer::shape).collect()
    }

    /// Number of weight entries; biases are never pruned.
    pub fn total_prunable(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    pub fn total_dense(&self) -> usize {
        self.layers.iter().map(|l| l.bias.len()).sum()
    }

    pub fn check_congruent(&self, other: &ParamSet) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape(format!(
                "{} layers vs {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (l, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::LayerShape {
                    layer: l,
                    expected: format!("{}x{}", a.out_dim, a.in_dim),
                    actual: format!("{}x{}", b.out_dim, b.in_dim),
                });
            }
        }
        Ok(())
    }

    /// Copy with every masked-out weight set to zero.
    pub fn masked(&self, mask: &BinaryMask) -> Result<ParamSet> {
        mask.check_congruent(self)?;
        let mut out = self.clone();
        for (l, layer) in out.layers.iter_mut().enumerate() {
            let bits = mask.layer(l);
            for (i, w) in layer.weight.iter_mut().enumerate() {
                if !bits.get(i) {
                    *w = 0.0;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Gain of the fan-in scaled normal initializer (ReLU gain squared).
pub const KAIMING_GAIN: f64 = 2.0;

/// One gradient entry per parameter, laid out like [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            weights: params.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn check_congruent(&self, params: &ParamSet) -> Result<()> {
        if self.weights.len() != params.layers.len() || self.biases.len() != params.layers.len() {
            return Err(Error::Shape("gradient layer count differs from parameters".into()));
        }
        for (l, layer) in params.layers.iter().enumerate() {
            if self.weights[l].len() != layer.weight.len() || self.biases[l].len() != layer.bias.len() {
                return Err(Error::LayerShape {
                    layer: l,
                    expected: format!("{}x{}", layer.out_dim, layer.in_dim),
                    actual: format!("{} weights, {} biases", self.weights[l].len(), self.biases[l].len()),
                });
            }
        }
        Ok(())
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activation: Activation,
    shapes: Vec<(usize, usize)>,
    /// Input to every layer.
    inputs: Vec<Tensor>,
    /// Pre-activation output of every layer.
    pre: Vec<Tensor>,
    /// Masked weights actually used, `m ⊙ θ`.
    effective: Vec<Vec<f64>>,
    mask: BinaryMask,
}

impl ForwardCache {
    pub fn output_width(&self) -> usize {
        self.shapes.last().map_or(0, |s| s.0)
    }

    pub fn batch(&self) -> usize {
        self.inputs[0].rows()
    }
}

fn dense(input: &Tensor, weight: &[f64], bias: &[f64], out_dim: usize) -> Tensor {
    let n = input.rows();
    let in_dim = input.cols();
    let mut out = Vec::with_capacity(n * out_dim);
    for r in 0..n {
        let x = input.row(r);
        for o in 0..out_dim {
            let w = &weight[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias[o];
            for (a, b) in w.iter().zip(x) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    Tensor::matrix(n, out_dim, out).expect("consistent dims")
}

fn check_input(params: &ParamSet, mask: &BinaryMask, input: &Tensor) -> Result<()> {
    mask.check_congruent(params)?;
    if input.shape().len() != 2 {
        return Err(Error::Shape(format!("input must be rank 2, got shape {:?}", input.shape())));
    }
    if input.cols() != params.input_dim() {
        return Err(Error::LayerShape {
            layer: 0,
            expected: format!("input width {}", params.input_dim()),
            actual: format!("input width {}", input.cols()),
        });
    }
    Ok(())
}

/// Computes `f(x; m ⊙ θ)` for a batch of rows and keeps what backprop needs.
///
/// Hidden layers use `activation`; the last layer is linear.
pub fn forward(
    params: &ParamSet,
    mask: &BinaryMask,
    input: &Tensor,
    activation: Activation,
) -> Result<(Tensor, ForwardCache)> {
    check_input(params, mask, input)?;
    let depth = params.layers.len();
    let mut inputs = Vec::with_capacity(depth);
    let mut pre = Vec::with_capacity(depth);
    let mut effective = Vec::with_capacity(depth);
    let mut x = input.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let bits = mask.layer(l);
        let w: Vec<f64> = layer
            .weight
            .iter()
            .enumerate()
            .map(|(i, &w)| if bits.get(i) { w } else { 0.0 })
            .collect();
        let z = dense(&x, &w, &layer.bias, layer.out_dim);
        let next = if l + 1 < depth {
            let mut a = z.clone();
            a.data_mut().iter_mut().for_each(|v| *v = activation.apply(*v));
            a
        } else {
            z.clone()
        };
        inputs.push(std::mem::replace(&mut x, next));
        pre.push(z);
        effective.push(w);
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    let cache = ForwardCache {
        activation,
        shapes: params.layer_shapes(),
        inputs,
        pre,
        effective,
        mask: mask.clone(),
    };
    Ok((x, cache))
}

/// Forward pass without keeping a cache.
pub fn predict(params: &ParamSet, mask: &BinaryMask, input: &Tensor, activation: Activation) -> Result<Tensor> {
    check_input(params, mask, input)?;
    let depth = params.layers.len();
    let mut x = input.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let bits = mask.layer(l);
        let w: Vec<f64> = layer
            .weight
            .iter()
            .enumerate()
            .map(|(i, &w)| if bits.get(i) { w } else { 0.0 })
            .collect();
        x = dense(&x, &w, &layer.bias, layer.out_dim);
        if l + 1 < depth {
            x.data_mut().iter_mut().for_each(|v| *v = activation.apply(*v));
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(x)
}

/// Reverse-mode gradients of a scalar loss with respect to `θ`, given
/// `∂loss/∂output`.
///
/// The chain rule through `m ⊙ θ` makes the gradient of every masked-out
/// weight zero.
pub fn backward(cache: &ForwardCache, loss_grad: &Tensor) -> Result<Gradients> {
    let batch = cache.batch();
    let out_width = cache.output_width();
    if loss_grad.shape() != [batch, out_width] {
        return Err(Error::Shape(format!(
            "loss gradient {:?} does not match output [{batch}, {out_width}]",
            loss_grad.shape()
        )));
    }
    let depth = cache.shapes.len();
    let mut weights = vec![Vec::new(); depth];
    let mut biases = vec![Vec::new(); depth];
    let mut delta = loss_grad.data().to_vec();
    for l in (0..depth).rev() {
        let (out_dim, in_dim) = cache.shapes[l];
        let x = &cache.inputs[l];
        let mut gw = vec![0.0; out_dim * in_dim];
        let mut gb = vec![0.0; out_dim];
        for r in 0..batch {
            let xr = x.row(r);
            let dr = &delta[r * out_dim..(r + 1) * out_dim];
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * in_dim..(o + 1) * in_dim];
                for (g, &xv) in row.iter_mut().zip(xr) {
                    *g += d * xv;
                }
            }
        }
        let bits = cache.mask.layer(l);
        for (i, g) in gw.iter_mut().enumerate() {
            if !bits.get(i) {
                *g = 0.0;
            }
        }
        if l > 0 {
            let w = &cache.effective[l];
            let pre = &cache.pre[l - 1];
            let mut prev = vec![0.0; batch * in_dim];
            for r in 0..batch {
                let dr = &delta[r * out_dim..(r + 1) * out_dim];
                let pr = &mut prev[r * in_dim..(r + 1) * in_dim];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wv) in pr.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                        *p += d * wv;
                    }
                }
                for (p, &z) in pr.iter_mut().zip(pre.row(r)) {
                    *p *= cache.activation.derivative(z);
                }
            }
            delta = prev;
        }
        weights[l] = gw;
        biases[l] = gb;
    }
    Ok(Gradients { weights, biases })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(bias: Vec<f64>) -> ParamSet {
        ParamSet::new(vec![Layer::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], bias).unwrap()]).unwrap()
    }

    #[test]
    fn identity_forward() {
        let p = identity_layer(vec![0.0, 0.0]);
        let x = Tensor::matrix(1, 2, vec![3.0, 5.0]).unwrap();
        let (y, _) = forward(&p, &BinaryMask::ones_like(&p), &x, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn zero_mask_leaves_only_bias() {
        let p = identity_layer(vec![1.0, 2.0]);
        let x = Tensor::matrix(1, 2, vec![3.0, 5.0]).unwrap();
        let m = BinaryMask::zeros(&p.layer_shapes());
        let (y, _) = forward(&p, &m, &x, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let p = ParamSet::kaiming_normal(&[3, 4, 2], 1);
        let x = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
        let err = forward(&p, &BinaryMask::ones_like(&p), &x, Activation::Relu).unwrap_err();
        assert!(matches!(err, Error::LayerShape { layer: 0, .. }), "{err}");

        let bad = vec![Layer::zeros(4, 3), Layer::zeros(2, 5)];
        assert!(matches!(ParamSet::new(bad), Err(Error::LayerShape { layer: 1, .. })));
    }

    #[test]
    fn scalar_gradient_by_hand() {
        // loss = (w x - t)^2 with w = 2, x = 1, t = 0 -> dL/dw = 4
        let p = ParamSet::new(vec![Layer::new(1, 1, vec![2.0], vec![0.0]).unwrap()]).unwrap();
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let t = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let (y, cache) = forward(&p, &BinaryMask::ones_like(&p), &x, Activation::Linear).unwrap();
        let (_, g) = crate::tensor::loss_and_grad(&y, &t, crate::tensor::LossKind::MeanSquaredError).unwrap();
        let grads = backward(&cache, &g).unwrap();
        assert_eq!(grads.weights[0], vec![4.0]);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let p = ParamSet::kaiming_normal(&[2, 2], 3);
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (y, cache) = forward(&p, &BinaryMask::ones_like(&p), &x, Activation::Linear).unwrap();
        let (_, g) = crate::tensor::loss_and_grad(&y, &y, crate::tensor::LossKind::MeanSquaredError).unwrap();
        let grads = backward(&cache, &g).unwrap();
        assert!(grads.weights.iter().chain(&grads.biases).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_loss_grad() {
        let p = ParamSet::kaiming_normal(&[2, 3], 3);
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let (_, cache) = forward(&p, &BinaryMask::ones_like(&p), &x, Activation::Relu).unwrap();
        assert!(backward(&cache, &Tensor::zeros(vec![2, 2])).is_err());
    }

    #[test]
    fn kaiming_rows_are_prefix_stable() {
        let wide = ParamSet::kaiming_normal(&[8, 32, 32, 4], 9);
        let narrow = ParamSet::kaiming_normal(&[8, 32, 32, 1], 9);
        assert_eq!(wide.layers()[0], narrow.layers()[0]);
        assert_eq!(wide.layers()[1], narrow.layers()[1]);
        assert_eq!(&wide.layers()[2].weight[..32], &narrow.layers()[2].weight[..]);
    }
}
