//! Dense networks with ReLU hidden layers, analytic gradients and Adam.
//!
//! Weights are stored per layer as `out x in` row-major matrices. Batched
//! inputs are flat row-major `batch x in` slices. All arithmetic is `f64` and
//! every reduction runs in a fixed order, so identical inputs give bit-identical
//! outputs and gradients.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Relu,
}

/// Per-layer arrays shaped like an [`Mlp`]'s parameters. Used for gradients
/// and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArrays {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamArrays {
    pub fn zeros_like(net: &Mlp) -> Self {
        ParamArrays {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn same_shape(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.biases.len() == net.biases.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }
}

/// Multilayer perceptron parameters. Serializes to the checkpoint layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpWire", into = "MlpWire")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    output_activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Input to each layer, `batch x in`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer, `batch x out`.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], output_activation: Activation, rng: &mut Rng) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            output_activation,
            weights,
            biases,
        })
    }

    /// Builds a network from explicit parameters, validating every shape.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        output_activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Shape {
                context: "layer count",
                expected: layers,
                actual: weights.len().min(biases.len()),
            });
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] {
                return Err(Error::Shape {
                    context: "weight matrix",
                    expected: pair[0] * pair[1],
                    actual: weights[l].len(),
                });
            }
            if biases[l].len() != pair[1] {
                return Err(Error::Shape {
                    context: "bias vector",
                    expected: pair[1],
                    actual: biases[l].len(),
                });
            }
        }
        let net = Mlp {
            layer_sizes,
            output_activation,
            weights,
            biases,
        };
        if !net.params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Copy of the parameters as [`ParamArrays`].
    pub fn params(&self) -> ParamArrays {
        ParamArrays {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn slices(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes && self.output_activation == other.output_activation
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_batch(input, 1)
    }

    /// Output only; the cache is dropped.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.0)
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let in_dim = self.input_dim();
        if batch == 0 || input.len() != batch * in_dim {
            return Err(Error::Shape {
                context: "network input",
                expected: batch.max(1) * in_dim,
                actual: input.len(),
            });
        }
        let layers = self.weights.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut x = input.to_vec();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(&self.biases[l]);
            }
            // z (batch x out) += x (batch x in) * W^T (in x out)
            gemm(
                batch, fan_in, fan_out,
                &x, (fan_in, 1),
                &self.weights[l], (1, fan_in),
                &mut z, (fan_out, 1),
            );
            let a: Vec<f64> = if l + 1 == layers {
                match self.output_activation {
                    Activation::Identity => z.clone(),
                    Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
                }
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            inputs.push(std::mem::replace(&mut x, a));
            pre.push(z);
        }
        let cache = ForwardCache {
            batch,
            inputs,
            pre,
            output: x.clone(),
        };
        Ok((x, cache))
    }

    /// Reverse pass. `output_grad` is `d(scalar)/d(output)` for every batch
    /// row; parameter gradients are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(ParamArrays, Vec<f64>)> {
        let (grads, input_grad) = self.backward_impl(cache, output_grad, true)?;
        Ok((grads.expect("requested"), input_grad))
    }

    /// Reverse pass that only produces the gradient with respect to the input.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_impl(cache, output_grad, false)?.1)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        want_params: bool,
    ) -> Result<(Option<ParamArrays>, Vec<f64>)> {
        let layers = self.weights.len();
        let batch = cache.batch;
        if cache.inputs.len() != layers
            || cache.inputs[0].len() != batch * self.input_dim()
            || cache.pre[layers - 1].len() != batch * self.output_dim()
        {
            return Err(Error::Shape {
                context: "forward cache",
                expected: batch * self.input_dim(),
                actual: cache.inputs.first().map_or(0, Vec::len),
            });
        }
        if output_grad.len() != batch * self.output_dim() {
            return Err(Error::Shape {
                context: "output gradient",
                expected: batch * self.output_dim(),
                actual: output_grad.len(),
            });
        }

        let mut grads = want_params.then(|| ParamArrays::zeros_like(self));
        let mut delta: Vec<f64> = match self.output_activation {
            Activation::Identity => output_grad.to_vec(),
            Activation::Tanh => output_grad
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        };
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let x = &cache.inputs[l];
            if let Some(g) = grads.as_mut() {
                for drow in delta.chunks_exact(fan_out) {
                    for (b, &d) in g.biases[l].iter_mut().zip(drow) {
                        *b += d;
                    }
                }
                // dW (out x in) += delta^T (out x batch) * x (batch x in)
                gemm(
                    fan_out, batch, fan_in,
                    &delta, (1, fan_out),
                    x, (fan_in, 1),
                    &mut g.weights[l], (fan_in, 1),
                );
            }
            // dx (batch x in) = delta (batch x out) * W (out x in)
            let mut dx = vec![0.0; batch * fan_in];
            gemm(
                batch, fan_out, fan_in,
                &delta, (fan_out, 1),
                &self.weights[l], (fan_in, 1),
                &mut dx, (fan_in, 1),
            );
            if l > 0 {
                // ReLU derivative of the previous layer's pre-activation.
                for (g, &z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// `self := polyak * self + (1 - polyak) * main`.
    pub fn soft_update(&mut self, main: &Mlp, polyak: f64) {
        debug_assert!(self.same_shape(main));
        for (t, m) in self.slices_mut().zip(main.slices()) {
            for (tv, &mv) in t.iter_mut().zip(m) {
                *tv = polyak * *tv + (1.0 - polyak) * mv;
            }
        }
    }

    /// Largest absolute parameter difference.
    pub fn max_abs_diff(&self, other: &Mlp) -> f64 {
        self.slices()
            .zip(other.slices())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "a network needs at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// `c += a * b` for row/column-strided `m x k` and `k x n` operands.
#[allow(clippy::too_many_arguments)]
#[rustfmt::skip]
fn gemm(
    m: usize, k: usize, n: usize,
    a: &[f64], (a_row, a_col): (usize, usize),
    b: &[f64], (b_row, b_col): (usize, usize),
    c: &mut [f64], (c_row, c_col): (usize, usize),
) {
    debug_assert!(a.len() >= (m - 1) * a_row + (k - 1) * a_col + 1);
    debug_assert!(b.len() >= (k - 1) * b_row + (n - 1) * b_col + 1);
    debug_assert!(c.len() >= (m - 1) * c_row + (n - 1) * c_col + 1);
    // SAFETY: the bounds above cover every element the kernel touches, and
    // `c` does not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m, k, n,
            1.0,
            a.as_ptr(), a_row as isize, a_col as isize,
            b.as_ptr(), b_row as isize, b_col as isize,
            1.0,
            c.as_mut_ptr(), c_row as isize, c_col as isize,
        );
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: ParamArrays,
    pub second_moment: ParamArrays,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        AdamState {
            first_moment: ParamArrays::zeros_like(net),
            second_moment: ParamArrays::zeros_like(net),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.first_moment.same_shape(net) && self.second_moment.same_shape(net)
    }

    /// One bias-corrected Adam update. Non-finite gradients leave both the
    /// network and the state untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &ParamArrays, learning_rate: f64) -> Result<()> {
        if !grads.same_shape(net) || !self.matches(net) {
            return Err(Error::Shape {
                context: "adam step",
                expected: net.num_params(),
                actual: grads.iter().count(),
            });
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powf(t);
        let c2 = 1.0 - b2.powf(t);
        let params = net.slices_mut();
        let firsts = self.first_moment.slices_mut();
        let seconds = self.second_moment.slices_mut();
        let gs = grads.weights.iter().chain(&grads.biases);
        for (((p, m), v), g) in params.zip(firsts).zip(seconds).zip(gs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpWire {
    layer_sizes: Vec<usize>,
    hidden_activation: HiddenActivation,
    output_activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl TryFrom<MlpWire> for Mlp {
    type Error = Error;
    fn try_from(w: MlpWire) -> Result<Self> {
        Mlp::from_parts(w.layer_sizes, w.output_activation, w.weights, w.biases)
    }
}

impl From<Mlp> for MlpWire {
    fn from(m: Mlp) -> Self {
        MlpWire {
            layer_sizes: m.layer_sizes,
            hidden_activation: HiddenActivation::Relu,
            output_activation: m.output_activation,
            weights: m.weights,
            biases: m.biases,
        }
    }
}
