use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, rng_from_seed};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Dense network. Weight `l` has shape `(layer_sizes[l+1], layer_sizes[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the network input.
    inputs: Vec<Array2<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// Gradients with exactly the parameter shapes of the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        MlpGrads {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Iterates entries in checkpoint order: per layer, weights row-major then biases.
    pub fn iter_flat(&self) -> impl Iterator<Item = &T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter_flat().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.iter_flat().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub(crate) fn same_shapes(&self, net: &Mlp<T>) -> bool {
        self.weights.len() == net.weights.len()
            && self.biases.len() == net.biases.len()
            && self
                .weights
                .iter()
                .zip(&net.weights)
                .all(|(a, b)| a.dim() == b.dim())
            && self
                .biases
                .iter()
                .zip(&net.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

impl<T: Scalar> Mlp<T> {
    /// He-uniform weights, zero biases.
    ///
    /// Draw order is layer by layer, row-major within each weight matrix, one
    /// `f64` uniform `u` in `[0, 1)` per weight mapped to `b * (2u - 1)` with
    /// `b = sqrt(6 / fan_in)`.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be positive: {layer_sizes:?}"
            )));
        }

        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                let u: f64 = rng.random();
                T::lit(bound * (2.0 * u - 1.0))
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }

        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    /// Builds a network from explicit parameters, validating shapes and finiteness.
    pub fn from_parts(
        activation: Activation,
        weights: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices vs {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_sizes.last().unwrap() || w.nrows() != b.len() {
                return Err(Error::Shape(format!("layer {l} has inconsistent shape")));
            }
            layer_sizes.push(w.nrows());
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Shape("zero-width layer".into()));
        }
        let net = Mlp {
            layer_sizes,
            activation,
            weights,
            biases,
        };
        if !net.iter_params().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Multiplies the output layer's weights and biases by `factor`.
    pub fn scale_output_layer(&mut self, factor: T) {
        let last = self.weights.len() - 1;
        self.weights[last].mapv_inplace(|w| w * factor);
        self.biases[last].mapv_inplace(|b| b * factor);
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<T>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters in checkpoint order.
    pub fn iter_params(&self) -> impl Iterator<Item = &T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn param(&self, index: usize) -> T {
        *self.iter_params().nth(index).expect("parameter index out of range")
    }

    pub fn set_param(&mut self, index: usize, value: T) {
        *self
            .iter_params_mut()
            .nth(index)
            .expect("parameter index out of range") = value;
    }

    /// 64-bit FNV-1a digest of the parameter bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.param_count() * 8);
        for v in self.iter_params() {
            v.write_le_f64(&mut bytes);
        }
        fnv1a64(&bytes)
    }

    /// Runs a batch (one sample per row) and keeps what backward needs.
    pub fn forward(&self, input: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(last);
        let mut h = input.to_owned();
        for l in 0..=last {
            let mut z = h.dot(&self.weights[l].t());
            z += &self.biases[l];
            inputs.push(h);
            if l == last {
                return Ok((z, ForwardCache { inputs, pre }));
            }
            let a = self.activate(&z);
            pre.push(z);
            h = a;
        }
        unreachable!("networks have at least one layer")
    }

    /// Forward pass without a cache.
    pub fn predict(&self, input: ArrayView2<T>) -> Result<Array2<T>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = input.dot(&self.weights[0].t());
        h += &self.biases[0];
        for l in 1..=last {
            let a = self.activate(&h);
            h = a.dot(&self.weights[l].t());
            h += &self.biases[l];
        }
        Ok(h)
    }

    /// Single-sample forward.
    pub fn predict_one(&self, input: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    fn activate(&self, z: &Array2<T>) -> Array2<T> {
        match self.activation {
            Activation::Relu => z.mapv(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Tanh => z.mapv(|v| v.tanh()),
        }
    }

    /// Multiplies `grad` in place by the activation derivative at `pre`.
    fn activation_backward(&self, grad: &mut Array2<T>, pre: &Array2<T>) {
        match self.activation {
            Activation::Relu => Zip::from(grad).and(pre).for_each(|g, &z| {
                if z <= T::zero() {
                    *g = T::zero();
                }
            }),
            Activation::Tanh => Zip::from(grad).and(pre).for_each(|g, &z| {
                let t = z.tanh();
                *g = *g * (T::one() - t * t);
            }),
        }
    }

    fn check_cache(&self, cache: &ForwardCache<T>, output_gradient: &ArrayView2<T>) -> Result<()> {
        let consistent = cache.inputs.len() == self.num_layers()
            && cache.pre.len() == self.num_layers() - 1
            && cache
                .inputs
                .iter()
                .enumerate()
                .all(|(l, x)| x.ncols() == self.layer_sizes[l])
            && cache
                .pre
                .iter()
                .enumerate()
                .all(|(l, z)| z.ncols() == self.layer_sizes[l + 1]);
        if !consistent {
            return Err(Error::Shape("forward cache does not match this network".into()));
        }
        let batch = cache.batch_size();
        if output_gradient.dim() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, expected ({batch}, {})",
                output_gradient.dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Parameter gradients of `sum(output ⊙ output_gradient)`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_gradient: ArrayView2<T>,
    ) -> Result<MlpGrads<T>> {
        self.backward_impl(cache, output_gradient, true, false)
            .map(|(g, _)| g.expect("parameter gradients requested"))
    }

    /// Parameter gradients plus the gradient with respect to the network input.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        output_gradient: ArrayView2<T>,
    ) -> Result<(MlpGrads<T>, Array2<T>)> {
        let (g, x) = self.backward_impl(cache, output_gradient, true, true)?;
        Ok((g.unwrap(), x.unwrap()))
    }

    /// Gradient with respect to the input only; skips parameter gradients.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache<T>,
        output_gradient: ArrayView2<T>,
    ) -> Result<Array2<T>> {
        self.backward_impl(cache, output_gradient, false, true)
            .map(|(_, x)| x.unwrap())
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        output_gradient: ArrayView2<T>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<MlpGrads<T>>, Option<Array2<T>>)> {
        self.check_cache(cache, &output_gradient)?;
        let n = self.num_layers();
        let mut dw = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        let mut g = output_gradient.to_owned();
        let mut input_grad = None;
        for l in (0..n).rev() {
            if want_params {
                dw.push(g.t().dot(&cache.inputs[l]));
                db.push(g.sum_axis(Axis(0)));
            }
            if l > 0 {
                let mut upstream = g.dot(&self.weights[l]);
                self.activation_backward(&mut upstream, &cache.pre[l - 1]);
                g = upstream;
            } else if want_input {
                input_grad = Some(g.dot(&self.weights[0]));
            }
        }
        let grads = want_params.then(|| {
            dw.reverse();
            db.reverse();
            MlpGrads {
                weights: dw,
                biases: db,
            }
        });
        Ok((grads, input_grad))
    }

    /// `self = coef * self + (1 - coef) * source`.
    pub fn polyak_from(&mut self, source: &Mlp<T>, coef: T) {
        let keep = coef;
        let take = T::one() - coef;
        for (t, s) in self.weights.iter_mut().zip(&source.weights) {
            Zip::from(t).and(s).for_each(|t, &s| *t = keep * *t + take * s);
        }
        for (t, s) in self.biases.iter_mut().zip(&source.biases) {
            Zip::from(t).and(s).for_each(|t, &s| *t = keep * *t + take * s);
        }
    }

    /// Euclidean distance between two parameter vectors of equal shape.
    pub fn param_distance(&self, other: &Mlp<T>) -> T {
        self.iter_params()
            .zip(other.iter_params())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            weights: self.weights.iter().map(|w| w.mapv(|v| U::lit(v.to_f64_lossy()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|v| U::lit(v.to_f64_lossy()))).collect(),
        }
    }
}
