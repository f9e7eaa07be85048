use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::Parameters;
use crate::error::{Error, Result};
use crate::scenario::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    /// `x * tanh(softplus(x))`.
    Mish,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Mish => mish(x).0,
        }
    }

    /// Value and derivative in one pass.
    #[inline]
    pub fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Identity => (x, 1.0),
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Mish => mish(x),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Mish => mish(x).1,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Mish => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Mish),
            _ => None,
        }
    }
}

/// Mish and its derivative from a single exponential.
///
/// With `e = exp(x)`, `tanh(softplus(x)) = n / (n + 2)` where `n = e^2 + 2e`,
/// and `sigmoid(x) = e / (1 + e)`.
#[inline]
fn mish(x: f64) -> (f64, f64) {
    if x > 20.0 {
        // tanh(softplus(x)) == 1 to double precision
        return (x, 1.0);
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    let t = n / (n + 2.0);
    let sig = e / (1.0 + e);
    (x * t, t + x * (1.0 - t * t) * sig)
}

/// Layer widths from input to output plus the two activation choices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl NetSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        let spec = NetSpec {
            widths,
            hidden,
            output,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `input -> hidden.. -> output` with Mish hidden units.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, out_act: Activation) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::new(widths, Activation::Mish, out_act)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Invalid(format!(
                "network needs at least one hidden layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Invalid(format!(
                "zero layer width in {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Affine layer; `weight` is `(out, in)` so that `y = x W^T + b` on row batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    spec: NetSpec,
    layers: Vec<Dense>,
}

/// Layer inputs, pre-activations and activation slopes saved by [`NetParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    /// Activation derivative at each pre-activation; empty for identity layers.
    slope: Vec<Array2<f64>>,
}

impl NetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &NetSpec, stream: &mut SeededStream) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    stream.uniform(-limit, limit)
                });
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        NetParams {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        NetParams {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn from_layers(spec: NetSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.n_layers() {
            return Err(Error::shape(
                format!("{} layers", spec.n_layers()),
                layers.len(),
            ));
        }
        for (l, w) in layers.iter().zip(spec.widths.windows(2)) {
            if l.weight.dim() != (w[1], w[0]) || l.bias.len() != w[1] {
                return Err(Error::shape(
                    format!("({}, {}) + {}", w[1], w[0], w[1]),
                    format!("{:?} + {}", l.weight.dim(), l.bias.len()),
                ));
            }
        }
        Ok(NetParams { spec, layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::shape(
                format!("{} input columns", self.spec.input_dim()),
                x.ncols(),
            ));
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output
        } else {
            self.spec.hidden
        }
    }

    /// Forward pass over a row batch, keeping what [`backward`](Self::backward) needs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut slope = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            let act = self.activation(i);
            let (out, d) = if act == Activation::Identity {
                (z.clone(), Array2::zeros((0, 0)))
            } else {
                let mut out = Array2::zeros(z.raw_dim());
                let mut d = Array2::zeros(z.raw_dim());
                Zip::from(&mut out)
                    .and(&mut d)
                    .and(&z)
                    .for_each(|o, g, &v| {
                        let (a, da) = act.apply_with_derivative(v);
                        *o = a;
                        *g = da;
                    });
                (out, d)
            };
            inputs.push(h);
            pre.push(z);
            slope.push(d);
            h = out;
        }
        Ok((h, ForwardCache { inputs, pre, slope }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let mut z = h.dot(&layer.weight.t()) + &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            h = z;
        }
        Ok(h)
    }

    /// Reverse pass: gradients of the scalar whose output gradient is `upstream`.
    ///
    /// Returns parameter gradients (same shapes as `self`) and the gradient
    /// with respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(NetParams, Array2<f64>)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
        grads: &mut NetParams,
    ) -> Result<Array2<f64>> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::shape(
                format!("cache of {} layers", self.layers.len()),
                cache.pre.len(),
            ));
        }
        let last = cache.pre.last().unwrap();
        if upstream.dim() != last.dim() {
            return Err(Error::shape(
                format!("{:?}", last.dim()),
                format!("{:?}", upstream.dim()),
            ));
        }
        if grads.spec != self.spec {
            return Err(Error::shape(
                format!("{:?}", self.spec.widths),
                format!("{:?}", grads.spec.widths),
            ));
        }
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation(i);
            if act != Activation::Identity {
                delta *= &cache.slope[i];
            }
            let g = &mut grads.layers[i];
            g.weight += &delta.t().dot(&cache.inputs[i]);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[i].weight);
        }
        Ok(delta)
    }

    /// Gradient with respect to the input only; skips parameter gradients.
    pub fn backward_input(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let last = cache
            .pre
            .last()
            .ok_or_else(|| Error::shape("non-empty cache", 0))?;
        if cache.pre.len() != self.layers.len() || upstream.dim() != last.dim() {
            return Err(Error::shape(
                format!("{:?}", last.dim()),
                format!("{:?}", upstream.dim()),
            ));
        }
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation(i);
            if act != Activation::Identity {
                delta *= &cache.slope[i];
            }
            delta = delta.dot(&self.layers[i].weight);
        }
        Ok(delta)
    }

    pub fn add_assign(&mut self, other: &NetParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight *= k;
            l.bias *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl Parameters for NetParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}
