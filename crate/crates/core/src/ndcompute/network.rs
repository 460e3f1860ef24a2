//! Dense feed-forward networks with named output heads.
//!
//! A network is a stack of hidden affine layers (each followed by the shared
//! activation) and one affine output layer per head, all reading the last
//! hidden representation. Parameters live in a single flat vector in layer
//! order: hidden layers first, then heads in declaration order, each layer
//! stored as a row-major `out x in` weight matrix followed by its bias.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, MatRef};
use crate::error::{Error, Result};

/// Additive floor applied after every softplus head.
pub const SOFTPLUS_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Relu,
    Linear,
}

impl Activation {
    /// LeakyReLU with slope 0.2, the hidden activation of every generator.
    pub const DEFAULT_LEAKY: Activation = Activation::LeakyRelu { slope: 0.2 };

    #[inline]
    pub fn apply(self, pre: f64) -> f64 {
        pre * self.derivative(pre)
    }

    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadTransform {
    Identity,
    /// `softplus(a) + SOFTPLUS_FLOOR`.
    Softplus,
    Sigmoid,
}

impl HeadTransform {
    #[inline]
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            HeadTransform::Identity => raw,
            HeadTransform::Softplus => softplus(raw) + SOFTPLUS_FLOOR,
            HeadTransform::Sigmoid => sigmoid(raw),
        }
    }

    #[inline]
    pub fn derivative(self, raw: f64) -> f64 {
        match self {
            HeadTransform::Identity => 1.0,
            HeadTransform::Softplus => sigmoid(raw),
            HeadTransform::Sigmoid => {
                let s = sigmoid(raw);
                s * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub dim: usize,
    pub transform: HeadTransform,
}

impl HeadSpec {
    pub fn new(name: impl Into<String>, dim: usize, transform: HeadTransform) -> Self {
        HeadSpec {
            name: name.into(),
            dim,
            transform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Empty means each head is a single affine map of the input.
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub heads: Vec<HeadSpec>,
    pub l2_coefficient: f64,
}

/// Position of one affine layer inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.in_dim * self.out_dim
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.in_dim * self.out_dim;
        start..start + self.out_dim
    }

    pub fn len(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        activation: Activation,
        heads: Vec<HeadSpec>,
        l2_coefficient: f64,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            hidden_widths,
            activation,
            heads,
            l2_coefficient,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("network input_dim must be >= 1".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one head".into()));
        }
        for h in &self.heads {
            if h.dim == 0 {
                return Err(Error::InvalidConfig(format!("head '{}' has output_dim 0", h.name)));
            }
        }
        if !(self.l2_coefficient >= 0.0) {
            return Err(Error::InvalidConfig("l2_coefficient must be >= 0".into()));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !slope.is_finite() {
                return Err(Error::InvalidConfig("leaky slope must be finite".into()));
            }
        }
        Ok(())
    }

    /// Width of the representation the heads read from.
    pub fn trunk_width(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + self.heads.len());
        let mut offset = 0;
        let mut in_dim = self.input_dim;
        for &w in &self.hidden_widths {
            let shape = LayerShape {
                in_dim,
                out_dim: w,
                offset,
            };
            offset += shape.len();
            shapes.push(shape);
            in_dim = w;
        }
        for h in &self.heads {
            let shape = LayerShape {
                in_dim,
                out_dim: h.dim,
                offset,
            };
            offset += shape.len();
            shapes.push(shape);
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }
}

/// Flat parameter vector plus the shape manifest that addresses it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<LayerShape>,
    pub values: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec.layer_shapes();
        let total = layers.iter().map(LayerShape::len).sum();
        ParameterSet {
            layers,
            values: vec![0.0; total],
        }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        let layers = spec.layer_shapes();
        let total: usize = layers.iter().map(LayerShape::len).sum();
        if values.len() != total {
            return Err(Error::dims("parameter vector", total, values.len()));
        }
        Ok(ParameterSet { layers, values })
    }

    pub fn total_count(&self) -> usize {
        self.values.len()
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.values[self.layers[layer].weight_range()]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layers[layer].weight_range();
        &mut self.values[r]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.values[self.layers[layer].bias_range()]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layers[layer].bias_range();
        &mut self.values[r]
    }

    pub fn check_matches(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = spec.layer_shapes();
        if expected != self.layers {
            return Err(Error::InvalidInput(
                "parameter shape manifest does not match network spec".into(),
            ));
        }
        if self.values.len() != spec.parameter_count() {
            return Err(Error::dims("parameter vector", spec.parameter_count(), self.values.len()));
        }
        Ok(())
    }
}

/// Xavier-uniform weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> ParameterSet {
    let mut params = ParameterSet::zeros(spec);
    for l in 0..params.layers.len() {
        let shape = params.layers[l];
        let limit = (6.0 / (shape.in_dim + shape.out_dim) as f64).sqrt();
        for w in params.weight_mut(l) {
            *w = limit * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    params
}

/// Sum of squared weights (biases excluded) scaled by the spec's coefficient.
pub fn l2_penalty(spec: &NetworkSpec, params: &ParameterSet) -> f64 {
    if spec.l2_coefficient == 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for l in 0..params.layers.len() {
        s += params.weight(l).iter().map(|w| w * w).sum::<f64>();
    }
    spec.l2_coefficient * s
}

/// Adds `scale * d(l2_penalty)/d(params)` into `grad`.
pub fn add_l2_gradient(spec: &NetworkSpec, params: &ParameterSet, scale: f64, grad: &mut [f64]) {
    if spec.l2_coefficient == 0.0 {
        return;
    }
    let c = 2.0 * spec.l2_coefficient * scale;
    for shape in &params.layers {
        for i in shape.weight_range() {
            grad[i] += c * params.values[i];
        }
    }
}

/// Single-input forward pass.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
) -> Result<BTreeMap<String, Vec<f64>>> {
    let cache = forward_batch(spec, params, input, 1)?;
    Ok(spec
        .heads
        .iter()
        .enumerate()
        .map(|(i, h)| (h.name.clone(), cache.head_outputs[i].clone()))
        .collect())
}

/// Activations retained by a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    pub batch: usize,
    pub inputs: Vec<f64>,
    /// Pre-activations of each hidden layer, `batch x width`.
    pub pre: Vec<Vec<f64>>,
    /// Post-activations of each hidden layer.
    pub post: Vec<Vec<f64>>,
    /// Head values before the transform.
    pub head_raw: Vec<Vec<f64>>,
    /// Head values after the transform.
    pub head_outputs: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn head(&self, index: usize) -> &[f64] {
        &self.head_outputs[index]
    }

    fn trunk(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.inputs)
    }
}

fn affine_batch(
    shape: &LayerShape,
    params: &ParameterSet,
    layer: usize,
    input: &[f64],
    batch: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * shape.out_dim];
    let bias = params.bias(layer);
    for row in out.chunks_exact_mut(shape.out_dim) {
        row.copy_from_slice(bias);
    }
    gemm(
        batch,
        shape.in_dim,
        shape.out_dim,
        1.0,
        MatRef::row_major(input, shape.in_dim),
        MatRef::transposed(params.weight(layer), shape.in_dim),
        1.0,
        &mut out,
    );
    out
}

fn check_finite(values: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { node: what() })
    }
}

/// Forward pass over `batch` row-major inputs.
pub fn forward_batch(
    spec: &NetworkSpec,
    params: &ParameterSet,
    inputs: &[f64],
    batch: usize,
) -> Result<BatchCache> {
    if inputs.len() != batch * spec.input_dim {
        return Err(Error::dims("network input (layer 0)", batch * spec.input_dim, inputs.len()));
    }
    if params.layers.len() != spec.hidden_widths.len() + spec.heads.len() {
        return Err(Error::InvalidInput("parameter set has wrong number of layers".into()));
    }
    for (l, (shape, expected)) in params.layers.iter().zip(spec.layer_shapes()).enumerate() {
        if *shape != expected {
            return Err(Error::dims(
                format!("layer {l} parameters"),
                expected.len(),
                shape.len(),
            ));
        }
    }
    let n_hidden = spec.hidden_widths.len();
    let mut pre = Vec::with_capacity(n_hidden);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
    for l in 0..n_hidden {
        let shape = params.layers[l];
        let input = if l == 0 { inputs } else { &post[l - 1] };
        let p = affine_batch(&shape, params, l, input, batch);
        check_finite(&p, || format!("hidden layer {l} pre-activation"))?;
        let a: Vec<f64> = p.iter().map(|&v| spec.activation.apply(v)).collect();
        pre.push(p);
        post.push(a);
    }
    let trunk: &[f64] = post.last().map(Vec::as_slice).unwrap_or(inputs);
    let mut head_raw = Vec::with_capacity(spec.heads.len());
    let mut head_outputs = Vec::with_capacity(spec.heads.len());
    for (h, head) in spec.heads.iter().enumerate() {
        let l = n_hidden + h;
        let raw = affine_batch(&params.layers[l], params, l, trunk, batch);
        check_finite(&raw, || format!("head '{}' (layer {l})", head.name))?;
        let out: Vec<f64> = raw.iter().map(|&r| head.transform.apply(r)).collect();
        head_raw.push(raw);
        head_outputs.push(out);
    }
    Ok(BatchCache {
        batch,
        inputs: inputs.to_vec(),
        pre,
        post,
        head_raw,
        head_outputs,
    })
}

/// Reverse pass for a batched forward.
///
/// `head_grads[h]` holds d(objective)/d(head output) for head `h` (after the
/// transform), `batch x dim`, or `None` when the head does not enter the
/// objective. Parameter gradients are accumulated into `param_grad`, input
/// gradients into `input_grad` (`batch x input_dim`).
pub fn backward_batch(
    spec: &NetworkSpec,
    params: &ParameterSet,
    cache: &BatchCache,
    head_grads: &[Option<&[f64]>],
    mut param_grad: Option<&mut [f64]>,
    input_grad: Option<&mut [f64]>,
) -> Result<()> {
    let batch = cache.batch;
    let n_hidden = spec.hidden_widths.len();
    if head_grads.len() != spec.heads.len() {
        return Err(Error::dims("head gradient list", spec.heads.len(), head_grads.len()));
    }
    if let Some(g) = param_grad.as_deref() {
        if g.len() != params.total_count() {
            return Err(Error::dims("parameter gradient", params.total_count(), g.len()));
        }
    }
    let trunk_width = spec.trunk_width();
    let trunk = cache.trunk();
    let mut d_trunk = vec![0.0; batch * trunk_width];
    let mut any_head = false;
    for (h, head) in spec.heads.iter().enumerate() {
        let Some(upstream) = head_grads[h] else { continue };
        if upstream.len() != batch * head.dim {
            return Err(Error::dims(format!("gradient of head '{}'", head.name), batch * head.dim, upstream.len()));
        }
        check_finite(upstream, || format!("upstream gradient of head '{}'", head.name))?;
        any_head = true;
        let l = n_hidden + h;
        let shape = params.layers[l];
        let d_raw: Vec<f64> = upstream
            .iter()
            .zip(&cache.head_raw[h])
            .map(|(&g, &r)| g * head.transform.derivative(r))
            .collect();
        if let Some(pg) = param_grad.as_deref_mut() {
            accumulate_layer_grad(&shape, &d_raw, trunk, batch, pg);
        }
        gemm(
            batch,
            shape.out_dim,
            shape.in_dim,
            1.0,
            MatRef::row_major(&d_raw, shape.out_dim),
            MatRef::row_major(params.weight(l), shape.in_dim),
            1.0,
            &mut d_trunk,
        );
    }
    if !any_head {
        if let Some(ig) = input_grad {
            ig.iter_mut().for_each(|v| *v = 0.0);
        }
        return Ok(());
    }
    let mut d_post = d_trunk;
    for l in (0..n_hidden).rev() {
        let shape = params.layers[l];
        let d_pre: Vec<f64> = d_post
            .iter()
            .zip(&cache.pre[l])
            .map(|(&g, &p)| g * spec.activation.derivative(p))
            .collect();
        let layer_input: &[f64] = if l == 0 { &cache.inputs } else { &cache.post[l - 1] };
        if let Some(pg) = param_grad.as_deref_mut() {
            accumulate_layer_grad(&shape, &d_pre, layer_input, batch, pg);
        }
        let mut d_in = vec![0.0; batch * shape.in_dim];
        gemm(
            batch,
            shape.out_dim,
            shape.in_dim,
            1.0,
            MatRef::row_major(&d_pre, shape.out_dim),
            MatRef::row_major(params.weight(l), shape.in_dim),
            0.0,
            &mut d_in,
        );
        check_finite(&d_in, || format!("gradient entering hidden layer {l}"))?;
        d_post = d_in;
    }
    if let Some(ig) = input_grad {
        if ig.len() != d_post.len() {
            return Err(Error::dims("input gradient", d_post.len(), ig.len()));
        }
        for (dst, src) in ig.iter_mut().zip(&d_post) {
            *dst += src;
        }
    }
    Ok(())
}

fn accumulate_layer_grad(
    shape: &LayerShape,
    d_out: &[f64],
    input: &[f64],
    batch: usize,
    param_grad: &mut [f64],
) {
    gemm(
        shape.out_dim,
        batch,
        shape.in_dim,
        1.0,
        MatRef::transposed(d_out, shape.out_dim),
        MatRef::row_major(input, shape.in_dim),
        1.0,
        &mut param_grad[shape.weight_range()],
    );
    let bias = &mut param_grad[shape.bias_range()];
    for row in d_out.chunks_exact(shape.out_dim) {
        for (b, g) in bias.iter_mut().zip(row) {
            *b += g;
        }
    }
}

/// A network spec bundled with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let params = init_params(&spec, rng);
        Network { spec, params }
    }

    pub fn from_parts(spec: NetworkSpec, params: ParameterSet) -> Result<Self> {
        params.check_matches(&spec)?;
        Ok(Network { spec, params })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<BatchCache> {
        forward_batch(&self.spec, &self.params, inputs, batch)
    }

    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        head_grads: &[Option<&[f64]>],
        param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        backward_batch(&self.spec, &self.params, cache, head_grads, param_grad, input_grad)
    }

    pub fn l2_penalty(&self) -> f64 {
        l2_penalty(&self.spec, &self.params)
    }

    pub fn add_l2_gradient(&self, scale: f64, grad: &mut [f64]) {
        add_l2_gradient(&self.spec, &self.params, scale, grad)
    }
}
