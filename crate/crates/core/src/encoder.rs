//! Convolutional encoder: history block of current/voltage samples to the
//! slow-state latent vector.
//!
//! The stack is a sequence of valid (unpadded) strided 1-D convolutions,
//! each followed by `tanh` or identity, then a flatten and an affine head
//! with no squashing. For output channel `j` and position `k`:
//!
//! ```text
//! q_j[k] = act( sum_i sum_r H_i[k * stride + r] * W_(i,j)[r] + b_j )
//! ```
//!
//! Conv weights are stored as `[out_channels x (in_channels * kernel_len)]`
//! with the kernel for input channel `i` at columns `i*L .. (i+1)*L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, dot, glorot_init, Gradients, ParamId, ParamStore, RealMatrix};

/// Input channels of a history block: current then voltage.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_len: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_len: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_len,
            stride,
            activation: Activation::Tanh,
        }
    }

    /// `floor((len_in - L) / stride) + 1`, or `None` when the kernel does
    /// not fit.
    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        if self.kernel_len == 0 || self.stride == 0 || input_len < self.kernel_len {
            return None;
        }
        Some((input_len - self.kernel_len) / self.stride + 1)
    }

    fn check(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_len == 0
            || self.stride == 0
        {
            return Err(Error::Config(format!(
                "conv layer has a zero dimension: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_a: usize,
    pub input_channels: usize,
    pub layers: Vec<ConvLayerSpec>,
    pub n_xs: usize,
}

impl EncoderConfig {
    /// Default conv schedule for a given history length.
    ///
    /// For `n_a >= 256` this is 2→8→16→16 channels with kernels 16/8/4 and
    /// strides 4/4/2 (at `n_a = 500` the conv output is 16 x 13). Shorter
    /// histories get a two-layer stack sized so the output keeps a few
    /// positions.
    pub fn default_for(n_a: usize, n_xs: usize) -> Self {
        let layers = if n_a >= 256 {
            vec![
                ConvLayerSpec::new(INPUT_CHANNELS, 8, 16, 4),
                ConvLayerSpec::new(8, 16, 8, 4),
                ConvLayerSpec::new(16, 16, 4, 2),
            ]
        } else if n_a >= 32 {
            vec![
                ConvLayerSpec::new(INPUT_CHANNELS, 8, 8, 4),
                ConvLayerSpec::new(8, 16, 4, 2),
            ]
        } else {
            vec![
                ConvLayerSpec::new(INPUT_CHANNELS, 4, 4, 2),
                ConvLayerSpec::new(4, 4, 3, 1),
            ]
        };
        Self {
            n_a,
            input_channels: INPUT_CHANNELS,
            layers,
            n_xs,
        }
    }

    /// Validates channel chaining and lengths; returns the conv stack's
    /// output `(channels, length)`.
    pub fn conv_output_shape(&self) -> Result<(usize, usize)> {
        if self.n_a == 0 || self.n_xs == 0 || self.input_channels == 0 {
            return Err(Error::Config(
                "encoder n_a, n_xs and input_channels must be positive".into(),
            ));
        }
        let mut channels = self.input_channels;
        let mut len = self.n_a;
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.check()?;
            if layer.in_channels != channels {
                return Err(Error::Config(format!(
                    "encoder layer {idx} expects {} input channels but receives {channels}",
                    layer.in_channels
                )));
            }
            len = layer.output_len(len).ok_or_else(|| {
                Error::Config(format!(
                    "encoder layer {idx}: kernel length {} exceeds incoming length {len}",
                    layer.kernel_len
                ))
            })?;
            channels = layer.out_channels;
        }
        Ok((channels, len))
    }

    pub fn flat_len(&self) -> Result<usize> {
        let (c, l) = self.conv_output_shape()?;
        Ok(c * l)
    }
}

/// Encoder output: the slow-state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    values: Vec<f64>,
}

impl LatentState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape(
                "latent state must have at least one feature".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "latent state has a non-finite entry".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// One-step slow-state transition. Slow states are treated as constant
    /// over a sampling period, so this is the identity.
    pub fn transition(&self) -> LatentState {
        self.clone()
    }
}

/// Single valid 1-D convolution. `input` is channel-major `[n x a]`.
pub fn conv1d_forward(
    input: &RealMatrix,
    layer: &ConvLayerSpec,
    weight: &RealMatrix,
    bias: &RealMatrix,
) -> Result<RealMatrix> {
    let out_len = check_conv_shapes(input, layer, weight, bias)?;
    let mut out = RealMatrix::zeros(layer.out_channels, out_len);
    conv_into(input, layer, weight, bias, &mut out);
    Ok(out)
}

fn check_conv_shapes(
    input: &RealMatrix,
    layer: &ConvLayerSpec,
    weight: &RealMatrix,
    bias: &RealMatrix,
) -> Result<usize> {
    layer.check()?;
    if input.rows() != layer.in_channels {
        return Err(Error::Shape(format!(
            "conv input has {} channels, layer expects {}",
            input.rows(),
            layer.in_channels
        )));
    }
    let out_len = layer.output_len(input.cols()).ok_or_else(|| {
        Error::Shape(format!(
            "kernel length {} exceeds input length {}",
            layer.kernel_len,
            input.cols()
        ))
    })?;
    let expected_w = (layer.out_channels, layer.in_channels * layer.kernel_len);
    if weight.shape() != expected_w {
        return Err(Error::Shape(format!(
            "conv weight is {:?}, expected {expected_w:?}",
            weight.shape()
        )));
    }
    if bias.shape() != (layer.out_channels, 1) {
        return Err(Error::Shape(format!(
            "conv bias is {:?}, expected ({}, 1)",
            bias.shape(),
            layer.out_channels
        )));
    }
    Ok(out_len)
}

fn conv_into(
    input: &RealMatrix,
    layer: &ConvLayerSpec,
    weight: &RealMatrix,
    bias: &RealMatrix,
    out: &mut RealMatrix,
) {
    let kl = layer.kernel_len;
    let out_len = out.cols();
    for j in 0..layer.out_channels {
        let w_row = weight.row(j);
        let b = bias.as_slice()[j];
        let out_row = out.row_mut(j);
        for (k, o) in out_row.iter_mut().enumerate().take(out_len) {
            let start = k * layer.stride;
            let mut acc = b;
            for i in 0..layer.in_channels {
                acc += dot(
                    &input.row(i)[start..start + kl],
                    &w_row[i * kl..(i + 1) * kl],
                );
            }
            *o = layer.activation.apply(acc);
        }
    }
}

/// Reverse pass of [`conv1d_forward`]. Accumulates into `d_weight` and
/// `d_bias`; returns the gradient with respect to `input`.
pub fn conv1d_backward(
    input: &RealMatrix,
    layer: &ConvLayerSpec,
    weight: &RealMatrix,
    output: &RealMatrix,
    d_output: &RealMatrix,
    d_weight: &mut RealMatrix,
    d_bias: &mut RealMatrix,
) -> RealMatrix {
    let kl = layer.kernel_len;
    let mut d_input = RealMatrix::zeros(input.rows(), input.cols());
    for j in 0..layer.out_channels {
        let w_row = weight.row(j);
        for k in 0..output.cols() {
            let dz = d_output.get(j, k) * layer.activation.derivative_from_output(output.get(j, k));
            if dz == 0.0 {
                continue;
            }
            d_bias.as_mut_slice()[j] += dz;
            let start = k * layer.stride;
            for i in 0..layer.in_channels {
                let x = &input.row(i)[start..start + kl];
                let dw = &mut d_weight.row_mut(j)[i * kl..(i + 1) * kl];
                for r in 0..kl {
                    dw[r] += dz * x[r];
                }
                let dx = &mut d_input.row_mut(i)[start..start + kl];
                let w = &w_row[i * kl..(i + 1) * kl];
                for r in 0..kl {
                    dx[r] += dz * w[r];
                }
            }
        }
    }
    d_input
}

/// Activations saved by [`Encoder::forward_cached`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Layer inputs followed by the final conv output; `len = layers + 1`.
    activations: Vec<RealMatrix>,
}

/// Parameter handles plus configuration for one encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    conv: Vec<(ParamId, ParamId)>,
    head_weight: ParamId,
    head_bias: ParamId,
}

impl Encoder {
    /// Registers freshly initialized encoder parameters in `params`:
    /// Glorot-uniform weights and zero biases.
    pub fn init(config: EncoderConfig, params: &mut ParamStore, seed: u64) -> Result<Self> {
        let flat = config.flat_len()?;
        let mut conv = Vec::with_capacity(config.layers.len());
        for (idx, layer) in config.layers.iter().enumerate() {
            let w = glorot_init(
                layer.out_channels,
                layer.in_channels * layer.kernel_len,
                derive_seed(seed, idx as u64),
            )?;
            let w = params.insert(format!("encoder.conv{idx}.weight"), w)?;
            let b = params.insert(
                format!("encoder.conv{idx}.bias"),
                RealMatrix::zeros(layer.out_channels, 1),
            )?;
            conv.push((w, b));
        }
        let hw = glorot_init(config.n_xs, flat, derive_seed(seed, 1000))?;
        let head_weight = params.insert("encoder.head.weight", hw)?;
        let head_bias = params.insert("encoder.head.bias", RealMatrix::zeros(config.n_xs, 1))?;
        Ok(Self {
            config,
            conv,
            head_weight,
            head_bias,
        })
    }

    /// Looks up existing parameters by name and checks their shapes.
    pub fn bind(config: EncoderConfig, params: &ParamStore) -> Result<Self> {
        let flat = config.flat_len()?;
        let expect = |name: String, shape: (usize, usize)| -> Result<ParamId> {
            let id = params.require(&name)?;
            if params.value(id).shape() != shape {
                return Err(Error::Shape(format!(
                    "parameter `{name}` is {:?}, configuration implies {shape:?}",
                    params.value(id).shape()
                )));
            }
            Ok(id)
        };
        let mut conv = Vec::with_capacity(config.layers.len());
        for (idx, layer) in config.layers.iter().enumerate() {
            let w = expect(
                format!("encoder.conv{idx}.weight"),
                (layer.out_channels, layer.in_channels * layer.kernel_len),
            )?;
            let b = expect(format!("encoder.conv{idx}.bias"), (layer.out_channels, 1))?;
            conv.push((w, b));
        }
        let head_weight = expect("encoder.head.weight".into(), (config.n_xs, flat))?;
        let head_bias = expect("encoder.head.bias".into(), (config.n_xs, 1))?;
        Ok(Self {
            config,
            conv,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn check_input(&self, input: &RealMatrix) -> Result<()> {
        if input.rows() != self.config.input_channels || input.cols() != self.config.n_a {
            return Err(Error::Shape(format!(
                "encoder expects a history of n_a = {} samples x {} channels, got {} x {}",
                self.config.n_a,
                self.config.input_channels,
                input.cols(),
                input.rows()
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        params: &ParamStore,
        input: RealMatrix,
        keep: bool,
    ) -> Result<(LatentState, Vec<RealMatrix>)> {
        self.check_input(&input)?;
        let mut acts = Vec::with_capacity(self.conv.len() + 1);
        let mut current = input;
        for (layer, &(w, b)) in self.config.layers.iter().zip(&self.conv) {
            let next = conv1d_forward(&current, layer, params.value(w), params.value(b))?;
            if keep {
                acts.push(current);
            }
            current = next;
        }
        let hw = params.value(self.head_weight);
        let hb = params.value(self.head_bias).as_slice();
        let mut latent = vec![0.0; self.config.n_xs];
        hw.matvec_into(current.as_slice(), &mut latent);
        for (l, b) in latent.iter_mut().zip(hb) {
            *l += b;
        }
        if keep {
            acts.push(current);
        }
        Ok((LatentState::new(latent)?, acts))
    }

    /// Encodes a channel-major `[channels x n_a]` history.
    pub fn forward_channels(&self, params: &ParamStore, input: RealMatrix) -> Result<LatentState> {
        Ok(self.run(params, input, false)?.0)
    }

    pub fn forward_cached(
        &self,
        params: &ParamStore,
        input: RealMatrix,
    ) -> Result<(LatentState, EncoderCache)> {
        let (latent, activations) = self.run(params, input, true)?;
        Ok((latent, EncoderCache { activations }))
    }

    /// Reverse pass. Parameter gradients are added into `grads`; the return
    /// value is the gradient with respect to the channel-major input.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &EncoderCache,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<RealMatrix> {
        if cache.activations.len() != self.conv.len() + 1 {
            return Err(Error::MissingCache(
                "encoder activations do not match the layer stack",
            ));
        }
        if upstream.len() != self.config.n_xs {
            return Err(Error::Shape(format!(
                "encoder upstream gradient has length {}, expected n_xs = {}",
                upstream.len(),
                self.config.n_xs
            )));
        }
        let conv_out = cache.activations.last().expect("non-empty");
        let flat = conv_out.as_slice();
        let hw = params.value(self.head_weight);

        {
            let dhw = grads.get_mut(self.head_weight);
            for (o, &u) in upstream.iter().enumerate() {
                if u == 0.0 {
                    continue;
                }
                for (d, &x) in dhw.row_mut(o).iter_mut().zip(flat) {
                    *d += u * x;
                }
            }
        }
        for (d, &u) in grads
            .get_mut(self.head_bias)
            .as_mut_slice()
            .iter_mut()
            .zip(upstream)
        {
            *d += u;
        }
        let mut d_flat = vec![0.0; flat.len()];
        for (o, &u) in upstream.iter().enumerate() {
            for (d, &w) in d_flat.iter_mut().zip(hw.row(o)) {
                *d += u * w;
            }
        }
        let mut d_current = RealMatrix::from_vec(conv_out.rows(), conv_out.cols(), d_flat)?;

        for (idx, layer) in self.config.layers.iter().enumerate().rev() {
            let (w, b) = self.conv[idx];
            let input = &cache.activations[idx];
            let output = &cache.activations[idx + 1];
            let mut dw = std::mem::replace(grads.get_mut(w), RealMatrix::zeros(0, 0));
            let mut db = std::mem::replace(grads.get_mut(b), RealMatrix::zeros(0, 0));
            d_current = conv1d_backward(
                input,
                layer,
                params.value(w),
                output,
                &d_current,
                &mut dw,
                &mut db,
            );
            *grads.get_mut(w) = dw;
            *grads.get_mut(b) = db;
        }
        Ok(d_current)
    }
}

/// Converts a sample-major `[n_a x channels]` window into the channel-major
/// layout the conv stack consumes.
pub fn window_to_channels(window: &RealMatrix) -> RealMatrix {
    window.transpose()
}

/// Encodes a sample-major `[n_a x (n_u + n_y)]` history block.
pub fn encoder_forward(
    window: &RealMatrix,
    encoder: &Encoder,
    params: &ParamStore,
) -> Result<LatentState> {
    if window.rows() != encoder.config.n_a || window.cols() != encoder.config.input_channels {
        return Err(Error::Shape(format!(
            "history window must be n_a = {} samples x {} channels, got {} x {}",
            encoder.config.n_a,
            encoder.config.input_channels,
            window.rows(),
            window.cols()
        )));
    }
    encoder.forward_channels(params, window_to_channels(window))
}
