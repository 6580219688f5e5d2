//! Layers, the sequential [`Model`] and its forward tape.
//!
//! Standard convolution zero-pads; tropical and mixed layers mask padding
//! (see [`crate::tropical`]). Every convolution-family layer carries one bias
//! per output channel, added after the channel aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvSpec, Geometry, NONE};
use crate::mixed::{self, MixMode, MixParams, MixedTape};
use crate::tensor::Tensor;
use crate::tropical::{self, ArgIndexMap, ChannelMode, WindowMode};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    StandardConv,
    TropicalConv { window: WindowMode, channel: ChannelMode },
    CompoundConv(MixMode),
    ParallelConv(MixMode),
    AvgPool,
    Sigmoid,
    ReLU,
    Flatten,
    Linear,
}

impl LayerKind {
    pub fn label(&self) -> String {
        let mix = |m: &MixMode| match m {
            MixMode::OneParam => "1p",
            MixMode::TwoParam => "2p",
            MixMode::FixedSum => "Fixed",
        };
        match self {
            LayerKind::StandardConv => "Conv".into(),
            LayerKind::TropicalConv { window, channel } => {
                let w = match window {
                    WindowMode::Min => "MinPlus",
                    WindowMode::Max => "MaxPlus",
                };
                format!("{w}{channel:?}Conv")
            }
            LayerKind::CompoundConv(m) => format!("CompoundConv{}", mix(m)),
            LayerKind::ParallelConv(m) => format!("ParallelConv{}", mix(m)),
            LayerKind::AvgPool => "AvgPool".into(),
            LayerKind::Sigmoid => "Sigmoid".into(),
            LayerKind::ReLU => "ReLU".into(),
            LayerKind::Flatten => "Flatten".into(),
            LayerKind::Linear => "Linear".into(),
        }
    }
}

/// SplitMix64 finalizer; derives independent parameter seeds from a model seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on `[-1/√fan_in, 1/√fan_in)`.
fn init_uniform(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor> {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    Tensor::uniform_fill(shape, -bound, bound, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StandardConv {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TropicalConv {
    pub spec: ConvSpec,
    pub window: WindowMode,
    pub channel: ChannelMode,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompoundConv {
    pub spec: ConvSpec,
    pub mode: MixMode,
    pub weight: Tensor,
    pub bias: Tensor,
    pub mix: MixParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelConv {
    pub spec: ConvSpec,
    pub mode: MixMode,
    pub weight_min: Tensor,
    pub weight_max: Tensor,
    pub bias: Tensor,
    pub mix: MixParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AvgPool {
    pub window: Vec<usize>,
    pub stride: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[in_features, out_features]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    StandardConv(StandardConv),
    Tropical(TropicalConv),
    Compound(CompoundConv),
    Parallel(ParallelConv),
    AvgPool(AvgPool),
    Sigmoid,
    ReLU,
    Flatten,
    Linear(Linear),
}

impl Layer {
    pub fn standard_conv(spec: ConvSpec, seed: u64) -> Result<Layer> {
        spec.validate()?;
        let fan = spec.fan_in();
        Ok(Layer::StandardConv(StandardConv {
            weight: init_uniform(&spec.weight_shape(), fan, derive_seed(seed, 0, 0))?,
            bias: init_uniform(&[spec.out_channels], fan, derive_seed(seed, 0, 1))?,
            spec,
        }))
    }

    pub fn tropical_conv(spec: ConvSpec, window: WindowMode, channel: ChannelMode, seed: u64) -> Result<Layer> {
        spec.validate()?;
        let fan = spec.fan_in();
        Ok(Layer::Tropical(TropicalConv {
            weight: init_uniform(&spec.weight_shape(), fan, derive_seed(seed, 0, 0))?,
            bias: init_uniform(&[spec.out_channels], fan, derive_seed(seed, 0, 1))?,
            spec,
            window,
            channel,
        }))
    }

    pub fn compound_conv(spec: ConvSpec, mode: MixMode, seed: u64) -> Result<Layer> {
        spec.validate()?;
        let fan = spec.fan_in();
        Ok(Layer::Compound(CompoundConv {
            weight: init_uniform(&spec.weight_shape(), fan, derive_seed(seed, 0, 0))?,
            bias: init_uniform(&[spec.out_channels], fan, derive_seed(seed, 0, 1))?,
            mix: MixParams::init(mode, spec.in_channels, spec.out_channels)?,
            spec,
            mode,
        }))
    }

    pub fn parallel_conv(spec: ConvSpec, mode: MixMode, seed: u64) -> Result<Layer> {
        spec.validate()?;
        let fan = spec.fan_in();
        Ok(Layer::Parallel(ParallelConv {
            weight_min: init_uniform(&spec.weight_shape(), fan, derive_seed(seed, 0, 0))?,
            weight_max: init_uniform(&spec.weight_shape(), fan, derive_seed(seed, 0, 2))?,
            bias: init_uniform(&[spec.out_channels], fan, derive_seed(seed, 0, 1))?,
            mix: MixParams::init(mode, spec.in_channels, spec.out_channels)?,
            spec,
            mode,
        }))
    }

    pub fn avg_pool(window: &[usize], stride: &[usize]) -> Result<Layer> {
        if window.is_empty() || window.len() != stride.len() || window.contains(&0) || stride.contains(&0) {
            return Err(Error::shape(format!("bad pooling window {window:?} / stride {stride:?}")));
        }
        Ok(Layer::AvgPool(AvgPool {
            window: window.to_vec(),
            stride: stride.to_vec(),
        }))
    }

    pub fn linear(in_features: usize, out_features: usize, seed: u64) -> Result<Layer> {
        Ok(Layer::Linear(Linear {
            weight: init_uniform(&[in_features, out_features], in_features, derive_seed(seed, 0, 0))?,
            bias: init_uniform(&[out_features], in_features, derive_seed(seed, 0, 1))?,
        }))
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::StandardConv(_) => LayerKind::StandardConv,
            Layer::Tropical(t) => LayerKind::TropicalConv {
                window: t.window,
                channel: t.channel,
            },
            Layer::Compound(c) => LayerKind::CompoundConv(c.mode),
            Layer::Parallel(p) => LayerKind::ParallelConv(p.mode),
            Layer::AvgPool(_) => LayerKind::AvgPool,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::ReLU => LayerKind::ReLU,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Linear(_) => LayerKind::Linear,
        }
    }

    pub fn conv_spec(&self) -> Option<&ConvSpec> {
        match self {
            Layer::StandardConv(c) => Some(&c.spec),
            Layer::Tropical(c) => Some(&c.spec),
            Layer::Compound(c) => Some(&c.spec),
            Layer::Parallel(c) => Some(&c.spec),
            _ => None,
        }
    }

    /// Learnable tensors, in a fixed order shared by [`Layer::params_mut`]
    /// and the gradients returned from [`Layer::backward`].
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = Vec::new();
        match self {
            Layer::StandardConv(c) => {
                out.push(("weight", &c.weight));
                out.push(("bias", &c.bias));
            }
            Layer::Tropical(c) => {
                out.push(("weight", &c.weight));
                out.push(("bias", &c.bias));
            }
            Layer::Compound(c) => {
                out.push(("weight", &c.weight));
                out.push(("bias", &c.bias));
                push_mix(&mut out, &c.mix, c.mode);
            }
            Layer::Parallel(c) => {
                out.push(("weight_min", &c.weight_min));
                out.push(("weight_max", &c.weight_max));
                out.push(("bias", &c.bias));
                push_mix(&mut out, &c.mix, c.mode);
            }
            Layer::Linear(l) => {
                out.push(("weight", &l.weight));
                out.push(("bias", &l.bias));
            }
            Layer::AvgPool(_) | Layer::Sigmoid | Layer::ReLU | Layer::Flatten => {}
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match self {
            Layer::StandardConv(c) => out.extend([&mut c.weight, &mut c.bias]),
            Layer::Tropical(c) => out.extend([&mut c.weight, &mut c.bias]),
            Layer::Compound(c) => {
                out.extend([&mut c.weight, &mut c.bias]);
                push_mix_mut(&mut out, &mut c.mix, c.mode);
            }
            Layer::Parallel(c) => {
                out.extend([&mut c.weight_min, &mut c.weight_max, &mut c.bias]);
                push_mix_mut(&mut out, &mut c.mix, c.mode);
            }
            Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
            Layer::AvgPool(_) | Layer::Sigmoid | Layer::ReLU | Layer::Flatten => {}
        }
        out
    }

    /// Output shape (including batch) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::StandardConv(_) | Layer::Tropical(_) | Layer::Compound(_) | Layer::Parallel(_) => {
                let spec = self.conv_spec().expect("conv layer");
                Ok(Geometry::new(spec, input)?.output_shape())
            }
            Layer::AvgPool(p) => Ok(Geometry::new(&p.as_spec(input)?, input)?.output_shape()),
            Layer::Sigmoid | Layer::ReLU => Ok(input.to_vec()),
            Layer::Flatten => {
                if input.len() < 2 {
                    return Err(Error::shape(format!("flatten needs a batch axis, got {input:?}")));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
            Layer::Linear(l) => {
                let (f, g) = (l.weight.shape()[0], l.weight.shape()[1]);
                if input.len() != 2 || input[1] != f {
                    return Err(Error::shape(format!("linear ({f} -> {g}) applied to {input:?}")));
                }
                Ok(vec![input[0], g])
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        match self {
            Layer::StandardConv(c) => {
                let y = conv_forward(x, &c.weight, &c.bias, &c.spec)?;
                Ok((y, Cache::Input(x.clone())))
            }
            Layer::Tropical(c) => {
                let (mut y, args) = tropical::tropical_conv_forward(x, &c.weight, &c.spec, c.window, c.channel)?;
                add_channel_bias(&mut y, &c.bias);
                Ok((y, Cache::Tropical(args)))
            }
            Layer::Compound(c) => {
                let (mut y, tape) = mixed::compound_forward(x, &c.weight, &c.mix, c.mode, &c.spec)?;
                add_channel_bias(&mut y, &c.bias);
                Ok((y, Cache::Mixed(Box::new(tape))))
            }
            Layer::Parallel(c) => {
                let (mut y, tape) =
                    mixed::parallel_forward(x, &c.weight_min, &c.weight_max, &c.mix, c.mode, &c.spec)?;
                add_channel_bias(&mut y, &c.bias);
                Ok((y, Cache::Mixed(Box::new(tape))))
            }
            Layer::AvgPool(p) => Ok((p.forward(x)?, Cache::Shape(x.shape().to_vec()))),
            Layer::Sigmoid => {
                let y = x.map(sigmoid);
                Ok((y.clone(), Cache::Output(y)))
            }
            Layer::ReLU => {
                let y = x.map(|v| v.max(0.0));
                Ok((y.clone(), Cache::Output(y)))
            }
            Layer::Flatten => {
                let shape = self.output_shape(x.shape())?;
                Ok((x.reshape(&shape)?, Cache::Shape(x.shape().to_vec())))
            }
            Layer::Linear(l) => {
                self.output_shape(x.shape())?;
                Ok((linear_forward(x, &l.weight, &l.bias)?, Cache::Input(x.clone())))
            }
        }
    }

    /// Returns the input gradient and one gradient per entry of [`Layer::params`].
    pub fn backward(&self, cache: &Cache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        match (self, cache) {
            (Layer::StandardConv(c), Cache::Input(x)) => {
                let (gi, gw, gb) = conv_backward(x, &c.weight, &c.spec, grad)?;
                Ok((gi, vec![gw, gb]))
            }
            (Layer::Tropical(c), Cache::Tropical(args)) => {
                let (gi, gw) = tropical::tropical_conv_backward(grad, args, &c.spec, c.channel)?;
                Ok((gi, vec![gw, channel_bias_grad(grad, c.spec.out_channels)?]))
            }
            (Layer::Compound(c), Cache::Mixed(tape)) => {
                let g = mixed::compound_backward(grad, tape, &c.mix, c.mode, &c.spec)?;
                let mut grads = vec![g.grad_weights, channel_bias_grad(grad, c.spec.out_channels)?];
                grads.extend(g.grad_alpha);
                grads.extend(g.grad_beta);
                Ok((g.grad_input, grads))
            }
            (Layer::Parallel(c), Cache::Mixed(tape)) => {
                let g = mixed::parallel_backward(grad, tape, &c.mix, c.mode, &c.spec)?;
                let mut grads = vec![
                    g.grad_weights,
                    g.grad_weights2.expect("parallel grads carry W_2"),
                    channel_bias_grad(grad, c.spec.out_channels)?,
                ];
                grads.extend(g.grad_alpha);
                grads.extend(g.grad_beta);
                Ok((g.grad_input, grads))
            }
            (Layer::AvgPool(p), Cache::Shape(shape)) => Ok((p.backward(shape, grad)?, vec![])),
            (Layer::Sigmoid, Cache::Output(y)) => {
                let data = grad.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                Ok((Tensor::from_vec(grad.shape(), data)?, vec![]))
            }
            (Layer::ReLU, Cache::Output(y)) => {
                let data = grad
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((Tensor::from_vec(grad.shape(), data)?, vec![]))
            }
            (Layer::Flatten, Cache::Shape(shape)) => Ok((grad.reshape(shape)?, vec![])),
            (Layer::Linear(l), Cache::Input(x)) => {
                let (gi, gw, gb) = linear_backward(x, &l.weight, grad)?;
                Ok((gi, vec![gw, gb]))
            }
            _ => Err(Error::contract(format!("cache does not belong to a {:?} layer", self.kind()))),
        }
    }
}

fn push_mix<'a>(out: &mut Vec<(&'static str, &'a Tensor)>, mix: &'a MixParams, mode: MixMode) {
    match mode {
        MixMode::FixedSum => {}
        MixMode::OneParam => out.extend(mix.alpha.iter().map(|t| ("alpha", t))),
        MixMode::TwoParam => {
            out.extend(mix.alpha.iter().map(|t| ("alpha", t)));
            out.extend(mix.beta.iter().map(|t| ("beta", t)));
        }
    }
}

fn push_mix_mut<'a>(out: &mut Vec<&'a mut Tensor>, mix: &'a mut MixParams, mode: MixMode) {
    match mode {
        MixMode::FixedSum => {}
        MixMode::OneParam => out.extend(mix.alpha.iter_mut()),
        MixMode::TwoParam => {
            out.extend(mix.alpha.iter_mut());
            out.extend(mix.beta.iter_mut());
        }
    }
}

/// Per-layer forward artifacts.
#[derive(Clone, Debug)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Shape(Vec<usize>),
    Tropical(ArgIndexMap),
    Mixed(Box<MixedTape>),
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

fn add_channel_bias(y: &mut Tensor, bias: &Tensor) {
    let (batch, cout) = (y.shape()[0], y.shape()[1]);
    let plane = y.numel() / (batch * cout);
    let b = bias.data();
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let bc = b[i % cout];
        chunk.iter_mut().for_each(|v| *v += bc);
    }
}

fn channel_bias_grad(grad: &Tensor, cout: usize) -> Result<Tensor> {
    let batch = grad.shape()[0];
    let plane = grad.numel() / (batch * cout);
    let mut gb = vec![0f32; cout];
    for (i, chunk) in grad.data().chunks(plane).enumerate() {
        gb[i % cout] += chunk.iter().sum::<f32>();
    }
    Tensor::from_vec(&[cout], gb)
}

/// Zero-padded cross-correlation: `y[n,co,p] = b[co] + Σ_{ci,k} x[n,ci,p·s−pad+k]·w[co,ci,k]`.
pub fn conv_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let geo = Geometry::new(spec, x.shape())?;
    tropical::check_weights(weight, spec)?;
    if bias.shape() != [spec.out_channels] {
        return Err(Error::shape(format!("bias shape {:?}, expected [{}]", bias.shape(), spec.out_channels)));
    }
    let (batch, cin, cout, positions, klen) = (
        geo.batch,
        geo.in_channels,
        geo.out_channels,
        geo.positions(),
        geo.kernel_len(),
    );
    let table = geo.window_table();
    let rows = cin * klen;
    let mut cols = vec![0f32; rows * positions];
    let mut out = vec![0f32; batch * cout * positions];
    let w = weight.data();
    for n in 0..batch {
        columns(&geo, &table, x, n, &mut cols);
        let y = &mut out[n * cout * positions..][..cout * positions];
        for co in 0..cout {
            let dst = &mut y[co * positions..][..positions];
            dst.iter_mut().for_each(|v| *v = bias.data()[co]);
            for j in 0..rows {
                let wv = w[co * rows + j];
                let src = &cols[j * positions..][..positions];
                for (d, &c) in dst.iter_mut().zip(src) {
                    *d += wv * c;
                }
            }
        }
    }
    Tensor::from_vec(&geo.output_shape(), out)
}

/// `cols[(ci·K + k)·P + p]` = zero-padded input under kernel offset `k` at position `p`.
fn columns(geo: &Geometry, table: &[u32], x: &Tensor, n: usize, cols: &mut [f32]) {
    let (cin, positions, klen, plane) = (geo.in_channels, geo.positions(), geo.kernel_len(), geo.in_plane());
    let xd = x.data();
    for ci in 0..cin {
        let src = &xd[(n * cin + ci) * plane..][..plane];
        for k in 0..klen {
            let dst = &mut cols[(ci * klen + k) * positions..][..positions];
            for (p, d) in dst.iter_mut().enumerate() {
                let idx = table[p * klen + k];
                *d = if idx == NONE { 0.0 } else { src[idx as usize] };
            }
        }
    }
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv_backward(x: &Tensor, weight: &Tensor, spec: &ConvSpec, grad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let geo = Geometry::new(spec, x.shape())?;
    if grad.shape() != geo.output_shape().as_slice() {
        return Err(Error::contract(format!(
            "conv grad {:?} does not match output {:?}",
            grad.shape(),
            geo.output_shape()
        )));
    }
    let (batch, cin, cout, positions, klen, plane) = (
        geo.batch,
        geo.in_channels,
        geo.out_channels,
        geo.positions(),
        geo.kernel_len(),
        geo.in_plane(),
    );
    let table = geo.window_table();
    let rows = cin * klen;
    let mut cols = vec![0f32; rows * positions];
    let mut gcols = vec![0f32; rows * positions];
    let mut gw = vec![0f32; weight.numel()];
    let mut gi = vec![0f32; x.numel()];
    let w = weight.data();
    for n in 0..batch {
        columns(&geo, &table, x, n, &mut cols);
        gcols.iter_mut().for_each(|v| *v = 0.0);
        let g = &grad.data()[n * cout * positions..][..cout * positions];
        for co in 0..cout {
            let gco = &g[co * positions..][..positions];
            for j in 0..rows {
                let c = &cols[j * positions..][..positions];
                gw[co * rows + j] += gco.iter().zip(c).map(|(a, b)| a * b).sum::<f32>();
                let wv = w[co * rows + j];
                for (d, &gv) in gcols[j * positions..][..positions].iter_mut().zip(gco) {
                    *d += wv * gv;
                }
            }
        }
        for ci in 0..cin {
            let dst = &mut gi[(n * cin + ci) * plane..][..plane];
            for k in 0..klen {
                let src = &gcols[(ci * klen + k) * positions..][..positions];
                for (p, &v) in src.iter().enumerate() {
                    let idx = table[p * klen + k];
                    if idx != NONE {
                        dst[idx as usize] += v;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gi)?,
        Tensor::from_vec(weight.shape(), gw)?,
        channel_bias_grad(grad, cout)?,
    ))
}

impl AvgPool {
    fn as_spec(&self, input: &[usize]) -> Result<ConvSpec> {
        if input.len() != self.window.len() + 2 {
            return Err(Error::shape(format!(
                "{}d pooling applied to shape {input:?}",
                self.window.len()
            )));
        }
        Ok(ConvSpec::new(input[1], input[1], &self.window).with_stride(&self.stride))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let geo = Geometry::new(&self.as_spec(x.shape())?, x.shape())?;
        let table = geo.window_table();
        let (positions, klen, plane) = (geo.positions(), geo.kernel_len(), geo.in_plane());
        let planes = geo.batch * geo.in_channels;
        let mut out = Vec::with_capacity(planes * positions);
        for src in x.data().chunks(plane) {
            for p in 0..positions {
                let (mut sum, mut count) = (0f32, 0usize);
                for &idx in &table[p * klen..][..klen] {
                    if idx != NONE {
                        sum += src[idx as usize];
                        count += 1;
                    }
                }
                out.push(sum / count as f32);
            }
        }
        Tensor::from_vec(&geo.output_shape(), out)
    }

    pub fn backward(&self, input_shape: &[usize], grad: &Tensor) -> Result<Tensor> {
        let geo = Geometry::new(&self.as_spec(input_shape)?, input_shape)?;
        if grad.shape() != geo.output_shape().as_slice() {
            return Err(Error::contract("pool grad does not match its forward output"));
        }
        let table = geo.window_table();
        let (positions, klen, plane) = (geo.positions(), geo.kernel_len(), geo.in_plane());
        let mut gi = Tensor::zeros(input_shape)?;
        for (dst, g) in gi.data_mut().chunks_mut(plane).zip(grad.data().chunks(positions)) {
            for p in 0..positions {
                let window = &table[p * klen..][..klen];
                let count = window.iter().filter(|&&i| i != NONE).count();
                let share = g[p] / count as f32;
                for &idx in window {
                    if idx != NONE {
                        dst[idx as usize] += share;
                    }
                }
            }
        }
        Ok(gi)
    }
}

/// `x[N,F] · w[F,G] + b[G]`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (f, g) = (weight.shape()[0], weight.shape()[1]);
    if x.rank() != 2 || x.shape()[1] != f || bias.shape() != [g] {
        return Err(Error::shape(format!(
            "linear {:?} + {:?} applied to {:?}",
            weight.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let n = x.shape()[0];
    let w = weight.data();
    let mut out = Vec::with_capacity(n * g);
    for row in x.data().chunks(f) {
        let mut y = bias.data().to_vec();
        for (i, &xv) in row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (yv, &wv) in y.iter_mut().zip(&w[i * g..(i + 1) * g]) {
                *yv += xv * wv;
            }
        }
        out.extend(y);
    }
    Tensor::from_vec(&[n, g], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (f, g) = (weight.shape()[0], weight.shape()[1]);
    let n = x.shape()[0];
    if grad.shape() != [n, g] {
        return Err(Error::contract(format!("linear grad {:?}, expected [{n}, {g}]", grad.shape())));
    }
    let w = weight.data();
    let mut gw = vec![0f32; f * g];
    let mut gb = vec![0f32; g];
    let mut gi = vec![0f32; n * f];
    for (row, (xr, gr)) in x.data().chunks(f).zip(grad.data().chunks(g)).enumerate() {
        for (b, &gv) in gb.iter_mut().zip(gr) {
            *b += gv;
        }
        for i in 0..f {
            let wr = &w[i * g..(i + 1) * g];
            gi[row * f + i] = wr.iter().zip(gr).map(|(a, b)| a * b).sum();
            let xv = xr[i];
            if xv != 0.0 {
                for (d, &gv) in gw[i * g..(i + 1) * g].iter_mut().zip(gr) {
                    *d += xv * gv;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, f], gi)?,
        Tensor::from_vec(&[f, g], gw)?,
        Tensor::from_vec(&[g], gb)?,
    ))
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::shape(format!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = Vec::with_capacity(n * c);
    let mut loss = 0f64;
    for (row, &label) in logits.data().chunks(c).zip(labels) {
        if label >= c {
            return Err(Error::domain(format!("label {label} out of range for {c} classes")));
        }
        let probs = softmax(row);
        loss -= (probs[label].max(f32::MIN_POSITIVE) as f64).ln();
        grad.extend(probs.iter().enumerate().map(|(j, &p)| {
            let t = if j == label { 1.0 } else { 0.0 };
            (p - t) / n as f32
        }));
    }
    Ok(((loss / n as f64) as f32, Tensor::from_vec(&[n, c], grad)?))
}

pub fn softmax(row: &[f32]) -> Vec<f32> {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Forward artifacts of a whole model, one cache per layer.
#[derive(Clone, Debug)]
pub struct Tape {
    pub(crate) caches: Vec<Cache>,
}

/// Gradients aligned with [`Model::parameters`].
#[derive(Clone, Debug)]
pub struct Gradients(pub Vec<Tensor>);

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: String,
    pub dim: usize,
    pub num_classes: usize,
    /// Per-sample input shape `[C, spatial...]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Builds a model and checks that layer shapes compose from `input_shape`.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        num_classes: usize,
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let model = Model {
            name: name.into(),
            dim,
            num_classes,
            input_shape,
            layers,
        };
        model.layer_shapes(1)?;
        Ok(model)
    }

    /// Input shape of each layer followed by the final output shape.
    pub fn layer_shapes(&self, batch: usize) -> Result<Vec<Vec<usize>>> {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.input_shape);
        let mut shapes = vec![shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.kind().label())))?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params().into_iter().map(|(_, t)| t)).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// `"{layer index}.{param}"`, aligned with [`Model::parameters`].
    pub fn parameter_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, _)| format!("{i}.{n}")))
            .collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, Tape { caches }))
    }

    /// Forward without keeping a tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?.0;
        }
        Ok(h)
    }

    pub fn backward(&self, tape: &Tape, grad: &Tensor) -> Result<Gradients> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::contract("tape was recorded by a different model"));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            let (gi, grads) = layer.backward(cache, &g)?;
            per_layer.push(grads);
            g = gi;
        }
        per_layer.reverse();
        Ok(Gradients(per_layer.into_iter().flatten().collect()))
    }
}
