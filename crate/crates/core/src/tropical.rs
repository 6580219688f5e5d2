//! Min-plus / max-plus convolution.
//!
//! A window value is `min_k (x[p·s − pad + k] + w[k])` (or `max`) over the
//! kernel offsets `k` that land inside the input. Padded offsets are masked
//! out of the reduction rather than read as zero, so a zero pad can never win
//! a min over positive data. Per-channel window values are then combined over
//! input channels by [`ChannelMode`].
//!
//! Ties go to the lowest flat kernel index, then to the lowest input channel.
//! The backward pass sends the whole upstream gradient to that single winner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvSpec, Geometry, NONE};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowMode {
    Min,
    Max,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    Sum,
    Max,
    Min,
}

/// Winning kernel offset and input position of one window.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Winner {
    /// Flat index into the `kernel...` part of the weight tensor.
    pub kernel: usize,
    /// Flat index into the spatial plane of the input channel.
    pub input: usize,
}

/// Per-window winners recorded by a forward pass, laid out `[n, c_out, c_in, p]`
/// where `p` is the flat output position. Channel winners (for `Max`/`Min`
/// aggregation) are laid out `[n, c_out, p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgIndexMap {
    input_shape: Vec<usize>,
    out_channels: usize,
    kernel_len: usize,
    positions: usize,
    kernel_index: Vec<u32>,
    input_index: Vec<u32>,
    channel: Option<Vec<u32>>,
}

impl ArgIndexMap {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn batch(&self) -> usize {
        self.input_shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.input_shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    fn slot(&self, n: usize, co: usize, ci: usize, p: usize) -> usize {
        ((n * self.out_channels + co) * self.in_channels() + ci) * self.positions + p
    }

    /// `None` when every offset of the window was padding.
    pub fn winner(&self, n: usize, co: usize, ci: usize, p: usize) -> Option<Winner> {
        let slot = self.slot(n, co, ci, p);
        let k = self.kernel_index[slot];
        (k != NONE).then(|| Winner {
            kernel: k as usize,
            input: self.input_index[slot] as usize,
        })
    }

    pub fn channel_winner(&self, n: usize, co: usize, p: usize) -> Option<usize> {
        self.channel
            .as_ref()
            .map(|c| c[(n * self.out_channels + co) * self.positions + p] as usize)
    }

    pub fn has_channel_winners(&self) -> bool {
        self.channel.is_some()
    }

    /// Number of windows whose every offset was padding.
    pub fn fully_padded(&self) -> usize {
        self.kernel_index.iter().filter(|&&k| k == NONE).count()
    }

    pub(crate) fn check(&self, grad_output: &Tensor, spec: &ConvSpec) -> Result<()> {
        let gs = grad_output.shape();
        let ok = gs.len() == self.input_shape.len()
            && gs[0] == self.batch()
            && gs[1] == self.out_channels
            && gs[2..].iter().product::<usize>() == self.positions
            && spec.in_channels == self.in_channels()
            && spec.out_channels == self.out_channels
            && spec.kernel_len() == self.kernel_len;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "arg map for input {:?} -> {} channels x {} positions does not match grad {:?} / spec {:?}",
                self.input_shape, self.out_channels, self.positions, gs, spec
            )))
        }
    }
}

/// Raw window scan: values and winners, `[n, c_out, c_in, p]`.
pub(crate) struct Scan {
    pub values: Vec<f32>,
    pub map: ArgIndexMap,
}

impl Scan {
    fn empty(geo: &Geometry, fill: f32) -> Self {
        let len = geo.batch * geo.out_channels * geo.in_channels * geo.positions();
        Scan {
            values: vec![fill; len],
            map: ArgIndexMap {
                input_shape: geo.input_shape.clone(),
                out_channels: geo.out_channels,
                kernel_len: geo.kernel_len(),
                positions: geo.positions(),
                kernel_index: vec![NONE; len],
                input_index: vec![NONE; len],
                channel: None,
            },
        }
    }
}

pub(crate) fn check_weights(weights: &Tensor, spec: &ConvSpec) -> Result<()> {
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::shape(format!(
            "weights have shape {:?}, spec needs {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    Ok(())
}

/// Scans every window once, producing the min scan, the max scan, or both
/// from the same input + weight sums.
pub(crate) fn scan_windows(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    want_min: bool,
    want_max: bool,
) -> Result<(Geometry, Option<Scan>, Option<Scan>)> {
    let geo = Geometry::new(spec, input.shape())?;
    check_weights(weights, spec)?;

    let (batch, cin, cout) = (geo.batch, geo.in_channels, geo.out_channels);
    let (positions, klen, plane) = (geo.positions(), geo.kernel_len(), geo.in_plane());
    let table = geo.window_table();
    let mut lo = want_min.then(|| Scan::empty(&geo, f32::INFINITY));
    let mut hi = want_max.then(|| Scan::empty(&geo, f32::NEG_INFINITY));

    // Padded offsets are gathered as NaN: every comparison against NaN is
    // false, so they can never become a min or max winner.
    let mut patches = vec![0f32; positions * klen];
    let x = input.data();
    let w = weights.data();
    for n in 0..batch {
        for ci in 0..cin {
            let src = &x[(n * cin + ci) * plane..][..plane];
            Geometry::gather(&table, src, f32::NAN, &mut patches);
            for co in 0..cout {
                let kernel = &w[(co * cin + ci) * klen..][..klen];
                let base = ((n * cout + co) * cin + ci) * positions;
                for p in 0..positions {
                    let row = &patches[p * klen..][..klen];
                    let slot = base + p;
                    match (lo.as_mut(), hi.as_mut()) {
                        (Some(lo), Some(hi)) => {
                            let (mv, mk, xv, xk) = min_max_plus(row, kernel);
                            record(lo, slot, mv, mk, &table, p * klen);
                            record(hi, slot, xv, xk, &table, p * klen);
                        }
                        (Some(lo), None) => {
                            let (v, k) = min_plus(row, kernel);
                            record(lo, slot, v, k, &table, p * klen);
                        }
                        (None, Some(hi)) => {
                            let (v, k) = max_plus(row, kernel);
                            record(hi, slot, v, k, &table, p * klen);
                        }
                        (None, None) => {}
                    }
                }
            }
        }
    }
    Ok((geo, lo, hi))
}

#[inline]
fn record(scan: &mut Scan, slot: usize, value: f32, k: u32, table: &[u32], row_start: usize) {
    if k != NONE {
        scan.values[slot] = value;
        scan.map.kernel_index[slot] = k;
        scan.map.input_index[slot] = table[row_start + k as usize];
    }
}

#[inline]
fn min_plus(row: &[f32], kernel: &[f32]) -> (f32, u32) {
    let mut best = f32::INFINITY;
    let mut arg = NONE;
    for (k, (&x, &w)) in row.iter().zip(kernel).enumerate() {
        let s = x + w;
        if s < best {
            best = s;
            arg = k as u32;
        }
    }
    (best, arg)
}

#[inline]
fn max_plus(row: &[f32], kernel: &[f32]) -> (f32, u32) {
    let mut best = f32::NEG_INFINITY;
    let mut arg = NONE;
    for (k, (&x, &w)) in row.iter().zip(kernel).enumerate() {
        let s = x + w;
        if s > best {
            best = s;
            arg = k as u32;
        }
    }
    (best, arg)
}

#[inline]
fn min_max_plus(row: &[f32], kernel: &[f32]) -> (f32, u32, f32, u32) {
    let (mut lo, mut lo_arg) = (f32::INFINITY, NONE);
    let (mut hi, mut hi_arg) = (f32::NEG_INFINITY, NONE);
    for (k, (&x, &w)) in row.iter().zip(kernel).enumerate() {
        let s = x + w;
        if s < lo {
            lo = s;
            lo_arg = k as u32;
        }
        if s > hi {
            hi = s;
            hi_arg = k as u32;
        }
    }
    (lo, lo_arg, hi, hi_arg)
}

/// Per-channel window reduction.
///
/// Returns window values shaped `[N, C_out, C_in, P]` with the output
/// spatial extents flattened into `P`, and the recorded winners. A window
/// whose offsets are all padding holds `+inf` (`Min`) or `-inf` (`Max`) and
/// has no winner.
pub fn window_reduce(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    wmode: WindowMode,
) -> Result<(Tensor, ArgIndexMap)> {
    let want_min = wmode == WindowMode::Min;
    let (geo, lo, hi) = scan_windows(input, weights, spec, want_min, !want_min)?;
    let scan = lo.or(hi).expect("one scan requested");
    let shape = [geo.batch, geo.out_channels, geo.in_channels, geo.positions()];
    Ok((Tensor::from_vec(&shape, scan.values)?, scan.map))
}

/// Full tropical convolution: window reduction followed by channel
/// aggregation. Output is `[N, C_out, out_spatial...]`; no bias is added.
pub fn tropical_conv_forward(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    wmode: WindowMode,
    cmode: ChannelMode,
) -> Result<(Tensor, ArgIndexMap)> {
    let want_min = wmode == WindowMode::Min;
    let (geo, lo, hi) = scan_windows(input, weights, spec, want_min, !want_min)?;
    let mut scan = lo.or(hi).expect("one scan requested");
    let (out, channel) = aggregate(&scan.values, &geo, cmode);
    scan.map.channel = channel;
    Ok((Tensor::from_vec(&geo.output_shape(), out)?, scan.map))
}

fn aggregate(values: &[f32], geo: &Geometry, cmode: ChannelMode) -> (Vec<f32>, Option<Vec<u32>>) {
    let (batch, cin, cout, positions) = (geo.batch, geo.in_channels, geo.out_channels, geo.positions());
    let mut out = vec![0f32; batch * cout * positions];
    let mut winners = (cmode != ChannelMode::Sum).then(|| vec![0u32; out.len()]);
    for n in 0..batch {
        for co in 0..cout {
            let block = &values[(n * cout + co) * cin * positions..][..cin * positions];
            let dst = (n * cout + co) * positions;
            match cmode {
                ChannelMode::Sum => {
                    for ci in 0..cin {
                        let src = &block[ci * positions..][..positions];
                        for (o, &v) in out[dst..dst + positions].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
                ChannelMode::Max | ChannelMode::Min => {
                    let wins = winners.as_mut().expect("winner buffer");
                    for p in 0..positions {
                        let mut best = block[p];
                        let mut arg = 0;
                        for ci in 1..cin {
                            let v = block[ci * positions + p];
                            let better = match cmode {
                                ChannelMode::Max => v > best,
                                _ => v < best,
                            };
                            if better {
                                best = v;
                                arg = ci;
                            }
                        }
                        out[dst + p] = best;
                        wins[dst + p] = arg as u32;
                    }
                }
            }
        }
    }
    (out, winners)
}

/// Adds `coeff(ci, co) · grad_output[n, co, p]` at every recorded winner,
/// into `grad_input` (input layout) and `grad_weights` (weight layout).
/// Iterates in ascending `[n, co, ci, p]` order.
pub(crate) fn route(
    map: &ArgIndexMap,
    grad_output: &[f32],
    coeff: impl Fn(usize, usize) -> f32,
    grad_input: &mut [f32],
    grad_weights: &mut [f32],
) {
    let (batch, cin, cout, positions, klen) = (
        map.batch(),
        map.in_channels(),
        map.out_channels,
        map.positions,
        map.kernel_len,
    );
    let plane: usize = map.input_shape[2..].iter().product();
    for n in 0..batch {
        for co in 0..cout {
            let gout = &grad_output[(n * cout + co) * positions..][..positions];
            let chan = map
                .channel
                .as_ref()
                .map(|c| &c[(n * cout + co) * positions..][..positions]);
            for ci in 0..cin {
                let c = coeff(ci, co);
                if c == 0.0 {
                    continue;
                }
                let slot0 = ((n * cout + co) * cin + ci) * positions;
                let gi_base = (n * cin + ci) * plane;
                let gw_base = (co * cin + ci) * klen;
                for p in 0..positions {
                    if let Some(chan) = chan {
                        if chan[p] as usize != ci {
                            continue;
                        }
                    }
                    let k = map.kernel_index[slot0 + p];
                    if k == NONE {
                        continue;
                    }
                    let g = gout[p] * c;
                    grad_input[gi_base + map.input_index[slot0 + p] as usize] += g;
                    grad_weights[gw_base + k as usize] += g;
                }
            }
        }
    }
}

/// Sub-gradient of [`tropical_conv_forward`] with respect to input and weights.
pub fn tropical_conv_backward(
    grad_output: &Tensor,
    args: &ArgIndexMap,
    spec: &ConvSpec,
    cmode: ChannelMode,
) -> Result<(Tensor, Tensor)> {
    args.check(grad_output, spec)?;
    if args.has_channel_winners() == (cmode == ChannelMode::Sum) {
        return Err(Error::contract(format!(
            "arg map was not produced with channel mode {cmode:?}"
        )));
    }
    let mut grad_input = Tensor::zeros(&args.input_shape)?;
    let mut grad_weights = Tensor::zeros(&spec.weight_shape())?;
    route(
        args,
        grad_output.data(),
        |_, _| 1.0,
        grad_input.data_mut(),
        grad_weights.data_mut(),
    );
    Ok((grad_input, grad_weights))
}
