//! Compound and parallel tropical convolution.
//!
//! Both mix a min-plus response `m` and a max-plus response `M` per channel
//! pair and sum over input channels:
//!
//! ```text
//! y[n, co, p] = Σ_ci  a[ci, co] · m[n, co, ci, p] + b[ci, co] · M[n, co, ci, p]
//! ```
//!
//! A compound layer takes `m` and `M` from the same kernel, so one pass of
//! window sums serves both reductions. A parallel layer has two kernels: `m`
//! comes from `W_1` and `M` from `W_2`.
//!
//! The coefficients `(a, b)` are `(α, β)` for [`MixMode::TwoParam`],
//! `(α, 1 − α)` for [`MixMode::OneParam`] and `(1, 1)` for
//! [`MixMode::FixedSum`]. A term whose coefficient is exactly zero is skipped,
//! which makes `(1, 0)` and `(0, 1)` reproduce the pure tropical layers bit
//! for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvSpec, Geometry};
use crate::tensor::Tensor;
use crate::tropical::{check_weights, route, scan_windows, ArgIndexMap};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixMode {
    OneParam,
    TwoParam,
    FixedSum,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixedKind {
    Compound,
    Parallel,
}

/// Learnable mixing weights, each `[C_in, C_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixParams {
    pub alpha: Option<Tensor>,
    pub beta: Option<Tensor>,
}

pub const MIX_INIT: f32 = 0.5;

impl MixParams {
    /// Constant 0.5 in every learnable entry the mode uses.
    pub fn init(mode: MixMode, in_channels: usize, out_channels: usize) -> Result<Self> {
        let make = || Tensor::full(&[in_channels, out_channels], MIX_INIT);
        Ok(match mode {
            MixMode::OneParam => MixParams { alpha: Some(make()?), beta: None },
            MixMode::TwoParam => MixParams { alpha: Some(make()?), beta: Some(make()?) },
            MixMode::FixedSum => MixParams::fixed(),
        })
    }

    pub fn fixed() -> Self {
        MixParams { alpha: None, beta: None }
    }

    pub fn two(alpha: Tensor, beta: Tensor) -> Self {
        MixParams { alpha: Some(alpha), beta: Some(beta) }
    }

    pub fn one(alpha: Tensor) -> Self {
        MixParams { alpha: Some(alpha), beta: None }
    }

    fn validate(&self, mode: MixMode, spec: &ConvSpec) -> Result<()> {
        let want = [spec.in_channels, spec.out_channels];
        let check = |name: &str, t: &Option<Tensor>| match t {
            Some(t) if t.shape() == want => Ok(()),
            Some(t) => Err(Error::shape(format!("{name} has shape {:?}, expected {want:?}", t.shape()))),
            None => Err(Error::domain(format!("{mode:?} mixing needs {name}"))),
        };
        match mode {
            MixMode::OneParam => check("alpha", &self.alpha),
            MixMode::TwoParam => {
                check("alpha", &self.alpha)?;
                check("beta", &self.beta)
            }
            MixMode::FixedSum => Ok(()),
        }
    }

    /// `(a, b)` multiplying the min and max responses of pair `(ci, co)`.
    fn coefficients(&self, mode: MixMode, cout: usize) -> impl Fn(usize, usize) -> (f32, f32) + '_ {
        move |ci, co| {
            let at = |t: &Option<Tensor>| t.as_ref().map_or(1.0, |t| t.data()[ci * cout + co]);
            match mode {
                MixMode::OneParam => {
                    let a = at(&self.alpha);
                    (a, 1.0 - a)
                }
                MixMode::TwoParam => (at(&self.alpha), at(&self.beta)),
                MixMode::FixedSum => (1.0, 1.0),
            }
        }
    }

    pub fn learnable_count(&self, mode: MixMode) -> usize {
        match mode {
            MixMode::OneParam => self.alpha.as_ref().map_or(0, Tensor::numel),
            MixMode::TwoParam => {
                self.alpha.as_ref().map_or(0, Tensor::numel) + self.beta.as_ref().map_or(0, Tensor::numel)
            }
            MixMode::FixedSum => 0,
        }
    }
}

/// Forward artifacts of a compound or parallel pass.
#[derive(Clone, Debug)]
pub struct MixedTape {
    pub min_args: ArgIndexMap,
    pub max_args: ArgIndexMap,
    /// Min-plus window values `[N, C_out, C_in, P]`.
    pub min_values: Tensor,
    /// Max-plus window values `[N, C_out, C_in, P]`.
    pub max_values: Tensor,
}

#[derive(Clone, Debug)]
pub struct MixedGrads {
    pub grad_input: Tensor,
    /// Compound: the shared kernel. Parallel: `W_1`.
    pub grad_weights: Tensor,
    /// Parallel only: `W_2`.
    pub grad_weights2: Option<Tensor>,
    pub grad_alpha: Option<Tensor>,
    pub grad_beta: Option<Tensor>,
}

fn mix(
    geo: &Geometry,
    lo: &[f32],
    hi: &[f32],
    mixp: &MixParams,
    mode: MixMode,
) -> Vec<f32> {
    let (batch, cin, cout, positions) = (geo.batch, geo.in_channels, geo.out_channels, geo.positions());
    let coeff = mixp.coefficients(mode, cout);
    let mut out = vec![0f32; batch * cout * positions];
    for n in 0..batch {
        for co in 0..cout {
            let dst = &mut out[(n * cout + co) * positions..][..positions];
            for ci in 0..cin {
                let (a, b) = coeff(ci, co);
                let off = ((n * cout + co) * cin + ci) * positions;
                let (m, mm) = (&lo[off..off + positions], &hi[off..off + positions]);
                for p in 0..positions {
                    let term = match (a != 0.0, b != 0.0) {
                        (true, true) => a * m[p] + b * mm[p],
                        (true, false) => a * m[p],
                        (false, true) => b * mm[p],
                        (false, false) => 0.0,
                    };
                    dst[p] += term;
                }
            }
        }
    }
    out
}

fn tape(geo: &Geometry, lo: crate::tropical::Scan, hi: crate::tropical::Scan) -> Result<MixedTape> {
    let shape = [geo.batch, geo.out_channels, geo.in_channels, geo.positions()];
    Ok(MixedTape {
        min_values: Tensor::from_vec(&shape, lo.values)?,
        max_values: Tensor::from_vec(&shape, hi.values)?,
        min_args: lo.map,
        max_args: hi.map,
    })
}

/// Compound convolution; window sums `x + w` are computed once and feed both
/// the min and the max reduction. No bias is added.
pub fn compound_forward(
    input: &Tensor,
    weights: &Tensor,
    mixp: &MixParams,
    mode: MixMode,
    spec: &ConvSpec,
) -> Result<(Tensor, MixedTape)> {
    mixp.validate(mode, spec)?;
    let (geo, lo, hi) = scan_windows(input, weights, spec, true, true)?;
    let (lo, hi) = (lo.expect("min scan"), hi.expect("max scan"));
    let out = mix(&geo, &lo.values, &hi.values, mixp, mode);
    Ok((Tensor::from_vec(&geo.output_shape(), out)?, tape(&geo, lo, hi)?))
}

/// Parallel convolution: min-plus over `(x, w1)`, max-plus over `(x, w2)`.
pub fn parallel_forward(
    input: &Tensor,
    w1: &Tensor,
    w2: &Tensor,
    mixp: &MixParams,
    mode: MixMode,
    spec: &ConvSpec,
) -> Result<(Tensor, MixedTape)> {
    mixp.validate(mode, spec)?;
    check_weights(w2, spec)?;
    let (geo, lo, _) = scan_windows(input, w1, spec, true, false)?;
    let (_, _, hi) = scan_windows(input, w2, spec, false, true)?;
    let (lo, hi) = (lo.expect("min scan"), hi.expect("max scan"));
    let out = mix(&geo, &lo.values, &hi.values, mixp, mode);
    Ok((Tensor::from_vec(&geo.output_shape(), out)?, tape(&geo, lo, hi)?))
}

fn check_tape(grad_output: &Tensor, tape: &MixedTape, spec: &ConvSpec) -> Result<()> {
    tape.min_args.check(grad_output, spec)?;
    tape.max_args.check(grad_output, spec)?;
    let want = [
        tape.min_args.batch(),
        spec.out_channels,
        spec.in_channels,
        tape.min_args.positions(),
    ];
    if tape.min_values.shape() != want || tape.max_values.shape() != want {
        return Err(Error::contract("window value tensors do not match the arg maps"));
    }
    Ok(())
}

/// `∂y/∂α` and `∂y/∂β` accumulated over batch and positions.
fn mixing_grads(
    grad_output: &Tensor,
    tape: &MixedTape,
    mode: MixMode,
    spec: &ConvSpec,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    if mode == MixMode::FixedSum {
        return Ok((None, None));
    }
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let (batch, positions) = (tape.min_args.batch(), tape.min_args.positions());
    let mut ga = vec![0f32; cin * cout];
    let mut gb = vec![0f32; cin * cout];
    let g = grad_output.data();
    let (lo, hi) = (tape.min_values.data(), tape.max_values.data());
    for n in 0..batch {
        for co in 0..cout {
            let gout = &g[(n * cout + co) * positions..][..positions];
            for ci in 0..cin {
                let off = ((n * cout + co) * cin + ci) * positions;
                let (mut sa, mut sb) = (0f32, 0f32);
                for p in 0..positions {
                    let (m, mm) = (lo[off + p], hi[off + p]);
                    if !m.is_finite() || !mm.is_finite() {
                        continue;
                    }
                    match mode {
                        MixMode::OneParam => sa += gout[p] * (m - mm),
                        _ => {
                            sa += gout[p] * m;
                            sb += gout[p] * mm;
                        }
                    }
                }
                ga[ci * cout + co] += sa;
                gb[ci * cout + co] += sb;
            }
        }
    }
    let alpha = Tensor::from_vec(&[cin, cout], ga)?;
    let beta = match mode {
        MixMode::TwoParam => Some(Tensor::from_vec(&[cin, cout], gb)?),
        _ => None,
    };
    Ok((Some(alpha), beta))
}

pub fn compound_backward(
    grad_output: &Tensor,
    tape: &MixedTape,
    mixp: &MixParams,
    mode: MixMode,
    spec: &ConvSpec,
) -> Result<MixedGrads> {
    mixp.validate(mode, spec)?;
    check_tape(grad_output, tape, spec)?;
    let coeff = mixp.coefficients(mode, spec.out_channels);
    let mut gi = Tensor::zeros(tape.min_args.input_shape())?;
    let mut gw = Tensor::zeros(&spec.weight_shape())?;
    let g = grad_output.data();
    route(&tape.min_args, g, |ci, co| coeff(ci, co).0, gi.data_mut(), gw.data_mut());
    route(&tape.max_args, g, |ci, co| coeff(ci, co).1, gi.data_mut(), gw.data_mut());
    let (grad_alpha, grad_beta) = mixing_grads(grad_output, tape, mode, spec)?;
    Ok(MixedGrads {
        grad_input: gi,
        grad_weights: gw,
        grad_weights2: None,
        grad_alpha,
        grad_beta,
    })
}

pub fn parallel_backward(
    grad_output: &Tensor,
    tape: &MixedTape,
    mixp: &MixParams,
    mode: MixMode,
    spec: &ConvSpec,
) -> Result<MixedGrads> {
    mixp.validate(mode, spec)?;
    check_tape(grad_output, tape, spec)?;
    let coeff = mixp.coefficients(mode, spec.out_channels);
    let mut gi = Tensor::zeros(tape.min_args.input_shape())?;
    let mut gw1 = Tensor::zeros(&spec.weight_shape())?;
    let mut gw2 = Tensor::zeros(&spec.weight_shape())?;
    let g = grad_output.data();
    route(&tape.min_args, g, |ci, co| coeff(ci, co).0, gi.data_mut(), gw1.data_mut());
    route(&tape.max_args, g, |ci, co| coeff(ci, co).1, gi.data_mut(), gw2.data_mut());
    let (grad_alpha, grad_beta) = mixing_grads(grad_output, tape, mode, spec)?;
    Ok(MixedGrads {
        grad_input: gi,
        grad_weights: gw1,
        grad_weights2: Some(gw2),
        grad_alpha,
        grad_beta,
    })
}
