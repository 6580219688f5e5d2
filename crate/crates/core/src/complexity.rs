//! Closed-form operation counts.
//!
//! With `K` the kernel volume, `P` the number of output positions, `C` input
//! channels and `C'` output channels:
//!
//! | layer                  | multiplications | additions                | comparisons      |
//! |------------------------|-----------------|--------------------------|------------------|
//! | standard conv          | `K C C' P`      | `(C-1) C' P (K-1)`       | 0                |
//! | min/max-plus, sum agg. | 0               | `(C - 1 + C K) C' P`     | `(K-1) C C' P`   |
//! | min/max-plus, max/min  | 0               | `C K C' P`               | `(K C - 1) C' P` |
//! | compound               | `2 C C' P`      | `(K C + 2C - 1) C' P`    | `2 (K-1) C C' P` |
//! | parallel               | `2 C C' P`      | `(2 K C + 2C - 1) C' P`  | `2 (K-1) C C' P` |
//!
//! The default standard-conv addition count, `(C-1) C' P (K-1)`, undercounts the
//! conventional `(C K - 1) C' P`; [`AdditionConvention::Exact`] switches to the
//! latter. Compound comparisons count the min and the max scan separately even
//! though the runtime fuses them. Fixed-sum mixing multiplies by 1 and is
//! counted with no multiplications. Convolution biases are not counted.
//!
//! Other layers, per sample: average pooling costs `K-1` additions and one
//! multiplication per output; sigmoid one addition and one multiplication per
//! element (the exponential is not counted); ReLU one comparison per element;
//! a linear layer `F G` multiplications and `F G` additions (`F-1` for the dot
//! product plus the bias).

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConvSpec;
use crate::mixed::MixMode;
use crate::nn::{Layer, LayerKind, Model};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
    pub comparisons: u64,
}

impl OpCount {
    pub fn new(mults: u64, adds: u64, comparisons: u64) -> Self {
        OpCount { mults, adds, comparisons }
    }

    pub fn scaled(self, factor: u64) -> Self {
        OpCount::new(self.mults * factor, self.adds * factor, self.comparisons * factor)
    }
}

impl Add for OpCount {
    type Output = OpCount;

    fn add(self, o: OpCount) -> OpCount {
        OpCount::new(self.mults + o.mults, self.adds + o.adds, self.comparisons + o.comparisons)
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        *self = *self + o;
    }
}

impl std::iter::Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> Self {
        iter.fold(OpCount::default(), Add::add)
    }
}

/// Cost of one multiplication relative to an addition or comparison.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta(f64);

impl Theta {
    pub fn new(theta: f64) -> Result<Self> {
        if theta > 0.0 && theta.is_finite() {
            Ok(Theta(theta))
        } else {
            Err(Error::domain(format!("theta must be positive, got {theta}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Theta {
    fn default() -> Self {
        Theta(10.0)
    }
}

/// `θ·mults + adds + comparisons`.
pub fn unified(c: OpCount, theta: Theta) -> f64 {
    theta.0 * c.mults as f64 + c.adds as f64 + c.comparisons as f64
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdditionConvention {
    #[default]
    Reduced,
    Exact,
}

/// Count for a convolution-family or pooling layer producing `out_spatial`
/// positions for one sample. Pooling uses `spec.kernel` as its window and
/// `spec.in_channels` as its channel count.
pub fn count_layer(kind: LayerKind, spec: &ConvSpec, out_spatial: &[usize]) -> Result<OpCount> {
    count_layer_with(kind, spec, out_spatial, AdditionConvention::Reduced)
}

pub fn count_layer_with(
    kind: LayerKind,
    spec: &ConvSpec,
    out_spatial: &[usize],
    convention: AdditionConvention,
) -> Result<OpCount> {
    spec.validate()?;
    if out_spatial.len() != spec.dim() || out_spatial.contains(&0) {
        return Err(Error::shape(format!(
            "output extents {out_spatial:?} do not fit a {}d spec",
            spec.dim()
        )));
    }
    let k = spec.kernel_len() as u64;
    let p: u64 = out_spatial.iter().map(|&e| e as u64).product();
    let c = spec.in_channels as u64;
    let co = spec.out_channels as u64;
    let ops = match kind {
        LayerKind::StandardConv => {
            let adds = match convention {
                AdditionConvention::Reduced => (c - 1) * co * p * (k - 1),
                AdditionConvention::Exact => (c * k - 1) * co * p,
            };
            OpCount::new(k * c * co * p, adds, 0)
        }
        LayerKind::TropicalConv { channel, .. } => match channel {
            crate::tropical::ChannelMode::Sum => OpCount::new(0, (c - 1 + c * k) * co * p, (k - 1) * c * co * p),
            _ => OpCount::new(0, c * k * co * p, (k * c - 1) * co * p),
        },
        LayerKind::CompoundConv(mode) => OpCount::new(
            mixing_mults(mode, c, co, p),
            (k * c + 2 * c - 1) * co * p,
            2 * (k - 1) * c * co * p,
        ),
        LayerKind::ParallelConv(mode) => OpCount::new(
            mixing_mults(mode, c, co, p),
            (2 * k * c + 2 * c - 1) * co * p,
            2 * (k - 1) * c * co * p,
        ),
        LayerKind::AvgPool => OpCount::new(c * p, (k - 1) * c * p, 0),
        other => {
            return Err(Error::domain(format!(
                "{} is not a windowed layer; use count_model",
                other.label()
            )))
        }
    };
    Ok(ops)
}

fn mixing_mults(mode: MixMode, c: u64, co: u64, p: u64) -> u64 {
    match mode {
        MixMode::FixedSum => 0,
        MixMode::OneParam | MixMode::TwoParam => 2 * c * co * p,
    }
}

/// Per-sample count for any layer given its input shape (batch axis included
/// but ignored).
pub fn count_any_layer(layer: &Layer, input_shape: &[usize], convention: AdditionConvention) -> Result<OpCount> {
    let out = layer.output_shape(input_shape)?;
    let per_sample = |s: &[usize]| s[1..].iter().product::<usize>() as u64;
    match layer {
        Layer::StandardConv(_) | Layer::Tropical(_) | Layer::Compound(_) | Layer::Parallel(_) => {
            let spec = layer.conv_spec().expect("conv layer");
            count_layer_with(layer.kind(), spec, &out[2..], convention)
        }
        Layer::AvgPool(pool) => {
            let spec = ConvSpec::new(input_shape[1], input_shape[1], &pool.window).with_stride(&pool.stride);
            count_layer_with(LayerKind::AvgPool, &spec, &out[2..], convention)
        }
        Layer::Sigmoid => {
            let n = per_sample(input_shape);
            Ok(OpCount::new(n, n, 0))
        }
        Layer::ReLU => Ok(OpCount::new(0, 0, per_sample(input_shape))),
        Layer::Flatten => Ok(OpCount::default()),
        Layer::Linear(l) => {
            let (f, g) = (l.weight.shape()[0] as u64, l.weight.shape()[1] as u64);
            Ok(OpCount::new(f * g, f * g, 0))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerOps {
    pub index: usize,
    pub kind: String,
    pub ops: OpCount,
    pub omega_u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelOps {
    pub layers: Vec<LayerOps>,
    pub total: OpCount,
    pub omega_u: f64,
    pub theta: f64,
    pub batch: usize,
}

impl ModelOps {
    /// Columns `layer,kind,mults,adds,comparisons,omega_u`, one row per layer
    /// and a final `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,mults,adds,comparisons,omega_u\n");
        for l in &self.layers {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.index, l.kind, l.ops.mults, l.ops.adds, l.ops.comparisons, l.omega_u
            ));
        }
        s.push_str(&format!(
            "total,,{},{},{},{}\n",
            self.total.mults, self.total.adds, self.total.comparisons, self.omega_u
        ));
        s
    }
}

/// Shape-propagates a batch of `batch` samples through `model` and sums the
/// per-layer counts.
pub fn count_model(model: &Model, batch: usize, theta: Theta, convention: AdditionConvention) -> Result<ModelOps> {
    if batch == 0 {
        return Err(Error::domain("batch must be positive"));
    }
    let shapes = model.layer_shapes(1)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let ops = count_any_layer(layer, &shapes[i], convention)?.scaled(batch as u64);
        layers.push(LayerOps {
            index: i,
            kind: layer.kind().label(),
            ops,
            omega_u: unified(ops, theta),
        });
    }
    let total: OpCount = layers.iter().map(|l| l.ops).sum();
    Ok(ModelOps {
        omega_u: unified(total, theta),
        total,
        layers,
        theta: theta.value(),
        batch,
    })
}

/// Exact non-negative rational.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    /// `None` when the denominator is zero.
    pub fn new(num: u64, den: u64) -> Option<Ratio> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den).max(1);
        Some(Ratio { num: num / g, den: den / g })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Cost of each tropical family relative to a standard convolution with the
/// same spec. `None` marks a ratio whose standard-conv denominator is zero
/// (`C_in = 1`, or `K = 1` for the mixed additions).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioReport {
    pub tropical_sum_adds: Option<Ratio>,
    pub tropical_other_adds: Option<Ratio>,
    pub compound_mults: Option<Ratio>,
    pub compound_adds: Option<Ratio>,
    pub parallel_mults: Option<Ratio>,
    pub parallel_adds: Option<Ratio>,
}

impl RatioReport {
    /// Ratios that could not be formed.
    pub fn flagged(&self) -> Vec<&'static str> {
        [
            ("tropical_sum_adds", self.tropical_sum_adds),
            ("tropical_other_adds", self.tropical_other_adds),
            ("compound_mults", self.compound_mults),
            ("compound_adds", self.compound_adds),
            ("parallel_mults", self.parallel_mults),
            ("parallel_adds", self.parallel_adds),
        ]
        .into_iter()
        .filter(|(_, r)| r.is_none())
        .map(|(n, _)| n)
        .collect()
    }
}

pub fn ratios_vs_standard(spec: &ConvSpec) -> Result<RatioReport> {
    spec.validate()?;
    let c = spec.in_channels as u64;
    let k = spec.kernel_len() as u64;
    // C_out and P cancel in every ratio
    let std_adds = (c - 1) * (k - 1);
    Ok(RatioReport {
        tropical_sum_adds: Ratio::new(c - 1 + c * k, c - 1),
        tropical_other_adds: Ratio::new(c * k, c - 1),
        compound_mults: Ratio::new(2 * c, k * c),
        compound_adds: Ratio::new(k * c + 2 * c - 1, std_adds),
        parallel_mults: Ratio::new(2 * c, k * c),
        parallel_adds: Ratio::new(2 * k * c + 2 * c - 1, std_adds),
    })
}
