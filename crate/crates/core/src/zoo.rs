//! LeNet-style model roster: the standard baselines, pure tropical, compound,
//! parallel and hybrid variants, plus the fixed-sum simplified forms.
//!
//! Every variant shares one plan: `conv1 (C -> 6) -> [act] -> avgpool 2/2 ->
//! conv2 (6 -> 16) -> [act] -> avgpool 2/2 -> flatten -> 120 -> 84 -> classes`.
//! Conv1 uses stride 1 and padding 2; conv2 stride 1, no padding. Kernels are
//! 80 then 3 for 1D inputs and 5 then 5 for 2D/3D inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConvSpec;
use crate::mixed::MixMode;
use crate::nn::{derive_seed, Layer, Model};
use crate::tropical::{ChannelMode, WindowMode};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantId {
    LeNet,
    LeNetReLU,
    F1,
    F2,
    F3,
    #[serde(rename = "C_a")]
    CA,
    #[serde(rename = "C_ab")]
    CAb,
    #[serde(rename = "CM_a")]
    CmA,
    #[serde(rename = "CM_ab")]
    CmAb,
    #[serde(rename = "P_a")]
    PA,
    #[serde(rename = "P_ab")]
    PAb,
    #[serde(rename = "PM_a")]
    PmA,
    #[serde(rename = "PM_ab")]
    PmAb,
    CC,
    CCM,
    CP,
    CPM,
}

impl VariantId {
    pub const ALL: [VariantId; 17] = [
        VariantId::LeNet,
        VariantId::LeNetReLU,
        VariantId::F1,
        VariantId::F2,
        VariantId::F3,
        VariantId::CA,
        VariantId::CAb,
        VariantId::CmA,
        VariantId::CmAb,
        VariantId::PA,
        VariantId::PAb,
        VariantId::PmA,
        VariantId::PmAb,
        VariantId::CC,
        VariantId::CCM,
        VariantId::CP,
        VariantId::CPM,
    ];

    /// Short identifier used in configs and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            VariantId::LeNet => "LeNet",
            VariantId::LeNetReLU => "LeNetReLU",
            VariantId::F1 => "F1",
            VariantId::F2 => "F2",
            VariantId::F3 => "F3",
            VariantId::CA => "C_a",
            VariantId::CAb => "C_ab",
            VariantId::CmA => "CM_a",
            VariantId::CmAb => "CM_ab",
            VariantId::PA => "P_a",
            VariantId::PAb => "P_ab",
            VariantId::PmA => "PM_a",
            VariantId::PmAb => "PM_ab",
            VariantId::CC => "CC",
            VariantId::CCM => "CCM",
            VariantId::CP => "CP",
            VariantId::CPM => "CPM",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            VariantId::LeNet => "LeNet: standard conv x2, sigmoid activations",
            VariantId::LeNetReLU => "LeNet-ReLU: standard conv x2, ReLU activations",
            VariantId::F1 => "LeNet-F-I: MinPlus-Sum conv, MaxPlus-Sum conv",
            VariantId::F2 => "LeNet-F-II: MinPlus-Max conv, MaxPlus-Min conv",
            VariantId::F3 => "LeNet-F-III: MinPlus-Sum conv, standard conv",
            VariantId::CA => "LeNet-C-α: compound (1 param) conv x2",
            VariantId::CAb => "LeNet-C-α/β: compound (2 params) conv x2",
            VariantId::CmA => "LeNet-CM-α: compound (1 param) conv, standard conv",
            VariantId::CmAb => "LeNet-CM-α/β: compound (2 params) conv, standard conv",
            VariantId::PA => "LeNet-P-α: parallel (1 param) conv x2",
            VariantId::PAb => "LeNet-P-α/β: parallel (2 params) conv x2",
            VariantId::PmA => "LeNet-PM-α: parallel (1 param) conv, standard conv",
            VariantId::PmAb => "LeNet-PM-α/β: parallel (2 params) conv, standard conv",
            VariantId::CC => "LeNet-CC: fixed-sum compound conv x2",
            VariantId::CCM => "LeNet-CCM: fixed-sum compound conv, standard conv",
            VariantId::CP => "LeNet-CP: fixed-sum parallel conv x2",
            VariantId::CPM => "LeNet-CPM: fixed-sum parallel conv, standard conv",
        }
    }

    fn conv_kinds(self) -> (ConvKind, ConvKind) {
        use ConvKind::*;
        use MixMode::*;
        let min_sum = Tropical(WindowMode::Min, ChannelMode::Sum);
        match self {
            VariantId::LeNet | VariantId::LeNetReLU => (Standard, Standard),
            VariantId::F1 => (min_sum, Tropical(WindowMode::Max, ChannelMode::Sum)),
            VariantId::F2 => (
                Tropical(WindowMode::Min, ChannelMode::Max),
                Tropical(WindowMode::Max, ChannelMode::Min),
            ),
            VariantId::F3 => (min_sum, Standard),
            VariantId::CA => (Compound(OneParam), Compound(OneParam)),
            VariantId::CAb => (Compound(TwoParam), Compound(TwoParam)),
            VariantId::CmA => (Compound(OneParam), Standard),
            VariantId::CmAb => (Compound(TwoParam), Standard),
            VariantId::PA => (Parallel(OneParam), Parallel(OneParam)),
            VariantId::PAb => (Parallel(TwoParam), Parallel(TwoParam)),
            VariantId::PmA => (Parallel(OneParam), Standard),
            VariantId::PmAb => (Parallel(TwoParam), Standard),
            VariantId::CC => (Compound(FixedSum), Compound(FixedSum)),
            VariantId::CCM => (Compound(FixedSum), Standard),
            VariantId::CP => (Parallel(FixedSum), Parallel(FixedSum)),
            VariantId::CPM => (Parallel(FixedSum), Standard),
        }
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantId::ALL
            .into_iter()
            .find(|v| v.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown variant {s:?}")))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum ConvKind {
    Standard,
    Tropical(WindowMode, ChannelMode),
    Compound(MixMode),
    Parallel(MixMode),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: VariantId,
    pub dim: usize,
    /// Per-sample shape `[C, spatial...]`.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Kernel/stride/padding of one convolution in the plan.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ConvPlan {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LenetPlan {
    pub conv1: ConvPlan,
    pub conv2: ConvPlan,
    pub channels: [usize; 2],
    pub pool: usize,
    pub hidden: [usize; 2],
}

impl LenetPlan {
    pub fn for_dim(dim: usize) -> Self {
        let (k1, k2) = if dim == 1 { (80, 3) } else { (5, 5) };
        LenetPlan {
            conv1: ConvPlan { kernel: k1, stride: 1, padding: 2 },
            conv2: ConvPlan { kernel: k2, stride: 1, padding: 0 },
            channels: [6, 16],
            pool: 2,
            hidden: [120, 84],
        }
    }
}

impl ModelConfig {
    pub fn new(variant: VariantId, input_shape: &[usize], num_classes: usize) -> Self {
        ModelConfig {
            variant,
            dim: input_shape.len().saturating_sub(1),
            input_shape: input_shape.to_vec(),
            num_classes,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::domain(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.input_shape.len() != self.dim + 1 {
            return Err(Error::shape(format!(
                "{}d model needs input_shape [C, {} spatial extents], got {:?}",
                self.dim, self.dim, self.input_shape
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::domain("num_classes must be at least 2"));
        }
        Ok(())
    }
}

pub fn build(config: &ModelConfig) -> Result<Model> {
    build_with_plan(config, &LenetPlan::for_dim(config.dim))
}

pub fn build_with_plan(config: &ModelConfig, plan: &LenetPlan) -> Result<Model> {
    config.validate()?;
    let dim = config.dim;
    let (kind1, kind2) = config.variant.conv_kinds();
    let activation = match config.variant {
        VariantId::LeNet => Some(Layer::Sigmoid),
        VariantId::LeNetReLU => Some(Layer::ReLU),
        _ => None,
    };
    let dense_activation = match config.variant {
        VariantId::LeNet => Layer::Sigmoid,
        _ => Layer::ReLU,
    };

    let mut layers = Vec::new();
    let mut next_seed = {
        let mut slot = 0u64;
        move || {
            slot += 1;
            derive_seed(config.seed, slot, 0x7c0)
        }
    };
    let pool = vec![plan.pool; dim];
    let in_channels = [config.input_shape[0], plan.channels[0]];
    for (stage, (kind, cp)) in [(kind1, plan.conv1), (kind2, plan.conv2)].into_iter().enumerate() {
        let spec = ConvSpec::cubic(dim, in_channels[stage], plan.channels[stage], cp.kernel, cp.stride, cp.padding);
        layers.push(conv_layer(kind, spec, next_seed())?);
        if let Some(act) = &activation {
            layers.push(act.clone());
        }
        layers.push(Layer::avg_pool(&pool, &pool)?);
    }
    layers.push(Layer::Flatten);

    // flatten width is derived from the feature extractor, never hand-entered
    let probe = Model::new("probe", dim, config.num_classes, config.input_shape.clone(), layers.clone())?;
    let flat = probe.layer_shapes(1)?.last().expect("shapes")[1];

    let widths = [flat, plan.hidden[0], plan.hidden[1], config.num_classes];
    for i in 0..3 {
        layers.push(Layer::linear(widths[i], widths[i + 1], next_seed())?);
        if i < 2 {
            layers.push(dense_activation.clone());
        }
    }
    let name = format!("{}-{}d", config.variant.key(), dim);
    Model::new(name, dim, config.num_classes, config.input_shape.clone(), layers)
}

fn conv_layer(kind: ConvKind, spec: ConvSpec, seed: u64) -> Result<Layer> {
    match kind {
        ConvKind::Standard => Layer::standard_conv(spec, seed),
        ConvKind::Tropical(w, c) => Layer::tropical_conv(spec, w, c, seed),
        ConvKind::Compound(m) => Layer::compound_conv(spec, m, seed),
        ConvKind::Parallel(m) => Layer::parallel_conv(spec, m, seed),
    }
}

pub fn list_variants() -> Vec<(VariantId, &'static str)> {
    VariantId::ALL.iter().map(|&v| (v, v.description())).collect()
}

pub fn count_parameters(model: &Model) -> usize {
    model.count_parameters()
}
