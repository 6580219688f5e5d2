//! Central finite-difference checks of every layer's backward pass.
//!
//! A layer is probed through the scalar `L = Σ r·y` with a fixed random `r`,
//! so the analytic gradients are one backward call with `r` as upstream
//! gradient. Coordinates whose `±h` perturbation moves a min/max winner or a
//! ReLU boundary sit on a kink; they are reported as skipped, not checked.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::ConvSpec;
use crate::mixed::MixMode;
use crate::nn::{derive_seed, softmax_cross_entropy, Cache, Layer, Model};
use crate::tensor::Tensor;
use crate::tropical::{ArgIndexMap, ChannelMode, WindowMode};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Fault {
    /// Negates every analytic gradient before comparison.
    FlipSign,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckOptions {
    pub h: f64,
    /// Bound on `|a - n| / max(|a|, |n|, floor)`.
    pub tolerance: f64,
    pub floor: f64,
    /// Coordinates sampled per tensor.
    pub max_coords: usize,
    /// Random cases per suite.
    pub cases: usize,
    pub min_pass_rate: f64,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            h: 1e-3,
            tolerance: 1e-2,
            floor: 1e-3,
            max_coords: 24,
            cases: 3,
            min_pass_rate: 0.95,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Tally {
    pub checked: usize,
    pub passed: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl Tally {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.checked += o.checked;
        self.passed += o.passed;
        self.skipped += o.skipped;
        self.worst = self.worst.max(o.worst);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    /// Per target tensor (`input`, `weight`, `alpha`, ...).
    pub targets: Vec<(String, Tally)>,
    pub total: Tally,
}

impl SuiteResult {
    fn new(suite: impl Into<String>) -> Self {
        SuiteResult { suite: suite.into(), targets: Vec::new(), total: Tally::default() }
    }

    fn add(&mut self, target: &str, t: Tally) {
        self.total.merge(&t);
        match self.targets.iter_mut().find(|(n, _)| n == target) {
            Some((_, acc)) => acc.merge(&t),
            None => self.targets.push((target.to_string(), t)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub suites: Vec<SuiteResult>,
    pub min_pass_rate: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.total.pass_rate() >= self.min_pass_rate)
    }

    pub fn failing(&self) -> Vec<&SuiteResult> {
        self.suites.iter().filter(|s| s.total.pass_rate() < self.min_pass_rate).collect()
    }

    /// Columns `suite,target,checked,passed,skipped,pass_rate,worst_rel_err`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("suite,target,checked,passed,skipped,pass_rate,worst_rel_err\n");
        for suite in &self.suites {
            for (target, t) in suite.targets.iter().map(|(n, t)| (n.as_str(), t)).chain([("all", &suite.total)]) {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    suite.suite,
                    target,
                    t.checked,
                    t.passed,
                    t.skipped,
                    t.pass_rate(),
                    t.worst
                ));
            }
        }
        s
    }
}

/// Everything a small perturbation must leave alone for the gradient to exist.
#[derive(Clone, Debug, PartialEq)]
enum Kinks {
    None,
    Args(ArgIndexMap),
    Args2(ArgIndexMap, ArgIndexMap),
    Signs(Vec<bool>),
}

fn kinks(layer: &Layer, cache: &Cache) -> Kinks {
    match (layer, cache) {
        (_, Cache::Tropical(a)) => Kinks::Args(a.clone()),
        (_, Cache::Mixed(t)) => Kinks::Args2(t.min_args.clone(), t.max_args.clone()),
        (Layer::ReLU, Cache::Output(y)) => Kinks::Signs(y.data().iter().map(|&v| v > 0.0).collect()),
        _ => Kinks::None,
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Fully padded windows output a constant infinity and carry no weight.
fn dot(r: &[f64], y: &Tensor) -> f64 {
    r.iter().zip(y.data()).filter(|(_, b)| b.is_finite()).map(|(&a, &b)| a * b as f64).sum()
}

/// Which tensor of the layer a coordinate lives in.
#[derive(Copy, Clone)]
enum Slot {
    Input,
    Param(usize),
}

fn probe(layer: &mut Layer, x: &mut Tensor, slot: Slot, i: usize, v: f32, r: &[f64]) -> Result<(f64, Kinks)> {
    match slot {
        Slot::Input => x.data_mut()[i] = v,
        Slot::Param(p) => layer.params_mut()[p].data_mut()[i] = v,
    }
    let (y, cache) = layer.forward(x)?;
    Ok((dot(r, &y), kinks(layer, &cache)))
}

/// Checks the input and every parameter gradient of `layer` at `x`.
pub fn check_layer(layer: &Layer, x: &Tensor, opts: &GradcheckOptions, seed: u64) -> Result<Vec<(String, Tally)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, cache) = layer.forward(x)?;
    let base_kinks = kinks(layer, &cache);
    let r: Vec<f64> = y
        .data()
        .iter()
        .map(|v| {
            let w = rng.random_range(-1.0..1.0);
            if v.is_finite() {
                w
            } else {
                0.0
            }
        })
        .collect();
    let upstream = Tensor::from_vec(y.shape(), r.iter().map(|&v| v as f32).collect())?;
    let (gi, gp) = layer.backward(&cache, &upstream)?;

    let mut targets: Vec<(String, Slot, Tensor)> = vec![("input".into(), Slot::Input, gi)];
    for (p, ((name, _), g)) in layer.params().into_iter().zip(gp).enumerate() {
        targets.push((name.to_string(), Slot::Param(p), g));
    }

    let mut out = Vec::new();
    let mut work_layer = layer.clone();
    let mut work_x = x.clone();
    for (name, slot, analytic) in targets {
        let mut tally = Tally::default();
        let n = analytic.numel();
        let coords = sample(&mut rng, n, n.min(opts.max_coords)).into_vec();
        for i in coords {
            let orig = match slot {
                Slot::Input => x.data()[i],
                Slot::Param(p) => layer.params()[p].1.data()[i],
            };
            let plus = (orig as f64 + opts.h) as f32;
            let minus = (orig as f64 - opts.h) as f32;
            let (lp, kp) = probe(&mut work_layer, &mut work_x, slot, i, plus, &r)?;
            let (lm, km) = probe(&mut work_layer, &mut work_x, slot, i, minus, &r)?;
            match slot {
                Slot::Input => work_x.data_mut()[i] = orig,
                Slot::Param(p) => work_layer.params_mut()[p].data_mut()[i] = orig,
            }
            if kp != base_kinks || km != base_kinks {
                tally.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (plus as f64 - minus as f64);
            let mut a = analytic.data()[i] as f64;
            if opts.fault == Some(Fault::FlipSign) {
                a = -a;
            }
            let e = rel_err(a, numeric, opts.floor);
            tally.checked += 1;
            tally.worst = tally.worst.max(e);
            if e <= opts.tolerance {
                tally.passed += 1;
            }
        }
        out.push((name, tally));
    }
    Ok(out)
}

fn cross_entropy_f64(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.shape()[1];
    let mut total = 0.0;
    for (row, &l) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        total += lse - row[l] as f64;
    }
    total / labels.len() as f64
}

fn model_kinks(model: &Model, x: &Tensor) -> Result<(Vec<Kinks>, Tensor)> {
    let (logits, tape) = model.forward(x)?;
    let k = model.layers.iter().zip(&tape.caches).map(|(l, c)| kinks(l, c)).collect();
    Ok((k, logits))
}

/// Checks the cross-entropy gradient of a whole model with respect to every
/// parameter tensor.
pub fn check_model(model: &Model, x: &Tensor, labels: &[usize], opts: &GradcheckOptions, seed: u64) -> Result<Vec<(String, Tally)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (base, _) = model_kinks(model, x)?;
    let (logits, tape) = model.forward(x)?;
    let (_, grad) = softmax_cross_entropy(&logits, labels)?;
    let grads = model.backward(&tape, &grad)?;
    let names = model.parameter_names();
    let mut work = model.clone();
    let mut out = Vec::new();
    for (p, (name, analytic)) in names.into_iter().zip(&grads.0).enumerate() {
        let mut tally = Tally::default();
        let n = analytic.numel();
        for i in sample(&mut rng, n, n.min(opts.max_coords)).into_vec() {
            let orig = model.parameters()[p].data()[i];
            let plus = (orig as f64 + opts.h) as f32;
            let minus = (orig as f64 - opts.h) as f32;
            let mut eval = |v: f32| -> Result<(f64, Vec<Kinks>)> {
                work.parameters_mut()[p].data_mut()[i] = v;
                let (k, logits) = model_kinks(&work, x)?;
                Ok((cross_entropy_f64(&logits, labels), k))
            };
            let (lp, kp) = eval(plus)?;
            let (lm, km) = eval(minus)?;
            eval(orig)?;
            if kp != base || km != base {
                tally.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (plus as f64 - minus as f64);
            let mut a = analytic.data()[i] as f64;
            if opts.fault == Some(Fault::FlipSign) {
                a = -a;
            }
            let e = rel_err(a, numeric, opts.floor);
            tally.checked += 1;
            tally.worst = tally.worst.max(e);
            if e <= opts.tolerance {
                tally.passed += 1;
            }
        }
        out.push((name, tally));
    }
    Ok(out)
}

/// Checks the softmax cross-entropy gradient with respect to the logits.
pub fn check_loss(opts: &GradcheckOptions, seed: u64) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let logits = Tensor::uniform_fill(&[n, c], -2.0, 2.0, rng.random())?;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let (_, grad) = softmax_cross_entropy(&logits, &labels)?;
    let mut tally = Tally::default();
    let mut work = logits.clone();
    for i in 0..logits.numel() {
        let orig = logits.data()[i];
        let plus = (orig as f64 + opts.h) as f32;
        let minus = (orig as f64 - opts.h) as f32;
        work.data_mut()[i] = plus;
        let lp = cross_entropy_f64(&work, &labels);
        work.data_mut()[i] = minus;
        let lm = cross_entropy_f64(&work, &labels);
        work.data_mut()[i] = orig;
        let numeric = (lp - lm) / (plus as f64 - minus as f64);
        let mut a = grad.data()[i] as f64;
        if opts.fault == Some(Fault::FlipSign) {
            a = -a;
        }
        let e = rel_err(a, numeric, opts.floor);
        tally.checked += 1;
        tally.worst = tally.worst.max(e);
        if e <= opts.tolerance {
            tally.passed += 1;
        }
    }
    Ok(tally)
}

/// A small random convolution spec with a non-empty output, and a matching
/// input shape.
pub fn random_conv_case(rng: &mut impl Rng, dim: usize) -> (ConvSpec, Vec<usize>) {
    loop {
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=3);
        let (lo, hi) = match dim {
            1 => (4, 9),
            2 => (3, 6),
            _ => (3, 4),
        };
        let extent: Vec<usize> = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
        let kernel: Vec<usize> = (0..dim).map(|_| rng.random_range(1..=3)).collect();
        let stride: Vec<usize> = (0..dim).map(|_| rng.random_range(1..=2)).collect();
        let padding: Vec<usize> = (0..dim).map(|_| rng.random_range(0..=1)).collect();
        let spec = ConvSpec::new(cin, cout, &kernel).with_stride(&stride).with_padding(&padding);
        if spec.validate().is_err() || spec.output_spatial(&extent).is_err() {
            continue;
        }
        let mut shape = vec![rng.random_range(1..=2), cin];
        shape.extend(extent);
        return (spec, shape);
    }
}

/// Mixing coefficients away from 0 and 1 so both branches contribute.
fn randomize_mix(layer: &mut Layer, rng: &mut impl Rng) {
    let names: Vec<&str> = layer.params().iter().map(|(n, _)| *n).collect();
    for (name, t) in names.into_iter().zip(layer.params_mut()) {
        if name == "alpha" || name == "beta" {
            for v in t.data_mut() {
                *v = rng.random_range(0.2..0.8);
            }
        }
    }
}

const TROPICAL: [(WindowMode, ChannelMode); 6] = [
    (WindowMode::Min, ChannelMode::Sum),
    (WindowMode::Max, ChannelMode::Sum),
    (WindowMode::Min, ChannelMode::Max),
    (WindowMode::Max, ChannelMode::Max),
    (WindowMode::Min, ChannelMode::Min),
    (WindowMode::Max, ChannelMode::Min),
];

const MODES: [MixMode; 3] = [MixMode::TwoParam, MixMode::OneParam, MixMode::FixedSum];

type LayerMaker = Box<dyn Fn(ConvSpec, u64) -> Result<Layer>>;

/// Every suite: each windowed layer kind in 1, 2 and 3 dimensions, then the
/// linear layer, activations, flatten and the loss.
pub fn run_all(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut makers: Vec<(String, LayerMaker)> = Vec::new();
    makers.push(("Conv".into(), Box::new(Layer::standard_conv)));
    for (w, c) in TROPICAL {
        let label = crate::nn::LayerKind::TropicalConv { window: w, channel: c }.label();
        makers.push((label, Box::new(move |s, seed| Layer::tropical_conv(s, w, c, seed))));
    }
    for m in MODES {
        let label = crate::nn::LayerKind::CompoundConv(m).label();
        makers.push((label, Box::new(move |s, seed| Layer::compound_conv(s, m, seed))));
        let label = crate::nn::LayerKind::ParallelConv(m).label();
        makers.push((label, Box::new(move |s, seed| Layer::parallel_conv(s, m, seed))));
    }
    makers.push((
        "AvgPool".into(),
        Box::new(|s: ConvSpec, _| Layer::avg_pool(&s.kernel, &s.stride)),
    ));

    let mut suites = Vec::new();
    for (si, (label, make)) in makers.iter().enumerate() {
        for dim in 1..=3 {
            let mut suite = SuiteResult::new(format!("{label}-{dim}d"));
            for case in 0..opts.cases {
                let seed = derive_seed(opts.seed, (si * 8 + dim) as u64, case as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (mut layer, shape) = loop {
                    let (spec, shape) = random_conv_case(&mut rng, dim);
                    let layer = make(spec, rng.random())?;
                    if layer.output_shape(&shape).is_ok() {
                        break (layer, shape);
                    }
                };
                randomize_mix(&mut layer, &mut rng);
                let x = Tensor::uniform_fill(&shape, -1.0, 1.0, rng.random())?;
                for (t, tally) in check_layer(&layer, &x, opts, rng.random())? {
                    suite.add(&t, tally);
                }
            }
            suites.push(suite);
        }
    }

    let dense: [(&str, fn(&mut ChaCha8Rng) -> Result<(Layer, Vec<usize>)>); 4] = [
        ("Linear", |rng| {
            let (f, g) = (rng.random_range(1..=6), rng.random_range(1..=5));
            Ok((Layer::linear(f, g, rng.random())?, vec![rng.random_range(1..=3), f]))
        }),
        ("Sigmoid", |rng| Ok((Layer::Sigmoid, vec![2, rng.random_range(1..=3), 5]))),
        ("ReLU", |rng| Ok((Layer::ReLU, vec![2, rng.random_range(1..=3), 5]))),
        ("Flatten", |rng| Ok((Layer::Flatten, vec![2, rng.random_range(1..=3), 4, 3]))),
    ];
    for (di, (label, make)) in dense.iter().enumerate() {
        let mut suite = SuiteResult::new(*label);
        for case in 0..opts.cases {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 1000 + di as u64, case as u64));
            let (layer, shape) = make(&mut rng)?;
            let x = Tensor::uniform_fill(&shape, -2.0, 2.0, rng.random())?;
            for (t, tally) in check_layer(&layer, &x, opts, rng.random())? {
                suite.add(&t, tally);
            }
        }
        suites.push(suite);
    }

    let mut suite = SuiteResult::new("SoftmaxCrossEntropy");
    for case in 0..opts.cases {
        suite.add("logits", check_loss(opts, derive_seed(opts.seed, 2000, case as u64))?);
    }
    suites.push(suite);

    Ok(GradcheckReport { suites, min_pass_rate: opts.min_pass_rate })
}
