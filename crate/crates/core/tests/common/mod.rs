//! Reference implementations written as plain nested loops, independent of
//! the library's window tables and fused scans.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcnn::mixed::{compound_forward, parallel_forward, MixMode, MixParams};
use tcnn::tropical::{tropical_conv_backward, tropical_conv_forward, ChannelMode, WindowMode};
use tcnn::{ConvSpec, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Agg {
    Sum,
    Max,
    Min,
}

pub const KINDS: [(bool, Agg); 6] = [
    (true, Agg::Sum),
    (false, Agg::Sum),
    (true, Agg::Max),
    (false, Agg::Max),
    (true, Agg::Min),
    (false, Agg::Min),
];

/// Pads a spatial shape out to 3 axes.
fn three(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - v.len()..].copy_from_slice(v);
    out
}

pub fn out_extent(input: usize, k: usize, s: usize, p: usize) -> usize {
    (input + 2 * p - k) / s + 1
}

pub struct Naive {
    /// Output in `[N, C_out, spatial...]` order.
    pub values: Vec<f64>,
    /// Per output and input channel: winning flat input index (into
    /// `[N, C_in, spatial...]`) and flat weight index.
    pub per_channel: Vec<Vec<Option<(usize, usize)>>>,
    /// Winning input channel per output under `Max`/`Min` aggregation.
    pub winners: Vec<Option<usize>>,
    pub out_spatial: Vec<usize>,
}

/// Min-plus (`use_min`) or max-plus convolution with the given channel
/// aggregation. Window sums are formed in `f32`; the `Sum` aggregation is
/// accumulated in `f64`. Padded cells never take part.
pub fn tropical(x: &[f32], x_shape: &[usize], w: &[f32], spec: &ConvSpec, use_min: bool, agg: Agg) -> Naive {
    let (n, cin) = (x_shape[0], x_shape[1]);
    let cout = spec.out_channels;
    let dim = spec.dim();
    let sp = three(&x_shape[2..], 1);
    let k = three(&spec.kernel, 1);
    let s = three(&spec.stride, 1);
    let p = three(&spec.padding, 0);
    let o: Vec<usize> = (0..3).map(|a| out_extent(sp[a], k[a], s[a], p[a])).collect();
    let better = |a: f32, b: f32| if use_min { a < b } else { a > b };
    let mut values = Vec::new();
    let mut winners = Vec::new();
    let mut per = Vec::new();
    for b in 0..n {
        for co in 0..cout {
            for od in 0..o[0] {
                for oh in 0..o[1] {
                    for ow in 0..o[2] {
                        let mut per_channel = Vec::new();
                        for ci in 0..cin {
                            let mut best: Option<(f32, usize, usize)> = None;
                            for kd in 0..k[0] {
                                for kh in 0..k[1] {
                                    for kw in 0..k[2] {
                                        let id = (od * s[0] + kd) as isize - p[0] as isize;
                                        let ih = (oh * s[1] + kh) as isize - p[1] as isize;
                                        let iw = (ow * s[2] + kw) as isize - p[2] as isize;
                                        if id < 0 || ih < 0 || iw < 0 {
                                            continue;
                                        }
                                        let (id, ih, iw) = (id as usize, ih as usize, iw as usize);
                                        if id >= sp[0] || ih >= sp[1] || iw >= sp[2] {
                                            continue;
                                        }
                                        let xi = (((b * cin + ci) * sp[0] + id) * sp[1] + ih) * sp[2] + iw;
                                        let wi = (((co * cin + ci) * k[0] + kd) * k[1] + kh) * k[2] + kw;
                                        let v = x[xi] + w[wi];
                                        if best.is_none_or(|(bv, _, _)| better(v, bv)) {
                                            best = Some((v, xi, wi));
                                        }
                                    }
                                }
                            }
                            per_channel.push(best);
                        }
                        let empty = if use_min { f64::INFINITY } else { f64::NEG_INFINITY };
                        let (value, win) = match agg {
                            Agg::Sum => {
                                if per_channel.iter().any(|c| c.is_none()) {
                                    (empty, None)
                                } else {
                                    (per_channel.iter().map(|c| c.unwrap().0 as f64).sum(), None)
                                }
                            }
                            Agg::Max | Agg::Min => {
                                let mut pick: Option<(f32, usize)> = None;
                                for (ci, c) in per_channel.iter().enumerate() {
                                    if let Some((v, _, _)) = *c {
                                        let wins = match pick {
                                            None => true,
                                            Some((pv, _)) => {
                                                if agg == Agg::Max {
                                                    v > pv
                                                } else {
                                                    v < pv
                                                }
                                            }
                                        };
                                        if wins {
                                            pick = Some((v, ci));
                                        }
                                    }
                                }
                                match pick {
                                    Some((v, ci)) => (v as f64, Some(ci)),
                                    None => (empty, None),
                                }
                            }
                        };
                        values.push(value);
                        winners.push(win);
                        per.push(per_channel.iter().map(|c| c.map(|(_, xi, wi)| (xi, wi))).collect());
                    }
                }
            }
        }
    }
    Naive { values, per_channel: per, winners, out_spatial: o[3 - dim..].to_vec() }
}

/// Small random spec and input shape with a non-empty output. Padding may
/// reach the kernel size, so some windows can be fully padded.
pub fn random_case(rng: &mut impl Rng, dim: usize) -> (ConvSpec, Vec<usize>) {
    loop {
        let extent: Vec<usize> = (0..dim)
            .map(|_| match dim {
                1 => rng.random_range(1..=12),
                2 => rng.random_range(1..=7),
                _ => rng.random_range(1..=5),
            })
            .collect();
        let kernel: Vec<usize> = (0..dim).map(|_| rng.random_range(1..=4)).collect();
        let stride: Vec<usize> = (0..dim).map(|_| rng.random_range(1..=3)).collect();
        let padding: Vec<usize> = (0..dim).map(|_| rng.random_range(0..=2)).collect();
        let fits = (0..dim).all(|a| extent[a] + 2 * padding[a] >= kernel[a]);
        if !fits {
            continue;
        }
        let spec = ConvSpec::new(rng.random_range(1..=3), rng.random_range(1..=3), &kernel)
            .with_stride(&stride)
            .with_padding(&padding);
        let mut shape = vec![rng.random_range(1..=2), spec.in_channels];
        shape.extend(extent);
        return (spec, shape);
    }
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect()
}

fn to_modes(use_min: bool, agg: Agg) -> (WindowMode, ChannelMode) {
    let w = if use_min { WindowMode::Min } else { WindowMode::Max };
    let c = match agg {
        Agg::Sum => ChannelMode::Sum,
        Agg::Max => ChannelMode::Max,
        Agg::Min => ChannelMode::Min,
    };
    (w, c)
}

/// Forward values, sub-gradients and winner maps of every tropical layer kind
/// against [`tropical`] on `cases` random configurations per kind and
/// dimension. Returns the number of configurations checked.
pub fn oracle_sweep(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for dim in 1..=3 {
        for (use_min, agg) in KINDS {
            let (wmode, cmode) = to_modes(use_min, agg);
            for case in 0..cases {
                let (spec, shape) = random_case(&mut rng, dim);
                let numel: usize = shape.iter().product();
                let x = Tensor::from_vec(&shape, random_vec(&mut rng, numel)).unwrap();
                let wshape = spec.weight_shape();
                let w = Tensor::from_vec(&wshape, random_vec(&mut rng, wshape.iter().product())).unwrap();
                let naive = tropical(x.data(), &shape, w.data(), &spec, use_min, agg);
                let (y, args) = tropical_conv_forward(&x, &w, &spec, wmode, cmode).map_err(|e| e.to_string())?;
                let tag = format!("{dim}d {wmode:?}/{cmode:?} case {case} {spec:?} {shape:?}");
                if y.numel() != naive.values.len() {
                    return Err(format!("{tag}: {} outputs, reference {}", y.numel(), naive.values.len()));
                }
                for (o, (&got, &want)) in y.data().iter().zip(&naive.values).enumerate() {
                    let ok = match agg {
                        Agg::Sum if want.is_finite() => {
                            let scale: f64 = naive.per_channel[o]
                                .iter()
                                .map(|c| {
                                    let (xi, wi) = c.unwrap();
                                    (x.data()[xi] + w.data()[wi]).abs() as f64
                                })
                                .sum::<f64>()
                                .max(f64::MIN_POSITIVE);
                            ((got as f64 - want) / scale).abs() <= 1e-5
                        }
                        _ => got as f64 == want,
                    };
                    if !ok {
                        return Err(format!("{tag}: output {o} = {got}, reference {want}"));
                    }
                }

                // sub-gradient routing
                let g = random_vec(&mut rng, y.numel());
                let grad = Tensor::from_vec(y.shape(), g.clone()).unwrap();
                let (gx, gw) = tropical_conv_backward(&grad, &args, &spec, cmode).map_err(|e| e.to_string())?;
                let mut ref_gx = vec![0f64; x.numel()];
                let mut ref_gw = vec![0f64; w.numel()];
                for (o, chans) in naive.per_channel.iter().enumerate() {
                    for (ci, c) in chans.iter().enumerate() {
                        let routed = match agg {
                            Agg::Sum => true,
                            _ => naive.winners[o] == Some(ci),
                        };
                        if let (true, Some((xi, wi))) = (routed, c) {
                            ref_gx[*xi] += g[o] as f64;
                            ref_gw[*wi] += g[o] as f64;
                        }
                    }
                }
                for (name, got, want) in [("input", gx.data(), &ref_gx), ("weight", gw.data(), &ref_gw)] {
                    for (i, (&a, &b)) in got.iter().zip(want.iter()).enumerate() {
                        if (a as f64 - b).abs() > 1e-5 * b.abs().max(1.0) {
                            return Err(format!("{tag}: {name} gradient {i} = {a}, reference {b}"));
                        }
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Compound and parallel layers with one branch switched off by a zero
/// coefficient must equal the matching pure min-plus/max-plus-sum layer bit
/// for bit. Returns the number of comparisons made.
pub fn degeneration_sweep(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    for case in 0..cases {
        let dim = case % 3 + 1;
        let (spec, shape) = random_case(&mut rng, dim);
        let numel: usize = shape.iter().product();
        let x = Tensor::from_vec(&shape, random_vec(&mut rng, numel)).unwrap();
        let wshape = spec.weight_shape();
        let wlen: usize = wshape.iter().product();
        let w1 = Tensor::from_vec(&wshape, random_vec(&mut rng, wlen)).unwrap();
        let w2 = Tensor::from_vec(&wshape, random_vec(&mut rng, wlen)).unwrap();
        let pure = |w: &Tensor, mode| tropical_conv_forward(&x, w, &spec, mode, ChannelMode::Sum).unwrap().0;
        let min1 = pure(&w1, WindowMode::Min);
        let max1 = pure(&w1, WindowMode::Max);
        let max2 = pure(&w2, WindowMode::Max);
        let coeff = |v: f32| Tensor::full(&[spec.in_channels, spec.out_channels], v).unwrap();

        let mut runs: Vec<(String, Tensor, &Tensor)> = Vec::new();
        for (a, b) in [(1.0, 0.0), (0.0, 1.0)] {
            let mix = MixParams::two(coeff(a), coeff(b));
            let c = compound_forward(&x, &w1, &mix, MixMode::TwoParam, &spec).map_err(|e| e.to_string())?.0;
            let p = parallel_forward(&x, &w1, &w2, &mix, MixMode::TwoParam, &spec).map_err(|e| e.to_string())?.0;
            let (cw, pw) = if a == 1.0 { (&min1, &min1) } else { (&max1, &max2) };
            runs.push((format!("compound 2p ({a},{b})"), c, cw));
            runs.push((format!("parallel 2p ({a},{b})"), p, pw));
        }
        for a in [1.0, 0.0] {
            let mix = MixParams::one(coeff(a));
            let c = compound_forward(&x, &w1, &mix, MixMode::OneParam, &spec).map_err(|e| e.to_string())?.0;
            let p = parallel_forward(&x, &w1, &w2, &mix, MixMode::OneParam, &spec).map_err(|e| e.to_string())?.0;
            let (cw, pw) = if a == 1.0 { (&min1, &min1) } else { (&max1, &max2) };
            runs.push((format!("compound 1p ({a})"), c, cw));
            runs.push((format!("parallel 1p ({a})"), p, pw));
        }
        for (label, got, want) in runs {
            let same = got.shape() == want.shape()
                && got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(format!("case {case} {spec:?}: {label} differs from the pure layer"));
            }
            compared += 1;
        }
    }
    Ok(compared)
}

/// Reference 2D cost expressions, written with separate kernel and output
/// extents: `(mults, adds, comparisons)`.
pub fn reference_costs_2d(kind: &str, kh: u64, kw: u64, cin: u64, cout: u64, hout: u64, wout: u64) -> (u64, u64, u64) {
    let plane = cout * hout * wout;
    match kind {
        "standard" => (kh * kw * cin * cout * hout * wout, (cin - 1) * cout * hout * wout * (kh * kw - 1), 0),
        "tropical-sum" => (0, (cin - 1 + cin * kh * kw) * plane, (kh * kw - 1) * cin * plane),
        "tropical-other" => (0, cin * kh * kw * plane, (kh * kw * cin - 1) * plane),
        "compound" => (2 * cin * plane, (kh * kw * cin + 2 * cin - 1) * plane, 2 * (kh * kw - 1) * cin * plane),
        "parallel" => (2 * cin * plane, (2 * kh * kw * cin + 2 * cin - 1) * plane, 2 * (kh * kw - 1) * cin * plane),
        _ => unreachable!(),
    }
}

/// `count_layer` against [`reference_costs_2d`] on `specs` random 2D specs, for
/// every layer family. Also checks the exact 2/K multiplication ratio and
/// that tropical layers never multiply.
pub fn complexity_sweep(specs: usize, seed: u64) -> Result<usize, String> {
    use tcnn::complexity::{count_layer, Ratio};
    use tcnn::nn::LayerKind;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for _ in 0..specs {
        let (kh, kw) = (rng.random_range(1..=7u64), rng.random_range(1..=7u64));
        let (cin, cout) = (rng.random_range(1..=64u64), rng.random_range(1..=64u64));
        let (hout, wout) = (rng.random_range(1..=64u64), rng.random_range(1..=64u64));
        let spec = ConvSpec::new(cin as usize, cout as usize, &[kh as usize, kw as usize]);
        let out = [hout as usize, wout as usize];
        let mut kinds: Vec<(&str, LayerKind)> = vec![("standard", LayerKind::StandardConv)];
        for (use_min, agg) in KINDS {
            let (window, channel) = to_modes(use_min, agg);
            let family = if agg == Agg::Sum { "tropical-sum" } else { "tropical-other" };
            kinds.push((family, LayerKind::TropicalConv { window, channel }));
        }
        for m in [MixMode::OneParam, MixMode::TwoParam] {
            kinds.push(("compound", LayerKind::CompoundConv(m)));
            kinds.push(("parallel", LayerKind::ParallelConv(m)));
        }
        for (family, kind) in kinds {
            let got = count_layer(kind, &spec, &out).map_err(|e| e.to_string())?;
            let want = reference_costs_2d(family, kh, kw, cin, cout, hout, wout);
            if (got.mults, got.adds, got.comparisons) != want {
                return Err(format!("{family} {kind:?} {spec:?} {out:?}: {got:?} vs {want:?}"));
            }
            if family.starts_with("tropical") && got.mults != 0 {
                return Err(format!("{kind:?} multiplies"));
            }
            checked += 1;
        }
        let std = count_layer(LayerKind::StandardConv, &spec, &out).unwrap();
        let comp = count_layer(LayerKind::CompoundConv(MixMode::TwoParam), &spec, &out).unwrap();
        if Ratio::new(comp.mults, std.mults) != Ratio::new(2, kh * kw) {
            return Err(format!("{spec:?}: compound/standard multiplications is not 2/K"));
        }
    }
    Ok(checked)
}

pub struct OrderingFacts {
    pub f1: f64,
    pub c_a: f64,
    pub p_a: f64,
    pub lenet_relu: f64,
    pub lenet: f64,
    pub cm_a: f64,
}

/// Ω_u (θ = 10, batch 1) of the MNIST-shaped builds, plus a check that each
/// compound variant matches its parallel counterpart on multiplications and
/// comparisons and has fewer additions.
pub fn mnist_omega() -> Result<OrderingFacts, String> {
    use tcnn::complexity::{count_model, AdditionConvention, Theta};
    use tcnn::zoo::{build, ModelConfig, VariantId};
    let ops = |v: VariantId| {
        let m = build(&ModelConfig::new(v, &[1, 28, 28], 10)).unwrap();
        count_model(&m, 1, Theta::default(), AdditionConvention::Reduced).unwrap()
    };
    for (c, p) in [(VariantId::CA, VariantId::PA), (VariantId::CAb, VariantId::PAb)] {
        let (c, p) = (ops(c).total, ops(p).total);
        if c.mults != p.mults || c.comparisons != p.comparisons || c.adds >= p.adds {
            return Err(format!("compound {c:?} vs parallel {p:?}"));
        }
    }
    Ok(OrderingFacts {
        f1: ops(VariantId::F1).omega_u,
        c_a: ops(VariantId::CA).omega_u,
        p_a: ops(VariantId::PA).omega_u,
        lenet_relu: ops(VariantId::LeNetReLU).omega_u,
        lenet: ops(VariantId::LeNet).omega_u,
        cm_a: ops(VariantId::CmA).omega_u,
    })
}

/// Reference parameter counts: dataset, per-sample shape, classes and
/// `(variant, count)` rows.
pub type CountTable = (&'static str, &'static [usize], usize, &'static [(&'static str, usize)]);

pub const PARAMETER_TABLES: [CountTable; 5] = [
    (
        "MNIST",
        &[1, 28, 28],
        10,
        &[
            ("LeNet", 61_706),
            ("F1", 61_706),
            ("F2", 61_706),
            ("F3", 61_706),
            ("C_a", 61_808),
            ("C_ab", 61_910),
            ("P_a", 64_358),
            ("P_ab", 64_460),
            ("PM_a", 61_862),
            ("PM_ab", 61_868),
            ("CM_a", 61_712),
            ("CM_ab", 61_718),
        ],
    ),
    (
        "CIFAR-10/SVHN",
        &[3, 32, 32],
        10,
        &[
            ("LeNet", 83_126),
            ("F1", 83_126),
            ("F2", 83_126),
            ("F3", 83_126),
            ("C_a", 83_240),
            ("C_ab", 83_354),
            ("P_a", 86_090),
            ("P_ab", 86_204),
            ("PM_a", 83_594),
            ("PM_ab", 83_612),
            ("CM_a", 83_144),
            ("CM_ab", 83_162),
        ],
    ),
    (
        "ECG",
        &[1, 187],
        5,
        &[
            ("LeNet", 63_339),
            ("C_a", 63_441),
            ("C_ab", 63_543),
            ("P_a", 64_209),
            ("P_ab", 64_311),
            ("PM_a", 63_825),
            ("PM_ab", 63_831),
            ("CM_a", 63_345),
            ("CM_ab", 63_351),
        ],
    ),
    (
        "UrbanSound8K",
        &[1, 32_000],
        10,
        &[
            ("LeNet", 15_333_524),
            ("C_a", 15_333_626),
            ("C_ab", 15_333_728),
            ("P_a", 15_334_394),
            ("P_ab", 15_334_496),
            ("PM_a", 15_334_010),
            ("CM_a", 15_333_530),
        ],
    ),
    (
        "SpeechCommands",
        &[1, 8_000],
        35,
        &[
            ("LeNet", 3_815_649),
            ("C_a", 3_815_751),
            ("C_ab", 3_815_853),
            ("P_a", 3_816_519),
            ("PM_a", 3_816_135),
            ("CM_a", 3_815_655),
        ],
    ),
];

/// Mismatches between built models and the reference counts.
pub fn parameter_mismatches(tables: &[CountTable]) -> Vec<String> {
    use tcnn::zoo::{build, count_parameters, ModelConfig, VariantId};
    let mut bad = Vec::new();
    for (name, shape, classes, rows) in tables {
        for (key, want) in rows.iter() {
            let v: VariantId = key.parse().unwrap();
            let got = count_parameters(&build(&ModelConfig::new(v, shape, *classes)).unwrap());
            if got != *want {
                bad.push(format!("{name} {key}: {got} vs {want}"));
            }
        }
    }
    bad
}
