//! Datasets: IDX and labeled-CSV loaders, synthetic blobs, seeded splits.

use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, C, spatial...]`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if inputs.rank() < 3 {
            return Err(Error::shape(format!("inputs {:?} need [N, C, spatial...]", inputs.shape())));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} inputs for {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::domain("dataset is empty"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::domain(format!("label {bad} outside {num_classes} classes")));
        }
        if !inputs.is_finite() {
            return Err(Error::format("inputs contain NaN or infinity"));
        }
        Ok(Dataset { inputs, labels, num_classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, spatial...]`
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn dim(&self) -> usize {
        self.inputs.rank() - 2
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.inputs.gather_outer(indices)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let (inputs, labels) = self.batch(indices)?;
        Dataset::new(inputs, labels, self.num_classes, name)
    }

    /// First `n` samples (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.name.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("{}: truncated header", path.display())))
}

/// Parses one IDX file; returns its dims and payload.
fn parse_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_maybe_gz(path)?;
    let found = be_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(Error::format(format!(
            "{}: magic {found:#010x}, expected {magic:#010x}",
            path.display()
        )));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let payload = bytes
        .get(start..start + len)
        .ok_or_else(|| Error::format(format!("{}: truncated payload", path.display())))?;
    Ok((dims, payload.to_vec()))
}

/// Loads an IDX image/label pair (raw or gzip). Pixels are scaled to `[0, 1]`;
/// `num_classes` is one more than the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (idims, pixels) = parse_idx(images, IDX_IMAGES)?;
    let (ldims, raw_labels) = parse_idx(labels, IDX_LABELS)?;
    if idims[0] != ldims[0] {
        return Err(Error::format(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    if idims[0] == 0 {
        return Err(Error::format(format!("{}: no images", images.display())));
    }
    let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let inputs = Tensor::from_vec(&[idims[0], 1, idims[1], idims[2]], data)?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let name = images.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    Dataset::new(inputs, labels, classes, name)
}

/// Loads rows of `feature..., label` into `[N, 1, L]`. A first row with any
/// non-numeric cell is treated as a header. Labels may be written as floats
/// with an integral value.
pub fn load_csv_labeled(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let cells: Vec<&str> = record.iter().map(str::trim).collect();
        if row == 0 && cells.iter().any(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let line = row + 1;
        if cells.len() < 2 {
            return Err(Error::format(format!("line {line}: need at least one feature and a label")));
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::format(format!("line {line}: {} cells, expected {w}", cells.len())))
            }
            _ => {}
        }
        let parse = |c: &str| -> Result<f64> {
            let v: f64 = c
                .parse()
                .map_err(|_| Error::format(format!("line {line}: non-numeric cell {c:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::format(format!("line {line}: non-finite cell {c:?}")))
            }
        };
        let (label_cell, feature_cells) = cells.split_last().expect("two cells");
        for c in feature_cells {
            features.push(parse(c)? as f32);
        }
        let label = parse(label_cell)?;
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::format(format!("line {line}: label {label_cell:?} is not a class index")));
        }
        labels.push(label as usize);
    }
    let Some(width) = width else {
        return Err(Error::format(format!("{}: no data rows", path.display())));
    };
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let inputs = Tensor::from_vec(&[labels.len(), 1, width - 1], features)?;
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    Dataset::new(inputs, labels, classes, name)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticKind {
    #[serde(rename = "blobs-1d")]
    Blobs1d,
    #[serde(rename = "blobs-2d")]
    Blobs2d,
    #[serde(rename = "blobs-3d")]
    Blobs3d,
}

impl SyntheticKind {
    pub fn key(self) -> &'static str {
        match self {
            SyntheticKind::Blobs1d => "blobs-1d",
            SyntheticKind::Blobs2d => "blobs-2d",
            SyntheticKind::Blobs3d => "blobs-3d",
        }
    }

    /// Per-sample shape `[1, spatial...]`.
    pub fn sample_shape(self) -> Vec<usize> {
        match self {
            SyntheticKind::Blobs1d => vec![1, 128],
            SyntheticKind::Blobs2d => vec![1, 16, 16],
            SyntheticKind::Blobs3d => vec![1, 12, 12, 12],
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs-1d" => Ok(SyntheticKind::Blobs1d),
            "blobs-2d" => Ok(SyntheticKind::Blobs2d),
            "blobs-3d" => Ok(SyntheticKind::Blobs3d),
            _ => Err(Error::domain(format!("unknown synthetic kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub classes: usize,
    /// Peak height of the class templates in units of the noise deviation.
    #[serde(default = "default_separation")]
    pub separation: f32,
    #[serde(default)]
    pub seed: u64,
}

fn default_separation() -> f32 {
    3.0
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n: usize, classes: usize, seed: u64) -> Self {
        SyntheticSpec { kind, n, classes, separation: default_separation(), seed }
    }

    pub fn with_separation(mut self, separation: f32) -> Self {
        self.separation = separation;
        self
    }
}

/// Each class draws a template of Gaussian bumps with unit peak; sample `i`
/// has class `i mod classes` and equals `separation * template + noise`.
pub fn synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.classes < 2 {
        return Err(Error::domain("synthetic data needs n >= 1 and at least 2 classes"));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(Error::domain(format!("separation {} must be finite and >= 0", spec.separation)));
    }
    let shape = spec.kind.sample_shape();
    let per: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let templates: Vec<f32> = (0..spec.classes).flat_map(|_| blob_template(&shape[1..], &mut rng)).collect();
    let mut normal = || -> f32 { StandardNormal.sample(&mut rng) };
    let mut data = Vec::with_capacity(spec.n * per);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.classes;
        labels.push(c);
        for t in &templates[c * per..(c + 1) * per] {
            data.push(spec.separation * t + normal());
        }
    }
    let mut full = vec![spec.n];
    full.extend(shape);
    Dataset::new(Tensor::from_vec(&full, data)?, labels, spec.classes, spec.kind.key())
}

/// Sum of `BUMPS` Gaussian bumps at random centres, scaled to a peak of 1.
fn blob_template(spatial: &[usize], rng: &mut ChaCha8Rng) -> Vec<f32> {
    const BUMPS: usize = 3;
    let sigma = *spatial.iter().max().unwrap_or(&1) as f64 / 8.0;
    let centres: Vec<Vec<f64>> =
        (0..BUMPS).map(|_| spatial.iter().map(|&e| rng.random_range(0.0..e as f64)).collect()).collect();
    let per: usize = spatial.iter().product();
    let mut out = Vec::with_capacity(per);
    for flat in 0..per {
        let mut rest = flat;
        let mut pos = vec![0.0; spatial.len()];
        for (d, &e) in spatial.iter().enumerate().rev() {
            pos[d] = (rest % e) as f64;
            rest /= e;
        }
        let v: f64 = centres
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(&pos).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum();
        out.push(v);
    }
    let peak = out.iter().cloned().fold(0.0, f64::max);
    out.into_iter().map(|v| (v / peak) as f32).collect()
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Splits into `(train, test)` with `floor(N * train_fraction)` training
/// samples drawn by a seeded permutation.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::domain(format!("train fraction {train_fraction} must be in (0, 1)")));
    }
    let n_train = (ds.len() as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == ds.len() {
        return Err(Error::domain(format!(
            "fraction {train_fraction} of {} samples leaves an empty side",
            ds.len()
        )));
    }
    let perm = permutation(ds.len(), seed);
    let train = ds.subset(&perm[..n_train], format!("{}-train", ds.name))?;
    let test = ds.subset(&perm[n_train..], format!("{}-test", ds.name))?;
    Ok((train, test))
}
