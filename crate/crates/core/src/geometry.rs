//! Convolution specs and the sliding-window index tables shared by every
//! convolution-family layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for "no input position" (a padded offset, or a window with no winner).
pub const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl ConvSpec {
    /// Stride 1, no padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: &[usize]) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: kernel.to_vec(),
            stride: vec![1; kernel.len()],
            padding: vec![0; kernel.len()],
        }
    }

    /// Same kernel, stride and padding along each of `dim` axes.
    pub fn cubic(dim: usize, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: vec![kernel; dim],
            stride: vec![stride; dim],
            padding: vec![padding; dim],
        }
    }

    pub fn with_stride(mut self, stride: &[usize]) -> Self {
        self.stride = stride.to_vec();
        self
    }

    pub fn with_padding(mut self, padding: &[usize]) -> Self {
        self.padding = padding.to_vec();
        self
    }

    pub fn dim(&self) -> usize {
        self.kernel.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_len()
    }

    /// `[C_out, C_in, kernel...]`
    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.kernel.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::shape(format!("convolution dimensionality must be 1, 2 or 3, got {dim}")));
        }
        if self.stride.len() != dim || self.padding.len() != dim {
            return Err(Error::shape(format!(
                "kernel {:?}, stride {:?} and padding {:?} must have the same length",
                self.kernel, self.stride, self.padding
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::shape("channel counts must be positive"));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::shape(format!(
                "kernel {:?} and stride {:?} extents must be positive",
                self.kernel, self.stride
            )));
        }
        Ok(())
    }

    /// `floor((in + 2 pad - k) / stride) + 1` per axis.
    pub fn output_spatial(&self, input_spatial: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input_spatial.len() != self.dim() {
            return Err(Error::shape(format!(
                "{}d convolution applied to spatial extents {:?}",
                self.dim(),
                input_spatial
            )));
        }
        input_spatial
            .iter()
            .enumerate()
            .map(|(axis, &len)| {
                let padded = len + 2 * self.padding[axis];
                if padded < self.kernel[axis] {
                    Err(Error::shape(format!(
                        "axis {axis}: padded extent {padded} is smaller than kernel {}",
                        self.kernel[axis]
                    )))
                } else {
                    Ok((padded - self.kernel[axis]) / self.stride[axis] + 1)
                }
            })
            .collect()
    }
}

/// A convolution applied to a concrete input shape, normalized to three
/// spatial axes (leading axes padded with extent 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_shape: Vec<usize>,
    pub out_spatial: Vec<usize>,
    in3: [usize; 3],
    out3: [usize; 3],
    k3: [usize; 3],
    s3: [usize; 3],
    p3: [usize; 3],
}

impl Geometry {
    pub fn new(spec: &ConvSpec, input_shape: &[usize]) -> Result<Self> {
        spec.validate()?;
        let dim = spec.dim();
        if input_shape.len() != dim + 2 {
            return Err(Error::shape(format!(
                "{dim}d convolution expects input of rank {}, got shape {input_shape:?}",
                dim + 2
            )));
        }
        if input_shape[1] != spec.in_channels {
            return Err(Error::shape(format!(
                "input has {} channels, layer expects {}",
                input_shape[1], spec.in_channels
            )));
        }
        let out_spatial = spec.output_spatial(&input_shape[2..])?;
        let lift = |v: &[usize], fill: usize| {
            let mut a = [fill; 3];
            a[3 - v.len()..].copy_from_slice(v);
            a
        };
        Ok(Geometry {
            batch: input_shape[0],
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            input_shape: input_shape.to_vec(),
            in3: lift(&input_shape[2..], 1),
            out3: lift(&out_spatial, 1),
            k3: lift(&spec.kernel, 1),
            s3: lift(&spec.stride, 1),
            p3: lift(&spec.padding, 0),
            out_spatial,
        })
    }

    pub fn in_plane(&self) -> usize {
        self.in3.iter().product()
    }

    pub fn positions(&self) -> usize {
        self.out3.iter().product()
    }

    pub fn kernel_len(&self) -> usize {
        self.k3.iter().product()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.batch, self.out_channels];
        s.extend_from_slice(&self.out_spatial);
        s
    }

    /// Row-major `[position][kernel offset]` table of flat input-plane
    /// indices; padded offsets hold [`NONE`].
    pub fn window_table(&self) -> Vec<u32> {
        let [od, oh, ow] = self.out3;
        let [kd, kh, kw] = self.k3;
        let mut table = Vec::with_capacity(self.positions() * self.kernel_len());
        for pd in 0..od {
            for ph in 0..oh {
                for pw in 0..ow {
                    for a in 0..kd {
                        let z = self.coord(0, pd, a);
                        for b in 0..kh {
                            let y = self.coord(1, ph, b);
                            for c in 0..kw {
                                let x = self.coord(2, pw, c);
                                table.push(match (z, y, x) {
                                    (Some(z), Some(y), Some(x)) => {
                                        ((z * self.in3[1] + y) * self.in3[2] + x) as u32
                                    }
                                    _ => NONE,
                                });
                            }
                        }
                    }
                }
            }
        }
        table
    }

    fn coord(&self, axis: usize, out: usize, k: usize) -> Option<usize> {
        let pos = (out * self.s3[axis] + k) as isize - self.p3[axis] as isize;
        (pos >= 0 && (pos as usize) < self.in3[axis]).then_some(pos as usize)
    }

    /// Gathers one input plane into `[position][kernel offset]` patches,
    /// writing `pad` at padded offsets.
    pub fn gather(table: &[u32], plane: &[f32], pad: f32, out: &mut [f32]) {
        for (dst, &idx) in out.iter_mut().zip(table) {
            *dst = if idx == NONE { pad } else { plane[idx as usize] };
        }
    }
}
