//! Raw 1-D convolution kernels over row-major slices.
//!
//! Cross-correlation (no kernel flip) with "same" zero padding: the left pad
//! is `floor((K-1)*d/2)` and the right pad `ceil((K-1)*d/2)`, so the output
//! keeps the input length. Work is split per batch sample; per-sample
//! partial kernel gradients are summed in sample order.

use crate::error::{Error, Result};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub len: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        dilation: usize,
        groups: usize,
    ) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 3 {
            return Err(Error::Dimension(format!(
                "conv1d expects rank-3 input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        if dilation == 0 || groups == 0 {
            return Err(Error::Dimension("dilation and groups must be positive".into()));
        }
        let (b, cin, t) = (input[0], input[1], input[2]);
        let (cout, cin_g, k) = (kernel[0], kernel[1], kernel[2]);
        if cin % groups != 0 || cout % groups != 0 {
            return Err(Error::Dimension(format!(
                "channels ({cin} in, {cout} out) not divisible by groups {groups}"
            )));
        }
        if cin / groups != cin_g {
            return Err(Error::Dimension(format!(
                "kernel expects {cin_g} input channels per group, input provides {}",
                cin / groups
            )));
        }
        Ok(ConvGeometry {
            batch: b,
            in_channels: cin,
            out_channels: cout,
            len: t,
            kernel: k,
            dilation,
            groups,
        })
    }

    pub fn left_pad(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }

    pub fn right_pad(&self) -> usize {
        ((self.kernel - 1) * self.dilation).div_ceil(2)
    }

    fn cin_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Offset into the input for tap `k`, and the valid output range.
    #[inline]
    fn tap(&self, k: usize) -> (isize, usize, usize) {
        let shift = (k * self.dilation) as isize - self.left_pad() as isize;
        let t = self.len as isize;
        let lo = (-shift).clamp(0, t) as usize;
        let hi = (t - shift).clamp(0, t) as usize;
        (shift, lo, hi.max(lo))
    }
}

pub fn forward(geo: &ConvGeometry, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let t_len = geo.len;
    let per_out = geo.out_channels * t_len;
    let mut out = vec![0.0; geo.batch * per_out];
    parallel::for_each_chunk_mut(&mut out, per_out, |b, out_b| {
        let x_b = &input[b * geo.in_channels * t_len..(b + 1) * geo.in_channels * t_len];
        forward_sample(geo, x_b, kernel, bias, out_b);
    });
    out
}

fn forward_sample(geo: &ConvGeometry, x_b: &[f64], kernel: &[f64], bias: Option<&[f64]>, out_b: &mut [f64]) {
    let t_len = geo.len;
    let cin_g = geo.cin_per_group();
    let cout_g = geo.cout_per_group();
    let k_len = geo.kernel;
    for o in 0..geo.out_channels {
        let row = &mut out_b[o * t_len..(o + 1) * t_len];
        if let Some(bias) = bias {
            row.fill(bias[o]);
        }
        let c_base = (o / cout_g) * cin_g;
        for c in 0..cin_g {
            let xin = &x_b[(c_base + c) * t_len..(c_base + c + 1) * t_len];
            let w_row = &kernel[(o * cin_g + c) * k_len..(o * cin_g + c + 1) * k_len];
            for (k, &w) in w_row.iter().enumerate() {
                let (shift, lo, hi) = geo.tap(k);
                if lo >= hi {
                    continue;
                }
                let src = &xin[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                for (r, &x) in row[lo..hi].iter_mut().zip(src) {
                    *r += w * x;
                }
            }
        }
    }
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

/// Backward pass. Only the requested gradients are computed.
pub fn backward(
    geo: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> ConvGrads {
    let t_len = geo.len;
    let cin_g = geo.cin_per_group();
    let cout_g = geo.cout_per_group();
    let k_len = geo.kernel;
    let in_stride = geo.in_channels * t_len;
    let out_stride = geo.out_channels * t_len;

    let per_sample = parallel::map_indexed(geo.batch, |b| {
        let x_b = &input[b * in_stride..(b + 1) * in_stride];
        let g_b = &grad_out[b * out_stride..(b + 1) * out_stride];
        let mut gin = if want_input { vec![0.0; in_stride] } else { Vec::new() };
        let mut gw = if want_kernel { vec![0.0; kernel.len()] } else { Vec::new() };
        let mut gb = if want_bias { vec![0.0; geo.out_channels] } else { Vec::new() };
        for o in 0..geo.out_channels {
            let g_row = &g_b[o * t_len..(o + 1) * t_len];
            if want_bias {
                gb[o] = g_row.iter().sum();
            }
            let c_base = (o / cout_g) * cin_g;
            for c in 0..cin_g {
                let ci = c_base + c;
                let w_off = (o * cin_g + c) * k_len;
                for k in 0..k_len {
                    let (shift, lo, hi) = geo.tap(k);
                    if lo >= hi {
                        continue;
                    }
                    let s_lo = (lo as isize + shift) as usize;
                    let s_hi = (hi as isize + shift) as usize;
                    if want_kernel {
                        let xin = &x_b[ci * t_len + s_lo..ci * t_len + s_hi];
                        let mut acc = 0.0;
                        for (g, x) in g_row[lo..hi].iter().zip(xin) {
                            acc += g * x;
                        }
                        gw[w_off + k] += acc;
                    }
                    if want_input {
                        let w = kernel[w_off + k];
                        let dst = &mut gin[ci * t_len + s_lo..ci * t_len + s_hi];
                        for (d, g) in dst.iter_mut().zip(&g_row[lo..hi]) {
                            *d += w * g;
                        }
                    }
                }
            }
        }
        (gin, gw, gb)
    });

    let mut g_input = want_input.then(|| Vec::with_capacity(input.len()));
    let mut g_kernel = want_kernel.then(|| vec![0.0; kernel.len()]);
    let mut g_bias = want_bias.then(|| vec![0.0; geo.out_channels]);
    for (gin, gw, gb) in per_sample {
        if let Some(acc) = g_input.as_mut() {
            acc.extend_from_slice(&gin);
        }
        if let Some(acc) = g_kernel.as_mut() {
            acc.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
        }
        if let Some(acc) = g_bias.as_mut() {
            acc.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
        }
    }
    ConvGrads {
        input: g_input,
        kernel: g_kernel,
        bias: g_bias,
    }
}
