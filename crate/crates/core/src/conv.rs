//! Convolution geometry, direct convolution, and the implicit Toeplitz view.
//!
//! A 2-D convolution on a `(C, H, W)` feature map is a linear map whose matrix
//! `H` has one row per output position and one column per input position.
//! Row `(o, y, x)` holds the filter taps of output channel `o` that land
//! inside the (zero padded) input; boundary rows therefore have fewer taps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::Conv2d;
use crate::tensor::Tensor;

/// A convolution bound to concrete input extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(conv: &Conv2d, in_h: usize, in_w: usize) -> Result<Self> {
        let groups_ok =
            conv.groups > 0 && conv.in_ch.is_multiple_of(conv.groups) && conv.out_ch.is_multiple_of(conv.groups);
        let extents = (conv.output_extent(in_h), conv.output_extent(in_w));
        match extents {
            (Some(out_h), Some(out_w)) if groups_ok => Ok(Self {
                in_ch: conv.in_ch,
                out_ch: conv.out_ch,
                kernel: conv.kernel,
                stride: conv.stride,
                padding: conv.padding,
                groups: conv.groups,
                in_h,
                in_w,
                out_h,
                out_w,
            }),
            _ => Err(Error::ShapeMismatch(alloc::format!(
                "convolution {}→{} (kernel {}, groups {}) does not apply to a {in_h}x{in_w} input",
                conv.in_ch,
                conv.out_ch,
                conv.kernel,
                conv.groups
            ))),
        }
    }

    /// Input channels seen by each filter.
    pub fn in_per_group(&self) -> usize {
        self.in_ch / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }

    pub fn input_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_ch * self.out_h * self.out_w
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_per_group() * self.kernel * self.kernel
    }

    /// Nonzeros a row of the Toeplitz matrix can hold.
    pub fn row_taps(&self) -> usize {
        self.kernel * self.kernel * self.in_per_group()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.out_h, self.out_w]
    }

    /// Kernel offsets `[lo, hi)` that land inside the input for output
    /// coordinate `o` along an axis of length `n`.
    fn valid_taps(&self, o: usize, n: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.padding as isize;
        let lo = (-start).max(0) as usize;
        let hi = ((n as isize - start).max(0) as usize).min(self.kernel);
        (lo, hi.max(lo))
    }

    /// Calls `f(out_index, in_index, weight_index)` for every in-bounds tap.
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, cg, og) = (self.kernel, self.in_per_group(), self.out_per_group());
        for oc in 0..self.out_ch {
            let g = oc / og;
            for oy in 0..self.out_h {
                let (ylo, yhi) = self.valid_taps(oy, self.in_h);
                let iy0 = oy * self.stride + ylo - self.padding;
                for ox in 0..self.out_w {
                    let (xlo, xhi) = self.valid_taps(ox, self.in_w);
                    let ix0 = ox * self.stride + xlo - self.padding;
                    let out = (oc * self.out_h + oy) * self.out_w + ox;
                    for icl in 0..cg {
                        let ic = g * cg + icl;
                        for ky in ylo..yhi {
                            let iy = iy0 + (ky - ylo);
                            for kx in xlo..xhi {
                                let ix = ix0 + (kx - xlo);
                                let input = (ic * self.in_h + iy) * self.in_w + ix;
                                let weight = ((oc * cg + icl) * k + ky) * k + kx;
                                f(out, input, weight);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Direct convolution of a flat `(C, H, W)` input.
    pub fn forward(&self, weight: &[f64], input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(weight.len(), self.weight_len());
        debug_assert_eq!(input.len(), self.input_len());
        let mut out = vec![0.0; self.output_len()];
        self.for_each_tap(|o, i, w| out[o] += weight[w] * input[i]);
        out
    }

    /// Accumulates `∂⟨grad_out, conv(w, input)⟩/∂w` into `grad_w`.
    pub fn accumulate_weight_grad(&self, input: &[f64], grad_out: &[f64], grad_w: &mut [f64]) {
        self.for_each_tap(|o, i, w| grad_w[w] += grad_out[o] * input[i]);
    }

    /// Exact ∞-operator norm of the Toeplitz matrix without building it.
    ///
    /// The absolute taps are first summed over input channels; each row sum
    /// then depends only on which kernel rows and columns are in bounds, so
    /// it suffices to visit the distinct valid ranges along each axis.
    pub fn opnorm_inf(&self, weight: &[f64]) -> f64 {
        let (k, cg) = (self.kernel, self.in_per_group());
        let distinct = |out: usize, n: usize| {
            let mut ranges: Vec<(usize, usize)> = (0..out).map(|o| self.valid_taps(o, n)).collect();
            ranges.sort_unstable();
            ranges.dedup();
            ranges
        };
        let ys = distinct(self.out_h, self.in_h);
        let xs = distinct(self.out_w, self.in_w);

        let mut best = 0.0f64;
        let mut plane = vec![0.0; k * k];
        for oc in 0..self.out_ch {
            plane.iter_mut().for_each(|v| *v = 0.0);
            for icl in 0..cg {
                let base = (oc * cg + icl) * k * k;
                for (p, w) in plane.iter_mut().zip(&weight[base..base + k * k]) {
                    *p += w.abs();
                }
            }
            for &(ylo, yhi) in &ys {
                for &(xlo, xhi) in &xs {
                    let s: f64 = (ylo..yhi).map(|ky| plane[ky * k + xlo..ky * k + xhi].iter().sum::<f64>()).sum();
                    best = best.max(s);
                }
            }
        }
        best
    }

    /// The Toeplitz matrix itself; `cap` bounds the number of entries.
    pub fn toeplitz(&self, weight: &[f64], cap: usize) -> Result<Tensor> {
        let (rows, cols) = (self.output_len(), self.input_len());
        let size = rows.saturating_mul(cols);
        if size > cap {
            return Err(Error::SizeCap { size, cap });
        }
        let mut m = vec![0.0; size];
        self.for_each_tap(|o, i, w| m[o * cols + i] += weight[w]);
        Tensor::matrix(rows, cols, m)
    }
}
