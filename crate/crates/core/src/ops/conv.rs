//! 2D/3D convolution lowered to a single GEMM over an im2col buffer.
//!
//! Kernels are cross-correlations (no kernel flip), the usual deep-learning
//! convention. 2D convolution runs through the 3D path with a unit temporal
//! axis.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, Mat};
use crate::tape::{Tape, Var};

/// Stride and zero padding of a 3D convolution, ordered (time, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dGeometry {
    /// Stride 1 with padding 1 on every axis: output extents equal input
    /// extents for 3×3×3 kernels.
    pub const SAME_3: Conv3dGeometry = Conv3dGeometry {
        stride: [1, 1, 1],
        padding: [1, 1, 1],
    };

    pub const VALID: Conv3dGeometry = Conv3dGeometry {
        stride: [1, 1, 1],
        padding: [0, 0, 0],
    };
}

/// Stride and zero padding of a 2D convolution, ordered (height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    in_ch: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

impl ConvDims {
    fn cols_rows(&self) -> usize {
        self.in_ch * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.in_ch * self.input.iter().product::<usize>()
    }
}

fn conv_dims(
    input_shape: &[usize],
    kernel_shape: &[usize],
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<ConvDims> {
    if input_shape.len() != 4 || kernel_shape.len() != 5 {
        return shape_err(format!(
            "conv3d expects input [C,T,H,W] and kernel [O,C,d,k,k], got {input_shape:?} and {kernel_shape:?}"
        ));
    }
    if kernel_shape[1] != input_shape[0] {
        return Err(Error::Shape(format!(
            "conv3d channel mismatch: kernel expects {} input channels, input has {}",
            kernel_shape[1], input_shape[0]
        )));
    }
    if stride.iter().any(|&s| s == 0) {
        return Err(Error::Geometry("stride must be >= 1".into()));
    }
    let mut output = [0; 3];
    for axis in 0..3 {
        let padded = input_shape[axis + 1] + 2 * padding[axis];
        let k = kernel_shape[axis + 2];
        if k > padded {
            return Err(Error::Geometry(format!(
                "kernel extent {k} exceeds padded input extent {padded} on axis {axis}"
            )));
        }
        output[axis] = (padded - k) / stride[axis] + 1;
    }
    Ok(ConvDims {
        in_ch: input_shape[0],
        input: [input_shape[1], input_shape[2], input_shape[3]],
        kernel: [kernel_shape[2], kernel_shape[3], kernel_shape[4]],
        output,
        stride,
        padding,
    })
}

/// Unfolds the input into a `[C·d·k·k × T'·H'·W']` matrix.
fn im2col(input: &[f64], d: &ConvDims) -> Vec<f64> {
    let [it, ih, iw] = d.input;
    let [kt, kh, kw] = d.kernel;
    let positions = d.positions();
    let mut cols = vec![0.0; d.cols_rows() * positions];
    let mut row = 0;
    for c in 0..d.in_ch {
        let chan = &input[c * it * ih * iw..(c + 1) * it * ih * iw];
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for_each_tap(d, dt, dy, dx, |out_idx, in_idx| dst[out_idx] = chan[in_idx]);
                    row += 1;
                }
            }
        }
    }
    debug_assert_eq!(row * positions, cols.len());
    cols
}

/// Folds a column-gradient matrix back onto the input (adjoint of `im2col`).
fn col2im(cols: &[f64], d: &ConvDims) -> Vec<f64> {
    let [it, ih, iw] = d.input;
    let [kt, kh, kw] = d.kernel;
    let positions = d.positions();
    let mut input = vec![0.0; d.input_len()];
    let mut row = 0;
    for c in 0..d.in_ch {
        let chan = &mut input[c * it * ih * iw..(c + 1) * it * ih * iw];
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let src = &cols[row * positions..(row + 1) * positions];
                    for_each_tap(d, dt, dy, dx, |out_idx, in_idx| chan[in_idx] += src[out_idx]);
                    row += 1;
                }
            }
        }
    }
    input
}

/// Visits every output position whose kernel tap `(dt,dy,dx)` lands inside
/// the unpadded input, passing (flat output index, flat input index).
#[inline]
fn for_each_tap(d: &ConvDims, dt: usize, dy: usize, dx: usize, mut f: impl FnMut(usize, usize)) {
    let [it, ih, iw] = d.input;
    let [ot, oh, ow] = d.output;
    let [st, sh, sw] = d.stride;
    let [pt, ph, pw] = d.padding;
    // Output x range whose input column lies in [0, iw).
    let (x_lo, x_hi) = valid_range(ow, sw, pw, dx, iw);
    for t in 0..ot {
        let zt = (t * st + dt) as isize - pt as isize;
        if zt < 0 || zt >= it as isize {
            continue;
        }
        let zt = zt as usize;
        for y in 0..oh {
            let zy = (y * sh + dy) as isize - ph as isize;
            if zy < 0 || zy >= ih as isize {
                continue;
            }
            let in_row = (zt * ih + zy as usize) * iw;
            let out_row = (t * oh + y) * ow;
            for x in x_lo..x_hi {
                let zx = x * sw + dx - pw;
                f(out_row + x, in_row + zx);
            }
        }
    }
}

fn valid_range(out: usize, stride: usize, pad: usize, tap: usize, extent: usize) -> (usize, usize) {
    // Need 0 <= x*stride + tap - pad < extent.
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if extent + pad > tap {
        ((extent + pad - tap - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

impl Tape {
    /// 3D convolution of `input[C×T×H×W]` with `kernel[O×C×d×k×k]` plus `bias[O]`.
    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, geom: Conv3dGeometry) -> Result<Var> {
        let dims = conv_dims(self.shape(input), self.shape(kernel), geom.stride, geom.padding)?;
        let out_ch = self.shape(kernel)[0];
        if self.shape(bias) != [out_ch] {
            return shape_err(format!(
                "conv bias {:?} for {out_ch} output channels",
                self.shape(bias)
            ));
        }
        let (xv, kv, bv) = (self.shared(input), self.shared(kernel), self.shared(bias));
        let k_rows = dims.cols_rows();
        let positions = dims.positions();
        let cols = im2col(&xv, &dims);
        let mut out = Vec::with_capacity(out_ch * positions);
        for &b in bv.iter() {
            out.extend(std::iter::repeat_n(b, positions));
        }
        linalg::gemm(
            Mat::new(&kv, out_ch, k_rows),
            Mat::new(&cols, k_rows, positions),
            &mut out,
            1.0,
        );
        drop(cols);
        let [ot, oh, ow] = dims.output;
        Ok(self.record(
            vec![out_ch, ot, oh, ow],
            out,
            vec![input, kernel, bias],
            Box::new(move |g, mask| {
                let gm = Mat::new(g, out_ch, positions);
                let dx = mask[0].then(|| {
                    let dcols = linalg::matmul(Mat::new(&kv, out_ch, k_rows).t(), gm);
                    col2im(&dcols, &dims)
                });
                let dk = mask[1].then(|| {
                    // im2col is recomputed here instead of kept alive between passes.
                    let cols = im2col(&xv, &dims);
                    linalg::matmul(gm, Mat::new(&cols, k_rows, positions).t())
                });
                let db = mask[2].then(|| g.chunks_exact(positions).map(|r| r.iter().sum()).collect());
                vec![dx, dk, db]
            }),
        ))
    }

    /// 2D convolution of `input[C×H×W]` with `kernel[O×C×k×k]` plus `bias[O]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, geom: Conv2dGeometry) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 3 || sk.len() != 4 {
            return shape_err(format!(
                "conv2d expects input [C,H,W] and kernel [O,C,k,k], got {si:?} and {sk:?}"
            ));
        }
        let x3 = self.reshape(input, &[si[0], 1, si[1], si[2]])?;
        let k3 = self.reshape(kernel, &[sk[0], sk[1], 1, sk[2], sk[3]])?;
        let geom3 = Conv3dGeometry {
            stride: [1, geom.stride[0], geom.stride[1]],
            padding: [0, geom.padding[0], geom.padding[1]],
        };
        let y = self.conv3d(x3, k3, bias, geom3)?;
        let so = self.shape(y).to_vec();
        self.reshape(y, &[so[0], so[2], so[3]])
    }
}
