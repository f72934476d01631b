use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tape::{Tape, Var};

/// Max-pooling window `(d, k, k)` and stride, ordered (time, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool3dSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

impl Pool3dSpec {
    /// Non-overlapping pooling (stride equals kernel).
    pub const fn new(kernel: [usize; 3]) -> Self {
        Pool3dSpec {
            kernel,
            stride: kernel,
        }
    }
}

impl Tape {
    /// Max pooling over `input[C×T×H×W]`.
    ///
    /// Every axis must tile exactly; there is no implicit truncation. The
    /// backward pass routes each window's gradient to its argmax, taking the
    /// lowest flat index among ties.
    pub fn maxpool3d(&mut self, input: Var, spec: Pool3dSpec) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return shape_err(format!("maxpool3d expects [C,T,H,W], got {s:?}"));
        }
        let mut out_ext = [0; 3];
        for axis in 0..3 {
            let (n, k, st) = (s[axis + 1], spec.kernel[axis], spec.stride[axis]);
            if k == 0 || st == 0 || k > n || (n - k) % st != 0 {
                return Err(Error::Geometry(format!(
                    "pool kernel {:?} / stride {:?} does not tile input {s:?}",
                    spec.kernel, spec.stride
                )));
            }
            out_ext[axis] = (n - k) / st + 1;
        }
        let (c, t, h, w) = (s[0], s[1], s[2], s[3]);
        let [ot, oh, ow] = out_ext;
        let [kt, kh, kw] = spec.kernel;
        let [st, sh, sw] = spec.stride;
        let x = self.data(input);
        let mut out = Vec::with_capacity(c * ot * oh * ow);
        let mut argmax = Vec::with_capacity(c * ot * oh * ow);
        for ch in 0..c {
            for pt in 0..ot {
                for py in 0..oh {
                    for px in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for dt in 0..kt {
                            for dy in 0..kh {
                                let row = ((ch * t + pt * st + dt) * h + py * sh + dy) * w + px * sw;
                                for dx in 0..kw {
                                    let v = x[row + dx];
                                    // Strict comparison keeps the first (lowest) index on ties.
                                    if v > best || best_idx == usize::MAX {
                                        best = v;
                                        best_idx = row + dx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
        let in_len = c * t * h * w;
        Ok(self.record(
            vec![c, ot, oh, ow],
            out,
            vec![input],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; in_len];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] += gv;
                }
                vec![Some(dx)]
            }),
        ))
    }
}
