use crate::error::{shape_err, Result};
use crate::linalg::{self, Mat};
use crate::tape::{Tape, Var};
use crate::tensor::{numel, BinaryOp};

impl Tape {
    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "elementwise {op:?}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let (av, bv) = (self.shared(a), self.shared(b));
        let out: Vec<f64> = av.iter().zip(bv.iter()).map(|(&x, &y)| op.apply(x, y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.record(
            shape,
            out,
            vec![a, b],
            Box::new(move |g, mask| match op {
                BinaryOp::Add => vec![
                    mask[0].then(|| g.to_vec()),
                    mask[1].then(|| g.to_vec()),
                ],
                BinaryOp::Sub => vec![
                    mask[0].then(|| g.to_vec()),
                    mask[1].then(|| g.iter().map(|v| -v).collect()),
                ],
                BinaryOp::Mul => vec![
                    mask[0].then(|| g.iter().zip(bv.iter()).map(|(g, b)| g * b).collect()),
                    mask[1].then(|| g.iter().zip(av.iter()).map(|(g, a)| g * a).collect()),
                ],
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.data(a).iter().map(|v| v * factor).collect();
        let shape = self.shape(a).to_vec();
        self.record(
            shape,
            out,
            vec![a],
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * factor).collect())]),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(a)) || shape.iter().any(|&d| d == 0) {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape(a)));
        }
        let out = self.data(a).to_vec();
        Ok(self.record(
            shape.to_vec(),
            out,
            vec![a],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let n = numel(self.shape(a));
        let total = self.data(a).iter().sum();
        self.record(
            vec![1],
            vec![total],
            vec![a],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = numel(self.shape(a));
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.shared(a), self.shared(b));
        let out = linalg::matmul(Mat::new(&av, m, k), Mat::new(&bv, k, n));
        Ok(self.record(
            vec![m, n],
            out,
            vec![a, b],
            Box::new(move |g, mask| {
                let gm = Mat::new(g, m, n);
                vec![
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    mask[0].then(|| linalg::matmul(gm, Mat::new(&bv, k, n).t())),
                    mask[1].then(|| linalg::matmul(Mat::new(&av, m, k).t(), gm)),
                ]
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return shape_err(format!("transpose expects a matrix, got {s:?}"));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_data(self.data(a), r, c);
        Ok(self.record(
            vec![c, r],
            out,
            vec![a],
            Box::new(move |g, _| vec![Some(transpose_data(g, c, r))]),
        ))
    }

    /// Affine map over the trailing axis: `input[…×in]·weight[in×out] + bias[out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        let fan_in = *si.last().expect("non-empty shape");
        if sw.len() != 2 || sw[0] != fan_in || sb != [sw[1]] {
            return shape_err(format!(
                "linear: input {si:?}, weight {sw:?}, bias {sb:?}"
            ));
        }
        let fan_out = sw[1];
        let rows = numel(si) / fan_in;
        let mut out_shape = si.to_vec();
        *out_shape.last_mut().unwrap() = fan_out;
        let (xv, wv, bv) = (self.shared(input), self.shared(weight), self.shared(bias));
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(&bv);
        }
        linalg::gemm(
            Mat::new(&xv, rows, fan_in),
            Mat::new(&wv, fan_in, fan_out),
            &mut out,
            1.0,
        );
        Ok(self.record(
            out_shape,
            out,
            vec![input, weight, bias],
            Box::new(move |g, mask| {
                let gm = Mat::new(g, rows, fan_out);
                let dx = mask[0].then(|| linalg::matmul(gm, Mat::new(&wv, fan_in, fan_out).t()));
                let dw = mask[1].then(|| linalg::matmul(Mat::new(&xv, rows, fan_in).t(), gm));
                let db = mask[2].then(|| {
                    let mut db = vec![0.0; fan_out];
                    for row in g.chunks_exact(fan_out) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    db
                });
                vec![dx, dw, db]
            }),
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.shared(a);
        let out = av.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.shape(a).to_vec();
        self.record(
            shape,
            out,
            vec![a],
            Box::new(move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(av.iter())
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.shared(a);
        let out = av.iter().map(|&x| gelu_value(x)).collect();
        let shape = self.shape(a).to_vec();
        self.record(
            shape,
            out,
            vec![a],
            Box::new(move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(av.iter())
                        .map(|(&g, &x)| g * gelu_derivative(x))
                        .collect(),
                )]
            }),
        )
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of zero tensors");
        };
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return shape_err(format!("concat_cols: part shape {s:?}, rows {rows}"));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.data(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(self.record(
            vec![rows, total],
            out,
            parts.to_vec(),
            Box::new(move |g, mask| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(mask)
                    .map(|(&w, &needed)| {
                        let part = needed.then(|| {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            d
                        });
                        offset += w;
                        part
                    })
                    .collect()
            }),
        ))
    }

    /// Columns `start..start+width` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || width == 0 || start + width > s[1] {
            return shape_err(format!("slice_cols {start}+{width} of {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + width]);
        }
        Ok(self.record(
            vec![rows, width],
            out,
            vec![a],
            Box::new(move |g, _| {
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + width]
                        .copy_from_slice(&g[r * width..(r + 1) * width]);
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Concatenates tensors of shape `[1]` (or any shape) into a flat vector.
    pub fn stack_flat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("stack of zero tensors");
        }
        let lens: Vec<usize> = parts.iter().map(|&p| numel(self.shape(p))).collect();
        let mut out = Vec::with_capacity(lens.iter().sum());
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let total = out.len();
        Ok(self.record(
            vec![total],
            out,
            parts.to_vec(),
            Box::new(move |g, mask| {
                let mut offset = 0;
                lens.iter()
                    .zip(mask)
                    .map(|(&n, &needed)| {
                        let part = needed.then(|| g[offset..offset + n].to_vec());
                        offset += n;
                        part
                    })
                    .collect()
            }),
        ))
    }

    /// Mean over the rows of a `[rows×cols]` tensor, shape `[1×cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return shape_err(format!("mean_rows expects a matrix, got {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let mut out = vec![0.0; cols];
        for row in self.data(a).chunks_exact(cols) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        let inv = 1.0 / rows as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.record(
            vec![1, cols],
            out,
            vec![a],
            Box::new(move |g, _| {
                let row: Vec<f64> = g.iter().map(|v| v * inv).collect();
                vec![Some(row.repeat(rows))]
            }),
        ))
    }

    /// Zero-pads axis 1 of a `[C×T×…]` tensor at the end up to `target` frames.
    pub fn pad_time(&mut self, a: Var, target: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 || target < s[1] {
            return shape_err(format!("pad_time to {target} frames of {s:?}"));
        }
        if target == s[1] {
            return Ok(a);
        }
        let (c, t) = (s[0], s[1]);
        let frame: usize = s[2..].iter().product();
        let src = self.data(a);
        let mut out = vec![0.0; c * target * frame];
        for ch in 0..c {
            out[ch * target * frame..(ch * target + t) * frame]
                .copy_from_slice(&src[ch * t * frame..(ch + 1) * t * frame]);
        }
        let mut shape = s;
        shape[1] = target;
        Ok(self.record(
            shape,
            out,
            vec![a],
            Box::new(move |g, _| {
                let mut d = Vec::with_capacity(c * t * frame);
                for ch in 0..c {
                    d.extend_from_slice(&g[ch * target * frame..(ch * target + t) * frame]);
                }
                vec![Some(d)]
            }),
        ))
    }
}

pub(crate) fn transpose_data(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

pub(crate) fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let th = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}
