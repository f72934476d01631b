use crate::error::{shape_err, Error, Result};
use crate::tape::{Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    /// Per-row normalization of `input[rows×dim]` followed by `gain ⊙ x̂ + shift`.
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || s[1] < 2 {
            return shape_err(format!("layer_norm expects [tokens, dim>=2], got {s:?}"));
        }
        let dim = s[1];
        if self.shape(gain) != [dim] || self.shape(shift) != [dim] {
            return shape_err(format!(
                "layer_norm affine shapes {:?}/{:?} for dim {dim}",
                self.shape(gain),
                self.shape(shift)
            ));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm eps must be > 0".into()));
        }
        let (gv, bv) = (self.shared(gain), self.shared(shift));
        let x = self.data(input);
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(s[0]);
        for row in x.chunks_exact(dim) {
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let r = 1.0 / (var + eps).sqrt();
            inv_std.push(r);
            xhat.extend(row.iter().map(|v| (v - mean) * r));
        }
        let out = xhat
            .chunks_exact(dim)
            .flat_map(|row| row.iter().zip(gv.iter().zip(bv.iter())).map(|(x, (g, b))| g * x + b))
            .collect();
        Ok(self.record(
            s,
            out,
            vec![input, gain, shift],
            Box::new(move |g, mask| {
                let dx = mask[0].then(|| {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((grow, xrow), &r) in g.chunks_exact(dim).zip(xhat.chunks_exact(dim)).zip(&inv_std) {
                        let dxhat: Vec<f64> = grow.iter().zip(gv.iter()).map(|(a, b)| a * b).collect();
                        let m1 = dxhat.iter().sum::<f64>() / dim as f64;
                        let m2 = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
                        dx.extend(dxhat.iter().zip(xrow).map(|(d, xh)| r * (d - m1 - xh * m2)));
                    }
                    dx
                });
                let dgain = mask[1].then(|| {
                    let mut d = vec![0.0; dim];
                    for (grow, xrow) in g.chunks_exact(dim).zip(xhat.chunks_exact(dim)) {
                        for j in 0..dim {
                            d[j] += grow[j] * xrow[j];
                        }
                    }
                    d
                });
                let dshift = mask[2].then(|| {
                    let mut d = vec![0.0; dim];
                    for grow in g.chunks_exact(dim) {
                        d.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                    d
                });
                vec![dx, dgain, dshift]
            }),
        ))
    }

    /// Softmax over the trailing axis, computed with max subtraction.
    pub fn softmax(&mut self, input: Var) -> Var {
        let s = self.shape(input).to_vec();
        let n = *s.last().expect("non-empty shape");
        let mut out = Vec::with_capacity(self.data(input).len());
        for row in self.data(input).chunks_exact(n) {
            softmax_row(row, &mut out);
        }
        let y = std::sync::Arc::new(out.clone());
        self.record(
            s,
            out,
            vec![input],
            Box::new(move |g, _| {
                let mut dx = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks_exact(n).zip(y.chunks_exact(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    dx.extend(grow.iter().zip(yrow).map(|(gv, yv)| yv * (gv - dot)));
                }
                vec![Some(dx)]
            }),
        )
    }
}

pub(crate) fn softmax_row(row: &[f64], out: &mut Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut total = 0.0;
    for &v in row {
        let e = (v - max).exp();
        total += e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|v| *v /= total);
}
