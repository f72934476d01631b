//! Naive reference implementations shared by integration and acceptance tests.
#![allow(dead_code)]

use egospeed::ops::{AttentionVars, Conv2dGeometry, Conv3dGeometry};
use egospeed::rng::{self, Rng};
use egospeed::{Tape, Tensor};
use rand::Rng as _;

pub fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rng::normal_vec(rng, n, 1.0)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct cross-correlation over `x[C×T×H×W]` with `k[O×C×d×kh×kw]`.
pub fn naive_conv3d(x: &Tensor, k: &Tensor, b: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> (Vec<usize>, Vec<f64>) {
    let [c, t, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [o, _, kd, kh, kw] = <[usize; 5]>::try_from(k.shape()).unwrap();
    let out_ext = |n: usize, kk: usize, p: usize, s: usize| (n + 2 * p - kk) / s + 1;
    let (ot, oh, ow) = (
        out_ext(t, kd, pad[0], stride[0]),
        out_ext(h, kh, pad[1], stride[1]),
        out_ext(w, kw, pad[2], stride[2]),
    );
    let (xd, kdat) = (x.data(), k.data());
    let mut out = Vec::with_capacity(o * ot * oh * ow);
    for oc in 0..o {
        for z in 0..ot {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for dz in 0..kd {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let iz = (z * stride[0] + dz) as isize - pad[0] as isize;
                                    let iy = (y * stride[1] + dy) as isize - pad[1] as isize;
                                    let ix = (xx * stride[2] + dx) as isize - pad[2] as isize;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= t as isize || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((ic * t + iz as usize) * h + iy as usize) * w + ix as usize;
                                    let ki = (((oc * c + ic) * kd + dz) * kh + dy) * kw + dx;
                                    acc += xd[xi] * kdat[ki];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![o, ot, oh, ow], out)
}

pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

fn affine(x: &[f64], w: &[f64], b: &[f64], rows: usize, dim: usize) -> Vec<f64> {
    let mut y = naive_matmul(x, w, rows, dim, dim);
    for r in 0..rows {
        for j in 0..dim {
            y[r * dim + j] += b[j];
        }
    }
    y
}

/// Multi-head self-attention with explicit loops. `w`/`b` hold the query,
/// key, value and output projections in that order.
pub fn naive_attention(x: &[f64], n: usize, dim: usize, heads: usize, w: &[Vec<f64>; 4], b: &[Vec<f64>; 4]) -> Vec<f64> {
    let q = affine(x, &w[0], &b[0], n, dim);
    let k = affine(x, &w[1], &b[1], n, dim);
    let v = affine(x, &w[2], &b[2], n, dim);
    let hd = dim / heads;
    let mut merged = vec![0.0; n * dim];
    for h in 0..heads {
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for (j, s) in scores.iter_mut().enumerate() {
                for d in 0..hd {
                    *s += q[i * dim + h * hd + d] * k[j * dim + h * hd + d];
                }
                *s /= (hd as f64).sqrt();
            }
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..hd {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += e[j] / z * v[j * dim + h * hd + d];
                }
                merged[i * dim + h * hd + d] = acc;
            }
        }
    }
    affine(&merged, &w[3], &b[3], n, dim)
}

/// Max |library − oracle| for conv3d over `seeds` random instances with
/// random extents, strides and paddings.
pub fn conv3d_oracle_error(seeds: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut r = rng::stream(seed, 11);
        let c = r.random_range(1..4);
        let o = r.random_range(1..4);
        let k = [r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
        let stride = [r.random_range(1..3), r.random_range(1..3), r.random_range(1..3)];
        let pad = [r.random_range(0..2), r.random_range(0..2), r.random_range(0..2)];
        let ext = [r.random_range(k[0]..7), r.random_range(k[1]..8), r.random_range(k[2]..8)];
        let x = random(&mut r, &[c, ext[0], ext[1], ext[2]]);
        let kern = random(&mut r, &[o, c, k[0], k[1], k[2]]);
        let b = random(&mut r, &[o]);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(&x), tape.leaf(&kern), tape.leaf(&b));
        let y = tape.conv3d(xv, kv, bv, Conv3dGeometry { stride, padding: pad }).unwrap();
        let (shape, want) = naive_conv3d(&x, &kern, &b, stride, pad);
        assert_eq!(tape.shape(y), &shape[..]);
        worst = worst.max(max_abs_diff(tape.data(y), &want));
    }
    worst
}

pub fn conv2d_oracle_error(seeds: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut r = rng::stream(seed, 12);
        let c = r.random_range(1..4);
        let o = r.random_range(1..4);
        let k = r.random_range(1..5);
        let stride = [r.random_range(1..3), r.random_range(1..3)];
        let pad = [r.random_range(0..3), r.random_range(0..3)];
        let (h, w) = (r.random_range(k..12), r.random_range(k..12));
        let x = random(&mut r, &[c, h, w]);
        let kern = random(&mut r, &[o, c, k, k]);
        let b = random(&mut r, &[o]);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(&x), tape.leaf(&kern), tape.leaf(&b));
        let y = tape.conv2d(xv, kv, bv, Conv2dGeometry { stride, padding: pad }).unwrap();
        let x3 = x.reshape(&[c, 1, h, w]).unwrap();
        let k3 = kern.reshape(&[o, c, 1, k, k]).unwrap();
        let (shape, want) = naive_conv3d(&x3, &k3, &b, [1, stride[0], stride[1]], [0, pad[0], pad[1]]);
        assert_eq!(tape.shape(y), &[shape[0], shape[2], shape[3]][..]);
        worst = worst.max(max_abs_diff(tape.data(y), &want));
    }
    worst
}

pub fn matmul_oracle_error(seeds: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut r = rng::stream(seed, 13);
        let (m, k, n) = (r.random_range(1..20), r.random_range(1..20), r.random_range(1..20));
        let a = random(&mut r, &[m, k]);
        let b = random(&mut r, &[k, n]);
        let mut tape = Tape::new();
        let (av, bv) = (tape.leaf(&a), tape.leaf(&b));
        let y = tape.matmul(av, bv).unwrap();
        assert_eq!(tape.shape(y), &[m, n]);
        worst = worst.max(max_abs_diff(tape.data(y), &naive_matmul(a.data(), b.data(), m, k, n)));
    }
    worst
}

pub fn attention_oracle_error(seeds: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut r = rng::stream(seed, 14);
        let heads = r.random_range(1..4);
        let dim = heads * r.random_range(1..5);
        let n = r.random_range(1..10);
        let x = random(&mut r, &[n, dim]);
        let ws: [Tensor; 4] = std::array::from_fn(|_| random(&mut r, &[dim, dim]));
        let bs: [Tensor; 4] = std::array::from_fn(|_| random(&mut r, &[dim]));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let p: Vec<_> = (0..4).map(|i| (tape.leaf(&ws[i]), tape.leaf(&bs[i]))).collect();
        let vars = AttentionVars {
            num_heads: heads,
            query: p[0],
            key: p[1],
            value: p[2],
            output: p[3],
        };
        let y = tape.multi_head_self_attention(xv, &vars).unwrap();
        let want = naive_attention(
            x.data(),
            n,
            dim,
            heads,
            &ws.clone().map(|t| t.data().to_vec()),
            &bs.clone().map(|t| t.data().to_vec()),
        );
        worst = worst.max(max_abs_diff(tape.data(y), &want));
    }
    worst
}

/// The published KITTI City/Road split, transcribed row by row.
pub const TABLE_1: &[(&str, &str)] = &[
    ("2011_09_26_drive_0002", "train"),
    ("2011_09_26_drive_0005", "train"),
    ("2011_09_26_drive_0009", "train"),
    ("2011_09_26_drive_0011", "train"),
    ("2011_09_26_drive_0013", "train"),
    ("2011_09_26_drive_0014", "train"),
    ("2011_09_26_drive_0048", "train"),
    ("2011_09_26_drive_0051", "train"),
    ("2011_09_26_drive_0056", "train"),
    ("2011_09_26_drive_0059", "train"),
    ("2011_09_26_drive_0084", "train"),
    ("2011_09_26_drive_0091", "train"),
    ("2011_09_26_drive_0095", "train"),
    ("2011_09_26_drive_0096", "train"),
    ("2011_09_26_drive_0104", "train"),
    ("2011_09_26_drive_0106", "train"),
    ("2011_09_26_drive_0113", "train"),
    ("2011_09_26_drive_0001", "test"),
    ("2011_09_26_drive_0117", "test"),
    ("2011_09_28_drive_0001", "train"),
    ("2011_09_29_drive_0071", "train"),
    ("2011_09_26_drive_0015", "train"),
    ("2011_09_26_drive_0027", "train"),
    ("2011_09_26_drive_0028", "train"),
    ("2011_09_26_drive_0029", "train"),
    ("2011_09_26_drive_0032", "train"),
    ("2011_09_26_drive_0052", "train"),
    ("2011_09_26_drive_0070", "test"),
    ("2011_09_26_drive_0101", "test"),
    ("2011_09_29_drive_0004", "train"),
    ("2011_09_29_drive_0016", "train"),
    ("2011_09_29_drive_0042", "train"),
    ("2011_09_29_drive_0047", "train"),
];

/// Differences between `load_split_table("kitti")` and [`TABLE_1`].
pub fn split_table_mismatches() -> Vec<String> {
    let table = egospeed::data::load_split_table("kitti").unwrap();
    let mut out = Vec::new();
    for (id, split) in TABLE_1 {
        match table.get(*id) {
            Some(s) if s.name() == *split => {}
            other => out.push(format!("{id}: expected {split}, got {other:?}")),
        }
    }
    if table.len() != TABLE_1.len() {
        out.push(format!("{} drives, expected {}", table.len(), TABLE_1.len()));
    }
    out
}

/// `(layer, output shape)` for one forward pass of a freshly built model on
/// a zero clip.
pub fn shape_walk(spec: egospeed::models::ModelSpec) -> Vec<(String, Vec<usize>)> {
    let model = egospeed::models::Model::build(spec, 0).unwrap();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&spec.input_shape()).unwrap());
    let mut trace = Vec::new();
    model.forward_traced(&mut tape, &bound, x, Some(&mut trace)).unwrap();
    trace
}

/// Published layer shapes of the full-width network on a 10-frame clip.
pub fn faithful_shapes() -> Vec<Vec<usize>> {
    vec![
        vec![2, 10, 64, 64],
        vec![32, 10, 64, 64],
        vec![32, 10, 64, 64],
        vec![32, 10, 32, 32],
        vec![64, 10, 32, 32],
        vec![64, 10, 32, 32],
        vec![64, 5, 16, 16],
        vec![128, 5, 16, 16],
        vec![128, 5, 16, 16],
        vec![1, 163_840],
        vec![1, 512],
        vec![1, 256],
        vec![1, 64],
        vec![1, 1],
    ]
}
