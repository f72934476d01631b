//! Central finite differences and the gradient-check suite.
//!
//! Each suite case draws seeded random inputs, reduces the op's output to a
//! scalar through a fixed random projection, and compares the tape gradient
//! of every input against central differences. The error of one entry is
//! `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`; the floor
//! keeps entries that are zero up to rounding from dominating the maximum.
//! A failing entry whose one-sided differences disagree by at least its
//! error is attributed to a ReLU / max-pool switch inside `±eps` (the function
//! is not differentiable on the probe interval) and counted separately.

use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec, Preset, VivitConfig};
use crate::ops::{AttentionVars, Conv2dGeometry, Conv3dGeometry, Pool3dSpec, LAYER_NORM_EPS};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::train::l2_loss;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Central differences at eps 1e-5 carry ~1e-10 absolute rounding error
/// (|f|·2⁻⁵² / eps); entries below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-4;

/// Every case name understood by [`run_suite`].
pub const CASES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "matmul",
    "linear",
    "relu",
    "gelu",
    "conv2d",
    "conv3d",
    "maxpool3d",
    "layer_norm",
    "softmax",
    "attention",
    "tubelet_embed",
    "l2_loss",
    "threedcma",
    "vivit",
];

/// Central-difference estimate of the gradient of scalar-valued `f` at `x`.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let all: Vec<usize> = (0..x.len()).collect();
    let values = finite_difference_at(&mut f, x, &all, eps)?;
    Tensor::from_vec(x.shape(), values)
}

/// Central differences for the listed flat indices only.
pub fn finite_difference_at(
    f: impl FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    indices: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    Ok(probe_differences(f, x, indices, eps)?.into_iter().map(|p| p.central).collect())
}

/// One-sided and central differences at one coordinate.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub forward: f64,
    pub backward: f64,
    pub central: f64,
}

impl Probe {
    /// Disagreement of the one-sided slopes. About `eps·|f''|` for smooth `f`;
    /// order one when a ReLU or max-pool switch lies within `±eps`.
    pub fn kink(&self) -> f64 {
        (self.forward - self.backward).abs()
    }
}

pub fn probe_differences(
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    indices: &[usize],
    eps: f64,
) -> Result<Vec<Probe>> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference eps must be > 0".into()));
    }
    let mut eval = |probe: &Tensor| -> Result<f64> {
        let y = f(probe)?;
        if y.shape() != [1] {
            return Err(Error::NotScalar(y.shape().to_vec()));
        }
        Ok(y.data()[0])
    };
    let center = eval(x)?;
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        out.push(Probe {
            forward: (plus - center) / eps,
            backward: (center - minus) / eps,
            central: (plus - minus) / (2.0 * eps),
        });
    }
    Ok(out)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Case names to run; empty means all of [`CASES`].
    pub cases: Vec<String>,
    pub seeds: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Fraction of model parameters probed in the model cases.
    pub param_fraction: f64,
    /// Negates every analytic gradient before comparison (negative control).
    pub inject_sign_error: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            cases: Vec::new(),
            seeds: 10,
            eps: DEFAULT_EPS,
            tolerance: DEFAULT_TOLERANCE,
            param_fraction: 0.01,
            inject_sign_error: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub case: String,
    pub seed: u64,
    pub checked: usize,
    /// Entries whose mismatch is explained by a kink of the function inside
    /// the probe interval; excluded from `max_rel_err`.
    pub kinks: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Runs every selected case for seeds `0..seeds`.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CaseReport>> {
    let selected: Vec<&str> = if opts.cases.is_empty() {
        CASES.to_vec()
    } else {
        for c in &opts.cases {
            if !CASES.contains(&c.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown gradient-check case `{c}`")));
            }
        }
        opts.cases.iter().map(String::as_str).collect()
    };
    let mut reports = Vec::new();
    for case in selected {
        for seed in 0..opts.seeds {
            reports.push(run_case(case, seed, opts)?);
        }
    }
    Ok(reports)
}

/// Inputs of one case: tensors plus a function recording the op on a tape.
struct Case {
    inputs: Vec<Tensor>,
    /// Indices probed per input (`None` = all).
    probes: Vec<Option<Vec<usize>>>,
    op: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
}

fn rand_tensor(seed: u64, stream: u64, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rng::normal_vec(&mut rng::stream(seed, stream), n, std)).expect("shape")
}

/// Uniform values bounded away from zero (for kinked ops).
fn away_from_zero(seed: u64, stream: u64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let raw = rng::uniform_vec(&mut rng::stream(seed, stream), n, 0.1, 1.0);
    let signs = rng::uniform_vec(&mut rng::stream(seed, stream + 1000), n, -1.0, 1.0);
    let data = raw.iter().zip(signs).map(|(v, s)| if s < 0.0 { -v } else { *v }).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

fn build_case(name: &str, seed: u64, opts: &SuiteOptions) -> Result<Case> {
    let all = |n: usize| vec![None; n];
    let t = |stream: u64, shape: &[usize]| rand_tensor(seed, stream, shape, 1.0);
    let case = match name {
        "add" | "sub" | "mul" => {
            let op = match name {
                "add" => crate::BinaryOp::Add,
                "sub" => crate::BinaryOp::Sub,
                _ => crate::BinaryOp::Mul,
            };
            Case {
                inputs: vec![t(1, &[3, 4]), t(2, &[3, 4])],
                probes: all(2),
                op: Box::new(move |tp, v| tp.elementwise(op, v[0], v[1])),
            }
        }
        "matmul" => Case {
            inputs: vec![t(1, &[4, 5]), t(2, &[5, 3])],
            probes: all(2),
            op: Box::new(|tp, v| tp.matmul(v[0], v[1])),
        },
        "linear" => Case {
            inputs: vec![t(1, &[3, 5]), t(2, &[5, 4]), t(3, &[4])],
            probes: all(3),
            op: Box::new(|tp, v| tp.linear(v[0], v[1], v[2])),
        },
        "relu" => Case {
            inputs: vec![away_from_zero(seed, 1, &[4, 6])],
            probes: all(1),
            op: Box::new(|tp, v| Ok(tp.relu(v[0]))),
        },
        "gelu" => Case {
            inputs: vec![t(1, &[4, 6])],
            probes: all(1),
            op: Box::new(|tp, v| Ok(tp.gelu(v[0]))),
        },
        "conv2d" => Case {
            inputs: vec![t(1, &[2, 5, 5]), t(2, &[3, 2, 3, 3]), t(3, &[3])],
            probes: all(3),
            op: Box::new(|tp, v| {
                let geom = Conv2dGeometry {
                    stride: [1, 1],
                    padding: [1, 1],
                };
                tp.conv2d(v[0], v[1], v[2], geom)
            }),
        },
        "conv3d" => Case {
            inputs: vec![t(1, &[2, 4, 5, 5]), t(2, &[3, 2, 3, 3, 3]), t(3, &[3])],
            probes: all(3),
            op: Box::new(|tp, v| tp.conv3d(v[0], v[1], v[2], Conv3dGeometry::SAME_3)),
        },
        "maxpool3d" => Case {
            inputs: vec![t(1, &[2, 4, 4, 6])],
            probes: all(1),
            op: Box::new(|tp, v| tp.maxpool3d(v[0], Pool3dSpec::new([2, 2, 2]))),
        },
        "layer_norm" => Case {
            inputs: vec![t(1, &[4, 6]), t(2, &[6]), t(3, &[6])],
            probes: all(3),
            op: Box::new(|tp, v| tp.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)),
        },
        "softmax" => Case {
            inputs: vec![t(1, &[3, 5])],
            probes: all(1),
            op: Box::new(|tp, v| Ok(tp.softmax(v[0]))),
        },
        "attention" => {
            let dim = 8;
            let w = |s: u64| rand_tensor(seed, s, &[dim, dim], 0.5);
            let b = |s: u64| rand_tensor(seed, s, &[dim], 0.1);
            Case {
                inputs: vec![t(1, &[4, dim]), w(2), b(3), w(4), b(5), w(6), b(7), w(8), b(9)],
                probes: all(9),
                op: Box::new(|tp, v| {
                    let params = AttentionVars {
                        num_heads: 2,
                        query: (v[1], v[2]),
                        key: (v[3], v[4]),
                        value: (v[5], v[6]),
                        output: (v[7], v[8]),
                    };
                    tp.multi_head_self_attention(v[0], &params)
                }),
            }
        }
        "tubelet_embed" => Case {
            inputs: vec![t(1, &[1, 5, 4, 4]), t(2, &[3 * 2 * 2, 4]), t(3, &[4])],
            probes: all(3),
            op: Box::new(|tp, v| tp.tubelet_embed(v[0], [3, 2, 2], v[1], v[2])),
        },
        "l2_loss" => Case {
            inputs: vec![t(1, &[5]), t(2, &[5])],
            probes: all(2),
            op: Box::new(|tp, v| l2_loss(tp, v[0], v[1])),
        },
        "threedcma" => model_case(ModelSpec::threedcma(2, Preset::Reduced), seed, opts)?,
        "vivit" => {
            let cfg = VivitConfig {
                tubelet: [2, 16, 16],
                layers: 1,
                heads: 1,
                dim: 8,
            };
            model_case(ModelSpec::vivit(3, cfg), seed, opts)?
        }
        other => return Err(Error::InvalidArgument(format!("unknown gradient-check case `{other}`"))),
    };
    Ok(case)
}

/// Model case: inputs are the clip followed by every parameter tensor; a
/// sampled fraction of entries of each is probed.
fn model_case(spec: ModelSpec, seed: u64, opts: &SuiteOptions) -> Result<Case> {
    let model = Model::build(spec, seed)?;
    let clip = rand_tensor(seed, 99, &spec.input_shape(), 1.0);
    let mut inputs = vec![clip];
    inputs.extend(model.params().iter().map(|p| p.tensor.clone()));
    let mut sampler = rng::stream(seed, 4242);
    let probes = inputs
        .iter()
        .map(|t| {
            use rand::seq::index::sample;
            let k = ((t.len() as f64 * opts.param_fraction).ceil() as usize).clamp(1, t.len());
            let mut idx = sample(&mut sampler, t.len(), k).into_vec();
            idx.sort_unstable();
            Some(idx)
        })
        .collect();
    let template = model;
    Ok(Case {
        inputs,
        probes,
        op: Box::new(move |tp, v| {
            let bound = crate::models::Bound::from_vars(v[1..].to_vec());
            template.forward(tp, &bound, v[0])
        }),
    })
}

fn run_case(name: &str, seed: u64, opts: &SuiteOptions) -> Result<CaseReport> {
    let case = build_case(name, seed, opts)?;
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = (case.op)(&mut tape, &vars)?;
        tape.shape(y).to_vec()
    };
    let projection = rand_tensor(seed, 7777, &out_shape, 1.0);

    let scalar = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let y = (case.op)(tape, vars)?;
        let r = tape.constant(projection.clone());
        let weighted = tape.mul(y, r)?;
        Ok(tape.sum(weighted))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.param(t)).collect();
    let loss = scalar(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    for (i, input) in case.inputs.iter().enumerate() {
        let indices: Vec<usize> = match &case.probes[i] {
            Some(idx) => idx.clone(),
            None => (0..input.len()).collect(),
        };
        let analytic_full = grads.get(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        let sign = if opts.inject_sign_error { -1.0 } else { 1.0 };
        let analytic: Vec<f64> = indices.iter().map(|&j| sign * analytic_full[j]).collect();
        let probes = probe_differences(
            |probe: &Tensor| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = case
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| tape.constant(if k == i { probe.clone() } else { t.clone() }))
                    .collect();
                let loss = scalar(&mut tape, &vars)?;
                Ok(tape.value(loss).clone())
            },
            input,
            &indices,
            opts.eps,
        )?;
        for (a, p) in analytic.iter().zip(&probes) {
            let err = relative_error(*a, p.central);
            if err >= opts.tolerance && p.kink() >= (a - p.central).abs() {
                kinks += 1;
                continue;
            }
            worst = worst.max(err);
            checked += 1;
        }
    }
    Ok(CaseReport {
        case: name.to_string(),
        seed,
        checked,
        kinks,
        max_rel_err: worst,
        passed: checked > 0 && worst < opts.tolerance,
    })
}
