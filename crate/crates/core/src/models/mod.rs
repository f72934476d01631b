//! Trainable speed regressors: the 3D-CNN with a lane-mask input channel,
//! its mask-free ablation, and the tubelet transformer baseline.

mod checkpoint;
mod cnn3d;
mod vivit;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use cnn3d::{cnn_layers, CnnLayer};

use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Spatial size every model consumes.
pub const INPUT_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(rename = "threedcma")]
    ThreeDCma,
    #[serde(rename = "threedcnn_nomask")]
    ThreeDCnnNoMask,
    Vivit,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ThreeDCma => "threedcma",
            ModelKind::ThreeDCnnNoMask => "threedcnn_nomask",
            ModelKind::Vivit => "vivit",
        }
    }

    /// Whether the model consumes the lane-mask channel.
    pub fn uses_mask(self) -> bool {
        matches!(self, ModelKind::ThreeDCma)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threedcma" => Ok(ModelKind::ThreeDCma),
            "threedcnn_nomask" => Ok(ModelKind::ThreeDCnnNoMask),
            "vivit" => Ok(ModelKind::Vivit),
            other => Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Network size. `Faithful` keeps the published layer widths; `Reduced`
/// divides every width by eight and pools harder so that training fits a
/// desk-scale CPU budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Faithful,
    Reduced,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "faithful" => Ok(Preset::Faithful),
            "reduced" => Ok(Preset::Reduced),
            other => Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VivitConfig {
    pub tubelet: [usize; 3],
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
}

impl Default for VivitConfig {
    fn default() -> Self {
        VivitConfig {
            tubelet: [6, 8, 8],
            layers: 16,
            heads: 16,
            dim: 128,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_frames: usize,
    pub input_channels: usize,
    pub preset: Preset,
    pub vivit: VivitConfig,
}

impl ModelSpec {
    pub fn threedcma(frames: usize, preset: Preset) -> Self {
        ModelSpec {
            kind: ModelKind::ThreeDCma,
            input_frames: frames,
            input_channels: 2,
            preset,
            vivit: VivitConfig::default(),
        }
    }

    pub fn threedcnn_nomask(frames: usize, preset: Preset) -> Self {
        ModelSpec {
            kind: ModelKind::ThreeDCnnNoMask,
            input_channels: 1,
            ..Self::threedcma(frames, preset)
        }
    }

    pub fn vivit(frames: usize, config: VivitConfig) -> Self {
        ModelSpec {
            kind: ModelKind::Vivit,
            input_frames: frames,
            input_channels: 1,
            preset: Preset::Faithful,
            vivit: config,
        }
    }

    /// Builds the spec for `kind` with its default channel count.
    pub fn for_kind(kind: ModelKind, frames: usize, preset: Preset) -> Self {
        match kind {
            ModelKind::ThreeDCma => Self::threedcma(frames, preset),
            ModelKind::ThreeDCnnNoMask => Self::threedcnn_nomask(frames, preset),
            ModelKind::Vivit => Self::vivit(frames, VivitConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_frames == 0 {
            return Err(Error::InvalidArgument("input_frames must be >= 1".into()));
        }
        match self.kind {
            ModelKind::ThreeDCma if self.input_channels != 2 => Err(Error::InvalidArgument(
                "threedcma consumes gray + mask (2 channels)".into(),
            )),
            ModelKind::ThreeDCnnNoMask if self.input_channels != 1 => Err(Error::InvalidArgument(
                "threedcnn_nomask consumes a single gray channel".into(),
            )),
            ModelKind::Vivit => {
                let v = &self.vivit;
                if !(1..=2).contains(&self.input_channels) {
                    return Err(Error::InvalidArgument("vivit takes 1 or 2 channels".into()));
                }
                if v.layers == 0 || v.heads == 0 || v.dim % v.heads != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "vivit dim {} must be divisible by {} heads",
                        v.dim, v.heads
                    )));
                }
                let [t, h, w] = v.tubelet;
                if t == 0 || h == 0 || w == 0 || INPUT_SIZE % h != 0 || INPUT_SIZE % w != 0 {
                    return Err(Error::Geometry(format!(
                        "tubelet {:?} does not tile {INPUT_SIZE}x{INPUT_SIZE} frames",
                        v.tubelet
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Expected clip shape `[c, n, 64, 64]`.
    pub fn input_shape(&self) -> [usize; 4] {
        [self.input_channels, self.input_frames, INPUT_SIZE, INPUT_SIZE]
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Builds a 3D-CNN (`threedcma` or `threedcnn_nomask`).
pub fn build_3dcma(spec: ModelSpec, seed: u64) -> Result<Model> {
    materialize(spec, cnn3d::layout(&spec)?, seed)
}

pub fn build_vivit(spec: ModelSpec, seed: u64) -> Result<Model> {
    materialize(spec, vivit::layout(&spec)?, seed)
}

/// Parameter vars recorded on one tape, in model parameter order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Wraps vars already recorded for every parameter, in model order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Parameter>,
}

impl Model {
    pub(crate) fn from_params(spec: ModelSpec, params: Vec<Parameter>) -> Result<Self> {
        let mut names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate parameter names".into()));
        }
        Ok(Model { spec, params })
    }

    /// Builds the architecture described by `spec` with seeded initialization.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        materialize(spec, layout(&spec)?, seed)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    pub(crate) fn index_of(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("model has no parameter `{name}`"))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter on `tape`. With `trainable = false` they are
    /// constants and no backward rules are kept.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(&p.tensor)
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape != self.spec.input_shape() {
            return Err(Error::Geometry(format!(
                "{} expects clips of shape {:?}, got {shape:?}",
                self.spec.kind,
                self.spec.input_shape()
            )));
        }
        Ok(())
    }

    /// Predicted speed for `clip`, shape `[1]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, clip: Var) -> Result<Var> {
        self.forward_traced(tape, bound, clip, None)
    }

    /// Like [`Model::forward`], additionally recording `(layer, output shape)`.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        clip: Var,
        trace: Option<&mut Vec<(String, Vec<usize>)>>,
    ) -> Result<Var> {
        self.check_input(tape.shape(clip))?;
        match self.spec.kind {
            ModelKind::ThreeDCma | ModelKind::ThreeDCnnNoMask => {
                cnn3d::forward(self, tape, bound, clip, trace)
            }
            ModelKind::Vivit => vivit::forward(self, tape, bound, clip, trace),
        }
    }

    /// Inference on one clip without recording gradients.
    pub fn predict(&self, clip: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(clip.clone());
        let y = self.forward(&mut tape, &bound, x)?;
        tape.value(y).item()
    }

    /// Adds the gradients of the bound parameters into their grad buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        for (p, &var) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(var) {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Fan-in scaled normal, `std = sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Normal { std: f64 },
    Constant(f64),
}

/// Name, shape and initializer of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

pub(crate) fn slot(slots: &mut Vec<ParamSlot>, name: impl Into<String>, shape: &[usize], init: Init) {
    slots.push(ParamSlot {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    });
}

/// Ordered parameter layout for `spec`, without allocating values.
pub(crate) fn layout(spec: &ModelSpec) -> Result<Vec<ParamSlot>> {
    match spec.kind {
        ModelKind::ThreeDCma | ModelKind::ThreeDCnnNoMask => cnn3d::layout(spec),
        ModelKind::Vivit => vivit::layout(spec),
    }
}

/// Each parameter draws from its own stream keyed by its name.
fn materialize(spec: ModelSpec, slots: Vec<ParamSlot>, seed: u64) -> Result<Model> {
    let params = slots
        .into_iter()
        .map(|s| {
            let n = s.shape.iter().product();
            let data = match s.init {
                Init::Constant(v) => vec![v; n],
                Init::HeNormal { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    rng::normal_vec(&mut rng::stream(seed, rng::name_stream(&s.name)), n, std)
                }
                Init::Normal { std } => {
                    rng::normal_vec(&mut rng::stream(seed, rng::name_stream(&s.name)), n, std)
                }
            };
            Ok(Parameter {
                name: s.name,
                tensor: Tensor::from_vec(&s.shape, data)?.with_requires_grad(true),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Model::from_params(spec, params)
}
