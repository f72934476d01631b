use crate::error::{Error, Result};
use crate::ops::{padded_frames, Conv3dGeometry, Pool3dSpec};
use crate::tape::{Tape, Var};

use super::{slot, Bound, Init, Model, ModelKind, ModelSpec, ParamSlot, Preset, INPUT_SIZE};

const FAITHFUL_FILTERS: [usize; 6] = [32, 32, 64, 64, 128, 128];
const FAITHFUL_HIDDEN: [usize; 3] = [512, 256, 64];
const REDUCED_DIVISOR: usize = 8;

const POOL_SPATIAL: Pool3dSpec = Pool3dSpec::new([1, 2, 2]);
const POOL_FULL: Pool3dSpec = Pool3dSpec::new([2, 2, 2]);

#[derive(Clone, Debug, PartialEq)]
pub enum CnnLayer {
    Conv { name: String, in_ch: usize, out_ch: usize },
    Pool { name: String, spec: Pool3dSpec },
    Flatten,
    Dense { name: String, fan_in: usize, fan_out: usize, relu: bool },
}

/// Layer stack for a 3D-CNN spec.
///
/// conv,conv,pool(1,2,2),conv,conv,pool(2,2,2),conv,conv then four dense
/// layers; every conv is 3×3×3 with same padding and a ReLU. The reduced
/// preset adds a (1,2,2) pool after the second pool and after the last conv.
/// Odd frame counts are zero-padded at the end to the next even count so the
/// temporal pool tiles exactly.
pub fn cnn_layers(spec: &ModelSpec) -> Result<Vec<CnnLayer>> {
    if !matches!(spec.kind, ModelKind::ThreeDCma | ModelKind::ThreeDCnnNoMask) {
        return Err(Error::InvalidArgument(format!(
            "{} is not a 3D-CNN model",
            spec.kind
        )));
    }
    spec.validate()?;
    let divisor = match spec.preset {
        Preset::Faithful => 1,
        Preset::Reduced => REDUCED_DIVISOR,
    };
    let filters = FAITHFUL_FILTERS.map(|f| f / divisor);
    let hidden = FAITHFUL_HIDDEN.map(|h| h / divisor);
    let reduced = spec.preset == Preset::Reduced;

    let mut layers = Vec::new();
    let mut ch = spec.input_channels;
    let mut ext = [cnn_frames(spec), INPUT_SIZE, INPUT_SIZE];
    let mut pool_idx = 0;
    let mut add_pool = |layers: &mut Vec<CnnLayer>, ext: &mut [usize; 3], pool: Pool3dSpec| -> Result<()> {
        for (axis, e) in ext.iter_mut().enumerate() {
            if *e % pool.kernel[axis] != 0 {
                return Err(Error::Geometry(format!(
                    "pool {:?} does not divide extent {} (frames={})",
                    pool.kernel, e, spec.input_frames
                )));
            }
            *e /= pool.kernel[axis];
        }
        pool_idx += 1;
        layers.push(CnnLayer::Pool {
            name: format!("pool{pool_idx}"),
            spec: pool,
        });
        Ok(())
    };
    for (i, &out_ch) in filters.iter().enumerate() {
        layers.push(CnnLayer::Conv {
            name: format!("conv{}", i + 1),
            in_ch: ch,
            out_ch,
        });
        ch = out_ch;
        match i {
            1 => add_pool(&mut layers, &mut ext, POOL_SPATIAL)?,
            3 => {
                add_pool(&mut layers, &mut ext, POOL_FULL)?;
                if reduced {
                    add_pool(&mut layers, &mut ext, POOL_SPATIAL)?;
                }
            }
            5 if reduced => add_pool(&mut layers, &mut ext, POOL_SPATIAL)?,
            _ => {}
        }
    }
    layers.push(CnnLayer::Flatten);
    let mut fan_in = ch * ext.iter().product::<usize>();
    for (i, &fan_out) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
        layers.push(CnnLayer::Dense {
            name: format!("fc{}", i + 1),
            fan_in,
            fan_out,
            relu: fan_out != 1,
        });
        fan_in = fan_out;
    }
    Ok(layers)
}

/// Frame count after temporal padding.
pub(super) fn cnn_frames(spec: &ModelSpec) -> usize {
    padded_frames(spec.input_frames, POOL_FULL.kernel[0])
}

pub(super) fn layout(spec: &ModelSpec) -> Result<Vec<ParamSlot>> {
    let mut slots = Vec::new();
    for layer in cnn_layers(spec)? {
        match layer {
            CnnLayer::Conv { name, in_ch, out_ch } => {
                let fan_in = in_ch * 27;
                slot(&mut slots, format!("{name}.weight"), &[out_ch, in_ch, 3, 3, 3], Init::HeNormal { fan_in });
                slot(&mut slots, format!("{name}.bias"), &[out_ch], Init::Constant(0.0));
            }
            CnnLayer::Dense { name, fan_in, fan_out, .. } => {
                slot(&mut slots, format!("{name}.weight"), &[fan_in, fan_out], Init::HeNormal { fan_in });
                slot(&mut slots, format!("{name}.bias"), &[fan_out], Init::Constant(0.0));
            }
            CnnLayer::Pool { .. } | CnnLayer::Flatten => {}
        }
    }
    Ok(slots)
}

pub(super) fn forward(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    clip: Var,
    mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
) -> Result<Var> {
    let mut x = clip;
    let mut note = |tape: &Tape, name: &str, v: Var| {
        if let Some(t) = trace.as_deref_mut() {
            t.push((name.to_string(), tape.shape(v).to_vec()));
        }
    };
    note(tape, "input", x);
    let frames = cnn_frames(model.spec());
    if frames != tape.shape(x)[1] {
        x = tape.pad_time(x, frames)?;
        note(tape, "pad", x);
    }
    let var = |name: &str| bound.vars[model.index_of(name)];
    for layer in cnn_layers(model.spec())? {
        match layer {
            CnnLayer::Conv { name, .. } => {
                let (w, b) = (var(&format!("{name}.weight")), var(&format!("{name}.bias")));
                let y = tape.conv3d(x, w, b, Conv3dGeometry::SAME_3)?;
                x = tape.relu(y);
                note(tape, &name, x);
            }
            CnnLayer::Pool { name, spec } => {
                x = tape.maxpool3d(x, spec)?;
                note(tape, &name, x);
            }
            CnnLayer::Flatten => {
                let n = tape.value(x).len();
                x = tape.reshape(x, &[1, n])?;
                note(tape, "flatten", x);
            }
            CnnLayer::Dense { name, relu, .. } => {
                let (w, b) = (var(&format!("{name}.weight")), var(&format!("{name}.bias")));
                x = tape.linear(x, w, b)?;
                if relu {
                    x = tape.relu(x);
                }
                note(tape, &name, x);
            }
        }
    }
    tape.reshape(x, &[1])
}
