use crate::error::{Error, Result};
use crate::ops::{token_count, AttentionVars, LAYER_NORM_EPS};
use crate::tape::{Tape, Var};

use super::{slot, Bound, Init, Model, ModelKind, ModelSpec, ParamSlot, INPUT_SIZE};

const POS_EMBED_STD: f64 = 0.02;
const MLP_RATIO: usize = 4;

fn tokens_for(spec: &ModelSpec) -> usize {
    token_count(spec.input_frames, INPUT_SIZE, INPUT_SIZE, spec.vivit.tubelet)
}

pub(super) fn layout(spec: &ModelSpec) -> Result<Vec<ParamSlot>> {
    if spec.kind != ModelKind::Vivit {
        return Err(Error::InvalidArgument(format!("{} is not a vivit model", spec.kind)));
    }
    spec.validate()?;
    let v = spec.vivit;
    let [t, h, w] = v.tubelet;
    let patch = spec.input_channels * t * h * w;
    let dim = v.dim;
    let hidden = MLP_RATIO * dim;
    let mut slots = Vec::new();
    let linear = |slots: &mut Vec<ParamSlot>, name: &str, fan_in: usize, fan_out: usize| {
        slot(slots, format!("{name}.weight"), &[fan_in, fan_out], Init::HeNormal { fan_in });
        slot(slots, format!("{name}.bias"), &[fan_out], Init::Constant(0.0));
    };
    linear(&mut slots, "embed", patch, dim);
    slot(&mut slots, "pos_embed", &[tokens_for(spec), dim], Init::Normal { std: POS_EMBED_STD });
    for layer in 0..v.layers {
        let p = format!("block{layer}");
        slot(&mut slots, format!("{p}.ln1.gain"), &[dim], Init::Constant(1.0));
        slot(&mut slots, format!("{p}.ln1.shift"), &[dim], Init::Constant(0.0));
        for proj in ["query", "key", "value", "output"] {
            linear(&mut slots, &format!("{p}.attn.{proj}"), dim, dim);
        }
        slot(&mut slots, format!("{p}.ln2.gain"), &[dim], Init::Constant(1.0));
        slot(&mut slots, format!("{p}.ln2.shift"), &[dim], Init::Constant(0.0));
        linear(&mut slots, &format!("{p}.mlp.fc1"), dim, hidden);
        linear(&mut slots, &format!("{p}.mlp.fc2"), hidden, dim);
    }
    slot(&mut slots, "final_ln.gain".to_string(), &[dim], Init::Constant(1.0));
    slot(&mut slots, "final_ln.shift".to_string(), &[dim], Init::Constant(0.0));
    linear(&mut slots, "head", dim, 1);
    Ok(slots)
}

/// tubelet_embed → + positional embedding → pre-norm blocks
/// (LN → MHSA → residual → LN → MLP → residual) → final LN → token mean → linear.
pub(super) fn forward(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    clip: Var,
    mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
) -> Result<Var> {
    let spec = model.spec();
    let var = |name: &str| bound.vars[model.index_of(name)];
    let mut note = |tape: &Tape, name: &str, v: Var| {
        if let Some(t) = trace.as_deref_mut() {
            t.push((name.to_string(), tape.shape(v).to_vec()));
        }
    };
    note(tape, "input", clip);
    let tokens = tape.tubelet_embed(clip, spec.vivit.tubelet, var("embed.weight"), var("embed.bias"))?;
    note(tape, "embed", tokens);
    let mut x = tape.add(tokens, var("pos_embed"))?;
    for layer in 0..spec.vivit.layers {
        let p = format!("block{layer}");
        let n1 = tape.layer_norm(x, var(&format!("{p}.ln1.gain")), var(&format!("{p}.ln1.shift")), LAYER_NORM_EPS)?;
        let proj = |name: &str| (var(&format!("{p}.attn.{name}.weight")), var(&format!("{p}.attn.{name}.bias")));
        let attn = AttentionVars {
            num_heads: spec.vivit.heads,
            query: proj("query"),
            key: proj("key"),
            value: proj("value"),
            output: proj("output"),
        };
        let a = tape.multi_head_self_attention(n1, &attn)?;
        x = tape.add(x, a)?;
        let n2 = tape.layer_norm(x, var(&format!("{p}.ln2.gain")), var(&format!("{p}.ln2.shift")), LAYER_NORM_EPS)?;
        let hdn = tape.linear(n2, var(&format!("{p}.mlp.fc1.weight")), var(&format!("{p}.mlp.fc1.bias")))?;
        let hdn = tape.gelu(hdn);
        let m = tape.linear(hdn, var(&format!("{p}.mlp.fc2.weight")), var(&format!("{p}.mlp.fc2.bias")))?;
        x = tape.add(x, m)?;
        note(tape, &p, x);
    }
    let x = tape.layer_norm(x, var("final_ln.gain"), var("final_ln.shift"), LAYER_NORM_EPS)?;
    let pooled = tape.mean_rows(x)?;
    note(tape, "pool", pooled);
    let y = tape.linear(pooled, var("head.weight"), var("head.bias"))?;
    note(tape, "head", y);
    tape.reshape(y, &[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_vivit, VivitConfig};

    #[test]
    fn default_geometry_token_counts() {
        for (frames, tokens) in [(10, 128), (12, 128), (13, 192), (18, 192)] {
            let model = build_vivit(ModelSpec::vivit(frames, VivitConfig::default()), 0).unwrap();
            assert_eq!(model.param("pos_embed").unwrap().shape(), &[tokens, 128]);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = VivitConfig {
            heads: 3,
            ..VivitConfig::default()
        };
        assert!(build_vivit(ModelSpec::vivit(10, cfg), 0).is_err());
    }
}
