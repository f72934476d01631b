use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Recorded projection parameters of one multi-head self-attention block.
///
/// Weights are `[dim×dim]` in `input·weight` orientation, biases `[dim]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub num_heads: usize,
    pub query: (Var, Var),
    pub key: (Var, Var),
    pub value: (Var, Var),
    pub output: (Var, Var),
}

impl Tape {
    /// Scaled dot-product self-attention over `tokens[N×dim]`, split into
    /// `num_heads` heads of width `dim / num_heads`.
    pub fn multi_head_self_attention(&mut self, tokens: Var, params: &AttentionVars) -> Result<Var> {
        let s = self.shape(tokens).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("attention expects [tokens, dim], got {s:?}")));
        }
        let dim = s[1];
        let heads = params.num_heads;
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model dim {dim} is not divisible by {heads} heads"
            )));
        }
        if self.shape(params.query.0) != [dim, dim] {
            return Err(Error::Shape(format!(
                "attention projection {:?} for model dim {dim}",
                self.shape(params.query.0)
            )));
        }
        let head_dim = dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let q = self.linear(tokens, params.query.0, params.query.1)?;
        let k = self.linear(tokens, params.key.0, params.key.1)?;
        let v = self.linear(tokens, params.value.0, params.value.1)?;
        let mut outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * head_dim, head_dim)?;
            let kh = self.slice_cols(k, h * head_dim, head_dim)?;
            let vh = self.slice_cols(v, h * head_dim, head_dim)?;
            let kt = self.transpose(kh)?;
            let scores = self.matmul(qh, kt)?;
            let scores = self.scale(scores, scale);
            let weights = self.softmax(scores);
            outputs.push(self.matmul(weights, vh)?);
        }
        let merged = if heads == 1 {
            outputs[0]
        } else {
            self.concat_cols(&outputs)?
        };
        self.linear(merged, params.output.0, params.output.1)
    }
}
