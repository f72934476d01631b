use crate::error::{shape_err, Error, Result};
use crate::tape::{Tape, Var};

/// Number of frames after zero-padding `frames` up to a multiple of `t`.
pub fn padded_frames(frames: usize, t: usize) -> usize {
    frames.div_ceil(t) * t
}

/// Token count for a clip of `frames×height×width` cut into `t×h×w` tubelets.
pub fn token_count(frames: usize, height: usize, width: usize, tubelet: [usize; 3]) -> usize {
    let [t, h, w] = tubelet;
    (padded_frames(frames, t) / t) * (height / h) * (width / w)
}

impl Tape {
    /// Cuts `clip[C×T×H×W]` into non-overlapping `t×h×w` tubelets, one row per
    /// tubelet of `C·t·h·w` values.
    ///
    /// Tokens are ordered time-major then row-major over the spatial grid;
    /// values within a tubelet are ordered (channel, time, row, column).
    pub fn tubelets(&mut self, clip: Var, tubelet: [usize; 3]) -> Result<Var> {
        let s = self.shape(clip).to_vec();
        if s.len() != 4 {
            return shape_err(format!("tubelets expect [C,T,H,W], got {s:?}"));
        }
        let (c, t, h, w) = (s[0], s[1], s[2], s[3]);
        let [tt, th, tw] = tubelet;
        if tt == 0 || th == 0 || tw == 0 || t % tt != 0 || h % th != 0 || w % tw != 0 {
            return Err(Error::Geometry(format!(
                "tubelet {tubelet:?} does not tile clip {s:?}"
            )));
        }
        let (nt, nh, nw) = (t / tt, h / th, w / tw);
        let tokens = nt * nh * nw;
        let width = c * tt * th * tw;
        // index[token*width + j] = flat clip index
        let mut index = Vec::with_capacity(tokens * width);
        for it in 0..nt {
            for ih in 0..nh {
                for iw in 0..nw {
                    for ch in 0..c {
                        for dt in 0..tt {
                            for dy in 0..th {
                                let base = ((ch * t + it * tt + dt) * h + ih * th + dy) * w + iw * tw;
                                index.extend(base..base + tw);
                            }
                        }
                    }
                }
            }
        }
        let x = self.data(clip);
        let out = index.iter().map(|&i| x[i]).collect();
        let len = c * t * h * w;
        Ok(self.record(
            vec![tokens, width],
            out,
            vec![clip],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; len];
                for (&i, &gv) in index.iter().zip(g) {
                    dx[i] += gv;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Tubelet embedding: zero-pads time up to a multiple of `t`, cuts
    /// tubelets and projects each one with `projection[C·t·h·w × dim]` plus
    /// `bias[dim]`.
    pub fn tubelet_embed(&mut self, clip: Var, tubelet: [usize; 3], projection: Var, bias: Var) -> Result<Var> {
        let frames = *self
            .shape(clip)
            .get(1)
            .ok_or_else(|| Error::Shape("tubelet_embed expects [C,T,H,W]".into()))?;
        let padded = self.pad_time(clip, padded_frames(frames, tubelet[0]))?;
        let patches = self.tubelets(padded, tubelet)?;
        self.linear(patches, projection, bias)
    }
}
