//! Adam + L2 loss training with early stopping on a held-out split.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::models::{Model, Parameter};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Mean squared error `(1/b) Σ (p − t)²`.
pub fn l2_loss(tape: &mut Tape, predictions: Var, targets: Var) -> Result<Var> {
    if tape.shape(predictions) != tape.shape(targets) {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            tape.shape(predictions),
            tape.shape(targets)
        )));
    }
    let diff = tape.sub(predictions, targets)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            batch_size: 8,
            val_fraction: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.max_epochs >= 1
            && self.batch_size >= 1
            && self.val_fraction > 0.0
            && self.val_fraction < 1.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Parameter]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the parameters' grad buffers. The
/// caller clears the grads afterwards.
pub fn adam_step(params: &mut [Parameter], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} parameters, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.tensor.grad().is_none() {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        if state.m[i].len() != p.tensor.len() {
            return Err(Error::Shape(format!("moment size mismatch for `{}`", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.tensor.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss (first on ties).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?).map(|e| e.val_loss)
    }

    /// `epoch,train_loss,val_loss,seconds` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Patience bookkeeping: stop once `patience` consecutive epochs fail to
/// improve on the best validation loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `val_loss` for 1-based `epoch`; returns `true` if it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mean squared error of `model` over `clips` (sequential, fixed order).
pub fn mean_squared_error(model: &Model, clips: &[&VideoClip]) -> Result<f64> {
    let mut total = 0.0;
    for c in clips {
        let e = model.predict(&c.input)? - c.label_speed;
        total += e * e;
    }
    Ok(total / clips.len() as f64)
}

/// Epoch-by-epoch training; [`train_model`] runs it to completion.
pub struct Trainer<'a> {
    model: &'a mut Model,
    clips: &'a [VideoClip],
    config: TrainConfig,
    adam: AdamState,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    stopper: EarlyStopping,
    best_params: Vec<Tensor>,
    history: History,
}

impl<'a> Trainer<'a> {
    /// Validates geometry and holds out `round(val_fraction · n)` clips
    /// (seeded) for validation.
    pub fn new(model: &'a mut Model, clips: &'a [VideoClip], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if clips.is_empty() {
            return Err(Error::Data("no training clips".into()));
        }
        let want = model.spec().input_shape();
        if let Some(c) = clips.iter().find(|c| c.input.shape() != want) {
            return Err(Error::Geometry(format!(
                "clip `{}` has shape {:?}, model expects {want:?}",
                c.source_id,
                c.input.shape()
            )));
        }
        let n_val = (config.val_fraction * clips.len() as f64).round() as usize;
        if n_val == 0 || n_val >= clips.len() {
            return Err(Error::Data(format!(
                "validation split of {n_val} from {} clips leaves an empty split",
                clips.len()
            )));
        }
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, 0));
        let val_idx = order[..n_val].to_vec();
        let train_idx = order[n_val..].to_vec();
        let adam = AdamState::new(model.params());
        let best_params = model.params().iter().map(|p| p.tensor.clone()).collect();
        Ok(Trainer {
            stopper: EarlyStopping::new(config.patience),
            model,
            clips,
            config,
            adam,
            train_idx,
            val_idx,
            best_params,
            history: History::default(),
        })
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn val_indices(&self) -> &[usize] {
        &self.val_idx
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn finished(&self) -> bool {
        self.history.epochs.len() >= self.config.max_epochs || self.stopper.should_stop()
    }

    /// Mean squared error over the training split with current parameters.
    pub fn train_mse(&self) -> Result<f64> {
        mean_squared_error(self.model, &self.subset(&self.train_idx))
    }

    fn subset(&self, idx: &[usize]) -> Vec<&'a VideoClip> {
        let clips = self.clips;
        idx.iter().map(|&i| &clips[i]).collect()
    }

    /// One pass over the shuffled training split followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let started = Instant::now();
        let epoch = self.history.epochs.len() + 1;
        let mut order = self.train_idx.clone();
        order.shuffle(&mut rng::stream(self.config.seed, epoch as u64));
        let clips = self.clips;
        let mut loss_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            self.model.zero_grads();
            for &i in batch {
                loss_sum += self.accumulate_clip(&clips[i], batch.len())? * batch.len() as f64;
            }
            adam_step(self.model.params_mut(), &mut self.adam, &self.config)?;
        }
        self.model.zero_grads();
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = mean_squared_error(self.model, &self.subset(&self.val_idx))?;
        if self.stopper.observe(epoch, val_loss) {
            self.best_params = self.model.params().iter().map(|p| p.tensor.clone()).collect();
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        self.history.epochs.push(record.clone());
        self.history.best_epoch = self.stopper.best_epoch();
        Ok(record)
    }

    /// Backpropagates `(p − y)² / batch` for one clip into the grad buffers;
    /// summed over the batch this is the gradient of the batch L2 loss.
    /// Returns the contribution to the batch loss.
    fn accumulate_clip(&mut self, clip: &VideoClip, batch: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true);
        let x = tape.constant(clip.input.clone());
        let pred = self.model.forward(&mut tape, &bound, x)?;
        let target = tape.constant(Tensor::scalar(clip.label_speed));
        let sq = l2_loss(&mut tape, pred, target)?;
        let loss = tape.scale(sq, 1.0 / batch as f64);
        let grads = tape.backward(loss)?;
        self.model.accumulate_grads(&grads, &bound)?;
        Ok(tape.value(loss).item()?)
    }

    /// Restores the best-validation parameters and returns the history.
    pub fn finish(self) -> History {
        let mut history = self.history;
        for (p, best) in self.model.params_mut().iter_mut().zip(self.best_params) {
            p.tensor = best;
        }
        history.stopped_early = history.epochs.len() < self.config.max_epochs;
        history
    }
}

/// Trains until `max_epochs` or early stopping, leaving `model` at its best
/// validation epoch.
pub fn train_model(model: &mut Model, clips: &[VideoClip], config: &TrainConfig) -> Result<History> {
    train_model_with(model, clips, config, |_| Ok(()))
}

/// Like [`train_model`], calling `on_epoch` after every epoch.
pub fn train_model_with(
    model: &mut Model,
    clips: &[VideoClip],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<History> {
    let mut trainer = Trainer::new(model, clips, config.clone())?;
    while !trainer.finished() {
        let record = trainer.run_epoch()?;
        on_epoch(&record)?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_loss() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        let t = tape.constant(Tensor::from_vec(&[2], vec![1.0, 3.0]).unwrap());
        let l = l2_loss(&mut tape, p, t).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 5.0);
        let bad = tape.constant(Tensor::zeros(&[3]).unwrap());
        assert!(l2_loss(&mut tape, p, bad).is_err());
    }

    #[test]
    fn patience_trace() {
        let mut stop = EarlyStopping::new(10);
        let losses = [5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            stop.observe(i + 1, l);
            if stop.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stop.best_epoch(), 2);
        assert_eq!(stopped_at, Some(12));
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut params = vec![Parameter {
            name: "w".into(),
            tensor: Tensor::scalar(1.0),
        }];
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&mut params, &mut state, &TrainConfig::default()),
            Err(Error::MissingGradient(_))
        ));
    }
}
