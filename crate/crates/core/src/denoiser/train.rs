use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cond::ConditionBundle;
use super::dropout::{apply_feature_dropout, DropoutMode};
use super::model::Model;
use crate::config::KvDoc;
use crate::diffusion::add_noise;
use crate::error::{Error, Result};
use crate::events::Grid;
use crate::loss::{objective_c, training_loss_on_tape, AnnealState, Objective, Reduction};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Training crop length in frames; clips shorter than this are used whole.
    pub crop_frames: usize,
    pub epochs: usize,
    pub objective: Objective,
    pub reduction: Reduction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 8,
            crop_frames: 128,
            epochs: 50,
            objective: Objective::Annealed,
            reduction: Reduction::Elementwise,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.crop_frames == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_items: usize) -> usize {
        n_items.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_items: usize) -> u64 {
        (self.epochs * self.steps_per_epoch(n_items)) as u64
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(section, "lr", self.lr);
        doc.set(section, "batch_size", self.batch_size);
        doc.set(section, "crop_frames", self.crop_frames);
        doc.set(section, "epochs", self.epochs);
        doc.set(section, "loss", self.objective.name());
        doc.set(section, "reduction", self.reduction.name());
        doc.set(section, "seed", self.seed);
    }

    pub fn from_kv(doc: &KvDoc, section: &str) -> Result<Self> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            lr: doc.parsed(section, "lr")?.unwrap_or(d.lr),
            batch_size: doc.parsed(section, "batch_size")?.unwrap_or(d.batch_size),
            crop_frames: doc.parsed(section, "crop_frames")?.unwrap_or(d.crop_frames),
            epochs: doc.parsed(section, "epochs")?.unwrap_or(d.epochs),
            objective: doc.parsed(section, "loss")?.unwrap_or(d.objective),
            reduction: doc.parsed(section, "reduction")?.unwrap_or(d.reduction),
            seed: doc.parsed(section, "seed")?.unwrap_or(d.seed),
        };
        c.validate()?;
        Ok(c)
    }
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub alpha: f64,
    /// Pseudo-Huber constant in effect, NaN for MSE.
    pub c: f64,
    pub loss: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,alpha,c,loss";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.alpha, self.c, self.loss)
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub train: TrainConfig,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Completed optimizer steps.
    pub step: u64,
    pub total_steps: u64,
}

/// A clean target grid and the features it should be transcribed from.
pub type Example<'a> = (&'a Grid, &'a ConditionBundle);

impl TrainState {
    pub fn new(model: Model, train: TrainConfig, total_steps: u64) -> Result<Self> {
        train.validate()?;
        let adam = Adam::new(
            AdamConfig {
                lr: train.lr,
                ..AdamConfig::default()
            },
            model.params.tensors(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        rng.set_stream(1);
        Ok(TrainState {
            model,
            train,
            adam,
            rng,
            step: 0,
            total_steps,
        })
    }

    /// Training progress `α = step / total_steps`.
    pub fn alpha(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            (self.step as f64 / self.total_steps as f64).min(1.0)
        }
    }

    pub fn anneal(&self) -> AnnealState {
        AnnealState::at(self.alpha())
    }
}

/// Norms that help explain a non-finite loss.
fn diagnostics(state: &TrainState, sigmas: &[f64], item_losses: &[f64]) -> String {
    let mut s = format!("alpha={} sigmas={sigmas:?} item_losses={item_losses:?}", state.alpha());
    for (name, t) in state.model.params.names().iter().zip(state.model.params.tensors()) {
        let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > 1e3 {
            s.push_str(&format!(" |{name}|={norm}"));
        }
    }
    s
}

/// One optimizer step on `batch`: per item draw σ, noise the target,
/// apply conditioning dropout, denoise, and score against the clean grid.
/// The loss is averaged over the batch. Returns the loss before the update.
pub fn train_step(state: &mut TrainState, batch: &[Example<'_>]) -> Result<f64> {
    let (loss, grads) = batch_gradients(state, batch)?;
    state.adam.update(state.model.params.tensors_mut(), &grads)?;
    state.step += 1;
    Ok(loss)
}

/// The loss and per-parameter gradients of one step, without updating.
/// Advances the rng exactly as [`train_step`] does.
pub fn batch_gradients(state: &mut TrainState, batch: &[Example<'_>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let model = &state.model;
    let cfg = &model.config;
    let pre = model.diffusion.preconditioning();
    let anneal = state.anneal();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let mut losses = Vec::with_capacity(batch.len());
    let mut sigmas = Vec::with_capacity(batch.len());
    let mut item_vars = Vec::with_capacity(batch.len());
    for &(grid, cond) in batch {
        if grid.n_components() != cfg.n_components {
            return Err(Error::Shape {
                op: "train_step",
                lhs: grid.shape().to_vec(),
                rhs: vec![grid.n_frames(), cfg.n_components, 2],
            });
        }
        let sigma = model.diffusion.sample_training_sigma(&mut state.rng);
        let noisy = add_noise(grid.values(), sigma, &mut state.rng)?;
        let dropped = apply_feature_dropout(cond, &mut state.rng, &cfg.dropout, DropoutMode::Train)?;
        let n = grid.n_frames();
        let cols = 2 * cfg.n_components;
        let c_in = pre.c_in(sigma);
        let x_in = tape.constant(Tensor::new(&[n, cols], noisy.iter().map(|v| v * c_in).collect())?);
        let spec = tape.constant(dropped.spec.clone());
        let sem = tape.constant(dropped.sem.clone());
        let f = model.forward_tape(&mut tape, &bound, x_in, pre.c_noise(sigma), &dropped, spec, sem)?;
        let f = tape.scale(f, pre.c_out(sigma));
        let skip = tape.constant(Tensor::new(&[n, cols], noisy.iter().map(|v| v * pre.c_skip(sigma)).collect())?);
        let pred = tape.add(f, skip)?;
        let target = tape.constant(Tensor::new(&[n, cols], grid.values().to_vec())?);
        let l = training_loss_on_tape(&mut tape, pred, target, state.train.objective, &anneal, state.train.reduction)?;
        losses.push(tape.value(l).data()[0]);
        sigmas.push(sigma);
        item_vars.push(l);
    }
    let mut total = item_vars[0];
    for &l in &item_vars[1..] {
        total = tape.add(total, l)?;
    }
    let loss_var = tape.scale(total, 1.0 / item_vars.len() as f64);
    let loss = tape.value(loss_var).data()[0];
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            diagnostics: diagnostics(state, &sigmas, &losses),
        });
    }
    let vars = bound.vars().to_vec();
    let grads = tape.backward(loss_var)?;
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(state.model.params.tensors())
        .map(|(&v, t)| grads.get_or_zero(v, t.len()))
        .collect();
    if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            diagnostics: format!(
                "non-finite gradient for {}; {}",
                state.model.params.names()[i],
                diagnostics(state, &sigmas, &losses)
            ),
        });
    }
    Ok((loss, grads))
}

/// Item order for `epoch`, a pure function of the training seed.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE90C_0000_0000_0000);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Side effects of a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Where to write periodic checkpoints.
    pub checkpoint_path: Option<PathBuf>,
    /// Steps between checkpoints; 0 writes only at the end.
    pub checkpoint_every: u64,
    /// Receives the loss curve as CSV.
    pub loss_log: Option<&'a mut dyn Write>,
    /// Stop after this many completed steps instead of the full run.
    pub stop_at: Option<u64>,
    /// Called after every step.
    pub progress: Option<&'a mut dyn FnMut(&LossRecord)>,
}

/// Continue training from `state.step` up to the end of the run. Each step
/// takes a batch in epoch order and a random crop of each item.
pub fn train(state: &mut TrainState, items: &[Example<'_>], mut hooks: TrainHooks<'_>) -> Result<Vec<LossRecord>> {
    if items.is_empty() {
        return Err(Error::invalid("no training items"));
    }
    let b = state.train.batch_size;
    let spe = state.train.steps_per_epoch(items.len()) as u64;
    let stop = hooks.stop_at.unwrap_or(state.total_steps).min(state.total_steps);
    if let Some(log) = hooks.loss_log.as_deref_mut() {
        if state.step == 0 {
            writeln!(log, "{LOSS_CSV_HEADER}")?;
        }
    }
    let mut records = Vec::new();
    let mut order_epoch = u64::MAX;
    let mut order = Vec::new();
    while state.step < stop {
        let epoch = state.step / spe;
        if epoch != order_epoch {
            order = epoch_order(state.train.seed, epoch, items.len());
            order_epoch = epoch;
        }
        let k = (state.step % spe) as usize;
        let idx = &order[k * b..((k + 1) * b).min(items.len())];
        let mut crops = Vec::with_capacity(idx.len());
        for &i in idx {
            let (grid, cond) = items[i];
            let len = state.train.crop_frames.min(grid.n_frames());
            let start = state.rng.gen_range(0..=grid.n_frames() - len);
            crops.push((grid.crop(start, len)?, cond.crop(start, len)?));
        }
        let batch: Vec<Example<'_>> = crops.iter().map(|(g, c)| (g, c)).collect();
        let anneal = state.anneal();
        let c = objective_c(state.train.objective, &anneal).unwrap_or(f64::NAN);
        let loss = train_step(state, &batch)?;
        let rec = LossRecord {
            step: state.step,
            alpha: anneal.alpha,
            c,
            loss,
        };
        if let Some(log) = hooks.loss_log.as_deref_mut() {
            writeln!(log, "{}", rec.csv_row())?;
        }
        if let Some(cb) = hooks.progress.as_deref_mut() {
            cb(&rec);
        }
        records.push(rec);
        if let Some(path) = &hooks.checkpoint_path {
            if hooks.checkpoint_every > 0 && state.step.is_multiple_of(hooks.checkpoint_every) {
                super::checkpoint::save(state, path)?;
            }
        }
    }
    if let Some(path) = &hooks.checkpoint_path {
        super::checkpoint::save(state, path)?;
    }
    Ok(records)
}
