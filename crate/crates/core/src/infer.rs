//! Turning a trained denoiser into note lists: transcription, inpainting
//! and unconditional generation.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{apply_feature_dropout, ConditionBundle, DropoutMode, Model};
use crate::diffusion::{sample_with, Denoiser, SamplerKind};
use crate::error::Result;
use crate::events::{notes_from_grid, Grid, NoteList, ONSET_THRESHOLD};
use crate::tensor::Tensor;

/// Wraps a denoiser and counts how often it is called.
pub struct CallCounter<D> {
    inner: D,
    calls: Cell<usize>,
}

impl<D> CallCounter<D> {
    pub fn new(inner: D) -> Self {
        CallCounter {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<C: ?Sized, D: Denoiser<C>> Denoiser<C> for CallCounter<D> {
    fn grid_shape(&self, cond: &C) -> Result<(usize, usize)> {
        self.inner.grid_shape(cond)
    }

    fn denoise(&self, x: &Grid, sigma: f64, cond: &C) -> Result<Grid> {
        self.calls.set(self.calls.get() + 1);
        self.inner.denoise(x, sigma, cond)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferOptions {
    /// Steps and sampler for transcription.
    pub steps: usize,
    pub sampler: SamplerKind,
    /// Steps and sampler for inpainting and generation. Where no audio
    /// guides it, re-noising the denoised estimate at every step drifts to
    /// the mean pattern, which is silence; the ODE sampler keeps the noise
    /// it started from and so produces an actual pattern.
    pub fill_steps: usize,
    pub fill_sampler: SamplerKind,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            steps: 10,
            sampler: SamplerKind::Renoise,
            fill_steps: 20,
            fill_sampler: SamplerKind::Euler,
            threshold: ONSET_THRESHOLD,
            seed: 0,
        }
    }
}

impl InferOptions {
    fn for_fill(&self) -> Self {
        InferOptions {
            steps: self.fill_steps,
            sampler: self.fill_sampler,
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcription {
    pub grid: Grid,
    pub notes: NoteList,
    /// Denoiser evaluations spent.
    pub calls: usize,
}

fn run(model: &Model, cond: &ConditionBundle, opts: &InferOptions) -> Result<Transcription> {
    let counter = CallCounter::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let grid = sample_with(&counter, cond, &model.diffusion, opts.steps, opts.sampler, &mut rng, None)?;
    let notes = notes_from_grid(&grid, opts.threshold)?;
    Ok(Transcription {
        grid,
        notes,
        calls: counter.calls(),
    })
}

/// Sample a grid conditioned on every feature frame.
pub fn transcribe(model: &Model, cond: &ConditionBundle, opts: &InferOptions) -> Result<Transcription> {
    run(model, cond, opts)
}

/// Hide the features in `[start, end)` seconds and sample the whole grid,
/// so the model fills the gap from context.
pub fn inpaint(
    model: &Model,
    cond: &ConditionBundle,
    start: f64,
    end: f64,
    opts: &InferOptions,
) -> Result<Transcription> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let masked = apply_feature_dropout(
        cond,
        &mut rng,
        &model.config.dropout,
        DropoutMode::Inpaint { start, end },
    )?;
    run(model, &masked, &opts.for_fill())
}

/// A bundle of `n_frames` with every frame dropped, for unconditional use.
pub fn empty_condition(model: &Model, n_frames: usize) -> Result<ConditionBundle> {
    let n_sem = (n_frames as f64 * crate::synth::SEM_RATE / crate::denoiser::SPEC_RATE).floor() as usize;
    let mut cond = ConditionBundle::new(
        Tensor::zeros(&[n_frames, model.config.spec_dim]),
        Tensor::zeros(&[n_sem, model.config.sem_dim]),
        crate::synth::SEM_RATE,
    )?;
    cond.drop_all();
    Ok(cond)
}

/// Sample a pattern with no audio at all.
pub fn generate(model: &Model, n_frames: usize, opts: &InferOptions) -> Result<Transcription> {
    run(model, &empty_condition(model, n_frames)?, &opts.for_fill())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::diffusion::DiffusionConfig;

    #[test]
    fn fill_drivers_use_their_own_step_count() {
        let cfg = DenoiserConfig {
            n_frames: 50,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            d_time: 8,
            ..DenoiserConfig::default()
        };
        let model = Model::new(cfg, DiffusionConfig::default(), 1).unwrap();
        let opts = InferOptions {
            steps: 3,
            fill_steps: 5,
            ..InferOptions::default()
        };
        let cond = empty_condition(&model, 50).unwrap();
        assert_eq!(transcribe(&model, &cond, &opts).unwrap().calls, 3);
        assert_eq!(inpaint(&model, &cond, 0.1, 0.3, &opts).unwrap().calls, 5);
        assert_eq!(generate(&model, 50, &opts).unwrap().calls, 5);
    }
}
