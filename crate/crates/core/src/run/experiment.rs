use std::time::Instant;

use rayon::prelude::*;

use super::config::{DataConfig, RunConfig};
use crate::denoiser::{train, ConditionBundle, Example, FeatureSet, Model, TrainHooks, TrainState};
use crate::error::Result;
use crate::evalkit::{evaluate, EvalConfig, Report};
use crate::events::ComponentMap;
use crate::infer::{transcribe, InferOptions, Transcription};
use crate::loss::Objective;
use crate::synth::{make_dataset, Clip, Dataset};

/// Load the corpus at `cfg.dir` if one is there, otherwise build it.
pub fn load_or_make(cfg: &DataConfig) -> Result<Dataset> {
    if cfg.dir.join("dataset.txt").exists() {
        Dataset::load(&cfg.dir)
    } else {
        make_dataset(cfg.n_clips, cfg.seed, &cfg.synth)
    }
}

/// Train a fresh model on `clips` per `cfg`.
pub fn train_new(cfg: &RunConfig, clips: &[&Clip], hooks: TrainHooks<'_>) -> Result<TrainState> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone(), cfg.diffusion, cfg.train.seed)?;
    let items: Vec<Example<'_>> = clips.iter().map(|c| (&c.grid, &c.cond)).collect();
    let total = cfg.train.total_steps(items.len());
    let mut state = TrainState::new(model, cfg.train.clone(), total)?;
    train(&mut state, &items, hooks)?;
    Ok(state)
}

/// Transcribe each bundle; bundle `i` samples with seed `opts.seed + i`.
pub fn transcribe_all(model: &Model, conds: &[&ConditionBundle], opts: &InferOptions) -> Result<Vec<Transcription>> {
    conds
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let o = InferOptions {
                seed: opts.seed.wrapping_add(i as u64),
                ..*opts
            };
            transcribe(model, c, &o)
        })
        .collect()
}

/// Transcribe `clips` and score them against their labels.
pub fn score_clips(
    model: &Model,
    clips: &[&Clip],
    opts: &InferOptions,
    eval: &EvalConfig,
    map: Option<&ComponentMap>,
) -> Result<Report> {
    let conds: Vec<&ConditionBundle> = clips.iter().map(|c| &c.cond).collect();
    let est: Vec<_> = transcribe_all(model, &conds, opts)?.into_iter().map(|t| t.notes).collect();
    let refs: Vec<_> = clips.iter().map(|c| c.notes.clone()).collect();
    let mut rep = evaluate(&refs, &est, map, eval)?;
    rep.clip_ids = clips.iter().map(|c| c.index.to_string()).collect();
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub steps: usize,
    pub onset_f1: f64,
    pub velocity_f1: f64,
    pub seconds: f64,
}

pub const SWEEP_CSV_HEADER: &str = "steps,onset_f1,velocity_f1,seconds";

/// Accuracy and wall-clock time per sampling step count, in increasing
/// step order.
pub fn sweep(
    model: &Model,
    clips: &[&Clip],
    steps: &[usize],
    opts: &InferOptions,
    eval: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    let mut steps = steps.to_vec();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|k| {
            let t = Instant::now();
            let rep = score_clips(model, clips, &InferOptions { steps: k, ..*opts }, eval, None)?;
            Ok(SweepRow {
                steps: k,
                onset_f1: rep.onset.f1(),
                velocity_f1: rep.velocity.f1(),
                seconds: t.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.steps, r.onset_f1, r.velocity_f1, r.seconds));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub features: FeatureSet,
    pub objective: Objective,
    pub seed: u64,
    pub onset_f1: f64,
    pub velocity_f1: f64,
}

pub const ABLATION_CSV_HEADER: &str = "features,loss,seed,onset_f1,velocity_f1";

/// Train and score one model per `(features, objective, seed)` cell.
pub fn ablate(
    base: &RunConfig,
    train_clips: &[&Clip],
    test_clips: &[&Clip],
    cells: &[(FeatureSet, Objective)],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &(features, objective) in cells {
            let mut cfg = base.clone();
            cfg.model.features = features;
            cfg.train.objective = objective;
            cfg.train.seed = seed;
            let state = train_new(&cfg, train_clips, TrainHooks::default())?;
            let rep = score_clips(&state.model, test_clips, &cfg.infer, &cfg.eval, None)?;
            let row = AblationRow {
                features,
                objective,
                seed,
                onset_f1: rep.onset.f1(),
                velocity_f1: rep.velocity.f1(),
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.features.name(),
            r.objective.name(),
            r.seed,
            r.onset_f1,
            r.velocity_f1
        ));
    }
    s
}
