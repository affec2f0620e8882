use std::path::{Path, PathBuf};

use crate::config::KvDoc;
use crate::denoiser::{DenoiserConfig, TrainConfig};
use crate::diffusion::{DiffusionConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::evalkit::{EvalConfig, VelocityRule};
use crate::events::ONSET_THRESHOLD;
use crate::infer::InferOptions;
use crate::loss::Reduction;
use crate::synth::SynthOptions;

/// Where the corpus lives and how to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub n_clips: usize,
    pub seed: u64,
    pub synth: SynthOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            n_clips: 200,
            seed: 0,
            synth: SynthOptions::default(),
        }
    }
}

/// Everything one experiment needs. Serialized into each artifact it
/// produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub infer: InferOptions,
    pub eval: EvalConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: DenoiserConfig::default(),
            diffusion: DiffusionConfig::default(),
            train: TrainConfig::default(),
            infer: InferOptions::default(),
            eval: EvalConfig::default(),
            out: PathBuf::from("runs/default"),
        }
    }
}

fn sampler_name(k: SamplerKind) -> &'static str {
    match k {
        SamplerKind::Renoise => "renoise",
        SamplerKind::Euler => "euler",
    }
}

impl RunConfig {
    /// Small enough to train on one CPU core in a few minutes.
    pub fn toy() -> Self {
        RunConfig {
            model: DenoiserConfig {
                d_model: 32,
                n_layers: 2,
                n_heads: 4,
                d_ff: 64,
                d_time: 16,
                ..DenoiserConfig::default()
            },
            // Centred higher than the library default so that most
            // training steps see noise loud enough to need the audio.
            diffusion: DiffusionConfig {
                p_mean: 0.5,
                ..DiffusionConfig::default()
            },
            train: TrainConfig {
                lr: 3e-3,
                epochs: 100,
                // With the pseudo-Huber taken over the whole residual the
                // small model learns velocity faster than with the
                // per-element form.
                reduction: Reduction::GlobalNorm,
                ..TrainConfig::default()
            },
            out: PathBuf::from("runs/toy"),
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.diffusion.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.infer.steps == 0 || self.infer.fill_steps == 0 {
            return Err(Error::Config("infer.steps and infer.fill_steps must be at least 1".into()));
        }
        if self.data.n_clips == 0 {
            return Err(Error::Config("data.n_clips must be at least 1".into()));
        }
        let frames = self.data.synth.n_frames();
        if frames != self.model.n_frames {
            return Err(Error::Config(format!(
                "clips have {frames} frames but the model expects {}",
                self.model.n_frames
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        let d = &self.data;
        doc.set("data", "dir", d.dir.display());
        doc.set("data", "n_clips", d.n_clips);
        doc.set("data", "seed", d.seed);
        doc.set("data", "duration", d.synth.duration);
        doc.set("data", "tempo_min", d.synth.tempo_min);
        doc.set("data", "tempo_max", d.synth.tempo_max);
        doc.set("data", "timbre_jitter", d.synth.timbre_jitter);
        doc.set("data", "encoder_seed", d.synth.encoder_seed);
        self.model.write_kv(&mut doc, "model");
        self.diffusion.write_kv(&mut doc, "diffusion");
        self.train.write_kv(&mut doc, "train");
        doc.set("infer", "steps", self.infer.steps);
        doc.set("infer", "sampler", sampler_name(self.infer.sampler));
        doc.set("infer", "fill_steps", self.infer.fill_steps);
        doc.set("infer", "fill_sampler", sampler_name(self.infer.fill_sampler));
        doc.set("infer", "threshold", self.infer.threshold);
        doc.set("infer", "seed", self.infer.seed);
        doc.set("eval", "tolerance", self.eval.tolerance);
        doc.set("eval", "vel_tolerance", self.eval.vel_tolerance);
        let rule = match self.eval.velocity_rule {
            VelocityRule::Rescale => "rescale",
            VelocityRule::Raw => "raw",
        };
        doc.set("eval", "velocity_rule", rule);
        doc.set("run", "out", self.out.display());
        doc
    }

    /// Missing keys keep their defaults; unknown sections and keys are rejected.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        const KNOWN: [&str; 7] = ["data", "model", "diffusion", "train", "infer", "eval", "run"];
        if let Some(s) = doc.sections().find(|s| !KNOWN.contains(s)) {
            return Err(Error::Config(format!("unknown section [{s}]")));
        }
        let d = RunConfig::default();
        let ds = &d.data.synth;
        let cfg = RunConfig {
            data: DataConfig {
                dir: doc.parsed("data", "dir")?.unwrap_or(d.data.dir),
                n_clips: doc.parsed("data", "n_clips")?.unwrap_or(d.data.n_clips),
                seed: doc.parsed("data", "seed")?.unwrap_or(d.data.seed),
                synth: SynthOptions {
                    duration: doc.parsed("data", "duration")?.unwrap_or(ds.duration),
                    tempo_min: doc.parsed("data", "tempo_min")?.unwrap_or(ds.tempo_min),
                    tempo_max: doc.parsed("data", "tempo_max")?.unwrap_or(ds.tempo_max),
                    timbre_jitter: doc.parsed("data", "timbre_jitter")?.unwrap_or(ds.timbre_jitter),
                    encoder_seed: doc.parsed("data", "encoder_seed")?.unwrap_or(ds.encoder_seed),
                    probs: ds.probs,
                },
            },
            model: DenoiserConfig::from_kv(doc, "model")?,
            diffusion: DiffusionConfig::from_kv(doc, "diffusion")?,
            train: TrainConfig::from_kv(doc, "train")?,
            infer: InferOptions {
                steps: doc.parsed("infer", "steps")?.unwrap_or(d.infer.steps),
                sampler: doc.parsed("infer", "sampler")?.unwrap_or(d.infer.sampler),
                fill_steps: doc.parsed("infer", "fill_steps")?.unwrap_or(d.infer.fill_steps),
                fill_sampler: doc.parsed("infer", "fill_sampler")?.unwrap_or(d.infer.fill_sampler),
                threshold: doc.parsed("infer", "threshold")?.unwrap_or(ONSET_THRESHOLD),
                seed: doc.parsed("infer", "seed")?.unwrap_or(d.infer.seed),
            },
            eval: EvalConfig {
                tolerance: doc.parsed("eval", "tolerance")?.unwrap_or(d.eval.tolerance),
                vel_tolerance: doc.parsed("eval", "vel_tolerance")?.unwrap_or(d.eval.vel_tolerance),
                velocity_rule: doc.parsed("eval", "velocity_rule")?.unwrap_or(d.eval.velocity_rule),
            },
            out: doc.parsed("run", "out")?.unwrap_or(d.out),
        };
        // every key read above is written back by to_kv
        let known = cfg.to_kv();
        for s in doc.sections() {
            if let Some(k) = doc.keys(s).find(|k| known.get(s, k).is_none()) {
                return Err(Error::Config(format!("unknown key `{k}` in [{s}]")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_kv(&KvDoc::parse(&text)?)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::toy();
        c.data.dir = PathBuf::from("some dir/x");
        c.eval.velocity_rule = VelocityRule::Raw;
        c.infer.sampler = SamplerKind::Euler;
        c.infer.fill_sampler = SamplerKind::Renoise;
        c.infer.fill_steps = 7;
        let back = RunConfig::from_kv(&KvDoc::parse(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_kv(&KvDoc::parse("").unwrap()).unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        RunConfig::toy().validate().unwrap();
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_kv(&KvDoc::parse("[trian]\nlr = 1").unwrap()).is_err());
        assert!(RunConfig::from_kv(&KvDoc::parse("[train]\nreducton = global").unwrap()).is_err());
        assert!(RunConfig::from_kv(&KvDoc::parse("[train]\nlr = fast").unwrap()).is_err());
        let mut c = RunConfig::default();
        c.data.synth.duration = 2.0;
        assert!(c.validate().is_err());
    }
}
