use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mel::{MelExtractor, N_MELS};
use super::pattern::{generate_pattern, ClipSpec, PatternProbs, Timbre};
use super::render::{render_audio, Waveform, SAMPLE_RATE};
use super::semantic::{SemanticEncoder, SEM_DIM, SEM_RATE};
use crate::config::KvDoc;
use crate::denoiser::ConditionBundle;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::events::{grid_from_notes, notes_from_grid, text, Grid, Note, NoteList, FRAME_RATE, N_COMPONENTS, ONSET_THRESHOLD};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ENCODER_SEED: u64 = 0x5E3A;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// 80/10/10 by index: the last tenth is test, the tenth before it valid.
pub fn split_of(index: usize, n_clips: usize) -> Split {
    let n_held = n_clips / 10;
    let n_train = n_clips - 2 * n_held;
    if index < n_train {
        Split::Train
    } else if index < n_train + n_held {
        Split::Valid
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub duration: f64,
    pub tempo_min: f64,
    pub tempo_max: f64,
    /// Relative jitter of each component's frequencies and decay, drawn per
    /// clip from `U[1 - p, 1 + p]`. Zero keeps the reference kit.
    pub timbre_jitter: f64,
    pub encoder_seed: u64,
    pub probs: PatternProbs,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            duration: 5.0,
            tempo_min: 80.0,
            tempo_max: 160.0,
            timbre_jitter: 0.0,
            encoder_seed: DEFAULT_ENCODER_SEED,
            probs: PatternProbs::default(),
        }
    }
}

impl SynthOptions {
    pub fn n_frames(&self) -> usize {
        (self.duration * FRAME_RATE).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(60.0..=200.0).contains(&self.tempo_min)
            || !(60.0..=200.0).contains(&self.tempo_max)
            || self.tempo_min > self.tempo_max
        {
            return Err(Error::invalid(format!(
                "tempo range [{}, {}] not within [60, 200]",
                self.tempo_min, self.tempo_max
            )));
        }
        if !(0.0..1.0).contains(&self.timbre_jitter) {
            return Err(Error::invalid(format!("timbre jitter {} not in [0, 1)", self.timbre_jitter)));
        }
        ClipSpec::new(self.duration, self.tempo_min, 0).validate(FRAME_RATE)
    }
}

/// One rendered clip: labels and the features derived from its audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub index: usize,
    pub split: Split,
    pub tempo: f64,
    pub seed: u64,
    pub notes: NoteList,
    pub grid: Grid,
    pub cond: ConditionBundle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub options: SynthOptions,
    pub encoder_checksum: u32,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Clip> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }

    pub fn n_frames(&self) -> usize {
        self.options.n_frames()
    }
}

/// Snap notes to grid frames, merging hits that land on the same frame.
fn quantize(notes: &NoteList, n_frames: usize) -> Result<NoteList> {
    let snapped: Vec<Note> = notes
        .iter()
        .filter_map(|n| {
            let f = (n.time * FRAME_RATE).round();
            ((f as usize) < n_frames).then(|| Note::new(f / FRAME_RATE, n.component, n.velocity))
        })
        .collect();
    let grid = grid_from_notes(&NoteList::new(snapped)?, N_COMPONENTS, FRAME_RATE, n_frames)?;
    notes_from_grid(&grid, ONSET_THRESHOLD)
}

fn to_f32_precision(t: Tensor) -> Tensor {
    let shape = t.shape().to_vec();
    let data = t.into_data().into_iter().map(|v| v as f32 as f64).collect();
    Tensor::new(&shape, data).expect("same shape")
}

/// Generate clip `index` of the corpus seeded by `seed`. Each clip draws
/// from its own ChaCha stream so clips can be built in any order.
pub fn make_clip(
    index: usize,
    n_clips: usize,
    seed: u64,
    options: &SynthOptions,
    mel: &MelExtractor,
    encoder: &SemanticEncoder,
) -> Result<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let tempo = rng.gen_range(options.tempo_min..=options.tempo_max);
    let clip_seed: u64 = rng.gen();
    let mut spec = ClipSpec::new(options.duration, tempo, clip_seed);
    spec.probs = options.probs;
    if options.timbre_jitter > 0.0 {
        let j = options.timbre_jitter;
        spec.timbre = Timbre::kit().map(|t| {
            let f = rng.gen_range(1.0 - j..=1.0 + j);
            let d = rng.gen_range(1.0 - j..=1.0 + j);
            t.perturbed(f, d)
        });
    }
    let n_frames = options.n_frames();
    let notes = quantize(&generate_pattern(&spec, &mut rng)?, n_frames)?;
    let grid = grid_from_notes(&notes, N_COMPONENTS, FRAME_RATE, n_frames)?;
    let audio = render_audio(&notes, &spec)?;
    let cond = features(&audio, mel, encoder)?;
    Ok(Clip {
        index,
        split: split_of(index, n_clips),
        tempo,
        seed: clip_seed,
        notes,
        grid,
        cond,
    })
}

fn features(audio: &Waveform, mel: &MelExtractor, encoder: &SemanticEncoder) -> Result<ConditionBundle> {
    let spec_feat = to_f32_precision(mel.log_mel(audio)?);
    let sem_feat = to_f32_precision(encoder.encode(audio)?);
    ConditionBundle::new(spec_feat, sem_feat, SEM_RATE)
}

/// Conditioning features for arbitrary mono audio at the synthesis rate.
/// The signal is peak-normalized first, like rendered clips.
pub fn condition_from_audio(samples: &[f64], sample_rate: u32, encoder_seed: u64) -> Result<ConditionBundle> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!("sample rate {sample_rate} Hz, expected {SAMPLE_RATE}")));
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scaled = if peak > 0.0 {
        samples.iter().map(|v| v / peak).collect()
    } else {
        samples.to_vec()
    };
    let audio = Waveform::new(scaled, sample_rate)?;
    features(&audio, &MelExtractor::new(sample_rate), &SemanticEncoder::new(encoder_seed))
}

pub fn make_dataset(n_clips: usize, seed: u64, options: &SynthOptions) -> Result<Dataset> {
    if n_clips == 0 {
        return Err(Error::invalid("dataset needs at least one clip"));
    }
    options.validate()?;
    let mel = MelExtractor::new(SAMPLE_RATE);
    let encoder = SemanticEncoder::new(options.encoder_seed);
    let clips = (0..n_clips)
        .into_par_iter()
        .map(|i| make_clip(i, n_clips, seed, options, &mel, &encoder))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        seed,
        options: options.clone(),
        encoder_checksum: encoder.checksum(),
        clips,
    })
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::data(path.display().to_string(), e.to_string())
}

/// Little-endian f32, row-major.
pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::data(
            path.display().to_string(),
            format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn clip_path(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join("clips").join(format!("{index:04}.{ext}"))
}

impl Dataset {
    /// Layout:
    ///
    /// ```text
    /// dataset.txt            corpus metadata
    /// clips/NNNN.notes.txt   one "time component velocity" line per note
    /// clips/NNNN.spec.f32    (spec_frames, spec_dim) log-mel
    /// clips/NNNN.sem.f32     (sem_frames, sem_dim) semantic features
    /// clips/NNNN.grid.f32    (n_frames, n_components, 2) target grid
    /// clips/NNNN.meta.txt    shapes, split, tempo, seed
    /// ```
    pub fn save(&self, dir: &Path) -> Result<()> {
        let clips_dir = dir.join("clips");
        fs::create_dir_all(&clips_dir).map_err(|e| io_err(&clips_dir, e))?;
        let o = &self.options;
        let mut head = KvDoc::default();
        head.set("", "format", FORMAT_VERSION);
        head.set("", "seed", self.seed);
        head.set("", "n_clips", self.clips.len());
        head.set("", "duration", o.duration);
        head.set("", "frame_rate", FRAME_RATE);
        head.set("", "n_components", N_COMPONENTS);
        head.set("", "tempo_min", o.tempo_min);
        head.set("", "tempo_max", o.tempo_max);
        head.set("", "timbre_jitter", o.timbre_jitter);
        head.set("", "encoder_seed", o.encoder_seed);
        head.set("", "encoder_checksum", self.encoder_checksum);
        head.set("", "spec_dim", N_MELS);
        head.set("", "sem_dim", SEM_DIM);
        head.set("", "sem_rate", SEM_RATE);
        self.clips.par_iter().try_for_each(|c| -> Result<()> {
            let mut meta = KvDoc::default();
            meta.set("", "index", c.index);
            meta.set("", "split", c.split.name());
            meta.set("", "tempo", c.tempo);
            meta.set("", "seed", c.seed);
            meta.set("", "n_frames", c.grid.n_frames());
            meta.set("", "n_components", c.grid.n_components());
            meta.set("", "spec_frames", c.cond.n_spec_frames());
            meta.set("", "spec_dim", c.cond.spec_dim());
            meta.set("", "sem_frames", c.cond.n_sem_frames());
            meta.set("", "sem_dim", c.cond.sem_dim());
            meta.set("", "sem_rate", c.cond.sem_rate);
            meta.set("", "dtype", "f32le");
            let p = clip_path(dir, c.index, "meta.txt");
            write_atomic(&p, meta.to_text().as_bytes())?;
            let p = clip_path(dir, c.index, "notes.txt");
            write_atomic(&p, text::to_text(&c.notes).as_bytes())?;
            write_f32(&clip_path(dir, c.index, "spec.f32"), c.cond.spec.data())?;
            write_f32(&clip_path(dir, c.index, "sem.f32"), c.cond.sem.data())?;
            write_f32(&clip_path(dir, c.index, "grid.f32"), c.grid.values())
        })?;
        // Written last: a corpus without its header never loads.
        write_atomic(&dir.join("dataset.txt"), head.to_text().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let head_path = dir.join("dataset.txt");
        let head = KvDoc::parse(&read_text(&head_path)?)
            .map_err(|e| Error::data(head_path.display().to_string(), e.to_string()))?;
        let data_err = |e: Error| Error::data(head_path.display().to_string(), e.to_string());
        let format: u32 = head.require("", "format").map_err(data_err)?;
        if format != FORMAT_VERSION {
            return Err(Error::data(
                head_path.display().to_string(),
                format!("unsupported format version {format}"),
            ));
        }
        let n_clips: usize = head.require("", "n_clips").map_err(data_err)?;
        let options = SynthOptions {
            duration: head.require("", "duration").map_err(data_err)?,
            tempo_min: head.require("", "tempo_min").map_err(data_err)?,
            tempo_max: head.require("", "tempo_max").map_err(data_err)?,
            timbre_jitter: head.require("", "timbre_jitter").map_err(data_err)?,
            encoder_seed: head.require("", "encoder_seed").map_err(data_err)?,
            probs: PatternProbs::default(),
        };
        let seed = head.require("", "seed").map_err(data_err)?;
        let encoder_checksum = head.require("", "encoder_checksum").map_err(data_err)?;
        let clips = (0..n_clips)
            .into_par_iter()
            .map(|i| load_clip(dir, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            seed,
            options,
            encoder_checksum,
            clips,
        })
    }
}

fn load_clip(dir: &Path, index: usize) -> Result<Clip> {
    let meta_path = clip_path(dir, index, "meta.txt");
    let bad = |e: Error| Error::data(meta_path.display().to_string(), e.to_string());
    let meta = KvDoc::parse(&read_text(&meta_path)?).map_err(bad)?;
    let n_frames: usize = meta.require("", "n_frames").map_err(bad)?;
    let n_comp: usize = meta.require("", "n_components").map_err(bad)?;
    let (ts, fs_): (usize, usize) = (
        meta.require("", "spec_frames").map_err(bad)?,
        meta.require("", "spec_dim").map_err(bad)?,
    );
    let (tm, fm): (usize, usize) = (
        meta.require("", "sem_frames").map_err(bad)?,
        meta.require("", "sem_dim").map_err(bad)?,
    );
    let notes_path = clip_path(dir, index, "notes.txt");
    let notes = text::from_text(&read_text(&notes_path)?)
        .map_err(|e| Error::data(notes_path.display().to_string(), e.to_string()))?;
    let grid_path = clip_path(dir, index, "grid.f32");
    let stored = read_f32(&grid_path, n_frames * n_comp * 2)?;
    let grid = grid_from_notes(&notes, n_comp, FRAME_RATE, n_frames)
        .map_err(|e| Error::data(notes_path.display().to_string(), e.to_string()))?;
    if let Some(i) = grid
        .values()
        .iter()
        .zip(&stored)
        .position(|(a, b)| (a - b).abs() > 1e-6)
    {
        return Err(Error::data(
            grid_path.display().to_string(),
            format!("grid value {i} disagrees with the note list"),
        ));
    }
    let spec = Tensor::new(&[ts, fs_], read_f32(&clip_path(dir, index, "spec.f32"), ts * fs_)?)?;
    let sem = Tensor::new(&[tm, fm], read_f32(&clip_path(dir, index, "sem.f32"), tm * fm)?)?;
    Ok(Clip {
        index,
        split: meta.require("", "split").map_err(bad)?,
        tempo: meta.require("", "tempo").map_err(bad)?,
        seed: meta.require("", "seed").map_err(bad)?,
        notes,
        grid,
        cond: ConditionBundle::new(spec, sem, meta.require("", "sem_rate").map_err(bad)?)?,
    })
}
