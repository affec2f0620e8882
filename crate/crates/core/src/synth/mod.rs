//! Synthetic drum corpus: grooves, audio, and the two feature streams.

mod dataset;
mod mel;
mod pattern;
mod render;
mod semantic;

pub use dataset::{
    condition_from_audio, make_clip, make_dataset, read_f32, split_of, write_f32, Clip, Dataset, Split, SynthOptions,
    DEFAULT_ENCODER_SEED,
};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, MelExtractor, HOP, LOG_FLOOR, N_FFT, N_MELS};
pub use pattern::{generate_pattern, ClipSpec, PatternProbs, Timbre};
pub use render::{render_audio, render_unnormalized, Waveform, SAMPLE_RATE};
pub use semantic::{semantic_features, SemanticEncoder, SEM_DIM, SEM_HOP, SEM_RATE};
