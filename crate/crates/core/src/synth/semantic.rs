use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::render::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SEM_DIM: usize = 64;
/// Samples per semantic frame (75 frames/s at 44.1 kHz).
pub const SEM_HOP: usize = 588;
pub const SEM_RATE: f64 = 75.0;

const N_FILTERS: usize = 24;
const KERNEL: usize = 63;
const STRIDE: usize = 3;
const CONTEXT: usize = 3;

/// Frozen random-weight convolutional encoder standing in for a pretrained
/// music model.
///
/// Stage 1 is a strided conv filterbank whose rectified outputs are
/// averaged per frame and log-compressed. Stage 2 mixes three neighbouring
/// frames into 64 tanh units.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticEncoder {
    seed: u64,
    w1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl SemanticEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, std: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                })
                .collect()
        };
        let w1 = normal(N_FILTERS * KERNEL, 1.0 / (KERNEL as f64).sqrt());
        let w2 = normal(SEM_DIM * N_FILTERS * CONTEXT, 1.0 / ((N_FILTERS * CONTEXT) as f64).sqrt());
        let b2 = normal(SEM_DIM, 0.1);
        SemanticEncoder { seed, w1, w2, b2 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Order-sensitive hash of all weights.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in self.w1.iter().chain(&self.w2).chain(&self.b2) {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }

    pub fn n_frames(n_samples: usize) -> usize {
        n_samples / SEM_HOP
    }

    /// `(T_m, 64)` features, `T_m = floor(samples / 588)`.
    pub fn encode(&self, w: &Waveform) -> Result<Tensor> {
        if w.is_empty() {
            return Err(Error::invalid("semantic features of an empty waveform"));
        }
        let x = w.samples();
        let t_m = Self::n_frames(x.len());
        let half = KERNEL / 2;
        let mut padded = vec![0.0; x.len() + KERNEL];
        padded[half..half + x.len()].copy_from_slice(x);

        let per_frame = SEM_HOP / STRIDE;
        let mut energy = vec![0.0; t_m * N_FILTERS];
        for t in 0..t_m {
            let e = &mut energy[t * N_FILTERS..(t + 1) * N_FILTERS];
            for j in t * per_frame..(t + 1) * per_frame {
                let seg = &padded[j * STRIDE..j * STRIDE + KERNEL];
                for (c, ec) in e.iter_mut().enumerate() {
                    let k = &self.w1[c * KERNEL..(c + 1) * KERNEL];
                    let y: f64 = k.iter().zip(seg).map(|(a, b)| a * b).sum();
                    *ec += y.abs();
                }
            }
            for ec in e.iter_mut() {
                *ec = ((*ec / per_frame as f64 + 1e-4).ln() + 4.0) / 2.0;
            }
        }

        let mut out = vec![0.0; t_m * SEM_DIM];
        for t in 0..t_m {
            for o in 0..SEM_DIM {
                let mut acc = self.b2[o];
                for k in 0..CONTEXT {
                    let src = t as isize + k as isize - 1;
                    if src < 0 || src >= t_m as isize {
                        continue;
                    }
                    let e = &energy[src as usize * N_FILTERS..(src as usize + 1) * N_FILTERS];
                    let w = &self.w2[(o * CONTEXT + k) * N_FILTERS..(o * CONTEXT + k + 1) * N_FILTERS];
                    acc += w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
                }
                out[t * SEM_DIM + o] = acc.tanh();
            }
        }
        Tensor::new(&[t_m, SEM_DIM], out)
    }
}

pub fn semantic_features(w: &Waveform, encoder_seed: u64) -> Result<Tensor> {
    SemanticEncoder::new(encoder_seed).encode(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::render::SAMPLE_RATE;

    fn chirp(f: f64) -> Waveform {
        let x = (0..44_100)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                0.8 * (2.0 * std::f64::consts::PI * f * t * (1.0 + t)).sin() * (-3.0 * t).exp()
            })
            .collect();
        Waveform::new(x, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let w = chirp(300.0);
        let a = semantic_features(&w, 5).unwrap();
        assert_eq!(a, semantic_features(&w, 5).unwrap());
        assert_ne!(a, semantic_features(&w, 6).unwrap());
        assert_eq!(SemanticEncoder::new(5).checksum(), SemanticEncoder::new(5).checksum());
    }

    #[test]
    fn frame_count_follows_stride() {
        for secs in [1.0, 2.5, 5.0] {
            let n = (secs * SAMPLE_RATE as f64) as usize;
            let w = Waveform::new(vec![0.0; n], SAMPLE_RATE).unwrap();
            let t = semantic_features(&w, 0).unwrap().shape()[0] as f64;
            assert!((t - (secs * 75.0).floor()).abs() <= 1.0);
        }
    }

    #[test]
    fn different_audio_different_features() {
        let a = semantic_features(&chirp(300.0), 1).unwrap();
        let b = semantic_features(&chirp(2000.0), 1).unwrap();
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1.0, "{diff}");
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
    }
}
