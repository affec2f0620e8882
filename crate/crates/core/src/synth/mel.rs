use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::render::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_FFT: usize = 2048;
pub const HOP: usize = 441;
pub const N_MELS: usize = 128;
pub const F_MIN: f64 = 20.0;
pub const LOG_FLOOR: f64 = 1e-5;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// One triangular mel band, stored sparsely over FFT bins.
#[derive(Clone, Debug)]
struct Band {
    first_bin: usize,
    weights: Vec<f64>,
}

/// STFT + mel filterbank front end. Frames are centred on multiples of
/// the hop, zero-padded at the edges, so frame `t` sits at `t·hop`.
pub struct MelExtractor {
    sample_rate: u32,
    window: Vec<f64>,
    window_sum: f64,
    bands: Vec<Band>,
    edges: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(sample_rate: u32) -> Self {
        let window: Vec<f64> = (0..N_FFT)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / N_FFT as f64).cos())
            .collect();
        let window_sum = window.iter().sum();
        let fs = sample_rate as f64;
        let (m_lo, m_hi) = (hz_to_mel(F_MIN), hz_to_mel(fs / 2.0));
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let n_bins = N_FFT / 2 + 1;
        let bin_hz = fs / N_FFT as f64;
        let bands = (0..N_MELS)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let w: Vec<(usize, f64)> = (0..n_bins)
                    .map(|k| (k, triangle(k as f64 * bin_hz, lo, mid, hi)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                Band {
                    first_bin: w.first().map_or(0, |p| p.0),
                    weights: w.into_iter().map(|p| p.1).collect(),
                }
            })
            .collect();
        MelExtractor {
            sample_rate,
            window,
            window_sum,
            bands,
            edges,
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
        }
    }

    /// Weight of band `b` at frequency `hz`.
    pub fn band_weight(&self, b: usize, hz: f64) -> f64 {
        triangle(hz, self.edges[b], self.edges[b + 1], self.edges[b + 2])
    }

    pub fn n_frames(n_samples: usize) -> usize {
        n_samples.div_ceil(HOP)
    }

    /// `(T_s, 128)` log-mel power.
    pub fn log_mel(&self, w: &Waveform) -> Result<Tensor> {
        if w.is_empty() {
            return Err(Error::invalid("log-mel of an empty waveform"));
        }
        if w.sample_rate() != self.sample_rate {
            return Err(Error::invalid(format!(
                "waveform at {} Hz, extractor at {} Hz",
                w.sample_rate(),
                self.sample_rate
            )));
        }
        let x = w.samples();
        let t_s = Self::n_frames(x.len());
        let scale = 2.0 / self.window_sum;
        let mut out = Vec::with_capacity(t_s * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; N_FFT / 2 + 1];
        for t in 0..t_s {
            let start = (t * HOP) as isize - (N_FFT / 2) as isize;
            for (i, c) in buf.iter_mut().enumerate() {
                let s = start + i as isize;
                let v = if s >= 0 && (s as usize) < x.len() { x[s as usize] } else { 0.0 };
                *c = Complex::new(v * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr() * scale * scale;
            }
            for band in &self.bands {
                let e: f64 = band
                    .weights
                    .iter()
                    .zip(&power[band.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                out.push((e + LOG_FLOOR).ln());
            }
        }
        Tensor::new(&[t_s, N_MELS], out)
    }
}

fn triangle(f: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= mid {
        (f - lo) / (mid - lo)
    } else {
        (hi - f) / (hi - mid)
    }
}

pub fn log_mel(w: &Waveform) -> Result<Tensor> {
    MelExtractor::new(w.sample_rate()).log_mel(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::render::SAMPLE_RATE;

    #[test]
    fn silence_is_the_log_floor() {
        let w = Waveform::new(vec![0.0; 4410], SAMPLE_RATE).unwrap();
        let m = log_mel(&w).unwrap();
        assert_eq!(m.shape(), &[10, 128]);
        assert!(m.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn five_seconds_is_500_frames() {
        assert_eq!(MelExtractor::n_frames(220_500), 500);
        assert_eq!(MelExtractor::n_frames(220_501), 501);
        let w = Waveform::new(vec![0.0; 220_500], SAMPLE_RATE).unwrap();
        assert_eq!(log_mel(&w).unwrap().shape()[0], 500);
    }

    #[test]
    fn sine_lands_in_its_band() {
        let ex = MelExtractor::new(SAMPLE_RATE);
        let fs = SAMPLE_RATE as f64;
        let x: Vec<f64> = (0..44_100)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / fs).sin())
            .collect();
        let w = Waveform::new(x, SAMPLE_RATE).unwrap();
        let m = ex.log_mel(&w).unwrap();
        let expected = (0..N_MELS)
            .max_by(|&a, &b| ex.band_weight(a, 1000.0).total_cmp(&ex.band_weight(b, 1000.0)))
            .unwrap();
        assert!(ex.band_weight(expected, 1000.0) > 0.5);
        // skip edge frames where the window hangs over the zero padding
        for t in 3..m.shape()[0] - 3 {
            let row = &m.data()[t * N_MELS..(t + 1) * N_MELS];
            let arg = (0..N_MELS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, expected, "frame {t}");
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for f in [20.0, 440.0, 1000.0, 22050.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }
}
