use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::pattern::{ClipSpec, Timbre};
use crate::error::{Error, Result};
use crate::events::NoteList;

pub const SAMPLE_RATE: u32 = 44_100;

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::invalid(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Band-pass biquad with 0 dB peak gain.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * center.min(0.49 * fs) / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn add_hit(out: &mut [f64], start: usize, amp: f64, t: &Timbre, noise_seed: u64) {
    let fs = SAMPLE_RATE as f64;
    let len = ((6.0 * t.decay * fs).ceil() as usize).min(out.len().saturating_sub(start));
    let two_pi = 2.0 * std::f64::consts::PI;
    // scale band-limited unit-variance noise to the RMS of a unit sine
    let band = (std::f64::consts::PI * t.noise_hz / (t.noise_q * fs)).min(1.0);
    let noise_gain = std::f64::consts::FRAC_1_SQRT_2 / band.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut bp = BandPass::new(t.noise_hz, t.noise_q, fs);
    for (i, o) in out[start..start + len].iter_mut().enumerate() {
        let time = i as f64 / fs;
        let env = (-time / t.decay).exp();
        let tone = (two_pi * t.tone_hz * time).sin();
        let noise = if t.noise_mix > 0.0 {
            let w: f64 = StandardNormal.sample(&mut rng);
            bp.tick(w) * noise_gain
        } else {
            0.0
        };
        *o += amp * env * ((1.0 - t.noise_mix) * tone + t.noise_mix * noise);
    }
}

/// Sum of all hits before peak normalization. Each hit's noise is seeded
/// from the clip seed and the hit index, so the result is linear in the
/// velocities.
pub fn render_unnormalized(notes: &NoteList, spec: &ClipSpec) -> Result<Vec<f64>> {
    let n = (spec.duration * SAMPLE_RATE as f64).round() as usize;
    let mut out = vec![0.0; n];
    for (i, note) in notes.iter().enumerate() {
        if note.time < 0.0 || note.time >= spec.duration {
            return Err(Error::invalid(format!(
                "note at {} s outside clip of {} s",
                note.time, spec.duration
            )));
        }
        let timbre = spec.timbre.get(note.component).ok_or_else(|| {
            Error::invalid(format!("no timbre for component {}", note.component))
        })?;
        let start = (note.time * SAMPLE_RATE as f64).round() as usize;
        let amp = timbre.gain * note.velocity as f64 / 127.0;
        let seed = spec.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        add_hit(&mut out, start, amp, timbre, seed);
    }
    Ok(out)
}

/// Render and scale so the peak magnitude is 1 (silence stays all-zero).
pub fn render_audio(notes: &NoteList, spec: &ClipSpec) -> Result<Waveform> {
    let mut s = render_unnormalized(notes, spec)?;
    let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        s.iter_mut().for_each(|v| *v = (*v / peak).clamp(-1.0, 1.0));
    }
    Waveform::new(s, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Drum, Note};
    use rustfft::{num_complex::Complex, FftPlanner};

    fn spec() -> ClipSpec {
        ClipSpec::new(2.0, 120.0, 11)
    }

    #[test]
    fn silence_renders_zeros() {
        let w = render_audio(&NoteList::empty(), &spec()).unwrap();
        assert_eq!(w.len(), 88_200);
        assert!(w.samples().iter().all(|&v| v == 0.0));
    }

    fn band_energy_fraction(x: &[f64], below_hz: f64) -> f64 {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let n = buf.len();
        let (mut low, mut total) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
            let e = c.norm_sqr();
            total += e;
            if k as f64 * SAMPLE_RATE as f64 / n as f64 <= below_hz {
                low += e;
            }
        }
        low / total
    }

    #[test]
    fn kick_energy_is_low() {
        let notes = NoteList::new(vec![Note::new(0.1, Drum::Kick.index(), 127)]).unwrap();
        let w = render_audio(&notes, &spec()).unwrap();
        let frac = band_energy_fraction(w.samples(), 150.0);
        assert!(frac >= 0.8, "{frac}");
        assert!((w.peak() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hihat_energy_is_high() {
        let notes = NoteList::new(vec![Note::new(0.1, Drum::HiHat.index(), 127)]).unwrap();
        let w = render_audio(&notes, &spec()).unwrap();
        assert!(band_energy_fraction(w.samples(), 2000.0) < 0.1);
    }

    #[test]
    fn doubling_velocity_doubles_rms() {
        let s = spec();
        let mut seeds = 0;
        for comp in 0..7 {
            let a: Vec<Note> = (0..6).map(|k| Note::new(0.05 + 0.3 * k as f64, comp, 20 + 7 * k as u8)).collect();
            let b: Vec<Note> = a.iter().map(|n| Note::new(n.time, n.component, n.velocity * 2)).collect();
            let ra = render_unnormalized(&NoteList::new(a).unwrap(), &s).unwrap();
            let rb = render_unnormalized(&NoteList::new(b).unwrap(), &s).unwrap();
            let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
            let ratio = rms(&rb) / rms(&ra);
            assert!((ratio - 2.0).abs() <= 0.1, "component {comp}: {ratio}");
            seeds += 1;
        }
        assert_eq!(seeds, 7);
    }

    #[test]
    fn notes_outside_clip_rejected() {
        let notes = NoteList::new(vec![Note::new(2.0, 0, 100)]).unwrap();
        assert!(render_audio(&notes, &spec()).is_err());
    }
}
