use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::events::{Drum, Note, NoteList, N_COMPONENTS};

/// Synthesis parameters for one drum component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timbre {
    /// Frequency of the decaying sine, Hz.
    pub tone_hz: f64,
    /// Centre of the band-passed noise, Hz.
    pub noise_hz: f64,
    /// Quality factor of the noise band-pass.
    pub noise_q: f64,
    /// Exponential decay time constant, seconds.
    pub decay: f64,
    /// 0 = pure tone, 1 = pure noise.
    pub noise_mix: f64,
    pub gain: f64,
}

impl Timbre {
    pub fn default_for(drum: Drum) -> Timbre {
        let t = |tone_hz, noise_hz, noise_q, decay, noise_mix, gain| Timbre {
            tone_hz,
            noise_hz,
            noise_q,
            decay,
            noise_mix,
            gain,
        };
        match drum {
            Drum::Kick => t(60.0, 120.0, 1.0, 0.18, 0.0, 1.0),
            Drum::Snare => t(200.0, 2500.0, 0.7, 0.12, 0.6, 1.2),
            Drum::Tom => t(120.0, 300.0, 1.0, 0.22, 0.1, 0.9),
            Drum::HiHat => t(8000.0, 8000.0, 1.5, 0.05, 1.0, 1.4),
            Drum::Crash => t(5000.0, 5000.0, 0.8, 0.9, 1.0, 1.0),
            Drum::Ride => t(4000.0, 4000.0, 2.0, 0.45, 0.7, 0.8),
            Drum::Bell => t(2500.0, 2500.0, 4.0, 0.35, 0.1, 0.7),
        }
    }

    pub fn kit() -> [Timbre; N_COMPONENTS] {
        Drum::ALL.map(Timbre::default_for)
    }

    /// Scale frequencies by `freq` and decay by `decay`.
    pub fn perturbed(&self, freq: f64, decay: f64) -> Timbre {
        Timbre {
            tone_hz: self.tone_hz * freq,
            noise_hz: (self.noise_hz * freq).min(20_000.0),
            decay: self.decay * decay,
            ..*self
        }
    }
}

/// Hit probabilities per pattern role.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatternProbs {
    /// Kick on beats 1 and 3.
    pub kick: f64,
    /// Extra syncopated kicks.
    pub kick_extra: f64,
    /// Snare on beats 2 and 4.
    pub snare: f64,
    /// Hi-hat (or ride, in ride-led bars) on eighth notes.
    pub hat: f64,
    /// Chance a bar is ride-led instead of hi-hat-led.
    pub ride_bar: f64,
    /// Crash on the first beat of a bar.
    pub crash: f64,
    /// Chance a bar ends in a tom fill.
    pub fill: f64,
    /// Bell on quarter notes in ride-led bars.
    pub bell: f64,
}

impl Default for PatternProbs {
    fn default() -> Self {
        PatternProbs {
            kick: 0.9,
            kick_extra: 0.15,
            snare: 0.85,
            hat: 0.8,
            ride_bar: 0.2,
            crash: 0.25,
            fill: 0.25,
            bell: 0.3,
        }
    }
}

impl PatternProbs {
    pub fn silent() -> Self {
        PatternProbs {
            kick: 0.0,
            kick_extra: 0.0,
            snare: 0.0,
            hat: 0.0,
            ride_bar: 0.0,
            crash: 0.0,
            fill: 0.0,
            bell: 0.0,
        }
    }
}

/// Everything needed to generate and render one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    pub duration: f64,
    pub tempo: f64,
    pub seed: u64,
    pub timbre: [Timbre; N_COMPONENTS],
    pub probs: PatternProbs,
}

impl ClipSpec {
    pub fn new(duration: f64, tempo: f64, seed: u64) -> Self {
        ClipSpec {
            duration,
            tempo,
            seed,
            timbre: Timbre::kit(),
            probs: PatternProbs::default(),
        }
    }

    pub fn validate(&self, frame_rate: f64) -> Result<()> {
        let frames = self.duration * frame_rate;
        if !(self.duration > 0.0) || (frames - frames.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "clip duration {} is not a whole number of frames",
                self.duration
            )));
        }
        if !(60.0..=200.0).contains(&self.tempo) {
            return Err(Error::invalid(format!("tempo {} outside [60, 200]", self.tempo)));
        }
        Ok(())
    }

    /// Sixteenth-note length in seconds.
    pub fn step(&self) -> f64 {
        15.0 / self.tempo
    }
}

/// Procedural 4/4 groove on a sixteenth-note grid.
pub fn generate_pattern<R: Rng + ?Sized>(spec: &ClipSpec, rng: &mut R) -> Result<NoteList> {
    spec.validate(crate::events::FRAME_RATE)?;
    let p = &spec.probs;
    let step = spec.step();
    let n_steps = (spec.duration / step).ceil() as usize;
    let vel_dist = Normal::new(90.0, 15.0).expect("valid normal");
    let velocity = |rng: &mut R, accent: bool| -> u8 {
        let v: f64 = vel_dist.sample(rng) + if accent { 12.0 } else { 0.0 };
        v.round().clamp(20.0, 127.0) as u8
    };

    let mut notes = Vec::new();
    let mut ride_led = false;
    let mut fill_bar = false;
    for k in 0..n_steps {
        let t = k as f64 * step;
        if t >= spec.duration {
            break;
        }
        let pos = k % 16;
        if pos == 0 {
            ride_led = rng.gen_bool(p.ride_bar);
            fill_bar = rng.gen_bool(p.fill);
        }
        let downbeat = pos % 4 == 0;
        let hit = |rng: &mut R, drum: Drum, prob: f64, notes: &mut Vec<Note>| {
            if prob > 0.0 && rng.gen_bool(prob.min(1.0)) {
                let v = velocity(rng, downbeat);
                notes.push(Note::new(t, drum.index(), v));
            }
        };
        let in_fill = fill_bar && pos >= 12;

        if pos == 0 || pos == 8 {
            hit(rng, Drum::Kick, p.kick, &mut notes);
        } else if pos % 2 == 0 && !in_fill {
            hit(rng, Drum::Kick, p.kick_extra, &mut notes);
        }
        if (pos == 4 || pos == 12) && !in_fill {
            hit(rng, Drum::Snare, p.snare, &mut notes);
        }
        if in_fill {
            hit(rng, Drum::Tom, 0.7 * p.fill.min(1.0) / p.fill.max(1e-12), &mut notes);
        }
        if pos == 0 {
            hit(rng, Drum::Crash, p.crash, &mut notes);
        }
        if pos % 2 == 0 && !in_fill {
            if ride_led {
                hit(rng, Drum::Ride, p.hat, &mut notes);
                if downbeat {
                    hit(rng, Drum::Bell, p.bell, &mut notes);
                }
            } else {
                hit(rng, Drum::HiHat, p.hat, &mut notes);
            }
        }
    }
    NoteList::new(notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_pattern() {
        let spec = ClipSpec::new(5.0, 120.0, 1);
        let a = generate_pattern(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = generate_pattern(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn silent_probabilities_give_nothing() {
        let mut spec = ClipSpec::new(5.0, 97.0, 1);
        spec.probs = PatternProbs::silent();
        for seed in 0..20 {
            let l = generate_pattern(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(l.is_empty());
        }
    }

    #[test]
    fn onsets_sit_on_the_sixteenth_grid() {
        let spec = ClipSpec::new(5.0, 120.0, 1);
        for seed in 0..50 {
            let l = generate_pattern(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for n in &l {
                assert!(n.time < 5.0);
                let k = n.time / 0.125;
                assert!((k - k.round()).abs() < 1e-9, "{}", n.time);
                assert!((20..=127).contains(&n.velocity));
            }
        }
    }

    #[test]
    fn every_component_appears_across_seeds() {
        let spec = ClipSpec::new(5.0, 110.0, 1);
        let mut seen = [false; N_COMPONENTS];
        for seed in 0..40 {
            for n in &generate_pattern(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap() {
                seen[n.component] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "{seen:?}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_pattern(&ClipSpec::new(5.0, 59.0, 0), &mut rng).is_err());
        assert!(generate_pattern(&ClipSpec::new(5.0, 201.0, 0), &mut rng).is_err());
        assert!(generate_pattern(&ClipSpec::new(5.0049, 120.0, 0), &mut rng).is_err());
    }
}
