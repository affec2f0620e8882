use rand::Rng;

use super::config::DropoutRates;
use super::cond::ConditionBundle;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DropoutMode {
    /// Random complete or partial drops, independently per stream.
    Train,
    /// Drop `[start, end)` seconds in both streams.
    Inpaint { start: f64, end: f64 },
    Unconditional,
    Full,
}

/// Length in `[ceil(0.1·n), floor(0.9·n)]` (at least 1), start uniform.
fn partial_interval<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let lo = ((0.1 * n as f64).ceil() as usize).max(1);
    let hi = ((0.9 * n as f64).floor() as usize).max(lo).min(n);
    let len = rng.gen_range(lo..=hi);
    let start = rng.gen_range(0..=n - len);
    (start, start + len)
}

fn drop_stream<R: Rng + ?Sized>(valid: &mut [bool], p_complete: f64, p_partial: f64, rng: &mut R) {
    if valid.is_empty() {
        return;
    }
    if rng.gen_bool(p_complete) {
        valid.iter_mut().for_each(|v| *v = false);
    } else if rng.gen_bool(p_partial) {
        let (a, b) = partial_interval(valid.len(), rng);
        valid[a..b].iter_mut().for_each(|v| *v = false);
    }
}

/// Mark conditioning frames invalid according to `mode`. Frames already
/// invalid stay invalid.
pub fn apply_feature_dropout<R: Rng + ?Sized>(
    cond: &ConditionBundle,
    rng: &mut R,
    rates: &DropoutRates,
    mode: DropoutMode,
) -> Result<ConditionBundle> {
    rates.validate()?;
    let mut out = cond.clone();
    match mode {
        DropoutMode::Full => {}
        DropoutMode::Unconditional => out.drop_all(),
        DropoutMode::Train => {
            drop_stream(&mut out.spec_valid, rates.p_complete_spec, rates.p_partial, rng);
            drop_stream(&mut out.sem_valid, rates.p_complete_sem, rates.p_partial, rng);
        }
        DropoutMode::Inpaint { start, end } => {
            let duration = cond.n_spec_frames() as f64 / super::SPEC_RATE;
            if !(start >= 0.0 && start < end && end <= duration + 1e-9) {
                return Err(Error::invalid(format!(
                    "inpaint mask [{start}, {end}) outside clip of {duration} s"
                )));
            }
            out.drop_time_range(start, end);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> ConditionBundle {
        ConditionBundle::new(Tensor::zeros(&[500, 4]), Tensor::zeros(&[375, 3]), 75.0).unwrap()
    }

    #[test]
    fn unconditional_and_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = DropoutRates::default();
        let b = bundle();
        let u = apply_feature_dropout(&b, &mut rng, &r, DropoutMode::Unconditional).unwrap();
        assert_eq!(u.n_valid(), (0, 0));
        let f = apply_feature_dropout(&b, &mut rng, &r, DropoutMode::Full).unwrap();
        assert_eq!(f, b);
    }

    #[test]
    fn certain_complete_drop_wins() {
        let r = DropoutRates {
            p_complete_spec: 1.0,
            p_complete_sem: 1.0,
            p_partial: 1.0,
        };
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = apply_feature_dropout(&bundle(), &mut rng, &r, DropoutMode::Train).unwrap();
            assert_eq!(d.n_valid(), (0, 0));
        }
    }

    #[test]
    fn partial_drop_is_one_interval_of_bounded_length() {
        let r = DropoutRates {
            p_complete_spec: 0.0,
            p_complete_sem: 0.0,
            p_partial: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let d = apply_feature_dropout(&bundle(), &mut rng, &r, DropoutMode::Train).unwrap();
            for valid in [&d.spec_valid, &d.sem_valid] {
                let n = valid.len();
                let dropped = valid.iter().filter(|&&v| !v).count();
                assert!(dropped * 10 >= n && dropped * 10 <= 9 * n, "{dropped} of {n}");
                let edges = valid.windows(2).filter(|w| w[0] != w[1]).count();
                assert!(edges <= 2);
            }
        }
    }

    #[test]
    fn inpaint_drops_the_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = DropoutRates::default();
        let d = apply_feature_dropout(&bundle(), &mut rng, &r, DropoutMode::Inpaint { start: 2.0, end: 3.0 }).unwrap();
        assert_eq!(d.n_valid(), (400, 300));
        assert!(!d.spec_valid[200] && !d.spec_valid[299] && d.spec_valid[300] && d.spec_valid[199]);
        for bad in [(-0.1, 1.0), (3.0, 2.0), (4.0, 5.5)] {
            let m = DropoutMode::Inpaint { start: bad.0, end: bad.1 };
            assert!(apply_feature_dropout(&bundle(), &mut rng, &r, m).is_err());
        }
    }
}
