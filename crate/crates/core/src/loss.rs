//! Training objectives: mean squared error, fixed pseudo-Huber and the
//! annealed pseudo-Huber loss whose constant shrinks over training.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Objective {
    Mse,
    /// Pseudo-Huber with a fixed constant `c = 1`.
    PseudoHuber,
    /// Pseudo-Huber with `c` interpolated from `c_max` to `c_min` over training.
    #[default]
    Annealed,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Mse => "mse",
            Objective::PseudoHuber => "ph",
            Objective::Annealed => "aph",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Objective::Mse),
            "ph" => Ok(Objective::PseudoHuber),
            "aph" => Ok(Objective::Annealed),
            other => Err(Error::Config(format!("unknown loss `{other}` (mse|ph|aph)"))),
        }
    }
}

/// How the pseudo-Huber residual is reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    /// `mean_i sqrt(r_i² + c²) - c`
    #[default]
    Elementwise,
    /// `sqrt(‖r‖² + c²) - c`
    GlobalNorm,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::Elementwise => "elementwise",
            Reduction::GlobalNorm => "global",
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elementwise" => Ok(Reduction::Elementwise),
            "global" => Ok(Reduction::GlobalNorm),
            other => Err(Error::Config(format!("unknown reduction `{other}`"))),
        }
    }
}

pub const PH_FIXED_C: f64 = 1.0;

/// Training progress and the endpoints of the annealed constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealState {
    pub alpha: f64,
    pub c_max: f64,
    pub c_min: f64,
}

impl Default for AnnealState {
    fn default() -> Self {
        AnnealState {
            alpha: 0.0,
            c_max: 1.0,
            c_min: 1e-4,
        }
    }
}

impl AnnealState {
    pub fn at(alpha: f64) -> Self {
        AnnealState {
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(self.c_min > 0.0) || self.c_max < self.c_min {
            return Err(Error::Config(format!("invalid anneal state {self:?}")));
        }
        Ok(())
    }
}

/// `c(α) = (1 - α)·c_max + α·c_min`.
pub fn anneal_c(state: &AnnealState) -> f64 {
    (1.0 - state.alpha) * state.c_max + state.alpha * state.c_min
}

fn check_shapes(x: &[f64], x_hat: &[f64]) -> Result<()> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape {
            op: "loss",
            lhs: vec![x.len()],
            rhs: vec![x_hat.len()],
        });
    }
    Ok(())
}

pub fn mse_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_shapes(x, x_hat)?;
    let s: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.len().max(1) as f64)
}

/// Mean over elements of `sqrt(r² + c²) - c`.
pub fn aph_loss(x: &[f64], x_hat: &[f64], c: f64) -> Result<f64> {
    check_shapes(x, x_hat)?;
    if !(c > 0.0) {
        return Err(Error::invalid(format!("pseudo-Huber constant must be > 0, got {c}")));
    }
    let s: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| crate::tensor::pseudo_huber(a - b, c))
        .sum();
    Ok(s / x.len().max(1) as f64)
}

/// `sqrt(‖x - x̂‖² + c²) - c` over the whole residual.
pub fn aph_loss_global(x: &[f64], x_hat: &[f64], c: f64) -> Result<f64> {
    check_shapes(x, x_hat)?;
    if !(c > 0.0) {
        return Err(Error::invalid(format!("pseudo-Huber constant must be > 0, got {c}")));
    }
    let r2: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(r2 / ((r2 + c * c).sqrt() + c))
}

/// The constant used by `objective` at `state`, if any.
pub fn objective_c(objective: Objective, state: &AnnealState) -> Option<f64> {
    match objective {
        Objective::Mse => None,
        Objective::PseudoHuber => Some(PH_FIXED_C),
        Objective::Annealed => Some(anneal_c(state)),
    }
}

pub fn training_loss(
    x: &[f64],
    x_hat: &[f64],
    objective: Objective,
    state: &AnnealState,
    reduction: Reduction,
) -> Result<f64> {
    match (objective_c(objective, state), reduction) {
        (None, _) => mse_loss(x, x_hat),
        (Some(c), Reduction::Elementwise) => aph_loss(x, x_hat, c),
        (Some(c), Reduction::GlobalNorm) => aph_loss_global(x, x_hat, c),
    }
}

/// Records the training loss of `pred` against `target` on a tape.
pub fn training_loss_on_tape(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    objective: Objective,
    state: &AnnealState,
    reduction: Reduction,
) -> Result<Var> {
    match (objective_c(objective, state), reduction) {
        (None, _) => {
            let r = tape.sub(pred, target)?;
            let sq = tape.mul(r, r)?;
            Ok(tape.mean(sq))
        }
        (Some(c), Reduction::Elementwise) => {
            let e = tape.pseudo_huber(pred, target, c)?;
            Ok(tape.mean(e))
        }
        (Some(c), Reduction::GlobalNorm) => {
            let r = tape.sub(pred, target)?;
            let sq = tape.mul(r, r)?;
            let s = tape.sum(sq);
            let s = tape.add_scalar(s, c * c);
            let s = tape.sqrt(s);
            Ok(tape.add_scalar(s, -c))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_basics() {
        assert_eq!(mse_loss(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0; 6], &[1.0; 6]).unwrap(), 1.0);
        assert!(mse_loss(&[0.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn mse_matches_two_pass_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let mut acc = 0.0;
        for d in &diffs {
            acc += d * d;
        }
        assert!((mse_loss(&x, &y).unwrap() - acc / 1000.0).abs() < 1e-7);
    }

    #[test]
    fn anneal_endpoints() {
        assert_eq!(anneal_c(&AnnealState::at(0.0)), 1.0);
        assert_eq!(anneal_c(&AnnealState::at(1.0)), 1e-4);
        assert!((anneal_c(&AnnealState::at(0.5)) - (1.0 + 1e-4) / 2.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let c = anneal_c(&AnnealState::at(i as f64 / 100.0));
            assert!(c <= prev);
            prev = c;
        }
        assert!(AnnealState::at(1.5).validate().is_err());
    }

    #[test]
    fn pseudo_huber_values() {
        assert_eq!(aph_loss(&[0.0], &[0.0], 0.5).unwrap(), 0.0);
        assert!((aph_loss(&[3.0], &[0.0], 4.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(aph_loss(&[1.0], &[0.0], 0.0).is_err());
        for r in [1e-3, -5e-4, 1e-4] {
            let l = aph_loss(&[r], &[0.0], 1.0).unwrap();
            assert!((l / (r * r / 2.0) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn limits_toward_mse_and_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mse = mse_loss(&x, &y).unwrap();
        let c = 1e3;
        let scaled = 2.0 * c * aph_loss(&x, &y, c).unwrap();
        assert!((scaled / mse - 1.0).abs() < 0.01);
        let mae = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / 500.0;
        assert!((aph_loss(&x, &y, 1e-6).unwrap() / mae - 1.0).abs() < 0.01);
    }

    #[test]
    fn dispatch() {
        let x = [0.2, -0.4, 1.0];
        let st = AnnealState::at(0.3);
        for obj in [Objective::Mse, Objective::PseudoHuber, Objective::Annealed] {
            assert_eq!(training_loss(&x, &x, obj, &st, Reduction::Elementwise).unwrap(), 0.0);
        }
        let y = [0.0, 0.0, 0.0];
        let ph = training_loss(&x, &y, Objective::PseudoHuber, &st, Reduction::Elementwise).unwrap();
        assert_eq!(ph, aph_loss(&x, &y, 1.0).unwrap());
        let aph = training_loss(&x, &y, Objective::Annealed, &st, Reduction::Elementwise).unwrap();
        assert_eq!(aph, aph_loss(&x, &y, anneal_c(&st)).unwrap());
        // APH at alpha=0 behaves like MSE/2 for small residuals
        let small = [1e-4, -2e-4, 5e-5];
        let r = training_loss(&small, &y, Objective::Annealed, &AnnealState::at(0.0), Reduction::Elementwise).unwrap()
            / mse_loss(&small, &y).unwrap();
        assert!((2.0 * r - 1.0).abs() < 1e-6);
        // at alpha=1 large residuals give mean |r|
        let big = [0.5, -0.8, 0.3];
        let l = training_loss(&big, &y, Objective::Annealed, &AnnealState::at(1.0), Reduction::Elementwise).unwrap();
        let mae = (0.5 + 0.8 + 0.3) / 3.0;
        assert!((l - mae).abs() <= 1e-4 * 3.0);
    }

    #[test]
    fn tape_matches_direct_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for obj in [Objective::Mse, Objective::PseudoHuber, Objective::Annealed] {
            for red in [Reduction::Elementwise, Reduction::GlobalNorm] {
                let st = AnnealState::at(0.7);
                let mut tape = Tape::new();
                let p = tape.param(Tensor::new(&[12], y.clone()).unwrap());
                let t = tape.constant(Tensor::new(&[12], x.clone()).unwrap());
                let l = training_loss_on_tape(&mut tape, p, t, obj, &st, red).unwrap();
                let direct = training_loss(&x, &y, obj, &st, red).unwrap();
                assert!((tape.value(l).data()[0] - direct).abs() < 1e-12);
                let g = tape.backward(l).unwrap().get_or_zero(p, 12);
                let h = 1e-6;
                for j in 0..12 {
                    let mut a = y.clone();
                    a[j] += h;
                    let mut b = y.clone();
                    b[j] -= h;
                    let fd = (training_loss(&x, &a, obj, &st, red).unwrap()
                        - training_loss(&x, &b, obj, &st, red).unwrap())
                        / (2.0 * h);
                    assert!((fd - g[j]).abs() < 1e-6, "{obj:?} {red:?} {fd} {}", g[j]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn aph_nonnegative_and_monotone(r in -10.0f64..10.0, dr in 1e-3f64..1.0, c in 1e-4f64..10.0) {
            let l = aph_loss(&[r], &[0.0], c).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, r == 0.0);
            let bigger = aph_loss(&[r.abs() + dr], &[0.0], c).unwrap();
            prop_assert!(bigger > l);
        }
    }
}
