use rand::Rng;

use super::{add_noise, DiffusionConfig};
use crate::error::{Error, Result};
use crate::events::{Grid, FRAME_RATE};

/// A preconditioned denoiser `D(x; σ, cond) ≈ x₀`.
pub trait Denoiser<C: ?Sized> {
    /// `(frames, components)` of grids accepted and produced for `cond`;
    /// errors if `cond` does not fit the denoiser.
    fn grid_shape(&self, cond: &C) -> Result<(usize, usize)>;

    fn denoise(&self, x: &Grid, sigma: f64, cond: &C) -> Result<Grid>;
}

impl<C: ?Sized, D: Denoiser<C> + ?Sized> Denoiser<C> for &D {
    fn grid_shape(&self, cond: &C) -> Result<(usize, usize)> {
        (**self).grid_shape(cond)
    }

    fn denoise(&self, x: &Grid, sigma: f64, cond: &C) -> Result<Grid> {
        (**self).denoise(x, sigma, cond)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplerKind {
    /// Denoise, then re-noise the estimate to the next lower level.
    #[default]
    Renoise,
    /// Deterministic first-order ODE steps.
    Euler,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "renoise" | "restart" => Ok(SamplerKind::Renoise),
            "euler" => Ok(SamplerKind::Euler),
            other => Err(Error::Config(format!("unknown sampler `{other}`"))),
        }
    }
}

/// Per-step record of a sampler run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleTrace {
    /// Noise level passed to each denoiser call.
    pub sigmas: Vec<f64>,
    /// RMS of the state entering each denoiser call.
    pub rms: Vec<f64>,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Draw a grid from the denoiser by iterative denoising.
pub fn sample<C: ?Sized, D: Denoiser<C>, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &C,
    config: &DiffusionConfig,
    n_steps: usize,
    rng: &mut R,
) -> Result<Grid> {
    sample_with(denoiser, cond, config, n_steps, SamplerKind::Renoise, rng, None)
}

pub fn sample_with<C: ?Sized, D: Denoiser<C>, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &C,
    config: &DiffusionConfig,
    n_steps: usize,
    kind: SamplerKind,
    rng: &mut R,
    trace: Option<&mut SampleTrace>,
) -> Result<Grid> {
    let sigmas = config.sampling_sigmas(n_steps)?;
    let (frames, components) = denoiser.grid_shape(cond)?;
    let zeros = vec![0.0; frames * components * 2];
    let x = Grid::from_values(frames, components, FRAME_RATE, add_noise(&zeros, sigmas[0], rng)?)?;
    run(denoiser, cond, x, &sigmas, kind, rng, trace)
}

fn run<C: ?Sized, D: Denoiser<C>, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &C,
    mut x: Grid,
    sigmas: &[f64],
    kind: SamplerKind,
    rng: &mut R,
    mut trace: Option<&mut SampleTrace>,
) -> Result<Grid> {
    let shape = denoiser.grid_shape(cond)?;
    if (x.n_frames(), x.n_components()) != shape {
        return Err(Error::Shape {
            op: "sample",
            lhs: vec![x.n_frames(), x.n_components()],
            rhs: vec![shape.0, shape.1],
        });
    }
    let mut x0 = x.clone();
    for (i, &sigma) in sigmas.iter().enumerate() {
        if let Some(t) = trace.as_deref_mut() {
            t.sigmas.push(sigma);
            t.rms.push(rms(x.values()));
        }
        x0 = denoiser.denoise(&x, sigma, cond)?;
        let Some(&next) = sigmas.get(i + 1) else { break };
        match kind {
            SamplerKind::Renoise => {
                let v = add_noise(x0.values(), next, rng)?;
                x.values_mut().copy_from_slice(&v);
            }
            SamplerKind::Euler => {
                let h = next - sigma;
                for (xv, dv) in x.values_mut().iter_mut().zip(x0.values()) {
                    *xv += h * (*xv - dv) / sigma;
                }
            }
        }
    }
    x0.clamp_model_range();
    Ok(x0)
}

/// Re-noise an existing grid and denoise it again along the tail of the
/// `n_steps` schedule. The tail starts at the largest scheduled level not
/// above `sigma_restart`, and the grid is noised to that level.
#[allow(clippy::too_many_arguments)]
pub fn refine<C: ?Sized, D: Denoiser<C>, R: Rng + ?Sized>(
    grid: &Grid,
    denoiser: &D,
    cond: &C,
    config: &DiffusionConfig,
    sigma_restart: f64,
    n_steps: usize,
    rng: &mut R,
    trace: Option<&mut SampleTrace>,
) -> Result<Grid> {
    let tail = refine_tail(config, sigma_restart, n_steps)?;
    let x = Grid::from_values(
        grid.n_frames(),
        grid.n_components(),
        grid.frame_rate(),
        add_noise(grid.values(), tail[0], rng)?,
    )?;
    run(denoiser, cond, x, &tail, SamplerKind::Renoise, rng, trace)
}

/// The suffix of `sigma_schedule(n_steps)` used by [`refine`].
pub fn refine_tail(config: &DiffusionConfig, sigma_restart: f64, n_steps: usize) -> Result<Vec<f64>> {
    if !(sigma_restart > config.sigma_min && sigma_restart <= config.sigma_max) {
        return Err(Error::invalid(format!(
            "restart level {sigma_restart} outside ({}, {}]",
            config.sigma_min, config.sigma_max
        )));
    }
    let schedule = config.sigma_schedule(n_steps)?;
    let start = schedule
        .iter()
        .position(|&s| s <= sigma_restart)
        .expect("schedule ends at sigma_min < sigma_restart");
    Ok(schedule[start..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Preconditioned, RawNetwork};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    /// Always returns the same clean grid and counts calls.
    struct Oracle {
        grid: Grid,
        calls: Cell<usize>,
    }

    impl Denoiser<()> for Oracle {
        fn grid_shape(&self, _: &()) -> Result<(usize, usize)> {
            Ok((self.grid.n_frames(), self.grid.n_components()))
        }

        fn denoise(&self, _: &Grid, _: f64, _: &()) -> Result<Grid> {
            self.calls.set(self.calls.get() + 1);
            Ok(self.grid.clone())
        }
    }

    fn oracle() -> Oracle {
        let mut g = Grid::silent(12, 3, FRAME_RATE);
        g.set(2, 1, 1.0, 0.4);
        g.set(7, 0, 1.0, -0.3);
        Oracle {
            grid: g,
            calls: Cell::new(0),
        }
    }

    #[test]
    fn one_step_is_one_call() {
        let o = oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trace = SampleTrace::default();
        let g = sample_with(&o, &(), &DiffusionConfig::default(), 1, SamplerKind::Renoise, &mut rng, Some(&mut trace)).unwrap();
        assert_eq!(o.calls.get(), 1);
        assert_eq!(trace.sigmas, vec![80.0]);
        assert_eq!(g, o.grid);
        assert!(sample(&o, &(), &DiffusionConfig::default(), 0, &mut rng).is_err());
    }

    #[test]
    fn perfect_denoiser_is_a_fixed_point() {
        let cfg = DiffusionConfig::default();
        for steps in [1, 2, 5, 10, 40] {
            for seed in 0..3 {
                let o = oracle();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for kind in [SamplerKind::Renoise, SamplerKind::Euler] {
                    let g = sample_with(&o, &(), &cfg, steps, kind, &mut rng, None).unwrap();
                    assert_eq!(g, o.grid);
                }
            }
        }
    }

    #[test]
    fn trajectory_follows_the_schedule() {
        let cfg = DiffusionConfig::default();
        let o = oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut trace = SampleTrace::default();
        sample_with(&o, &(), &cfg, 10, SamplerKind::Renoise, &mut rng, Some(&mut trace)).unwrap();
        assert_eq!(trace.sigmas, cfg.sigma_schedule(10).unwrap());
        assert_eq!(o.calls.get(), 10);
    }

    struct Zero;

    impl RawNetwork<()> for Zero {
        fn grid_shape(&self, _: &()) -> Result<(usize, usize)> {
            Ok((50, 7))
        }

        fn raw(&self, x: &Grid, _: f64, _: &()) -> Result<Grid> {
            let mut g = x.clone();
            g.values_mut().iter_mut().for_each(|v| *v = 0.0);
            Ok(g)
        }
    }

    #[test]
    fn zero_network_shrinks_the_state() {
        let cfg = DiffusionConfig::default();
        let d = Preconditioned {
            net: Zero,
            pre: cfg.preconditioning(),
        };
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trace = SampleTrace::default();
            sample_with(&d, &(), &cfg, 12, SamplerKind::Renoise, &mut rng, Some(&mut trace)).unwrap();
            for w in trace.rms.windows(2) {
                assert!(w[1] < w[0], "{:?}", trace.rms);
            }
        }
    }

    #[test]
    fn refine_runs_a_schedule_suffix() {
        let cfg = DiffusionConfig::default();
        let schedule = cfg.sigma_schedule(10).unwrap();
        let tail = refine_tail(&cfg, 1.0, 10).unwrap();
        assert!(tail[0] <= 1.0);
        assert_eq!(&schedule[schedule.len() - tail.len()..], &tail[..]);
        // previous scheduled level is above the restart point
        assert!(schedule[schedule.len() - tail.len() - 1] > 1.0);

        let o = oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let start = Grid::silent(12, 3, FRAME_RATE);
        let mut trace = SampleTrace::default();
        let g = refine(&start, &o, &(), &cfg, cfg.sigma_min * 1.0001, 10, &mut rng, Some(&mut trace)).unwrap();
        assert_eq!(g, o.grid);
        assert_eq!(trace.sigmas, vec![cfg.sigma_min]);
        assert_eq!(g.shape(), start.shape());

        assert!(refine_tail(&cfg, cfg.sigma_min, 10).is_err());
        assert!(refine_tail(&cfg, 81.0, 10).is_err());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let o = oracle();
        let cfg = DiffusionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bad = Grid::silent(11, 3, FRAME_RATE);
        assert!(refine(&bad, &o, &(), &cfg, 1.0, 10, &mut rng, None).is_err());
    }
}
