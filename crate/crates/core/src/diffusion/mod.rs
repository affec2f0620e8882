//! Noise-level machinery for the denoiser: training-noise sampling, the
//! sampling schedule, input/output preconditioning, forward noising and the
//! iterative samplers.

mod precond;
mod sampler;

pub use precond::{precondition, Preconditioned, Preconditioning, RawNetwork};
pub use sampler::{refine, refine_tail, sample, sample_with, Denoiser, SampleTrace, SamplerKind};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub sigma_data: f64,
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            sigma_data: 0.5,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_min > 0.0
            && self.sigma_min < self.sigma_max
            && self.sigma_max.is_finite()
            && self.rho > 0.0
            && self.rho.is_finite()
            && self.sigma_data > 0.0
            && self.p_std >= 0.0
            && self.p_mean.is_finite()
            && self.p_std.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid diffusion config {self:?}")))
        }
    }

    pub fn write_kv(&self, doc: &mut crate::config::KvDoc, section: &str) {
        doc.set(section, "sigma_min", self.sigma_min);
        doc.set(section, "sigma_max", self.sigma_max);
        doc.set(section, "rho", self.rho);
        doc.set(section, "sigma_data", self.sigma_data);
        doc.set(section, "p_mean", self.p_mean);
        doc.set(section, "p_std", self.p_std);
    }

    /// Keys missing from `doc` keep their defaults.
    pub fn from_kv(doc: &crate::config::KvDoc, section: &str) -> Result<Self> {
        let d = DiffusionConfig::default();
        let c = DiffusionConfig {
            sigma_min: doc.parsed(section, "sigma_min")?.unwrap_or(d.sigma_min),
            sigma_max: doc.parsed(section, "sigma_max")?.unwrap_or(d.sigma_max),
            rho: doc.parsed(section, "rho")?.unwrap_or(d.rho),
            sigma_data: doc.parsed(section, "sigma_data")?.unwrap_or(d.sigma_data),
            p_mean: doc.parsed(section, "p_mean")?.unwrap_or(d.p_mean),
            p_std: doc.parsed(section, "p_std")?.unwrap_or(d.p_std),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn preconditioning(&self) -> Preconditioning {
        Preconditioning::new(self.sigma_data)
    }

    /// Training noise level: `ln σ ~ N(p_mean, p_std²)`.
    pub fn sample_training_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.p_mean + self.p_std * z).exp()
    }

    /// Decreasing noise levels from `sigma_max` to `sigma_min`, interpolated
    /// linearly in `σ^(1/ρ)`.
    pub fn sigma_schedule(&self, n_steps: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if n_steps < 2 {
            return Err(Error::invalid(format!(
                "sigma schedule needs at least 2 steps, got {n_steps}"
            )));
        }
        let inv = 1.0 / self.rho;
        let hi = self.sigma_max.powf(inv);
        let lo = self.sigma_min.powf(inv);
        let last = (n_steps - 1) as f64;
        let mut out: Vec<f64> = (0..n_steps)
            .map(|i| (hi + i as f64 / last * (lo - hi)).powf(self.rho))
            .collect();
        // the power round-trip can be off by an ulp at the ends
        out[0] = self.sigma_max;
        out[n_steps - 1] = self.sigma_min;
        Ok(out)
    }

    /// Noise levels the sampler visits for `n_steps`: the schedule, or just
    /// `sigma_max` for a single step.
    pub fn sampling_sigmas(&self, n_steps: usize) -> Result<Vec<f64>> {
        match n_steps {
            0 => Err(Error::invalid("sampling needs at least one step")),
            1 => {
                self.validate()?;
                Ok(vec![self.sigma_max])
            }
            n => self.sigma_schedule(n),
        }
    }
}

/// `x + σ·ε` with `ε ~ N(0, I)`.
pub fn add_noise<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x
        .iter()
        .map(|&v| {
            let e: f64 = rng.sample(StandardNormal);
            v + sigma * e
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_lognormal() {
        let cfg = DiffusionConfig {
            p_std: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(cfg.sample_training_sigma(&mut rng), (-1.2f64).exp());
        }
    }

    #[test]
    fn lognormal_moments() {
        let cfg = DiffusionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = cfg.sample_training_sigma(&mut rng);
            assert!(s > 0.0);
            sum += s.ln();
        }
        assert!((sum / n as f64 + 1.2).abs() < 0.02);
    }

    #[test]
    fn schedule_endpoints_and_linear_case() {
        let cfg = DiffusionConfig::default();
        let s = cfg.sigma_schedule(10).unwrap();
        assert_eq!(s[0], 80.0);
        assert_eq!(s[9], 0.002);
        let lin = DiffusionConfig {
            rho: 1.0,
            sigma_min: 1.0,
            sigma_max: 5.0,
            ..Default::default()
        };
        let s = lin.sigma_schedule(5).unwrap();
        for (a, b) in s.iter().zip([5.0, 4.0, 3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_rejects_short_or_bad_configs() {
        let cfg = DiffusionConfig::default();
        assert!(cfg.sigma_schedule(1).is_err());
        assert!(cfg.sigma_schedule(0).is_err());
        let bad = DiffusionConfig {
            sigma_min: 90.0,
            ..Default::default()
        };
        assert!(bad.sigma_schedule(4).is_err());
        assert_eq!(cfg.sampling_sigmas(1).unwrap(), vec![80.0]);
    }

    #[test]
    fn noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = vec![0.25; 100_000];
        assert_eq!(add_noise(&x, 0.0, &mut rng).unwrap(), x);
        let sigma = 0.7;
        let y = add_noise(&x, sigma, &mut rng).unwrap();
        assert_eq!(y.len(), x.len());
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "{var}");
        assert!(add_noise(&x, -1.0, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn schedule_strictly_decreasing(
            sigma_min in 1e-4f64..1.0,
            span in 1.5f64..500.0,
            rho in 0.5f64..12.0,
            n in 2usize..200,
        ) {
            let cfg = DiffusionConfig { sigma_min, sigma_max: sigma_min * span, rho, ..Default::default() };
            let s = cfg.sigma_schedule(n).unwrap();
            prop_assert_eq!(s.len(), n);
            for w in s.windows(2) {
                prop_assert!(w[0] > w[1]);
            }
        }
    }
}
