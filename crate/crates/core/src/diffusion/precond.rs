use super::sampler::Denoiser;
use crate::error::{Error, Result};
use crate::events::Grid;

/// Scalings that keep network input and output near unit variance at every
/// noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preconditioning {
    pub sigma_data: f64,
}

impl Preconditioning {
    pub fn new(sigma_data: f64) -> Self {
        Preconditioning { sigma_data }
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (sigma * sigma + sd2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        sigma * self.sigma_data / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        1.0 / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_noise(&self, sigma: f64) -> f64 {
        sigma.ln() / 4.0
    }
}

/// The unscaled network `F(c_in·x, c_noise, cond)`.
pub trait RawNetwork<C: ?Sized> {
    /// `(frames, components)` of the grid this network produces for `cond`.
    fn grid_shape(&self, cond: &C) -> Result<(usize, usize)>;

    fn raw(&self, x_scaled: &Grid, c_noise: f64, cond: &C) -> Result<Grid>;
}

/// `D(x; σ) = c_skip(σ)·x + c_out(σ)·F(c_in(σ)·x, c_noise(σ))`.
pub fn precondition<C: ?Sized, N: RawNetwork<C> + ?Sized>(
    net: &N,
    pre: &Preconditioning,
    x_noisy: &Grid,
    sigma: f64,
    cond: &C,
) -> Result<Grid> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("noise level must be > 0, got {sigma}")));
    }
    let c_in = pre.c_in(sigma);
    let mut scaled = x_noisy.clone();
    scaled.values_mut().iter_mut().for_each(|v| *v *= c_in);
    let f = net.raw(&scaled, pre.c_noise(sigma), cond)?;
    if f.shape() != x_noisy.shape() {
        return Err(Error::Shape {
            op: "precondition",
            lhs: x_noisy.shape().to_vec(),
            rhs: f.shape().to_vec(),
        });
    }
    let (c_skip, c_out) = (pre.c_skip(sigma), pre.c_out(sigma));
    let mut out = x_noisy.clone();
    for (o, fv) in out.values_mut().iter_mut().zip(f.values()) {
        *o = c_skip * *o + c_out * fv;
    }
    Ok(out)
}

/// Wraps a raw network into a denoiser.
pub struct Preconditioned<N> {
    pub net: N,
    pub pre: Preconditioning,
}

impl<C: ?Sized, N: RawNetwork<C>> Denoiser<C> for Preconditioned<N> {
    fn grid_shape(&self, cond: &C) -> Result<(usize, usize)> {
        self.net.grid_shape(cond)
    }

    fn denoise(&self, x: &Grid, sigma: f64, cond: &C) -> Result<Grid> {
        precondition(&self.net, &self.pre, x, sigma, cond)
    }
}
