use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cond::{ConditionBundle, SPEC_RATE};
use super::config::DenoiserConfig;
use super::params::{init_params, ParamStore};
use crate::diffusion::{precondition, Denoiser, DiffusionConfig, RawNetwork};
use crate::error::{Error, Result};
use crate::events::{Grid, FRAME_RATE};
use crate::tensor::{Tape, Tensor, Var};

/// Switches that alter the forward pass for testing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Force every FiLM layer to `γ = 1, β = 0`.
    pub film_identity: bool,
    /// Leave out the sinusoidal position encodings.
    pub no_positional: bool,
}

/// Transformer denoiser over grid frames, cross-attending to the
/// spectrogram and semantic streams, modulated by the noise level via FiLM.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub params: ParamStore,
    pub diagnostics: Diagnostics,
}

/// Parameters recorded on a tape, in store order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Frame positions, in 10 ms units, of the three token sequences.
struct Times {
    grid: Vec<f64>,
    spec: Vec<f64>,
    sem: Vec<f64>,
}

fn sinusoid(positions: &[f64], d: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * d);
    for &p in positions {
        for k in 0..d / 2 {
            let w = 10_000f64.powf(-((2 * k) as f64) / d as f64);
            data.push((p * w).sin());
            data.push((p * w).cos());
        }
    }
    Tensor::new(&[positions.len(), d], data).expect("shape")
}

fn noise_embedding(c_noise: f64, d: usize) -> Tensor {
    let half = d / 2;
    let mut data = Vec::with_capacity(d);
    for k in 0..half {
        let w = 100f64.powf(k as f64 / (half.max(2) - 1) as f64);
        data.push((c_noise * w).sin());
        data.push((c_noise * w).cos());
    }
    Tensor::new(&[1, d], data).expect("shape")
}

/// Per-head distance penalty `-m_h·|t_q - t_k|`, distances in frames.
/// Slopes run geometrically from 1 (a few frames) to 1/64 (about a bar).
fn distance_bias(tq: &[f64], tk: &[f64], n_heads: usize) -> Vec<Tensor> {
    (0..n_heads)
        .map(|h| {
            let slope = 64f64.powf(-(h as f64) / (n_heads.max(2) - 1) as f64);
            let data = tq
                .iter()
                .flat_map(|&a| tk.iter().map(move |&b| -slope * (a - b).abs()))
                .collect();
            Tensor::new(&[tq.len(), tk.len()], data).expect("shape")
        })
        .collect()
}

/// Linear interpolation from key times onto query times, clamped at the
/// ends, as an `(nq, nk)` row-stochastic matrix.
fn interpolation(tq: &[f64], tk: &[f64]) -> Tensor {
    let nk = tk.len();
    let mut data = vec![0.0; tq.len() * nk];
    for (i, &t) in tq.iter().enumerate() {
        let row = &mut data[i * nk..(i + 1) * nk];
        let k = tk.partition_point(|&x| x <= t);
        if k == 0 {
            row[0] = 1.0;
        } else if k == nk {
            row[nk - 1] = 1.0;
        } else {
            let w = (t - tk[k - 1]) / (tk[k] - tk[k - 1]);
            row[k - 1] = 1.0 - w;
            row[k] = w;
        }
    }
    Tensor::new(&[tq.len(), nk], data).expect("shape")
}

impl Model {
    pub fn new(config: DenoiserConfig, diffusion: DiffusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        diffusion.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, &mut rng);
        Ok(Model {
            config,
            diffusion,
            params,
            diagnostics: Diagnostics::default(),
        })
    }

    /// Record every weight on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    fn check_cond(&self, cond: &ConditionBundle) -> Result<()> {
        let c = &self.config;
        if c.features.uses_spec() && cond.spec_dim() != c.spec_dim {
            return Err(Error::Shape {
                op: "spec features",
                lhs: vec![cond.n_spec_frames(), cond.spec_dim()],
                rhs: vec![cond.n_spec_frames(), c.spec_dim],
            });
        }
        if c.features.uses_sem() && cond.sem_dim() != c.sem_dim {
            return Err(Error::Shape {
                op: "sem features",
                lhs: vec![cond.n_sem_frames(), cond.sem_dim()],
                rhs: vec![cond.n_sem_frames(), c.sem_dim],
            });
        }
        if cond.n_spec_frames() == 0 || (c.features.uses_sem() && cond.n_sem_frames() == 0) {
            return Err(Error::invalid("conditioning stream has no frames"));
        }
        Ok(())
    }

    fn times(cond: &ConditionBundle, n: usize) -> Times {
        Times {
            grid: (0..n).map(|i| i as f64).collect(),
            spec: (0..cond.n_spec_frames()).map(|j| cond.spec_time(j) * SPEC_RATE).collect(),
            sem: (0..cond.n_sem_frames()).map(|j| cond.sem_time(j) * SPEC_RATE).collect(),
        }
    }

    /// `F(x_scaled, c_noise, cond)` as an `(N, 2·D)` tape value.
    ///
    /// `spec`/`sem` carry the feature matrices; pass tape params to take
    /// gradients with respect to the features themselves.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x_scaled: Var,
        c_noise: f64,
        cond: &ConditionBundle,
        spec: Var,
        sem: Var,
    ) -> Result<Var> {
        self.check_cond(cond)?;
        let c = &self.config;
        let d = c.d_model;
        let n = tape.shape(x_scaled)[0];
        if tape.shape(x_scaled) != [n, 2 * c.n_components] || n != cond.n_spec_frames() {
            return Err(Error::Shape {
                op: "denoiser input",
                lhs: tape.shape(x_scaled).to_vec(),
                rhs: vec![cond.n_spec_frames(), 2 * c.n_components],
            });
        }
        let p = |name: &str| -> Var {
            let i = self
                .params
                .index_of(name)
                .unwrap_or_else(|| panic!("missing parameter {name}"));
            bound.vars[i]
        };
        let times = Self::times(cond, n);
        let origin = cond.start_time * SPEC_RATE;
        let positional = |tape: &mut Tape, h: Var, local: &[f64]| -> Result<Var> {
            if self.diagnostics.no_positional {
                return Ok(h);
            }
            let abs: Vec<f64> = local.iter().map(|t| t + origin).collect();
            let pe = tape.constant(sinusoid(&abs, d));
            tape.add(h, pe)
        };

        // noise-level embedding
        let e = tape.constant(noise_embedding(c_noise, c.d_time));
        let t = linear(tape, e, p("time.fc1.w"), Some(p("time.fc1.b")))?;
        let t = tape.gelu(t);
        let t = linear(tape, t, p("time.fc2.w"), Some(p("time.fc2.b")))?;
        let temb = tape.gelu(t);

        // streams
        let mut streams: Vec<(&str, Var, Vec<Var>)> = Vec::new();
        let mut stream_times: Vec<&[f64]> = Vec::new();
        for (name, feats, valid, tk, used, (mean, std)) in [
            ("spec", spec, &cond.spec_valid, &times.spec, c.features.uses_spec(), c.spec_norm),
            ("sem", sem, &cond.sem_valid, &times.sem, c.features.uses_sem(), c.sem_norm),
        ] {
            if !used {
                continue;
            }
            let feats = tape.add_scalar(feats, -mean);
            let feats = tape.scale(feats, 1.0 / std);
            let null = p(&format!("{name}.null"));
            let h = if valid.iter().any(|&v| v) {
                let proj = linear(tape, feats, p(&format!("{name}.proj.w")), Some(p(&format!("{name}.proj.b"))))?;
                let table = tape.concat_rows(&[proj, null])?;
                let rows: Vec<usize> = valid
                    .iter()
                    .enumerate()
                    .map(|(j, &ok)| if ok { j } else { valid.len() })
                    .collect();
                tape.gather_rows(table, &rows)?
            } else {
                tape.gather_rows(null, &vec![0; valid.len()])?
            };
            let h = positional(tape, h, tk)?;
            let bias = self.bias_vars(tape, tk, tk);
            let prefix = format!("{name}.enc");
            let y = layernorm(tape, h, &p, &format!("{prefix}.ln1"))?;
            let a = self.attention(tape, &p, &format!("{prefix}.attn"), y, y, &bias)?;
            let h = tape.add(h, a)?;
            let y = layernorm(tape, h, &p, &format!("{prefix}.ln2"))?;
            let m = mlp(tape, &p, &format!("{prefix}.mlp"), y)?;
            let h = tape.add(h, m)?;
            let h = layernorm(tape, h, &p, &format!("{prefix}.ln_out"))?;
            let cross = self.bias_vars(tape, &times.grid, tk);
            streams.push((name, h, cross));
            stream_times.push(tk);
        }

        // decoder
        let h = linear(tape, x_scaled, p("in.w"), Some(p("in.b")))?;
        let mut h = positional(tape, h, &times.grid)?;
        // each stream, resampled onto grid frames, also enters additively
        for ((name, kv, _), tk) in streams.iter().zip(stream_times.iter()) {
            if tk.is_empty() {
                continue;
            }
            let interp = tape.constant(interpolation(&times.grid, tk));
            let a = tape.matmul(interp, *kv)?;
            let a = tape.matmul(a, p(&format!("{name}.align.w")))?;
            h = tape.add(h, a)?;
        }
        let self_bias = self.bias_vars(tape, &times.grid, &times.grid);
        for l in 0..c.n_layers {
            let b = format!("dec{l}");
            let film = if self.diagnostics.film_identity {
                None
            } else {
                Some(linear(tape, temb, p(&format!("{b}.film.w")), Some(p(&format!("{b}.film.b"))))?)
            };
            let modulate = |tape: &mut Tape, y: Var, slot: usize| -> Result<Var> {
                let Some(f) = film else { return Ok(y) };
                let gamma = tape.slice_cols(f, 2 * slot * d, d)?;
                let gamma = tape.add_scalar(gamma, 1.0);
                let beta = tape.slice_cols(f, (2 * slot + 1) * d, d)?;
                let y = tape.mul_row(y, gamma)?;
                tape.add_row(y, beta)
            };

            let y = layernorm(tape, h, &p, &format!("{b}.ln_self"))?;
            let y = modulate(tape, y, 0)?;
            let a = self.attention(tape, &p, &format!("{b}.self"), y, y, &self_bias)?;
            h = tape.add(h, a)?;
            for (name, kv, bias) in &streams {
                let y = layernorm(tape, h, &p, &format!("{b}.ln_{name}"))?;
                let a = self.attention(tape, &p, &format!("{b}.{name}"), y, *kv, bias)?;
                h = tape.add(h, a)?;
            }
            let y = layernorm(tape, h, &p, &format!("{b}.ln_mlp"))?;
            let y = modulate(tape, y, 1)?;
            let m = mlp(tape, &p, &format!("{b}.mlp"), y)?;
            h = tape.add(h, m)?;
        }
        let y = layernorm(tape, h, &p, "out.ln")?;
        linear(tape, y, p("out.w"), Some(p("out.b")))
    }

    fn bias_vars(&self, tape: &mut Tape, tq: &[f64], tk: &[f64]) -> Vec<Var> {
        distance_bias(tq, tk, self.config.n_heads)
            .into_iter()
            .map(|t| tape.constant(t))
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape,
        p: &dyn Fn(&str) -> Var,
        prefix: &str,
        xq: Var,
        xkv: Var,
        bias: &[Var],
    ) -> Result<Var> {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let q = tape.matmul(xq, p(&format!("{prefix}.wq")))?;
        let k = tape.matmul(xkv, p(&format!("{prefix}.wk")))?;
        let v = tape.matmul(xkv, p(&format!("{prefix}.wv")))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for (h, &b) in bias.iter().enumerate().take(heads) {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.matmul_nt(qh, kh)?;
            let a = tape.softmax_biased(s, scale, b)?;
            outs.push(tape.matmul(a, vh)?);
        }
        let o = tape.concat_cols(&outs)?;
        linear(tape, o, p(&format!("{prefix}.o.w")), Some(p(&format!("{prefix}.o.b"))))
    }

    /// Run `F` without recording gradients.
    pub fn raw_forward(&self, x_scaled: &Grid, c_noise: f64, cond: &ConditionBundle) -> Result<Grid> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let n = x_scaled.n_frames();
        let x = tape.constant(Tensor::new(&[n, 2 * x_scaled.n_components()], x_scaled.values().to_vec())?);
        let spec = tape.constant(cond.spec.clone());
        let sem = tape.constant(cond.sem.clone());
        let out = self.forward_tape(&mut tape, &bound, x, c_noise, cond, spec, sem)?;
        Grid::from_values(n, x_scaled.n_components(), FRAME_RATE, tape.value(out).data().to_vec())
    }

    /// `D(x_noisy; σ, cond)`, the preconditioned clean-grid estimate.
    pub fn forward(&self, x_noisy: &Grid, sigma: f64, cond: &ConditionBundle) -> Result<Grid> {
        precondition(self, &self.diffusion.preconditioning(), x_noisy, sigma, cond)
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

fn layernorm(tape: &mut Tape, x: Var, p: &dyn Fn(&str) -> Var, prefix: &str) -> Result<Var> {
    tape.layernorm(x, p(&format!("{prefix}.g")), p(&format!("{prefix}.b")))
}

fn mlp(tape: &mut Tape, p: &dyn Fn(&str) -> Var, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, x, p(&format!("{prefix}.fc1.w")), Some(p(&format!("{prefix}.fc1.b"))))?;
    let h = tape.gelu(h);
    linear(tape, h, p(&format!("{prefix}.fc2.w")), Some(p(&format!("{prefix}.fc2.b"))))
}

impl RawNetwork<ConditionBundle> for Model {
    fn grid_shape(&self, cond: &ConditionBundle) -> Result<(usize, usize)> {
        self.check_cond(cond)?;
        Ok((cond.n_spec_frames(), self.config.n_components))
    }

    fn raw(&self, x_scaled: &Grid, c_noise: f64, cond: &ConditionBundle) -> Result<Grid> {
        self.raw_forward(x_scaled, c_noise, cond)
    }
}

impl Denoiser<ConditionBundle> for Model {
    fn grid_shape(&self, cond: &ConditionBundle) -> Result<(usize, usize)> {
        RawNetwork::grid_shape(self, cond)
    }

    fn denoise(&self, x: &Grid, sigma: f64, cond: &ConditionBundle) -> Result<Grid> {
        self.forward(x, sigma, cond)
    }
}
