use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::DenoiserConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named weight tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replace values from `other`, which must have the same names and shapes.
    pub fn assign(&mut self, other: ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint("parameter names differ from the model".into()));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "assign",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        self.tensors = other.tensors;
        Ok(())
    }
}

struct Init<'a, R: Rng + ?Sized> {
    store: ParamStore,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Init<'_, R> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(self.rng);
                z * std
            })
            .collect();
        self.store.push(name, Tensor::new(shape, data).expect("shape"));
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, bias: bool) {
        self.normal(format!("{prefix}.w"), &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt());
        if bias {
            self.store.push(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
        }
    }

    fn layernorm(&mut self, prefix: &str, d: usize) {
        self.store.push(format!("{prefix}.g"), Tensor::full(&[d], 1.0));
        self.store.push(format!("{prefix}.b"), Tensor::zeros(&[d]));
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for m in ["wq", "wk", "wv"] {
            self.normal(format!("{prefix}.{m}"), &[d, d], 1.0 / (d as f64).sqrt());
        }
        self.linear(&format!("{prefix}.o"), d, d, true);
    }

    fn mlp(&mut self, prefix: &str, d: usize, d_ff: usize) {
        self.linear(&format!("{prefix}.fc1"), d, d_ff, true);
        self.linear(&format!("{prefix}.fc2"), d_ff, d, true);
    }
}

/// Fresh weights for `config`, drawn from `rng` in a fixed order.
pub fn init_params<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> ParamStore {
    let d = config.d_model;
    let mut p = Init {
        store: ParamStore::default(),
        rng,
    };
    p.linear("in", 2 * config.n_components, d, true);
    p.linear("time.fc1", config.d_time, d, true);
    p.linear("time.fc2", d, d, true);
    for (stream, dim, used) in [
        ("spec", config.spec_dim, config.features.uses_spec()),
        ("sem", config.sem_dim, config.features.uses_sem()),
    ] {
        if !used {
            continue;
        }
        p.linear(&format!("{stream}.proj"), dim, d, true);
        p.normal(format!("{stream}.null"), &[1, d], 1.0);
        p.layernorm(&format!("{stream}.enc.ln1"), d);
        p.attention(&format!("{stream}.enc.attn"), d);
        p.layernorm(&format!("{stream}.enc.ln2"), d);
        p.mlp(&format!("{stream}.enc.mlp"), d, config.d_ff);
        p.layernorm(&format!("{stream}.enc.ln_out"), d);
        p.normal(format!("{stream}.align.w"), &[d, d], 1.0 / (d as f64).sqrt());
    }
    for l in 0..config.n_layers {
        let b = format!("dec{l}");
        p.layernorm(&format!("{b}.ln_self"), d);
        p.attention(&format!("{b}.self"), d);
        if config.features.uses_spec() {
            p.layernorm(&format!("{b}.ln_spec"), d);
            p.attention(&format!("{b}.spec"), d);
        }
        if config.features.uses_sem() {
            p.layernorm(&format!("{b}.ln_sem"), d);
            p.attention(&format!("{b}.sem"), d);
        }
        p.layernorm(&format!("{b}.ln_mlp"), d);
        p.mlp(&format!("{b}.mlp"), d, config.d_ff);
        p.normal(format!("{b}.film.w"), &[d, 4 * d], 0.1 / (d as f64).sqrt());
        p.store.push(format!("{b}.film.b"), Tensor::zeros(&[4 * d]));
    }
    p.layernorm("out.ln", d);
    p.normal("out.w".into(), &[d, 2 * config.n_components], 0.1 / (d as f64).sqrt());
    p.store.push("out.b", Tensor::zeros(&[2 * config.n_components]));
    p.store
}
