use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::events::N_COMPONENTS;

/// Which audio streams the network reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureSet {
    Spec,
    Sem,
    #[default]
    Both,
}

impl FeatureSet {
    pub fn uses_spec(self) -> bool {
        matches!(self, FeatureSet::Spec | FeatureSet::Both)
    }

    pub fn uses_sem(self) -> bool {
        matches!(self, FeatureSet::Sem | FeatureSet::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Spec => "spec",
            FeatureSet::Sem => "sem",
            FeatureSet::Both => "both",
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spec" | "S" => Ok(FeatureSet::Spec),
            "sem" | "M" => Ok(FeatureSet::Sem),
            "both" | "S+M" => Ok(FeatureSet::Both),
            other => Err(Error::Config(format!("unknown feature set `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutRates {
    pub p_complete_spec: f64,
    pub p_complete_sem: f64,
    pub p_partial: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates {
            p_complete_spec: 0.30,
            p_complete_sem: 0.15,
            p_partial: 0.5,
        }
    }
}

impl DropoutRates {
    pub fn none() -> Self {
        DropoutRates {
            p_complete_spec: 0.0,
            p_complete_sem: 0.0,
            p_partial: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_complete_spec", self.p_complete_spec),
            ("p_complete_sem", self.p_complete_sem),
            ("p_partial", self.p_partial),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    /// Grid length at inference; training crops may be shorter.
    pub n_frames: usize,
    pub n_components: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Width of the sinusoidal noise-level embedding.
    pub d_time: usize,
    pub spec_dim: usize,
    pub sem_dim: usize,
    pub features: FeatureSet,
    pub dropout: DropoutRates,
    /// Fixed `(mean, std)` applied to spectrogram features before projection.
    pub spec_norm: (f64, f64),
    pub sem_norm: (f64, f64),
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            n_frames: 500,
            n_components: N_COMPONENTS,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            d_time: 32,
            spec_dim: crate::synth::N_MELS,
            sem_dim: crate::synth::SEM_DIM,
            features: FeatureSet::Both,
            dropout: DropoutRates::default(),
            // log-mel of peak-normalized clips sits near its floor
            spec_norm: (-10.0, 1.6),
            sem_norm: (0.0, 0.5),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_frames", self.n_frames),
            ("n_components", self.n_components),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("d_time", self.d_time),
            ("spec_dim", self.spec_dim),
            ("sem_dim", self.sem_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) || !self.d_time.is_multiple_of(2) {
            return Err(Error::Config("d_model and d_time must be even".into()));
        }
        for (name, (m, sd)) in [("spec_norm", self.spec_norm), ("sem_norm", self.sem_norm)] {
            if !(m.is_finite() && sd > 0.0 && sd.is_finite()) {
                return Err(Error::Config(format!("{name} needs a finite mean and positive std")));
            }
        }
        self.dropout.validate()
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(section, "n_frames", self.n_frames);
        doc.set(section, "n_components", self.n_components);
        doc.set(section, "d_model", self.d_model);
        doc.set(section, "n_layers", self.n_layers);
        doc.set(section, "n_heads", self.n_heads);
        doc.set(section, "d_ff", self.d_ff);
        doc.set(section, "d_time", self.d_time);
        doc.set(section, "spec_dim", self.spec_dim);
        doc.set(section, "sem_dim", self.sem_dim);
        doc.set(section, "features", self.features.name());
        doc.set(section, "p_complete_spec", self.dropout.p_complete_spec);
        doc.set(section, "p_complete_sem", self.dropout.p_complete_sem);
        doc.set(section, "p_partial", self.dropout.p_partial);
        doc.set(section, "spec_mean", self.spec_norm.0);
        doc.set(section, "spec_std", self.spec_norm.1);
        doc.set(section, "sem_mean", self.sem_norm.0);
        doc.set(section, "sem_std", self.sem_norm.1);
    }

    /// Keys missing from `doc` keep their defaults.
    pub fn from_kv(doc: &KvDoc, section: &str) -> Result<Self> {
        let d = DenoiserConfig::default();
        let c = DenoiserConfig {
            n_frames: doc.parsed(section, "n_frames")?.unwrap_or(d.n_frames),
            n_components: doc.parsed(section, "n_components")?.unwrap_or(d.n_components),
            d_model: doc.parsed(section, "d_model")?.unwrap_or(d.d_model),
            n_layers: doc.parsed(section, "n_layers")?.unwrap_or(d.n_layers),
            n_heads: doc.parsed(section, "n_heads")?.unwrap_or(d.n_heads),
            d_ff: doc.parsed(section, "d_ff")?.unwrap_or(d.d_ff),
            d_time: doc.parsed(section, "d_time")?.unwrap_or(d.d_time),
            spec_dim: doc.parsed(section, "spec_dim")?.unwrap_or(d.spec_dim),
            sem_dim: doc.parsed(section, "sem_dim")?.unwrap_or(d.sem_dim),
            features: doc.parsed(section, "features")?.unwrap_or(d.features),
            dropout: DropoutRates {
                p_complete_spec: doc.parsed(section, "p_complete_spec")?.unwrap_or(d.dropout.p_complete_spec),
                p_complete_sem: doc.parsed(section, "p_complete_sem")?.unwrap_or(d.dropout.p_complete_sem),
                p_partial: doc.parsed(section, "p_partial")?.unwrap_or(d.dropout.p_partial),
            },
            spec_norm: (
                doc.parsed(section, "spec_mean")?.unwrap_or(d.spec_norm.0),
                doc.parsed(section, "spec_std")?.unwrap_or(d.spec_norm.1),
            ),
            sem_norm: (
                doc.parsed(section, "sem_mean")?.unwrap_or(d.sem_norm.0),
                doc.parsed(section, "sem_std")?.unwrap_or(d.sem_norm.1),
            ),
        };
        c.validate()?;
        Ok(c)
    }
}
