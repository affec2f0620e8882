//! Note-level scoring: tolerance matching, onset and velocity F1,
//! per-component breakdown and corpus aggregation.

mod matching;
mod report;

pub use matching::{hopcroft_karp, match_notes, within, MatchResult};
pub use report::{component_names, evaluate, Metric, Report, CSV_HEADER};

use crate::events::NoteList;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const DEFAULT_VEL_TOLERANCE: f64 = 0.1;

/// How matched pairs are judged on velocity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VelocityRule {
    /// Least-squares affine map of estimated onto reference velocities,
    /// fitted over the matched pairs of a clip.
    #[default]
    Rescale,
    /// Compare velocities as they are.
    Raw,
}

impl std::str::FromStr for VelocityRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescale" => Ok(VelocityRule::Rescale),
            "raw" => Ok(VelocityRule::Raw),
            other => Err(Error::Config(format!("unknown velocity rule `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Onset window in seconds, inclusive.
    pub tolerance: f64,
    /// Fraction of the 0..127 velocity range.
    pub vel_tolerance: f64,
    pub velocity_rule: VelocityRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance: DEFAULT_TOLERANCE,
            vel_tolerance: DEFAULT_VEL_TOLERANCE,
            velocity_rule: VelocityRule::Rescale,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if !(self.vel_tolerance >= 0.0 && self.vel_tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "velocity tolerance must be >= 0, got {}",
                self.vel_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Pooled counts plus one entry per component.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scores {
    pub total: Counts,
    pub per_component: Vec<Counts>,
}

impl Scores {
    pub fn precision(&self) -> f64 {
        self.total.precision()
    }

    pub fn recall(&self) -> f64 {
        self.total.recall()
    }

    pub fn f1(&self) -> f64 {
        self.total.f1()
    }

    pub fn component(&self, c: usize) -> Counts {
        self.per_component.get(c).copied().unwrap_or_default()
    }

    pub fn add(&mut self, other: &Scores) {
        self.total.add(other.total);
        if self.per_component.len() < other.per_component.len() {
            self.per_component.resize(other.per_component.len(), Counts::default());
        }
        for (a, b) in self.per_component.iter_mut().zip(&other.per_component) {
            a.add(*b);
        }
    }

    /// Build from the matched-pair mask: `ok[k]` says whether pair `k`
    /// counts as a true positive.
    fn from_match(reference: &NoteList, estimate: &NoteList, m: &MatchResult, ok: &[bool]) -> Scores {
        let span = reference.component_span().max(estimate.component_span());
        let mut per = vec![Counts::default(); span];
        for n in reference {
            per[n.component].fn_ += 1;
        }
        for n in estimate {
            per[n.component].fp += 1;
        }
        for (&(i, _), &good) in m.pairs.iter().zip(ok) {
            if good {
                let c = &mut per[reference.notes()[i].component];
                c.tp += 1;
                c.fn_ -= 1;
                c.fp -= 1;
            }
        }
        let mut total = Counts::default();
        for c in &per {
            total.add(*c);
        }
        Scores {
            total,
            per_component: per,
        }
    }
}

/// Onset precision, recall and F1.
pub fn onset_scores(reference: &NoteList, estimate: &NoteList, tolerance: f64) -> Scores {
    let m = match_notes(reference, estimate, tolerance);
    let ok = vec![true; m.pairs.len()];
    Scores::from_match(reference, estimate, &m, &ok)
}

/// Which matched pairs also agree on velocity.
pub fn velocity_mask(
    reference: &NoteList,
    estimate: &NoteList,
    m: &MatchResult,
    config: &EvalConfig,
) -> Vec<bool> {
    let ys: Vec<f64> = m.pairs.iter().map(|&(i, _)| reference.notes()[i].velocity as f64).collect();
    let xs: Vec<f64> = m.pairs.iter().map(|&(_, j)| estimate.notes()[j].velocity as f64).collect();
    let predicted: Vec<f64> = match config.velocity_rule {
        VelocityRule::Raw => xs.clone(),
        VelocityRule::Rescale => {
            let (slope, intercept) = affine_fit(&xs, &ys);
            xs.iter().map(|x| slope * x + intercept).collect()
        }
    };
    let limit = config.vel_tolerance * 127.0;
    predicted
        .iter()
        .zip(&ys)
        .map(|(p, y)| (p - y).abs() <= limit + 1e-9)
        .collect()
}

/// Least-squares `y ≈ slope·x + intercept`. With no spread in `x` the fit
/// predicts the mean of `y`.
pub fn affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (1.0, 0.0);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 1e-12 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Onset and velocity scores for one clip.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipScores {
    pub onset: Scores,
    pub velocity: Scores,
}

pub fn score_clip(reference: &NoteList, estimate: &NoteList, config: &EvalConfig) -> ClipScores {
    let m = match_notes(reference, estimate, config.tolerance);
    let all = vec![true; m.pairs.len()];
    let vel = velocity_mask(reference, estimate, &m, config);
    ClipScores {
        onset: Scores::from_match(reference, estimate, &m, &all),
        velocity: Scores::from_match(reference, estimate, &m, &vel),
    }
}

/// Velocity precision, recall and F1: a match counts only if its
/// velocity also agrees.
pub fn velocity_scores(reference: &NoteList, estimate: &NoteList, config: &EvalConfig) -> Scores {
    score_clip(reference, estimate, config).velocity
}
