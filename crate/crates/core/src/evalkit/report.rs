use std::fmt::Write as _;

use rayon::prelude::*;

use super::{score_clip, ClipScores, Counts, EvalConfig, Scores};
use crate::error::{Error, Result};
use crate::events::{remap, ComponentMap, Drum, NoteList, N_COMPONENTS};

pub const CSV_HEADER: &str = "clip,component,tp,fp,fn,precision,recall,f1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Onset,
    Velocity,
}

/// Corpus scores: micro-averaged totals plus the per-clip table.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub names: Vec<String>,
    pub clip_ids: Vec<String>,
    pub clips: Vec<ClipScores>,
    pub onset: Scores,
    pub velocity: Scores,
}

/// Display names for the scored vocabulary.
pub fn component_names(map: Option<&ComponentMap>) -> Vec<String> {
    let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    match map {
        None => Drum::ALL.iter().map(|d| d.name().to_string()).collect(),
        Some(m) if *m == ComponentMap::five_piece() => {
            owned(&["kick", "snare", "tom", "hihat", "cymbal"])
        }
        Some(m) if *m == ComponentMap::three_piece() => owned(&["kick", "snare", "other"]),
        Some(m) if *m == ComponentMap::identity(N_COMPONENTS) => component_names(None),
        Some(m) => (0..m.n_targets()).map(|i| format!("c{i}")).collect(),
    }
}

/// Score paired clips, optionally relabelling both sides first.
pub fn evaluate(
    refs: &[NoteList],
    ests: &[NoteList],
    map: Option<&ComponentMap>,
    config: &EvalConfig,
) -> Result<Report> {
    config.validate()?;
    if refs.len() != ests.len() {
        return Err(Error::invalid(format!(
            "reference has {} clips but estimate has {}",
            refs.len(),
            ests.len()
        )));
    }
    let clips: Vec<ClipScores> = refs
        .par_iter()
        .zip(ests.par_iter())
        .map(|(r, e)| -> Result<ClipScores> {
            Ok(match map {
                Some(m) => score_clip(&remap(r, m)?, &remap(e, m)?, config),
                None => score_clip(r, e, config),
            })
        })
        .collect::<Result<_>>()?;
    let mut names = component_names(map);
    let mut onset = Scores {
        per_component: vec![Counts::default(); names.len()],
        ..Scores::default()
    };
    let mut velocity = onset.clone();
    for c in &clips {
        onset.add(&c.onset);
        velocity.add(&c.velocity);
    }
    for i in names.len()..onset.per_component.len() {
        names.push(format!("c{i}"));
    }
    Ok(Report {
        names,
        clip_ids: (0..clips.len()).map(|i| i.to_string()).collect(),
        clips,
        onset,
        velocity,
    })
}

fn row(out: &mut String, clip: &str, comp: &str, c: &Counts) {
    let _ = writeln!(
        out,
        "{clip},{comp},{},{},{},{:.6},{:.6},{:.6}",
        c.tp,
        c.fp,
        c.fn_,
        c.precision(),
        c.recall(),
        c.f1()
    );
}

impl Report {
    fn pick<'a>(&self, s: &'a ClipScores, metric: Metric) -> &'a Scores {
        match metric {
            Metric::Onset => &s.onset,
            Metric::Velocity => &s.velocity,
        }
    }

    pub fn total(&self, metric: Metric) -> &Scores {
        match metric {
            Metric::Onset => &self.onset,
            Metric::Velocity => &self.velocity,
        }
    }

    /// Per clip and component rows, then pooled rows under clip `all`.
    pub fn csv(&self, metric: Metric) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for (id, clip) in self.clip_ids.iter().zip(&self.clips) {
            let s = self.pick(clip, metric);
            for (c, name) in self.names.iter().enumerate() {
                row(&mut out, id, name, &s.component(c));
            }
            row(&mut out, id, "all", &s.total);
        }
        let s = self.total(metric);
        for (c, name) in self.names.iter().enumerate() {
            row(&mut out, "all", name, &s.component(c));
        }
        row(&mut out, "all", "all", &s.total);
        out
    }

    /// Fixed-width table of pooled scores per component.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9} {:>11}",
            "component", "ref", "est", "tp", "onset P", "onset R", "onset F1", "velocity F1"
        );
        let line = |out: &mut String, name: &str, o: &Counts, v: &Counts| {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>11.4}",
                name,
                o.tp + o.fn_,
                o.tp + o.fp,
                o.tp,
                o.precision(),
                o.recall(),
                o.f1(),
                v.f1()
            );
        };
        for (c, name) in self.names.iter().enumerate() {
            line(&mut out, name, &self.onset.component(c), &self.velocity.component(c));
        }
        line(&mut out, "all", &self.onset.total, &self.velocity.total);
        out
    }
}
