use super::{sort_notes, Note, NoteList};
use crate::error::{Error, Result};

/// Relabels source components onto a smaller vocabulary. `None` drops the
/// component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentMap {
    table: Vec<Option<usize>>,
}

impl ComponentMap {
    /// Checks totality is implied by construction; targets must form a
    /// contiguous `0..n` range.
    pub fn new(table: Vec<Option<usize>>) -> Result<Self> {
        let n_targets = table.iter().flatten().map(|t| t + 1).max().unwrap_or(0);
        for t in 0..n_targets {
            if !table.contains(&Some(t)) {
                return Err(Error::invalid(format!(
                    "component map targets are not contiguous: {t} is unused"
                )));
            }
        }
        Ok(ComponentMap { table })
    }

    pub fn identity(n: usize) -> Self {
        ComponentMap {
            table: (0..n).map(Some).collect(),
        }
    }

    /// kick, snare, tom, hi-hat, cymbals (crash/ride/bell merged).
    pub fn five_piece() -> Self {
        ComponentMap {
            table: vec![Some(0), Some(1), Some(2), Some(3), Some(4), Some(4), Some(4)],
        }
    }

    /// kick, snare, everything else.
    pub fn three_piece() -> Self {
        ComponentMap {
            table: vec![Some(0), Some(1), Some(2), Some(2), Some(2), Some(2), Some(2)],
        }
    }

    /// Preset by name: `none`, `7`, `5` or `3`.
    pub fn preset(name: &str) -> Result<Option<Self>> {
        match name {
            "none" | "7" => Ok(None),
            "5" => Ok(Some(Self::five_piece())),
            "3" => Ok(Some(Self::three_piece())),
            other => Err(Error::Config(format!("unknown remap preset `{other}`"))),
        }
    }

    /// Parse `src:dst` pairs, e.g. `0:0,1:1,2:-,3:2`. `-` drops the source.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (src, dst) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad map entry `{item}`")))?;
            let src: usize = src
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad source index in `{item}`")))?;
            let dst = match dst.trim() {
                "-" => None,
                d => Some(
                    d.parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad target index in `{item}`")))?,
                ),
            };
            pairs.push((src, dst));
        }
        let n = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
        let mut table = vec![None; n];
        let mut seen = vec![false; n];
        for (src, dst) in pairs {
            if seen[src] {
                return Err(Error::Config(format!("source {src} mapped twice")));
            }
            seen[src] = true;
            table[src] = dst;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("source {missing} has no entry")));
        }
        Self::new(table)
    }

    pub fn n_sources(&self) -> usize {
        self.table.len()
    }

    pub fn n_targets(&self) -> usize {
        self.table.iter().flatten().map(|t| t + 1).max().unwrap_or(0)
    }

    pub fn target(&self, source: usize) -> Option<usize> {
        self.table.get(source).copied().flatten()
    }
}

/// Relabel components. Hits merged onto the same target at the same time
/// keep the maximum velocity; dropped components disappear.
pub fn remap(notes: &NoteList, map: &ComponentMap) -> Result<NoteList> {
    let mut out: Vec<Note> = Vec::with_capacity(notes.len());
    for n in notes {
        if n.component >= map.n_sources() {
            return Err(Error::invalid(format!(
                "component {} not covered by a {}-entry map",
                n.component,
                map.n_sources()
            )));
        }
        if let Some(c) = map.target(n.component) {
            out.push(Note::new(n.time, c, n.velocity));
        }
    }
    sort_notes(&mut out);
    // sorted with the loudest first among equal (time, component)
    out.dedup_by(|later, earlier| {
        later.component == earlier.component && (later.time - earlier.time).abs() < 1e-9
    });
    Ok(NoteList { notes: out })
}
