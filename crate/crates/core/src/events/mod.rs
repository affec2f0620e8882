//! Drum events: sparse note lists, the dense onset/velocity grid, component
//! remapping and file formats (Standard MIDI File, plain text).

mod grid;
pub mod midi;
mod remap;
pub mod text;

pub use grid::{denormalize_velocity, grid_from_notes, normalize_velocity, notes_from_grid, Grid};
pub use remap::{remap, ComponentMap};

use crate::error::{Error, Result};

/// Default frame rate: 10 ms frames.
pub const FRAME_RATE: f64 = 100.0;

/// Default onset decision threshold in model space, the midpoint of {-1, +1}.
pub const ONSET_THRESHOLD: f64 = 0.0;

/// The seven-component drum vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Drum {
    Kick = 0,
    Snare = 1,
    Tom = 2,
    HiHat = 3,
    Crash = 4,
    Ride = 5,
    Bell = 6,
}

impl Drum {
    pub const ALL: [Drum; 7] = [
        Drum::Kick,
        Drum::Snare,
        Drum::Tom,
        Drum::HiHat,
        Drum::Crash,
        Drum::Ride,
        Drum::Bell,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Drum> {
        Drum::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Drum::Kick => "kick",
            Drum::Snare => "snare",
            Drum::Tom => "tom",
            Drum::HiHat => "hihat",
            Drum::Crash => "crash",
            Drum::Ride => "ride",
            Drum::Bell => "bell",
        }
    }

    /// General MIDI percussion key.
    pub fn gm_pitch(self) -> u8 {
        match self {
            Drum::Kick => 36,
            Drum::Snare => 38,
            Drum::Tom => 48,
            Drum::HiHat => 42,
            Drum::Crash => 49,
            Drum::Ride => 51,
            Drum::Bell => 53,
        }
    }
}

pub const N_COMPONENTS: usize = Drum::ALL.len();

/// Pitch table for the seven-component vocabulary, indexed by component.
pub fn gm_pitch_table() -> Vec<u8> {
    Drum::ALL.iter().map(|d| d.gm_pitch()).collect()
}

/// One drum hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Note {
    pub time: f64,
    pub component: usize,
    pub velocity: u8,
}

impl Note {
    pub fn new(time: f64, component: usize, velocity: u8) -> Self {
        Note {
            time,
            component,
            velocity,
        }
    }
}

/// Drum events sorted by `(time, component)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoteList {
    notes: Vec<Note>,
}

impl NoteList {
    pub fn new(mut notes: Vec<Note>) -> Result<Self> {
        for (i, n) in notes.iter().enumerate() {
            if !n.time.is_finite() || n.time < 0.0 {
                return Err(Error::invalid(format!("note {i} has invalid time {}", n.time)));
            }
            if n.velocity > 127 {
                return Err(Error::invalid(format!(
                    "note {i} has velocity {} > 127",
                    n.velocity
                )));
            }
        }
        sort_notes(&mut notes);
        Ok(NoteList { notes })
    }

    pub fn empty() -> Self {
        NoteList::default()
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Note> {
        self.notes.iter()
    }

    pub fn into_vec(self) -> Vec<Note> {
        self.notes
    }

    /// Notes of one component, in time order.
    pub fn component(&self, component: usize) -> impl Iterator<Item = &Note> {
        self.notes.iter().filter(move |n| n.component == component)
    }

    /// Notes with `start <= time < end`.
    pub fn window(&self, start: f64, end: f64) -> NoteList {
        NoteList {
            notes: self
                .notes
                .iter()
                .filter(|n| n.time >= start && n.time < end)
                .copied()
                .collect(),
        }
    }

    /// Largest component index plus one, or 0 for an empty list.
    pub fn component_span(&self) -> usize {
        self.notes.iter().map(|n| n.component + 1).max().unwrap_or(0)
    }
}

impl<'a> IntoIterator for &'a NoteList {
    type Item = &'a Note;
    type IntoIter = std::slice::Iter<'a, Note>;

    fn into_iter(self) -> Self::IntoIter {
        self.notes.iter()
    }
}

pub(crate) fn sort_notes(notes: &mut [Note]) {
    notes.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.component.cmp(&b.component))
            .then(b.velocity.cmp(&a.velocity))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notelist_sorts_by_time_then_component() {
        let l = NoteList::new(vec![
            Note::new(0.5, 1, 10),
            Note::new(0.1, 3, 20),
            Note::new(0.1, 0, 30),
        ])
        .unwrap();
        let order: Vec<_> = l.iter().map(|n| (n.time, n.component)).collect();
        assert_eq!(order, vec![(0.1, 0), (0.1, 3), (0.5, 1)]);
    }

    #[test]
    fn notelist_rejects_bad_entries() {
        assert!(NoteList::new(vec![Note::new(-0.1, 0, 10)]).is_err());
        assert!(NoteList::new(vec![Note::new(f64::NAN, 0, 10)]).is_err());
        assert!(NoteList::new(vec![Note::new(0.0, 0, 128)]).is_err());
    }

    #[test]
    fn gm_table_matches_vocabulary() {
        assert_eq!(gm_pitch_table(), vec![36, 38, 48, 42, 49, 51, 53]);
    }
}
