//! Line-oriented note format: `time_sec component velocity`, one note per
//! line. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;

use super::{Note, NoteList};
use crate::error::{Error, Result};

pub fn to_text(notes: &NoteList) -> String {
    let mut s = String::new();
    for n in notes {
        let _ = writeln!(s, "{:.6} {} {}", n.time, n.component, n.velocity);
    }
    s
}

pub fn from_text(text: &str) -> Result<NoteList> {
    let mut notes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("line {}: expected `time component velocity`, got `{line}`", lineno + 1));
        let mut parts = line.split_whitespace();
        let time: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let component: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let velocity: u8 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        notes.push(Note::new(time, component, velocity));
    }
    NoteList::new(notes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let l = from_text("# header\n0.250000 1 90\n\n0.000 0 127 # kick\n").unwrap();
        assert_eq!(l.notes(), &[Note::new(0.0, 0, 127), Note::new(0.25, 1, 90)]);
        assert_eq!(from_text(&to_text(&l)).unwrap(), l);
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_text("0.1 2").is_err());
        assert!(from_text("0.1 2 300").is_err());
        assert!(from_text("0.1 2 3 4").is_err());
        assert!(from_text("x 2 3").is_err());
    }
}
