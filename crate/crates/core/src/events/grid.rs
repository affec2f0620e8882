use super::{sort_notes, Note, NoteList};
use crate::error::{Error, Result};

/// Dense onset/velocity array of shape `(frames, components, 2)` in model
/// space. Channel 0 is onset, channel 1 is velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n_frames: usize,
    n_components: usize,
    frame_rate: f64,
    values: Vec<f64>,
}

impl Grid {
    /// A silent grid: every value is -1.
    pub fn silent(n_frames: usize, n_components: usize, frame_rate: f64) -> Self {
        Grid {
            n_frames,
            n_components,
            frame_rate,
            values: vec![-1.0; n_frames * n_components * 2],
        }
    }

    pub fn from_values(
        n_frames: usize,
        n_components: usize,
        frame_rate: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = n_frames * n_components * 2;
        if values.len() != expected {
            return Err(Error::Shape {
                op: "grid",
                lhs: vec![n_frames, n_components, 2],
                rhs: vec![values.len()],
            });
        }
        Ok(Grid {
            n_frames,
            n_components,
            frame_rate,
            values,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_frames, self.n_components, 2]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    fn idx(&self, frame: usize, component: usize, channel: usize) -> usize {
        (frame * self.n_components + component) * 2 + channel
    }

    pub fn onset(&self, frame: usize, component: usize) -> f64 {
        self.values[self.idx(frame, component, 0)]
    }

    pub fn velocity(&self, frame: usize, component: usize) -> f64 {
        self.values[self.idx(frame, component, 1)]
    }

    pub fn set(&mut self, frame: usize, component: usize, onset: f64, velocity: f64) {
        let i = self.idx(frame, component, 0);
        self.values[i] = onset;
        self.values[i + 1] = velocity;
    }

    /// Clamp every value into `[-1, 1]`.
    pub fn clamp_model_range(&mut self) {
        for v in &mut self.values {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    /// Frames `[start, start + len)` as a new grid.
    pub fn crop(&self, start: usize, len: usize) -> Result<Grid> {
        if start + len > self.n_frames {
            return Err(Error::invalid(format!(
                "crop [{start}, {}) exceeds {} frames",
                start + len,
                self.n_frames
            )));
        }
        let row = self.n_components * 2;
        Ok(Grid {
            n_frames: len,
            n_components: self.n_components,
            frame_rate: self.frame_rate,
            values: self.values[start * row..(start + len) * row].to_vec(),
        })
    }
}

/// Map a MIDI velocity onto `[-1, 1]`.
pub fn normalize_velocity(v: u8) -> f64 {
    2.0 * (v as f64 / 127.0) - 1.0
}

/// Inverse of [`normalize_velocity`], rounded and clamped to `0..=127`.
pub fn denormalize_velocity(x: f64) -> u8 {
    (127.0 * (x + 1.0) / 2.0).round().clamp(0.0, 127.0) as u8
}

/// Rasterize notes onto a grid. Frame index is `round(time * frame_rate)`;
/// two notes landing on the same cell keep the louder one.
pub fn grid_from_notes(
    notes: &NoteList,
    n_components: usize,
    frame_rate: f64,
    n_frames: usize,
) -> Result<Grid> {
    let mut grid = Grid::silent(n_frames, n_components, frame_rate);
    let limit = n_frames as f64 / frame_rate;
    for (index, n) in notes.iter().enumerate() {
        let frame = (n.time * frame_rate).round();
        if n.time >= limit || n.component >= n_components || frame >= n_frames as f64 {
            return Err(Error::NoteOutOfRange {
                index,
                time: n.time,
                component: n.component,
                limit,
                components: n_components,
            });
        }
        let frame = frame as usize;
        let vel = normalize_velocity(n.velocity);
        if grid.onset(frame, n.component) > 0.0 && grid.velocity(frame, n.component) >= vel {
            continue;
        }
        grid.set(frame, n.component, 1.0, vel);
    }
    Ok(grid)
}

/// Decode a grid: a note wherever the onset channel exceeds `threshold`.
pub fn notes_from_grid(grid: &Grid, threshold: f64) -> Result<NoteList> {
    let mut notes = Vec::new();
    for frame in 0..grid.n_frames {
        for component in 0..grid.n_components {
            let onset = grid.onset(frame, component);
            let vel = grid.velocity(frame, component);
            if !onset.is_finite() || !vel.is_finite() {
                return Err(Error::NonFiniteGrid { frame, component });
            }
            if onset > threshold {
                notes.push(Note::new(
                    frame as f64 / grid.frame_rate,
                    component,
                    denormalize_velocity(vel),
                ));
            }
        }
    }
    sort_notes(&mut notes);
    Ok(NoteList { notes })
}
