//! Standard MIDI File reading and writing for drum events.
//!
//! Export writes a format-0 file at 480 PPQ with a single 120 BPM tempo
//! event, notes on channel 10 with a fixed 100 ms gate. Import accepts
//! format 0 and 1 files with arbitrary tempo maps and keeps only note-ons
//! whose pitch appears in the supplied table.

use super::{Note, NoteList};
use crate::error::{Error, Result};

pub const PPQ: u16 = 480;
/// Microseconds per quarter note at 120 BPM.
pub const TEMPO_US: u32 = 500_000;
/// Note length written on export.
pub const GATE_SECONDS: f64 = 0.1;
const DRUM_CHANNEL: u8 = 9;

fn ticks_per_second() -> f64 {
    PPQ as f64 * 1e6 / TEMPO_US as f64
}

pub fn seconds_to_ticks(t: f64) -> u64 {
    (t * ticks_per_second()).round() as u64
}

fn write_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = ((v & 0x7f) as u8) | 0x80;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Encode `notes` as a format-0 SMF. `pitches[c]` is the key for component
/// `c`. Velocity 0 is written as 1 because a zero-velocity note-on means
/// note-off.
pub fn export(notes: &NoteList, pitches: &[u8]) -> Result<Vec<u8>> {
    // (tick, is_on, pitch, velocity)
    let mut events: Vec<(u64, bool, u8, u8)> = Vec::with_capacity(notes.len() * 2);
    let gate = seconds_to_ticks(GATE_SECONDS);
    for n in notes {
        let pitch = *pitches.get(n.component).ok_or_else(|| {
            Error::invalid(format!("no MIDI pitch for component {}", n.component))
        })?;
        if pitch > 127 {
            return Err(Error::invalid(format!("pitch {pitch} out of range")));
        }
        let tick = seconds_to_ticks(n.time);
        events.push((tick, true, pitch, n.velocity.clamp(1, 127)));
        events.push((tick + gate, false, pitch, 0));
    }
    // offs before ons at equal ticks
    events.sort_by_key(|&(tick, on, pitch, _)| (tick, on, pitch));

    let mut track = Vec::new();
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&TEMPO_US.to_be_bytes()[1..]);
    let mut last = 0u64;
    for (tick, on, pitch, vel) in events {
        let delta = u32::try_from(tick - last)
            .map_err(|_| Error::invalid("note time too large for MIDI".to_string()))?;
        write_vlq(&mut track, delta);
        let status = if on { 0x90 } else { 0x80 } | DRUM_CHANNEL;
        track.extend_from_slice(&[status, pitch, vel]);
        last = tick;
    }
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&PPQ.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Midi {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!("unexpected end of data, wanted {n} bytes")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("variable-length quantity longer than 4 bytes"))
    }
}

struct RawOn {
    tick: u64,
    pitch: u8,
    velocity: u8,
}

/// Decode an SMF into notes. `pitches[c]` is the key for component `c`.
pub fn import(bytes: &[u8], pitches: &[u8]) -> Result<NoteList> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(4)? != b"MThd" {
        r.pos -= 4;
        return Err(r.err("missing MThd chunk"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(r.err(format!("header length {header_len} < 6")));
    }
    let format = r.u16()?;
    let n_tracks = r.u16()?;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(r.err(format!("unsupported SMF format {format}")));
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(r.err("SMPTE time division is not supported"));
    }

    let mut tempo_map: Vec<(u64, u32)> = Vec::new();
    let mut ons: Vec<RawOn> = Vec::new();
    for _ in 0..n_tracks {
        let chunk_start = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if id != b"MTrk" {
            // unknown chunks are skipped per the SMF spec
            r.take(len)?;
            continue;
        }
        let end = r.pos + len;
        if end > bytes.len() {
            r.pos = chunk_start;
            return Err(r.err(format!("track chunk of {len} bytes runs past end of file")));
        }
        let mut t = Reader {
            data: &bytes[..end],
            pos: r.pos,
        };
        let mut tick = 0u64;
        let mut running: Option<u8> = None;
        let mut ended = false;
        while t.pos < end {
            tick += t.vlq()? as u64;
            let mut status = t.u8()?;
            let first_data;
            if status < 0x80 {
                let rs = running.ok_or_else(|| t.err("data byte without running status"))?;
                first_data = Some(status);
                status = rs;
            } else {
                first_data = None;
            }
            match status {
                0xff => {
                    let kind = t.u8()?;
                    let len = t.vlq()? as usize;
                    let data = t.take(len)?;
                    match kind {
                        0x51 if len == 3 => {
                            let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                            tempo_map.push((tick, us));
                        }
                        0x2f => {
                            ended = true;
                            break;
                        }
                        _ => {}
                    }
                }
                0xf0 | 0xf7 => {
                    let len = t.vlq()? as usize;
                    t.take(len)?;
                }
                0x80..=0xef => {
                    running = Some(status);
                    let a = match first_data {
                        Some(b) => b,
                        None => t.u8()?,
                    };
                    let kind = status & 0xf0;
                    if kind == 0xc0 || kind == 0xd0 {
                        continue;
                    }
                    let b = t.u8()?;
                    if kind == 0x90 && b > 0 {
                        ons.push(RawOn {
                            tick,
                            pitch: a,
                            velocity: b,
                        });
                    }
                }
                other => return Err(t.err(format!("unexpected status byte {other:#04x}"))),
            }
        }
        if !ended {
            return Err(t.err("track ended without end-of-track event"));
        }
        r.pos = end;
    }

    tempo_map.sort_by_key(|&(tick, _)| tick);
    let to_seconds = |tick: u64| -> f64 {
        let mut secs = 0.0;
        let mut last_tick = 0u64;
        let mut tempo = TEMPO_US as f64;
        for &(t, us) in &tempo_map {
            if t >= tick {
                break;
            }
            secs += (t - last_tick) as f64 * tempo / (division as f64 * 1e6);
            last_tick = t;
            tempo = us as f64;
        }
        secs + (tick - last_tick) as f64 * tempo / (division as f64 * 1e6)
    };

    let notes = ons
        .into_iter()
        .filter_map(|on| {
            let c = pitches.iter().position(|&p| p == on.pitch)?;
            Some(Note::new(to_seconds(on.tick), c, on.velocity))
        })
        .collect();
    NoteList::new(notes)
}
