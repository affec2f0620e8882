//! C interface to the drumdiff transcriber.
//!
//! Every fallible call returns a [`DdStatus`]; on failure the message is
//! available from [`dd_last_error`] on the same thread until the next call.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function. Passing null to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use drumdiff::denoiser::{checkpoint, Model};
use drumdiff::evalkit::{score_clip, EvalConfig};
use drumdiff::events::{gm_pitch_table, midi, NoteList};
use drumdiff::infer::{generate, transcribe, InferOptions};
use drumdiff::synth::{condition_from_audio, DEFAULT_ENCODER_SEED};
use drumdiff::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Numeric = 5,
    Data = 6,
    Panic = 7,
}

/// A trained denoiser loaded from a checkpoint.
pub struct DdModel {
    model: Model,
}

/// A sorted list of drum hits.
pub struct DdNotes {
    notes: NoteList,
}

/// One hit as seen from C.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DdNote {
    pub time: f64,
    pub component: u32,
    pub velocity: u8,
}

/// Sampling options; obtain defaults from [`dd_infer_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdInferOptions {
    /// Sampling steps for transcription.
    pub steps: u32,
    /// Sampling steps for generation.
    pub fill_steps: u32,
    pub seed: u64,
    pub threshold: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DdStatus {
    match e {
        Error::Io(_) => DdStatus::Io,
        Error::Checkpoint(_) => DdStatus::Checkpoint,
        Error::NonFiniteLoss { .. } | Error::NonFiniteGrid { .. } => DdStatus::Numeric,
        Error::Data { .. } | Error::Midi { .. } => DdStatus::Data,
        _ => DdStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (DdStatus, String)>) -> DdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DdStatus::Panic
        }
    }
}

fn lib(e: Error) -> (DdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DdStatus, String) {
    (DdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (DdStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (DdStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

fn options(o: &DdInferOptions) -> Result<InferOptions, (DdStatus, String)> {
    if o.steps == 0 || o.fill_steps == 0 {
        return Err((DdStatus::InvalidArgument, "steps must be at least 1".into()));
    }
    if !o.threshold.is_finite() {
        return Err((DdStatus::InvalidArgument, "threshold must be finite".into()));
    }
    Ok(InferOptions {
        steps: o.steps as usize,
        fill_steps: o.fill_steps as usize,
        seed: o.seed,
        threshold: o.threshold,
        ..InferOptions::default()
    })
}

fn give_notes(out: *mut *mut DdNotes, notes: NoteList) {
    // SAFETY: callers check `out` before doing any work.
    unsafe { *out = Box::into_raw(Box::new(DdNotes { notes })) };
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn dd_infer_options_default() -> DdInferOptions {
    let d = InferOptions::default();
    DdInferOptions {
        steps: d.steps as u32,
        fill_steps: d.fill_steps as u32,
        seed: d.seed,
        threshold: d.threshold,
    }
}

/// Load a model from a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dd_model_load(path: *const c_char, out: *mut *mut DdModel) -> DdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let state = checkpoint::load(&path).map_err(lib)?;
        *out = Box::into_raw(Box::new(DdModel { model: state.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dd_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dd_model_free(model: *mut DdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Transcribe mono PCM at 44.1 kHz.
///
/// # Safety
/// `samples` must point to `n_samples` floats; `opts` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dd_transcribe_pcm(
    model: *const DdModel,
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
    opts: *const DdInferOptions,
    out: *mut *mut DdNotes,
) -> DdStatus {
    guard(|| {
        if model.is_null() {
            return Err(null("model"));
        }
        if samples.is_null() && n_samples > 0 {
            return Err(null("samples"));
        }
        if opts.is_null() {
            return Err(null("opts"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if n_samples == 0 {
            return Err((DdStatus::InvalidArgument, "no samples".into()));
        }
        let o = options(&*opts)?;
        let pcm: Vec<f64> = std::slice::from_raw_parts(samples, n_samples).iter().map(|&v| v as f64).collect();
        let cond = condition_from_audio(&pcm, sample_rate, DEFAULT_ENCODER_SEED).map_err(lib)?;
        let t = transcribe(&(*model).model, &cond, &o).map_err(lib)?;
        give_notes(out, t.notes);
        Ok(())
    })
}

/// Sample a pattern of `n_frames` 10 ms frames without any audio.
///
/// # Safety
/// `model`, `opts` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dd_generate(
    model: *const DdModel,
    n_frames: usize,
    opts: *const DdInferOptions,
    out: *mut *mut DdNotes,
) -> DdStatus {
    guard(|| {
        if model.is_null() {
            return Err(null("model"));
        }
        if opts.is_null() {
            return Err(null("opts"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if n_frames == 0 {
            return Err((DdStatus::InvalidArgument, "n_frames must be at least 1".into()));
        }
        let o = options(&*opts)?;
        let t = generate(&(*model).model, n_frames, &o).map_err(lib)?;
        give_notes(out, t.notes);
        Ok(())
    })
}

/// Build a note list from `n` hits, e.g. reference labels for scoring.
///
/// # Safety
/// `notes` must point to `n` hits and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dd_notes_new(notes: *const DdNote, n: usize, out: *mut *mut DdNotes) -> DdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if notes.is_null() && n > 0 {
            return Err(null("notes"));
        }
        let hits = if n == 0 { &[][..] } else { std::slice::from_raw_parts(notes, n) };
        let list = hits
            .iter()
            .map(|h| drumdiff::events::Note::new(h.time, h.component as usize, h.velocity))
            .collect();
        give_notes(out, NoteList::new(list).map_err(lib)?);
        Ok(())
    })
}

/// Number of hits, or 0 for null.
///
/// # Safety
/// `notes` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_notes_len(notes: *const DdNotes) -> usize {
    notes.as_ref().map_or(0, |n| n.notes.len())
}

/// Copy hit `i` into `out`.
///
/// # Safety
/// `notes` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dd_notes_get(notes: *const DdNotes, i: usize, out: *mut DdNote) -> DdStatus {
    guard(|| {
        let notes = notes.as_ref().ok_or_else(|| null("notes"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = notes
            .notes
            .notes()
            .get(i)
            .ok_or_else(|| (DdStatus::InvalidArgument, format!("index {i} out of range for {} notes", notes.notes.len())))?;
        *out = DdNote {
            time: n.time,
            component: n.component as u32,
            velocity: n.velocity,
        };
        Ok(())
    })
}

/// Write the hits as a General MIDI percussion file.
///
/// # Safety
/// `notes` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dd_notes_write_midi(notes: *const DdNotes, path: *const c_char) -> DdStatus {
    guard(|| {
        let notes = notes.as_ref().ok_or_else(|| null("notes"))?;
        let path = path_arg(path)?;
        let bytes = midi::export(&notes.notes, &gm_pitch_table()).map_err(lib)?;
        drumdiff::fsutil::write_atomic(&path, &bytes).map_err(lib)
    })
}

/// Onset and velocity F1 of `est` against `reference` with the default
/// 50 ms tolerance.
///
/// # Safety
/// Both handles must be live; `onset_f1` and `velocity_f1` valid.
#[no_mangle]
pub unsafe extern "C" fn dd_score(
    reference: *const DdNotes,
    est: *const DdNotes,
    onset_f1: *mut f64,
    velocity_f1: *mut f64,
) -> DdStatus {
    guard(|| {
        let r = reference.as_ref().ok_or_else(|| null("reference"))?;
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        if onset_f1.is_null() || velocity_f1.is_null() {
            return Err(null("output"));
        }
        let s = score_clip(&r.notes, &e.notes, &EvalConfig::default());
        *onset_f1 = s.onset.f1();
        *velocity_f1 = s.velocity.f1();
        Ok(())
    })
}

/// # Safety
/// `notes` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dd_notes_free(notes: *mut DdNotes) {
    if !notes.is_null() {
        drop(Box::from_raw(notes));
    }
}
