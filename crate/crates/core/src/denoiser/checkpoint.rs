//! Checkpoint file:
//!
//! ```text
//! magic     8 bytes  "N2NDRUM\0"
//! version   u32
//! text_len  u32, then UTF-8 `key = value` text with [model], [diffusion],
//!           [train] and [state] sections
//! count     u32, then `count` tensor records (see `tensor::blob`):
//!           param/<name>, adam_m/<name>, adam_v/<name>
//! crc32     u32 over every preceding byte
//! ```
//!
//! All integers little-endian. Writes go through a temporary file in the
//! same directory and are renamed into place.

use std::io::{Cursor, Read};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::config::DenoiserConfig;
use super::model::{Diagnostics, Model};
use super::params::ParamStore;
use super::train::{TrainConfig, TrainState};
use crate::config::KvDoc;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::tensor::blob::{read_tensor, write_tensor};
use crate::tensor::{Adam, AdamConfig, Tensor};

pub const MAGIC: &[u8; 8] = b"N2NDRUM\0";
pub const VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint(format!("bad rng seed `{s}`"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn to_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut doc = KvDoc::default();
    state.model.config.write_kv(&mut doc, "model");
    state.model.diffusion.write_kv(&mut doc, "diffusion");
    state.train.write_kv(&mut doc, "train");
    doc.set("state", "step", state.step);
    doc.set("state", "total_steps", state.total_steps);
    doc.set("state", "alpha", state.alpha());
    doc.set("state", "adam_step", state.adam.step);
    doc.set("state", "beta1", state.adam.config.beta1);
    doc.set("state", "beta2", state.adam.config.beta2);
    doc.set("state", "eps", state.adam.config.eps);
    doc.set("state", "rng_seed", hex(&state.rng.get_seed()));
    doc.set("state", "rng_stream", state.rng.get_stream());
    doc.set("state", "rng_word_pos", state.rng.get_word_pos());
    let text = doc.to_text();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let params = &state.model.params;
    out.extend_from_slice(&((3 * params.len()) as u32).to_le_bytes());
    for (i, (name, t)) in params.names().iter().zip(params.tensors()).enumerate() {
        write_tensor(&mut out, &format!("param/{name}"), t)?;
        let m = Tensor::new(t.shape(), state.adam.m[i].clone())?;
        write_tensor(&mut out, &format!("adam_m/{name}"), &m)?;
        let v = Tensor::new(t.shape(), state.adam.v[i].clone())?;
        write_tensor(&mut out, &format!("adam_v/{name}"), &v)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let err = |m: String| Error::Checkpoint(m);
    if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(err(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Cursor::new(&body[8..]);
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let mut text = vec![0u8; u32::from_le_bytes(u32buf) as usize];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| err("config text is not UTF-8".into()))?;
    let doc = KvDoc::parse(&text)?;
    let config = DenoiserConfig::from_kv(&doc, "model")?;
    let diffusion = DiffusionConfig::from_kv(&doc, "diffusion")?;
    let train = TrainConfig::from_kv(&doc, "train")?;

    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    if !count.is_multiple_of(3) {
        return Err(err(format!("tensor count {count} is not a multiple of 3")));
    }
    let mut params = ParamStore::default();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for _ in 0..count / 3 {
        let (pn, p) = read_tensor(&mut r)?;
        let (mn, mt) = read_tensor(&mut r)?;
        let (vn, vt) = read_tensor(&mut r)?;
        let name = pn
            .strip_prefix("param/")
            .ok_or_else(|| err(format!("unexpected record `{pn}`")))?;
        if mn != format!("adam_m/{name}") || vn != format!("adam_v/{name}") {
            return Err(err(format!("optimizer records out of order near `{name}`")));
        }
        params.push(name, p);
        m.push(mt.into_data());
        v.push(vt.into_data());
    }
    if r.position() as usize != body.len() - 8 {
        return Err(err("trailing bytes after tensor records".into()));
    }

    let mut model = Model::new(config, diffusion, 0)?;
    model.params.assign(params)?;
    model.diagnostics = Diagnostics::default();
    let adam = Adam {
        config: AdamConfig {
            lr: train.lr,
            beta1: doc.require("state", "beta1")?,
            beta2: doc.require("state", "beta2")?,
            eps: doc.require("state", "eps")?,
        },
        step: doc.require("state", "adam_step")?,
        m,
        v,
    };
    let mut rng = ChaCha8Rng::from_seed(unhex(doc.get("state", "rng_seed").unwrap_or(""))?);
    rng.set_stream(doc.require("state", "rng_stream")?);
    rng.set_word_pos(doc.require::<u128>("state", "rng_word_pos")?);
    Ok(TrainState {
        model,
        train,
        adam,
        rng,
        step: doc.require("state", "step")?,
        total_steps: doc.require("state", "total_steps")?,
    })
}

/// Atomically write `state` to `path`.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &to_bytes(state)?)
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

/// Load and require the stored model config to equal `expected`.
pub fn load_expecting(path: &Path, expected: &DenoiserConfig) -> Result<TrainState> {
    let state = load(path)?;
    if &state.model.config != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint model config {:?} does not match {:?}",
            state.model.config, expected
        )));
    }
    Ok(state)
}
