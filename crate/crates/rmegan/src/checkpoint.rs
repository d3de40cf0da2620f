//! Trainer checkpoints.
//!
//! Layout, all little-endian: magic `RMEG`, u32 version, u32 height, u32
//! width, length-prefixed config text, u32 blob count, then blobs of
//! (u32 name length, name, u32 rank, u32 dims, f32 values). Generator and
//! discriminator weights are stored as `generator/<name>` and
//! `discriminator/<name>`, Adam moments as `adam.<net>.m/<name>` and
//! `adam.<net>.v/<name>`, the best-validation generator weights as
//! `best.generator/<name>`. The tail holds both Adam step counters, the phase
//! controller, the epoch history and the best epoch, if any.

use std::path::Path;

use rmegan_core::losses::{Phase, PhaseConfig, PhaseState};
use rmegan_core::nn::{Adam, BestGenerator, EpochRecord, ParamSet, TrainConfig, Trainer};

use crate::error::{read_file, write_file, Error, Result};

pub const MAGIC: &[u8; 4] = b"RMEG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Everything a checkpoint file holds, decoded but not yet bound to a
/// trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub height: usize,
    pub width: usize,
    pub config_text: String,
    pub blobs: Vec<Blob>,
    pub generator_step: u64,
    pub discriminator_step: u64,
    pub phase: PhaseState,
    pub history: Vec<EpochRecord>,
    /// Epoch and validation NMSE of the stored best generator.
    pub best: Option<(usize, f64)>,
}

fn net_blobs(out: &mut Vec<Blob>, net: &str, params: &ParamSet, opt: &Adam) {
    for p in &params.params {
        out.push(Blob { name: format!("{net}/{}", p.name), shape: p.shape.clone(), values: p.values.clone() });
    }
    for (tag, moments) in [("m", &opt.m), ("v", &opt.v)] {
        for (p, m) in params.params.iter().zip(moments) {
            out.push(Blob { name: format!("adam.{net}.{tag}/{}", p.name), shape: p.shape.clone(), values: m.clone() });
        }
    }
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, height: usize, width: usize, config_text: &str) -> Self {
        let mut blobs = Vec::new();
        net_blobs(&mut blobs, "generator", &trainer.generator.params, &trainer.g_opt);
        net_blobs(&mut blobs, "discriminator", &trainer.discriminator.params, &trainer.d_opt);
        if let Some(b) = &trainer.best {
            for p in &b.params.params {
                blobs.push(Blob { name: format!("best.generator/{}", p.name), shape: p.shape.clone(), values: p.values.clone() });
            }
        }
        Self {
            height,
            width,
            config_text: config_text.to_string(),
            blobs,
            generator_step: trainer.g_opt.step,
            discriminator_step: trainer.d_opt.step,
            phase: trainer.phase.clone(),
            history: trainer.history.clone(),
            best: trainer.best.as_ref().map(|b| (b.epoch, b.val_nmse)),
        }
    }

    /// Builds a trainer from `config` and overwrites its state with the
    /// stored one. Every parameter must be present with a matching shape.
    pub fn into_trainer(self, config: TrainConfig, path: &Path) -> Result<Trainer> {
        let mut t = Trainer::new(config, self.height, self.width)?;
        let mut blobs: std::collections::HashMap<String, Blob> =
            self.blobs.into_iter().map(|b| (b.name.clone(), b)).collect();
        let mut take = |name: String, shape: &[usize]| -> Result<Vec<f32>> {
            let b = blobs
                .remove(&name)
                .ok_or_else(|| Error::load(path, format!("checkpoint lacks {name}; was it trained with another network configuration?")))?;
            if b.shape != shape {
                return Err(Error::load(path, format!("{name} has shape {:?}, the configured network expects {shape:?}", b.shape)));
            }
            Ok(b.values)
        };
        for (net, params, opt) in [
            ("generator", &mut t.generator.params, &mut t.g_opt),
            ("discriminator", &mut t.discriminator.params, &mut t.d_opt),
        ] {
            for (i, p) in params.params.iter_mut().enumerate() {
                p.values = take(format!("{net}/{}", p.name), &p.shape)?;
                opt.m[i] = take(format!("adam.{net}.m/{}", p.name), &p.shape)?;
                opt.v[i] = take(format!("adam.{net}.v/{}", p.name), &p.shape)?;
            }
        }
        if let Some((epoch, val_nmse)) = self.best {
            let mut params = t.generator.params.clone();
            for p in params.params.iter_mut() {
                p.values = take(format!("best.generator/{}", p.name), &p.shape)?;
            }
            t.best = Some(BestGenerator { epoch, val_nmse, params });
        }
        if let Some(name) = blobs.keys().min() {
            return Err(Error::load(path, format!("unexpected blob {name}")));
        }
        t.g_opt.step = self.generator_step;
        t.d_opt.step = self.discriminator_step;
        t.phase = self.phase;
        t.history = self.history;
        Ok(t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.str(&self.config_text);
        w.u32(self.blobs.len() as u32);
        for b in &self.blobs {
            w.str(&b.name);
            w.u32(b.shape.len() as u32);
            for &d in &b.shape {
                w.u32(d as u32);
            }
            for v in &b.values {
                w.0.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.u64(self.generator_step);
        w.u64(self.discriminator_step);
        let ph = &self.phase;
        w.u8(ph.phase.number());
        w.u64(ph.epoch as u64);
        w.u64(ph.onset.map_or(0, |o| o as u64 + 1));
        w.f64(ph.config.tau);
        w.u64(ph.config.patience as u64);
        w.u64(ph.config.max_phase1_epochs as u64);
        w.u32(ph.validation_history.len() as u32);
        for &v in &ph.validation_history {
            w.f64(v);
        }
        w.u32(self.history.len() as u32);
        for r in &self.history {
            w.u64(r.epoch as u64);
            w.u8(r.phase.number());
            w.f64(r.d_loss);
            w.f64(r.g_loss);
            w.f64(r.val_nmse);
        }
        match self.best {
            None => w.u8(0),
            Some((epoch, val_nmse)) => {
                w.u8(1);
                w.u64(epoch as u64);
                w.f64(val_nmse);
            }
        }
        w.0
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected \"RMEG\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, 4, format!("unsupported checkpoint version {version}")));
        }
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let config_text = r.str()?;
        let n = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let count = count.ok_or_else(|| r.err(format!("blob {name} has an overflowing shape")))?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| r.err("blob too large"))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            blobs.push(Blob { name, shape, values });
        }
        let generator_step = r.u64()?;
        let discriminator_step = r.u64()?;
        let phase_at = r.pos;
        let phase = r.phase()?;
        let epoch = r.u64()? as usize;
        let onset = r.u64()?.checked_sub(1).map(|o| o as usize);
        let config = PhaseConfig { tau: r.f64()?, patience: r.u64()? as usize, max_phase1_epochs: r.u64()? as usize };
        let k = r.u32()? as usize;
        let validation_history = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if validation_history.len() != epoch {
            return Err(Error::format(path, phase_at as u64, "phase history length disagrees with its epoch count"));
        }
        let k = r.u32()? as usize;
        let mut history = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            history.push(EpochRecord {
                epoch: r.u64()? as usize,
                phase: r.phase()?,
                d_loss: r.f64()?,
                g_loss: r.f64()?,
                val_nmse: r.f64()?,
            });
        }
        let best = match r.array::<1>()?[0] {
            0 => None,
            1 => Some((r.u64()? as usize, r.f64()?)),
            f => return Err(Error::format(path, r.pos as u64 - 1, format!("invalid best-epoch flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        Ok(Self {
            height,
            width,
            config_text,
            blobs,
            generator_step,
            discriminator_step,
            phase: PhaseState { phase, epoch, validation_history, config, onset },
            history,
            best,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &ckpt.encode())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&read_file(path)?, path)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.pos as u64, msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(self.path, at as u64, "string is not UTF-8"))
    }

    fn phase(&mut self) -> Result<Phase> {
        match self.array::<1>()?[0] {
            1 => Ok(Phase::One),
            2 => Ok(Phase::Two),
            p => Err(Error::format(self.path, self.pos as u64 - 1, format!("invalid phase {p}"))),
        }
    }
}
