//! Checkpoint file format.
//!
//! Layout: magic `HNPM`, format version (u32 LE), blob count (u32 LE),
//! then length-prefixed named blobs, then a 64-bit FNV-1a checksum over
//! every preceding byte. Tensor blobs carry rank, extents and little-
//! endian f64 values; a handful of `meta/...` blobs carry the config
//! text and counters. Save and load round-trip training state bit for
//! bit, including the functional rng position (seed + epoch).

use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::optim::OptimizerState;
use crate::rng::fnv1a64;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"HNPM";
pub const FORMAT_VERSION: u32 = 1;

/// Full training state at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub teacher: ParamSet,
    pub student: ParamSet,
    pub optimizer: OptimizerState,
    /// Master seed; together with `epoch` this is the whole rng state,
    /// since every stream is derived functionally from (seed, purpose,
    /// epoch, index).
    pub rng_seed: u64,
}

// ── Encoding ────────────────────────────────────────────────────────

fn push_blob(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn tensor_payload(t: &Tensor) -> Vec<u8> {
    let mut p = Vec::with_capacity(4 + 8 * t.shape().len() + 8 * t.numel());
    p.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        p.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.values() {
        p.extend_from_slice(&v.to_le_bytes());
    }
    p
}

fn moments_payload(m: &[f64]) -> Vec<u8> {
    tensor_payload(&Tensor::vector(m.to_vec()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
        blobs.push(("meta/config".into(), self.config.to_toml()?.into_bytes()));
        blobs.push(("meta/epoch".into(), (self.epoch as u64).to_le_bytes().to_vec()));
        blobs.push(("meta/rng_seed".into(), self.rng_seed.to_le_bytes().to_vec()));
        blobs.push(("meta/opt_step".into(), self.optimizer.step().to_le_bytes().to_vec()));
        for (name, t) in self.teacher.iter() {
            blobs.push((format!("teacher/{name}"), tensor_payload(t)));
        }
        for (name, t) in self.student.iter() {
            blobs.push((format!("student/{name}"), tensor_payload(t)));
        }
        for ((name, _), m) in self.teacher.iter().zip(self.optimizer.first_moments()) {
            blobs.push((format!("opt/m/{name}"), moments_payload(m)));
        }
        for ((name, _), v) in self.teacher.iter().zip(self.optimizer.second_moments()) {
            blobs.push((format!("opt/v/{name}"), moments_payload(v)));
        }

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        for (name, payload) in &blobs {
            push_blob(&mut out, name, payload);
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
            .map_err(|e| match e {
                Error::Integrity(msg) => Error::integrity(format!("{}: {msg}", path.display())),
                other => other,
            })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() + 4 + 4 + 8 {
            return Err(Error::integrity("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a64(body) != stored {
            return Err(Error::integrity("checksum mismatch"));
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::integrity("bad magic bytes"));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version { expected: FORMAT_VERSION, found: version });
        }
        let blob_count = cur.u32()? as usize;

        let mut config: Option<TrainConfig> = None;
        let mut epoch = 0usize;
        let mut rng_seed = 0u64;
        let mut opt_step = 0u64;
        let mut teacher: Vec<(String, Tensor)> = Vec::new();
        let mut student: Vec<(String, Tensor)> = Vec::new();
        let mut opt_m: Vec<Vec<f64>> = Vec::new();
        let mut opt_v: Vec<Vec<f64>> = Vec::new();

        for _ in 0..blob_count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::integrity("blob name is not utf-8"))?
                .to_string();
            let payload_len = cur.u64()? as usize;
            let payload = cur.take(payload_len)?;
            match name.as_str() {
                "meta/config" => {
                    let text = std::str::from_utf8(payload)
                        .map_err(|_| Error::integrity("config blob is not utf-8"))?;
                    config = Some(TrainConfig::from_toml_str(text)?);
                }
                "meta/epoch" => epoch = read_u64(payload)? as usize,
                "meta/rng_seed" => rng_seed = read_u64(payload)?,
                "meta/opt_step" => opt_step = read_u64(payload)?,
                _ => {
                    let tensor = parse_tensor(payload)?;
                    if let Some(rest) = name.strip_prefix("teacher/") {
                        teacher.push((rest.to_string(), tensor.with_trainable(true)));
                    } else if let Some(rest) = name.strip_prefix("student/") {
                        student.push((rest.to_string(), tensor));
                    } else if name.starts_with("opt/m/") {
                        opt_m.push(tensor.values().to_vec());
                    } else if name.starts_with("opt/v/") {
                        opt_v.push(tensor.values().to_vec());
                    } else {
                        return Err(Error::integrity(format!("unknown blob '{name}'")));
                    }
                }
            }
        }
        if cur.pos != body.len() {
            return Err(Error::integrity("trailing bytes after blobs"));
        }

        let config = config.ok_or_else(|| Error::integrity("missing config blob"))?;
        let teacher = ParamSet::from_entries(teacher);
        let student = ParamSet::from_entries(student);
        if !teacher.same_geometry(&student) {
            return Err(Error::integrity("teacher/student geometry mismatch"));
        }
        if opt_m.len() != teacher.len() || opt_v.len() != teacher.len() {
            return Err(Error::integrity("optimizer moments misaligned with parameters"));
        }
        Ok(Checkpoint {
            config,
            epoch,
            teacher,
            student,
            optimizer: OptimizerState::from_parts(opt_m, opt_v, opt_step),
            rng_seed,
        })
    }
}

fn read_u64(payload: &[u8]) -> Result<u64> {
    payload
        .try_into()
        .map(u64::from_le_bytes)
        .map_err(|_| Error::integrity("bad u64 payload"))
}

fn parse_tensor(payload: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { buf: payload, pos: 0 };
    let ndim = cur.u32()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(cur.u64()? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut values = Vec::with_capacity(numel);
    for _ in 0..numel {
        values.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
    }
    if cur.pos != payload.len() {
        return Err(Error::integrity("tensor payload has trailing bytes"));
    }
    Tensor::new(values, shape)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::integrity("unexpected end of file"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
