//! Binary checkpoint container (`COGCKPT1`).
//!
//! A checkpoint stores a JSON metadata blob (kind tag, step counter, and
//! free-form extras such as the training config echo), the noise
//! schedule the model was trained against, and any number of named
//! tensor sections (live parameters, EMA shadow, optimizer moments).
//! All maps are ordered, so identical state serializes to identical
//! bytes.
//!
//! Little-endian layout:
//! ```text
//! magic      8 bytes "COGCKPT1"
//! meta_len   u32, meta JSON (kind, step, extras)
//! sched_len  u32      number of schedule steps (0 = none), then
//!   base_steps u32, betas f64*n, base_t u32*n
//! n_sections u32, then per section:
//!   name_len u32, name, n_tensors u32, then per tensor:
//!     name_len u32, name, rows u32, cols u32, data f64*rows*cols
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{CoreError, Result};
use crate::nn::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"COGCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    kind: String,
    step: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub step: u64,
    /// Free-form provenance: config echo, seeds, data hashes.
    pub extra: serde_json::Value,
    pub schedule: Option<NoiseSchedule>,
    pub sections: BTreeMap<String, ParamStore>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Checkpoint {
        Checkpoint {
            kind: kind.to_string(),
            step: 0,
            extra: serde_json::Value::Null,
            schedule: None,
            sections: BTreeMap::new(),
        }
    }

    pub fn section(&self, name: &str) -> Result<&ParamStore> {
        self.sections.get(name).ok_or_else(|| {
            CoreError::Incompatible(format!(
                "checkpoint (kind '{}') has no '{name}' section",
                self.kind
            ))
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CoreError::Incompatible(format!(
                "checkpoint kind '{}' where '{kind}' is required",
                self.kind
            )))
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = Meta {
            kind: self.kind.clone(),
            step: self.step,
            extra: self.extra.clone(),
        };
        let meta_json = serde_json::to_vec(&meta).expect("meta serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta_json);

        match &self.schedule {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(s) => {
                out.extend_from_slice(&(s.steps() as u32).to_le_bytes());
                out.extend_from_slice(&(s.base_steps() as u32).to_le_bytes());
                for &b in s.betas() {
                    out.extend_from_slice(&b.to_le_bytes());
                }
                for &t in s.base_timesteps() {
                    out.extend_from_slice(&(t as u32).to_le_bytes());
                }
            }
        }

        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, store) in &self.sections {
            write_str(&mut out, name);
            out.extend_from_slice(&(store.len() as u32).to_le_bytes());
            for (tname, t) in store.iter() {
                write_str(&mut out, tname);
                out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
                out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(CoreError::parse(0, "not a checkpoint file (bad magic)"));
        }
        let meta_len = r.u32("meta length")? as usize;
        let meta_at = r.pos as u64;
        let meta_bytes = r.take(meta_len, "meta json")?;
        let meta: Meta = serde_json::from_slice(meta_bytes)
            .map_err(|e| CoreError::parse(meta_at, format!("bad meta json: {e}")))?;

        let sched_len = r.u32("schedule length")? as usize;
        let schedule = if sched_len == 0 {
            None
        } else {
            let base_steps = r.u32("base steps")? as usize;
            let mut betas = Vec::with_capacity(sched_len);
            for _ in 0..sched_len {
                betas.push(r.f64("beta")?);
            }
            let mut base_t = Vec::with_capacity(sched_len);
            for _ in 0..sched_len {
                base_t.push(r.u32("base timestep")? as usize);
            }
            Some(NoiseSchedule::from_parts(betas, base_t, base_steps)?)
        };

        let n_sections = r.u32("section count")? as usize;
        let mut sections = BTreeMap::new();
        for _ in 0..n_sections {
            let name = r.string("section name")?;
            let n_tensors = r.u32("tensor count")? as usize;
            let mut store = ParamStore::new();
            for _ in 0..n_tensors {
                let tname = r.string("tensor name")?;
                let rows = r.u32("rows")? as usize;
                let cols = r.u32("cols")? as usize;
                if rows.saturating_mul(cols) > 64 * 1024 * 1024 {
                    return Err(CoreError::parse(
                        r.pos as u64,
                        format!("tensor '{tname}' implausibly large ({rows}x{cols})"),
                    ));
                }
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    data.push(r.f64("tensor data")?);
                }
                store.insert(&tname, Tensor::from_vec(rows, cols, data));
            }
            if sections.insert(name.clone(), store).is_some() {
                return Err(CoreError::parse(
                    r.pos as u64,
                    format!("duplicate section '{name}'"),
                ));
            }
        }
        if r.pos != bytes.len() {
            return Err(CoreError::parse(
                r.pos as u64,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }

        Ok(Checkpoint {
            kind: meta.kind,
            step: meta.step,
            extra: meta.extra,
            schedule,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::decode(&bytes).map_err(|e| match e {
            CoreError::Parse { offset, message } => CoreError::Parse {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::parse(
                self.pos as u64,
                format!("unexpected end of file reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos as u64;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CoreError::parse(at, format!("{what} is not valid utf-8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamStore::new();
        params.init_linear(&mut rng, "layer.w", 3, 4);
        params.init_zeros("layer.b", 1, 4);
        let mut ema = ParamStore::new();
        ema.init_linear(&mut rng, "layer.w", 3, 4);
        ema.init_zeros("layer.b", 1, 4);

        let mut ckpt = Checkpoint::new("denoiser.upper");
        ckpt.step = 123;
        ckpt.extra = serde_json::json!({"seed": 9, "lr": 3.0e-5});
        ckpt.schedule = Some(NoiseSchedule::linear(50, 1e-4, 0.02).unwrap());
        ckpt.sections.insert("params".into(), params);
        ckpt.sections.insert("ema".into(), ema);
        ckpt
    }

    #[test]
    fn encode_decode_round_trip() {
        let ckpt = sample_checkpoint();
        let back = Checkpoint::decode(&ckpt.encode()).unwrap();
        assert_eq!(back.kind, "denoiser.upper");
        assert_eq!(back.step, 123);
        assert_eq!(back.extra["lr"], serde_json::json!(3.0e-5));
        let s = back.schedule.as_ref().unwrap();
        assert_eq!(s.steps(), 50);
        assert_eq!(s.base_steps(), 50);
        // Bit-exact tensor round trip.
        assert_eq!(back.sections, ckpt.sections);
        // Bit-exact schedule round trip.
        assert_eq!(s.betas(), ckpt.schedule.as_ref().unwrap().betas());
    }

    #[test]
    fn serialization_is_deterministic() {
        let ckpt = sample_checkpoint();
        assert_eq!(ckpt.encode(), ckpt.encode());
    }

    #[test]
    fn kind_and_section_guards() {
        let ckpt = sample_checkpoint();
        assert!(ckpt.expect_kind("denoiser.upper").is_ok());
        assert!(matches!(
            ckpt.expect_kind("denoiser.lower"),
            Err(CoreError::Incompatible(_))
        ));
        assert!(ckpt.section("params").is_ok());
        assert!(ckpt.section("adam_m").is_err());
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = sample_checkpoint().encode();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.encode(), ckpt.encode());
    }
}
