//! Clip container: a plain-text header describing shapes and optional
//! side data, followed by a little-endian float64 payload.
//!
//! Header lines are ASCII `key value\n` pairs. `fps`, `joints`, and
//! `frames` are required; `class`, `beats` (count), `contacts` (flag),
//! and `features` (per-frame width) are optional. The line `data` ends
//! the header. Payload order: beat times, feature track, contact bytes
//! (0/1 per toe per frame), then frame data. Encoding is deterministic,
//! so equal clips produce byte-identical files.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::motion::Clip;
use crate::nn::Tensor;

const MAGIC: &str = "COGCLIP 1";

/// Upper bound on total payload f64 count; rejects absurd headers before
/// allocation.
const MAX_PAYLOAD_ELEMS: usize = 1 << 26;

pub fn encode(clip: &Clip) -> Result<Vec<u8>> {
    if let Some(f) = &clip.features {
        if f.rows() != clip.frames() {
            return Err(CoreError::validation(format!(
                "feature track has {} rows for {} frames",
                f.rows(),
                clip.frames()
            )));
        }
    }
    if let Some(c) = &clip.contacts {
        if c.len() != clip.frames() {
            return Err(CoreError::validation(format!(
                "contact labels cover {} frames of {}",
                c.len(),
                clip.frames()
            )));
        }
    }

    let mut out = Vec::new();
    let mut line = |s: String| {
        out.extend_from_slice(s.as_bytes());
        out.push(b'\n');
    };
    line(MAGIC.to_string());
    line(format!("fps {}", clip.fps()));
    line(format!("joints {}", clip.joints()));
    line(format!("frames {}", clip.frames()));
    if let Some(id) = clip.class_id {
        line(format!("class {id}"));
    }
    if let Some(b) = &clip.beats {
        line(format!("beats {}", b.len()));
    }
    if clip.contacts.is_some() {
        line("contacts 1".to_string());
    }
    if let Some(f) = &clip.features {
        line(format!("features {}", f.cols()));
    }
    line("data".to_string());

    if let Some(b) = &clip.beats {
        for &t in b {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    if let Some(f) = &clip.features {
        for &v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(c) = &clip.contacts {
        for pair in c {
            out.push(pair[0] as u8);
            out.push(pair[1] as u8);
        }
    }
    for &v in clip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Byte cursor that reports the offset of whatever failed to parse.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Reader<'a> {
        Reader { bytes, pos: 0 }
    }

    fn err<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        Err(CoreError::parse(at as u64, message))
    }

    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => i,
            None => return self.err(start, "unterminated header line"),
        };
        self.pos = start + end + 1;
        match std::str::from_utf8(&rest[..end]) {
            Ok(s) => Ok((start, s)),
            Err(_) => self.err(start, "header line is not valid UTF-8"),
        }
    }

    fn f64(&mut self) -> Result<f64> {
        let start = self.pos;
        if start + 8 > self.bytes.len() {
            return self.err(start, "payload ends mid-value");
        }
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&self.bytes[start..start + 8]);
        self.pos = start + 8;
        Ok(f64::from_le_bytes(raw))
    }

    fn f64_finite(&mut self) -> Result<f64> {
        let at = self.pos;
        let v = self.f64()?;
        if !v.is_finite() {
            return self.err(at, "non-finite value in payload");
        }
        Ok(v)
    }

    fn byte(&mut self) -> Result<u8> {
        let start = self.pos;
        if start >= self.bytes.len() {
            return self.err(start, "payload ends mid-value");
        }
        self.pos = start + 1;
        Ok(self.bytes[start])
    }
}

#[derive(Default)]
struct Header {
    fps: Option<f64>,
    joints: Option<usize>,
    frames: Option<usize>,
    class: Option<u32>,
    beats: Option<usize>,
    contacts: bool,
    features: Option<usize>,
}

pub fn decode(bytes: &[u8]) -> Result<Clip> {
    let mut r = Reader::new(bytes);
    let (at, magic) = r.line()?;
    if magic != MAGIC {
        return r.err(at, format!("bad magic line {magic:?}, expected {MAGIC:?}"));
    }

    let mut h = Header::default();
    loop {
        let (at, line) = r.line()?;
        if line == "data" {
            break;
        }
        let (key, value) = match line.split_once(' ') {
            Some(kv) => kv,
            None => return r.err(at, format!("malformed header line {line:?}")),
        };
        let dup = |taken: bool| -> Result<()> {
            if taken {
                Err(CoreError::parse(at as u64, format!("duplicate header key {key:?}")))
            } else {
                Ok(())
            }
        };
        match key {
            "fps" => {
                dup(h.fps.is_some())?;
                let v: f64 = value
                    .parse()
                    .map_err(|_| CoreError::parse(at as u64, format!("bad fps {value:?}")))?;
                if !(v.is_finite() && v > 0.0) {
                    return r.err(at, format!("fps must be positive, got {value}"));
                }
                h.fps = Some(v);
            }
            "joints" | "frames" | "beats" | "features" => {
                let v: usize = value.parse().map_err(|_| {
                    CoreError::parse(at as u64, format!("bad {key} count {value:?}"))
                })?;
                let slot = match key {
                    "joints" => &mut h.joints,
                    "frames" => &mut h.frames,
                    "beats" => &mut h.beats,
                    _ => &mut h.features,
                };
                dup(slot.is_some())?;
                *slot = Some(v);
            }
            "class" => {
                dup(h.class.is_some())?;
                let v: u32 = value.parse().map_err(|_| {
                    CoreError::parse(at as u64, format!("bad class id {value:?}"))
                })?;
                h.class = Some(v);
            }
            "contacts" => {
                dup(h.contacts)?;
                if value != "1" {
                    return r.err(at, format!("contacts flag must be 1, got {value:?}"));
                }
                h.contacts = true;
            }
            _ => return r.err(at, format!("unknown header key {key:?}")),
        }
    }

    let fps = h.fps.ok_or_else(|| CoreError::parse(0, "header is missing fps"))?;
    let joints = h.joints.ok_or_else(|| CoreError::parse(0, "header is missing joints"))?;
    let frames = h.frames.ok_or_else(|| CoreError::parse(0, "header is missing frames"))?;
    if joints == 0 {
        return Err(CoreError::parse(0, "joints must be positive"));
    }
    let channels = 3 + joints * 6;
    let feat = h.features.unwrap_or(0);
    if h.features == Some(0) {
        return Err(CoreError::parse(0, "feature width must be positive when declared"));
    }
    let total = frames
        .checked_mul(channels)
        .and_then(|n| n.checked_add(frames * feat))
        .and_then(|n| n.checked_add(h.beats.unwrap_or(0)))
        .filter(|&n| n <= MAX_PAYLOAD_ELEMS);
    if total.is_none() {
        return Err(CoreError::parse(0, "declared payload size is out of range"));
    }

    let beats = match h.beats {
        Some(n) => {
            let mut b = Vec::with_capacity(n);
            for _ in 0..n {
                b.push(r.f64_finite()?);
            }
            Some(b)
        }
        None => None,
    };
    let features = match h.features {
        Some(w) => {
            let mut v = Vec::with_capacity(frames * w);
            for _ in 0..frames * w {
                v.push(r.f64_finite()?);
            }
            Some(Tensor::from_vec(frames, w, v))
        }
        None => None,
    };
    let contacts = if h.contacts {
        let mut c = Vec::with_capacity(frames);
        for _ in 0..frames {
            let mut pair = [false; 2];
            for side in &mut pair {
                let at = r.pos;
                *side = match r.byte()? {
                    0 => false,
                    1 => true,
                    other => return Err(CoreError::parse(at as u64, format!(
                        "contact byte must be 0 or 1, got {other}"
                    ))),
                };
            }
            c.push(pair);
        }
        Some(c)
    } else {
        None
    };
    let mut data = Vec::with_capacity(frames * channels);
    for _ in 0..frames * channels {
        data.push(r.f64_finite()?);
    }
    if r.pos != bytes.len() {
        return r.err(r.pos, format!("{} trailing bytes after payload", bytes.len() - r.pos));
    }

    let mut clip = Clip::from_raw(fps, joints, frames, data)?;
    clip.class_id = h.class;
    clip.beats = beats;
    clip.contacts = contacts;
    clip.features = features;
    Ok(clip)
}

pub fn save(clip: &Clip, path: &Path) -> Result<()> {
    fs::write(path, encode(clip)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Clip> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        CoreError::Parse { offset, message } => CoreError::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
