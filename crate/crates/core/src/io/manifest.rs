//! Dataset manifest: a JSON index of generated clips with content hashes
//! and the exact generation settings, enabling byte-level regeneration
//! checks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MANIFEST_FORMAT: &str = "cogmanifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Train/validation/test membership, disjoint by clip id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClipEntry {
    pub file: String,
    pub sha256: String,
    pub frames: usize,
    pub class_id: u32,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub fps: f64,
    pub skeleton_sha256: String,
    pub vocab_sha256: String,
    /// Echo of the generator settings that produced the dataset.
    pub generator: serde_json::Value,
    pub clips: Vec<ClipEntry>,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::validation(format!("manifest serialization: {e}")))?;
        Ok(std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?)
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CoreError::MissingPrerequisite(format!(
                "no dataset manifest at {}: {e}",
                path.display()
            ))
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CoreError::parse(0, format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CoreError::Incompatible(format!(
                "manifest format '{}' (supported: '{MANIFEST_FORMAT}')",
                m.format
            )));
        }
        Ok(m)
    }

    /// Check every referenced clip file exists and hashes as recorded.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for entry in &self.clips {
            let path = dir.join(&entry.file);
            let actual = super::hash::sha256_file(&path)?;
            if actual != entry.sha256 {
                return Err(CoreError::validation(format!(
                    "{}: hash mismatch (manifest {}, file {actual})",
                    path.display(),
                    entry.sha256
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::hash::sha256_hex;

    fn sample_manifest(dir: &Path) -> Manifest {
        let payload = b"pretend clip bytes";
        std::fs::write(dir.join("c0.clip"), payload).unwrap();
        Manifest {
            format: MANIFEST_FORMAT.to_string(),
            seed: 777,
            fps: 30.0,
            skeleton_sha256: sha256_hex(b"skel"),
            vocab_sha256: sha256_hex(b"vocab"),
            generator: serde_json::json!({"clips": 1, "frames": 96}),
            clips: vec![ClipEntry {
                file: "c0.clip".into(),
                sha256: sha256_hex(payload),
                frames: 96,
                class_id: 3,
                split: Split::Train,
            }],
        }
    }

    #[test]
    fn save_load_verify_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample_manifest(dir.path());
        m.save(dir.path()).unwrap();
        let back = Manifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        assert_eq!(back.split(Split::Train).count(), 1);
        assert_eq!(back.split(Split::Test).count(), 0);
    }

    #[test]
    fn verify_catches_modified_clip() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample_manifest(dir.path());
        m.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("c0.clip"), b"tampered").unwrap();
        assert!(Manifest::load(dir.path()).unwrap().verify(dir.path()).is_err());
    }

    #[test]
    fn missing_manifest_is_a_prerequisite_error() {
        let dir = tempfile::tempdir().unwrap();
        match Manifest::load(dir.path()) {
            Err(CoreError::MissingPrerequisite(_)) => {}
            other => panic!("expected missing-prerequisite, got {other:?}"),
        }
    }
}
