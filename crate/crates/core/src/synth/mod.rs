//! Procedural synthetic gesture dataset generator.
//!
//! Produces beat-locked skeletal clips with ground-truth foot contacts,
//! class labels from the bundled vocabulary, an audio-beat grid, and a
//! per-frame feature track standing in for audio features. The lower body
//! either stands planted or steps forward with the support toe pinned
//! exactly; the upper body performs the class's gesture; fingers follow
//! the forearm-elevation curl rule.
//!
//! Determinism contract: generating twice with the same spec and master
//! seed yields byte-identical files. Each clip draws from its own ChaCha
//! stream seeded by mixing the master seed with the clip index, so a
//! clip's content is independent of dataset size and generation order.

pub mod features;
pub mod gesture;
pub mod stepping;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::io::clip_file;
use crate::io::hash::sha256_hex;
use crate::io::manifest::{ClipEntry, Manifest, Split, MANIFEST_FORMAT};
use crate::io::vocab::Vocab;
use crate::motion::clip::Clip;
use crate::motion::kinematics;
use crate::motion::skeleton::Skeleton;
use gesture::{apply_finger_rule, apply_gesture};
use stepping::{apply_planted, apply_stepping, StepParams};

pub const SKELETON_FILE: &str = "skeleton.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Toe height below which a frame counts as ground contact (meters).
/// Matches the evaluation detector's default height gate so generated
/// labels and detected contacts agree.
pub const CONTACT_HEIGHT_M: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactPattern {
    /// Both feet planted for the whole clip: zero skate and float by
    /// construction, useful as a metric oracle.
    Planted,
    /// One step per beat interval with the support toe pinned exactly.
    Stepping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub clips: usize,
    /// Frames per clip; must fit two whole beat intervals at the longest
    /// period so every clip completes at least one step.
    pub frames: usize,
    pub fps: f64,
    /// Beat period range in seconds, inclusive; each clip draws one
    /// period and snaps it to whole frames.
    pub beat_period_s: (f64, f64),
    /// Number of gesture classes used, a prefix of the 64-class
    /// vocabulary.
    pub vocab_size: usize,
    pub contact_pattern: ContactPattern,
    /// Amplitude (radians) of the non-beat-locked jitter layered over the
    /// class oscillation.
    pub noise_level: f64,
    /// Channels in the per-frame feature track (sinusoid channels plus
    /// one beat-impulse channel).
    pub feature_dim: usize,
}

impl Default for SynthSpec {
    fn default() -> SynthSpec {
        SynthSpec {
            clips: 64,
            frames: 120,
            fps: 30.0,
            beat_period_s: (0.4, 0.8),
            vocab_size: 64,
            contact_pattern: ContactPattern::Stepping,
            noise_level: 0.01,
            feature_dim: 16,
        }
    }
}

impl SynthSpec {
    pub fn max_period_frames(&self) -> usize {
        (self.beat_period_s.1 * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::validation(msg));
        if self.clips == 0 {
            return fail("clips must be at least 1".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        let (lo, hi) = self.beat_period_s;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return fail(format!("beat period range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if (lo * self.fps).round() < 4.0 {
            return fail(format!(
                "shortest beat period {lo}s is under 4 frames at {} fps",
                self.fps
            ));
        }
        let need = 2 * self.max_period_frames() + 1;
        if self.frames < need {
            return fail(format!(
                "{} frames cannot hold two beat intervals of up to {} frames (need {need})",
                self.frames,
                self.max_period_frames()
            ));
        }
        if !(2..=64).contains(&self.vocab_size) {
            return fail(format!("vocab_size must be 2..=64, got {}", self.vocab_size));
        }
        if !(self.noise_level.is_finite() && (0.0..=0.05).contains(&self.noise_level)) {
            return fail(format!(
                "noise_level {} outside [0, 0.05]; larger jitter would compete with the \
                 smallest class amplitude and break beat locking",
                self.noise_level
            ));
        }
        if self.feature_dim < 2 {
            return fail("feature_dim needs at least one sinusoid channel plus the impulse channel".into());
        }
        Ok(())
    }
}

/// Mix a master seed with a clip index (splitmix-style finalizer) to give
/// each clip an independent stream.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic split by clip index: every 10th clip is test, the
/// following one validation, the rest train.
pub fn split_for_index(index: usize) -> Split {
    match index % 10 {
        0 => Split::Test,
        1 => Split::Val,
        _ => Split::Train,
    }
}

/// Per-frame `[left, right]` ground-truth contact labels from forward
/// kinematics: a toe within `CONTACT_HEIGHT_M` of the ground is in
/// contact. Stance toes are pinned exactly, so labels are unambiguous.
pub fn ground_truth_contacts(skel: &Skeleton, clip: &Clip) -> Result<Vec<[bool; 2]>> {
    let heights = kinematics::toe_heights(skel, clip)?;
    Ok(heights
        .iter()
        .map(|h| [h[0] < CONTACT_HEIGHT_M, h[1] < CONTACT_HEIGHT_M])
        .collect())
}

/// Generate one clip. The seed alone fixes the drawn beat period, the
/// per-clip amplitude factor, and the jitter voices.
pub fn generate_clip(spec: &SynthSpec, skel: &Skeleton, class_id: u32, seed: u64) -> Result<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.beat_period_s;
    let period = (rng.random_range(lo..=hi) * spec.fps).round() as usize;
    let mut clip = Clip::new(spec.fps, skel.joints(), spec.frames);
    clip.class_id = Some(class_id);
    match spec.contact_pattern {
        ContactPattern::Planted => apply_planted(&mut clip, skel),
        ContactPattern::Stepping => {
            apply_stepping(&mut clip, skel, period, &StepParams::default())?
        }
    }
    apply_gesture(&mut clip, skel, class_id, period, spec.noise_level, &mut rng)?;
    apply_finger_rule(&mut clip, skel)?;
    clip.contacts = Some(ground_truth_contacts(skel, &clip)?);
    let beats = features::beat_frames(spec.frames, period);
    clip.beats = Some(beats.iter().map(|&b| b as f64 / spec.fps).collect());
    clip.features = Some(features::feature_track(spec.frames, spec.feature_dim, period, &beats));
    Ok(clip)
}

/// Write a full dataset directory: skeleton, vocabulary, clip files, and
/// a manifest with content hashes and the generator settings echoed.
pub fn generate_dataset(spec: &SynthSpec, seed: u64, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let skel = Skeleton::default52();
    let skel_text = skel.to_text();
    std::fs::write(dir.join(SKELETON_FILE), &skel_text)?;
    let vocab = Vocab::of_size(spec.vocab_size)?;
    let vocab_text = vocab.to_text();
    std::fs::write(dir.join(VOCAB_FILE), &vocab_text)?;
    let generator = serde_json::to_value(spec)
        .map_err(|e| CoreError::validation(format!("spec serialization: {e}")))?;

    let mut entries = Vec::with_capacity(spec.clips);
    for idx in 0..spec.clips {
        let class_id = (idx % vocab.len()) as u32;
        let clip = generate_clip(spec, skel, class_id, derive_seed(seed, idx as u64))?;
        let bytes = clip_file::encode(&clip)?;
        let file = format!("clip_{idx:04}.cog");
        std::fs::write(dir.join(&file), &bytes)?;
        entries.push(ClipEntry {
            file,
            sha256: sha256_hex(&bytes),
            frames: clip.frames(),
            class_id,
            split: split_for_index(idx),
        });
    }

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        seed,
        fps: spec.fps,
        skeleton_sha256: sha256_hex(skel_text.as_bytes()),
        vocab_sha256: sha256_hex(vocab_text.as_bytes()),
        generator,
        clips: entries,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// A dataset directory loaded back into memory, clips in manifest order.
pub struct Dataset {
    pub manifest: Manifest,
    pub skeleton: Skeleton,
    pub vocab: Vocab,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest = Manifest::load(dir)?;
        let skel_path = dir.join(SKELETON_FILE);
        let skel_text = std::fs::read_to_string(&skel_path).map_err(|e| {
            CoreError::MissingPrerequisite(format!("no skeleton at {}: {e}", skel_path.display()))
        })?;
        let skeleton = Skeleton::parse(&skel_text)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for entry in &manifest.clips {
            let clip = clip_file::load(&dir.join(&entry.file))?;
            if clip.frames() != entry.frames || clip.class_id != Some(entry.class_id) {
                return Err(CoreError::validation(format!(
                    "{} disagrees with its manifest entry (frames {} vs {}, class {:?} vs {})",
                    entry.file,
                    clip.frames(),
                    entry.frames,
                    clip.class_id,
                    entry.class_id
                )));
            }
            clips.push(clip);
        }
        Ok(Dataset { manifest, skeleton, vocab, clips })
    }

    /// Clips of one split with their manifest entries.
    pub fn split(&self, split: Split) -> impl Iterator<Item = (&ClipEntry, &Clip)> {
        self.manifest
            .clips
            .iter()
            .zip(&self.clips)
            .filter(move |(e, _)| e.split == split)
    }
}
