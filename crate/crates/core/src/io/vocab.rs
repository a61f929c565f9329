//! Gesture class vocabulary: class names plus short text descriptions.
//!
//! Text format (`cogvocab v1`): one class per line, `id name phrase...`,
//! ids sequential from 0. The bundled 64-class vocabulary enumerates
//! arm choice x movement shape x tempo x amplitude; the same four
//! attributes drive the synthetic gesture generator, so class ids, names,
//! and phrases all agree with the generated motion.

use std::path::Path;

use crate::error::{CoreError, Result};

pub const ARMS: [&str; 4] = ["left", "right", "both", "alternating"];
pub const SHAPES: [&str; 4] = ["raise", "sweep", "circle", "push"];
pub const TEMPOS: [&str; 2] = ["slow", "fast"];
pub const SIZES: [&str; 2] = ["small", "wide"];

/// Attribute decomposition of a class id in the bundled vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassAttrs {
    pub arms: usize,
    pub shape: usize,
    pub tempo: usize,
    pub size: usize,
}

impl ClassAttrs {
    pub fn from_id(id: usize) -> ClassAttrs {
        assert!(id < 64);
        ClassAttrs {
            arms: id / 16,
            shape: (id / 4) % 4,
            tempo: (id / 2) % 2,
            size: id % 2,
        }
    }

    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            ARMS[self.arms], SHAPES[self.shape], TEMPOS[self.tempo], SIZES[self.size]
        )
    }

    pub fn phrase(&self) -> String {
        let arms = match self.arms {
            0 => "the left arm",
            1 => "the right arm",
            2 => "both arms",
            _ => "alternating arms",
        };
        let verb = match self.shape {
            0 => "raise",
            1 => "sweep",
            2 => "circle",
            _ => "push",
        };
        let tempo = if self.tempo == 0 { "slowly" } else { "quickly" };
        let size = if self.size == 0 {
            "in a small motion"
        } else {
            "in a wide motion"
        };
        format!("{verb} {arms} {tempo} {size}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub name: String,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<VocabEntry>,
}

impl Vocab {
    /// The bundled 64-class vocabulary.
    pub fn default64() -> Vocab {
        Vocab::of_size(64).expect("64 is a valid vocabulary size")
    }

    /// The first `n` classes of the bundled vocabulary, 2..=64.
    pub fn of_size(n: usize) -> Result<Vocab> {
        if !(2..=64).contains(&n) {
            return Err(CoreError::validation(format!(
                "vocabulary size must be between 2 and 64, got {n}"
            )));
        }
        let entries = (0..n)
            .map(|id| {
                let a = ClassAttrs::from_id(id);
                VocabEntry { name: a.name(), phrase: a.phrase() }
            })
            .collect();
        Ok(Vocab { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> &VocabEntry {
        &self.entries[id]
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    /// Sorted unique words across all phrases; token ids index into this.
    pub fn word_list(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .entries
            .iter()
            .flat_map(|e| e.phrase.split_whitespace().map(str::to_string))
            .collect();
        words.sort();
        words.dedup();
        words
    }

    /// Phrase of a class as token ids into [`Vocab::word_list`].
    pub fn phrase_tokens(&self, id: usize, words: &[String]) -> Vec<usize> {
        self.entries[id]
            .phrase
            .split_whitespace()
            .map(|w| {
                words
                    .binary_search_by(|probe| probe.as_str().cmp(w))
                    .expect("phrase word missing from word list")
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("cogvocab v1\n");
        for (id, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("{id} {} {}\n", e.name, e.phrase));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Vocab> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        let (_, header) = lines
            .next()
            .ok_or_else(|| CoreError::parse(0, "empty vocab file"))?;
        if header.trim() != "cogvocab v1" {
            return Err(CoreError::parse(0, format!("bad vocab header '{header}'")));
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines {
            let mut fields = line.split_whitespace();
            let id: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| CoreError::parse(lineno as u64, "bad class id"))?;
            if id != entries.len() {
                return Err(CoreError::parse(
                    lineno as u64,
                    format!("class ids must be sequential; expected {}, got {id}", entries.len()),
                ));
            }
            let name = fields
                .next()
                .ok_or_else(|| CoreError::parse(lineno as u64, "missing class name"))?
                .to_string();
            let phrase = fields.collect::<Vec<_>>().join(" ");
            if phrase.is_empty() {
                return Err(CoreError::parse(lineno as u64, "missing class phrase"));
            }
            entries.push(VocabEntry { name, phrase });
        }
        if entries.is_empty() {
            return Err(CoreError::validation("vocab has no classes"));
        }
        Ok(Vocab { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        Vocab::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocab_has_64_distinct_classes() {
        let v = Vocab::default64();
        assert_eq!(v.len(), 64);
        let mut names: Vec<_> = v.entries().iter().map(|e| e.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 64);
        let mut phrases: Vec<_> = v.entries().iter().map(|e| e.phrase.clone()).collect();
        phrases.sort();
        phrases.dedup();
        assert_eq!(phrases.len(), 64);
    }

    #[test]
    fn attrs_round_trip_ids() {
        for id in 0..64 {
            let a = ClassAttrs::from_id(id);
            let rebuilt = a.arms * 16 + a.shape * 4 + a.tempo * 2 + a.size;
            assert_eq!(rebuilt, id);
        }
    }

    #[test]
    fn parse_serialize_round_trip() {
        let v = Vocab::default64();
        let back = Vocab::parse(&v.to_text()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn tokens_index_the_word_list() {
        let v = Vocab::default64();
        let words = v.word_list();
        for id in 0..64 {
            let toks = v.phrase_tokens(id, &words);
            assert!(!toks.is_empty());
            let rebuilt: Vec<&str> = toks.iter().map(|&t| words[t].as_str()).collect();
            assert_eq!(rebuilt.join(" "), v.entry(id).phrase);
        }
    }

    #[test]
    fn rejects_out_of_order_ids() {
        let text = "cogvocab v1\n0 a wave the arm\n2 b push the arm\n";
        assert!(Vocab::parse(text).is_err());
    }
}
