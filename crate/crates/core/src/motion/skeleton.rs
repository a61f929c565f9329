//! Skeleton description: joint tree, rest offsets, and body-part groups.
//!
//! Skeletons load from a small versioned text format (`cogskel v1`) so
//! rigs can be swapped without recompiling. The bundled 52-joint rig
//! (22 body joints + 15 fingers per hand) is embedded and is what the
//! synthetic data generator and default configs use.

use std::sync::LazyLock;

use crate::error::{CoreError, Result};

pub const DEFAULT_SKELETON_TEXT: &str = include_str!("../../assets/skeleton52.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    parents: Vec<i32>,
    offsets: Vec<[f64; 3]>,
    lower: Vec<usize>,
    upper: Vec<usize>,
    fingers: Vec<usize>,
    toes: [usize; 2],
}

static DEFAULT_SKELETON: LazyLock<Skeleton> = LazyLock::new(|| {
    Skeleton::parse(DEFAULT_SKELETON_TEXT).expect("embedded skeleton must parse")
});

impl Skeleton {
    /// The bundled 52-joint rig.
    pub fn default52() -> &'static Skeleton {
        &DEFAULT_SKELETON
    }

    pub fn joints(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        let p = self.parents[j];
        (p >= 0).then_some(p as usize)
    }

    pub fn offset(&self, j: usize) -> [f64; 3] {
        self.offsets[j]
    }

    /// Legs, feet, and toes (all non-root lower-body joints).
    pub fn lower(&self) -> &[usize] {
        &self.lower
    }

    /// Spine, neck, head, arms through the wrists.
    pub fn upper(&self) -> &[usize] {
        &self.upper
    }

    pub fn fingers(&self) -> &[usize] {
        &self.fingers
    }

    /// `[left, right]` toe joint indices.
    pub fn toes(&self) -> [usize; 2] {
        self.toes
    }

    pub fn parse(text: &str) -> Result<Skeleton> {
        let mut lines = ByteOffsetLines::new(text);

        let (off, header) = lines
            .next_content()
            .ok_or_else(|| CoreError::parse(0, "empty skeleton file"))?;
        if header.trim() != "cogskel v1" {
            return Err(CoreError::parse(
                off,
                format!("expected header 'cogskel v1', got '{}'", header.trim()),
            ));
        }

        let (off, count_line) = lines
            .next_content()
            .ok_or_else(|| CoreError::parse(off, "missing 'joints N' line"))?;
        let n: usize = match count_line.trim().strip_prefix("joints ") {
            Some(rest) => rest
                .trim()
                .parse()
                .map_err(|_| CoreError::parse(off, format!("bad joint count '{rest}'")))?,
            None => return Err(CoreError::parse(off, "expected 'joints N'")),
        };
        if n == 0 || n > 1024 {
            return Err(CoreError::parse(off, format!("unreasonable joint count {n}")));
        }

        let mut names = Vec::with_capacity(n);
        let mut parents = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for expect in 0..n {
            let (off, line) = lines
                .next_content()
                .ok_or_else(|| CoreError::parse(off, format!("expected {n} joint lines")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(CoreError::parse(
                    off,
                    format!("joint line needs 6 fields, got {}", fields.len()),
                ));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| CoreError::parse(off, format!("bad joint index '{}'", fields[0])))?;
            if idx != expect {
                return Err(CoreError::parse(
                    off,
                    format!("joint indices must be sequential; expected {expect}, got {idx}"),
                ));
            }
            let parent: i32 = fields[2]
                .parse()
                .map_err(|_| CoreError::parse(off, format!("bad parent '{}'", fields[2])))?;
            if idx == 0 {
                if parent != -1 {
                    return Err(CoreError::parse(off, "joint 0 must have parent -1"));
                }
            } else if parent < 0 || parent as usize >= idx {
                return Err(CoreError::parse(
                    off,
                    format!("joint {idx} parent {parent} must come earlier in the file"),
                ));
            }
            let mut o = [0.0f64; 3];
            for (k, f) in fields[3..6].iter().enumerate() {
                o[k] = f
                    .parse()
                    .map_err(|_| CoreError::parse(off, format!("bad offset component '{f}'")))?;
            }
            if o.iter().any(|v| !v.is_finite() || v.abs() > 2.0) {
                return Err(CoreError::parse(off, format!("offset {o:?} out of range")));
            }
            let name = fields[1].to_string();
            if names.contains(&name) {
                return Err(CoreError::parse(off, format!("duplicate joint name '{name}'")));
            }
            names.push(name);
            parents.push(parent);
            offsets.push(o);
        }

        let mut toes: Option<[usize; 2]> = None;
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut fingers = Vec::new();
        while let Some((off, line)) = lines.next_content() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.first().copied() {
                Some("toes") => {
                    let ids = parse_ids(&fields[1..], n, off)?;
                    if ids.len() != 2 {
                        return Err(CoreError::parse(off, "toes line needs exactly 2 joints"));
                    }
                    toes = Some([ids[0], ids[1]]);
                }
                Some("group") => {
                    let target = match fields.get(1).copied() {
                        Some("lower") => &mut lower,
                        Some("upper") => &mut upper,
                        Some("fingers") => &mut fingers,
                        other => {
                            return Err(CoreError::parse(
                                off,
                                format!("unknown group {other:?}"),
                            ))
                        }
                    };
                    *target = parse_ids(&fields[2..], n, off)?;
                }
                other => {
                    return Err(CoreError::parse(off, format!("unexpected line '{other:?}'")));
                }
            }
        }

        let toes = toes.ok_or_else(|| CoreError::validation("skeleton missing toes line"))?;
        let skel = Skeleton { names, parents, offsets, lower, upper, fingers, toes };
        skel.validate()?;
        Ok(skel)
    }

    fn validate(&self) -> Result<()> {
        let n = self.joints();
        let mut seen = vec![false; n];
        seen[0] = true; // root belongs to no group; it is carried by the trajectory
        for &j in self.lower.iter().chain(&self.upper).chain(&self.fingers) {
            if j == 0 || j >= n {
                return Err(CoreError::validation(format!("group joint {j} out of range")));
            }
            if seen[j] {
                return Err(CoreError::validation(format!(
                    "joint {j} ({}) appears in more than one group",
                    self.names[j]
                )));
            }
            seen[j] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(CoreError::validation(format!(
                "joint {missing} ({}) belongs to no group",
                self.names[missing]
            )));
        }
        for &t in &self.toes {
            if !self.lower.contains(&t) {
                return Err(CoreError::validation(format!(
                    "toe joint {t} must be in the lower group"
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("cogskel v1\n");
        out.push_str(&format!("joints {}\n", self.joints()));
        for j in 0..self.joints() {
            let o = self.offsets[j];
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                j, self.names[j], self.parents[j], o[0], o[1], o[2]
            ));
        }
        out.push_str(&format!("toes {} {}\n", self.toes[0], self.toes[1]));
        for (name, ids) in [
            ("lower", &self.lower),
            ("upper", &self.upper),
            ("fingers", &self.fingers),
        ] {
            out.push_str(&format!("group {}", name));
            for id in ids {
                out.push_str(&format!(" {id}"));
            }
            out.push('\n');
        }
        out
    }

    /// Root height in the rest pose that puts toe bottoms at y = 0.
    pub fn rest_root_height(&self) -> f64 {
        // Accumulate y-offsets down the left-toe chain.
        let mut j = self.toes[0];
        let mut y = 0.0;
        while let Some(p) = self.parent(j) {
            y += self.offsets[j][1];
            j = p;
        }
        -y
    }
}

fn parse_ids(fields: &[&str], n: usize, off: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(fields.len());
    for f in fields {
        let id: usize = f
            .parse()
            .map_err(|_| CoreError::parse(off, format!("bad joint id '{f}'")))?;
        if id >= n {
            return Err(CoreError::parse(off, format!("joint id {id} out of range")));
        }
        out.push(id);
    }
    Ok(out)
}

/// Iterator over non-empty, non-comment lines with their byte offsets.
struct ByteOffsetLines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> ByteOffsetLines<'a> {
    fn new(text: &'a str) -> Self {
        ByteOffsetLines { text, pos: 0 }
    }

    fn next_content(&mut self) -> Option<(u64, &'a str)> {
        while self.pos < self.text.len() {
            let start = self.pos;
            let rest = &self.text[start..];
            let end = rest.find('\n').map(|i| start + i).unwrap_or(self.text.len());
            self.pos = end + 1;
            let line = &self.text[start..end];
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Some((start as u64, line));
            }
        }
        None
    }
}
