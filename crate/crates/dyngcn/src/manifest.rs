//! Dataset manifests: one `path<TAB>label` line per sample, paths relative to
//! the manifest. Directive lines `#! layout <name>`, `#! split <tag>` and
//! `#! class <index> <name>` carry metadata; other `#` lines are comments.

use std::fs;
use std::path::{Path, PathBuf};

use dyngcn_core::data::SkeletonSequence;

use crate::error::{Error, Result};
use crate::sequence::load_sequence;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub layout: Option<String>,
    pub split: Option<String>,
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        let from_entries = self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
        from_entries.max(self.class_names.len())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(l) = &self.layout {
            s.push_str(&format!("#! layout {l}\n"));
        }
        if let Some(sp) = &self.split {
            s.push_str(&format!("#! split {sp}\n"));
        }
        for (i, c) in self.class_names.iter().enumerate() {
            s.push_str(&format!("#! class {i} {c}\n"));
        }
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\n", e.path.display(), e.label));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = DatasetManifest::default();
        let mut named: Vec<(usize, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            let err = |msg: String| Error::parse(path, format!("line {}", i + 1), msg);
            if let Some(dir) = line.strip_prefix("#!") {
                let mut parts = dir.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("layout"), Some(v)) => m.layout = Some(v.to_string()),
                    (Some("split"), Some(v)) => m.split = Some(v.to_string()),
                    (Some("class"), Some(idx)) => {
                        let idx = idx.parse().map_err(|_| err(format!("class index '{idx}' is not an integer")))?;
                        let name = parts.collect::<Vec<_>>().join(" ");
                        named.push((idx, name));
                    }
                    _ => return Err(err(format!("unknown directive '{}'", dir.trim()))),
                }
                continue;
            }
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (p, label) = line.rsplit_once('\t').ok_or_else(|| err("expected 'path<TAB>label'".into()))?;
            let label = label.trim().parse().map_err(|_| err(format!("label '{}' is not a nonnegative integer", label.trim())))?;
            m.entries.push(ManifestEntry { path: PathBuf::from(p), label });
        }
        named.sort();
        for (k, (idx, name)) in named.into_iter().enumerate() {
            if idx != k {
                return Err(Error::parse(path, "class table", format!("class indices must be 0, 1, 2, ...; found {idx} at position {k}")));
            }
            m.class_names.push(name);
        }
        if !m.class_names.is_empty() {
            if let Some(e) = m.entries.iter().find(|e| e.label >= m.class_names.len()) {
                return Err(Error::parse(path, e.path.display().to_string(), format!("label {} outside the class table", e.label)));
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Loads every listed sequence; the manifest label wins over the file's.
    pub fn load_sequences(&self) -> Result<Vec<SkeletonSequence>> {
        self.entries
            .iter()
            .map(|e| {
                let mut s = load_sequence(&e.path)?;
                if s.id.is_empty() {
                    s.id = e.path.display().to_string();
                }
                s.label = e.label;
                Ok(s)
            })
            .collect()
    }
}
