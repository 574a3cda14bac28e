//! File loading, provenance headers and all-or-nothing output.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use termine::corpus::{attach_annotations, parse_annotations, parse_conllu, parse_dual_bio};
use termine::mining::parse_vocabulary;
use termine::{ParsedSentence, RuleSet, TermKind, WeakLabeledSentence};

use crate::error::{CliError, Code, Context, Result};

pub const TOOL: &str = "termine";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// Hash of the command's settings as JSON. Output paths are left out.
    pub config_sha256: String,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &'static str, config: &T) -> Self {
        let json = serde_json::to_string(config).expect("config serializes");
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            config_sha256: sha256_hex(json.as_bytes()),
        }
    }

    /// Header line for text outputs.
    pub fn comment(&self) -> String {
        format!(
            "# {} {} {} config-sha256={}\n",
            self.tool, self.version, self.command, self.config_sha256
        )
    }

    /// Adds a top-level `provenance` key to a JSON object document.
    pub fn attach(&self, json: &str, pretty: bool) -> String {
        let mut v: serde_json::Value = serde_json::from_str(json).expect("library output is valid JSON");
        if let Some(o) = v.as_object_mut() {
            o.insert("provenance".into(), serde_json::to_value(self).expect("provenance serializes"));
        }
        if pretty {
            serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
        } else {
            serde_json::to_string(&v).expect("value serializes") + "\n"
        }
    }
}

/// Outputs are written to temporary files next to their targets and only
/// renamed into place by `commit`, so a failed command leaves nothing
/// behind.
#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, NamedTempFile)>,
}

impl Staged {
    pub fn add(&mut self, path: &Path, contents: &str) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir).code_at(Code::Io, dir)?;
        let mut tmp = NamedTempFile::new_in(dir).code_at(Code::Io, dir)?;
        tmp.write_all(contents.as_bytes()).code_at(Code::Io, path)?;
        self.files.push((path.to_path_buf(), tmp));
        Ok(())
    }

    pub fn commit(self) -> Result<()> {
        for (path, tmp) in self.files {
            tmp.persist(&path).code_at(Code::Io, &path)?;
        }
        Ok(())
    }
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).code_at(Code::Io, path)
}

/// CoNLL-U, with gold spans from the JSON-lines sidecar when given.
pub fn load_parsed(conllu: &Path, ann: Option<&Path>) -> Result<Vec<ParsedSentence>> {
    let mut sentences = parse_conllu(&read(conllu)?).code_at(Code::Parse, conllu)?;
    if let Some(ann) = ann {
        let annotations = parse_annotations(&read(ann)?).code_at(Code::Parse, ann)?;
        attach_annotations(&mut sentences, &annotations).code_at(Code::Parse, ann)?;
    }
    Ok(sentences)
}

/// Tagged sentences: CoNLL-U plus sidecar when `ann` is given, otherwise
/// the three-column BIO format.
pub fn load_labeled(path: &Path, ann: Option<&Path>) -> Result<Vec<WeakLabeledSentence>> {
    match ann {
        Some(_) => load_parsed(path, ann)?
            .iter()
            .map(WeakLabeledSentence::from_gold)
            .collect::<std::result::Result<_, _>>()
            .code_at(Code::Parse, path),
        None => parse_dual_bio(&read(path)?).code_at(Code::Parse, path),
    }
}

pub fn load_vocabulary(path: Option<&Path>) -> Result<BTreeSet<String>> {
    match path {
        Some(p) => Ok(parse_vocabulary(&read(p)?)),
        None => Ok(BTreeSet::new()),
    }
}

pub fn load_rules(path: &Path, kind: TermKind) -> Result<RuleSet> {
    let rules = RuleSet::from_json(&read(path)?).code_at(Code::Parse, path)?;
    if rules.kind != kind {
        return Err(CliError::at(
            Code::Config,
            path,
            format!("expected {kind} rules, found {} rules", rules.kind),
        ));
    }
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_is_stable_and_attached() {
        let a = Provenance::new("mine", &("x", 1));
        assert_eq!(a, Provenance::new("mine", &("x", 1)));
        assert_ne!(a.config_sha256, Provenance::new("mine", &("x", 2)).config_sha256);
        let json = a.attach("{\"b\": 1.5}", false);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["b"], 1.5);
        assert_eq!(v["provenance"]["command"], "mine");
        assert!(a.comment().starts_with("# termine "));
    }

    #[test]
    fn staged_files_appear_only_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("sub/out.txt");
        let mut staged = Staged::default();
        staged.add(&target, "hello").unwrap();
        assert!(!target.exists());
        staged.commit().unwrap();
        assert_eq!(fs::read_to_string(&target).unwrap(), "hello");

        let mut dropped = Staged::default();
        dropped.add(&dir.path().join("never.txt"), "x").unwrap();
        drop(dropped);
        assert!(!dir.path().join("never.txt").exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
