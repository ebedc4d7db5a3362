//! All-or-nothing output directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Files of one run, written together or not at all.
#[derive(Debug, Default, Clone)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes into a sibling staging directory, then moves every file into
    /// `dir`. On error the staging directory is removed and `dir` is untouched.
    pub fn commit(&self, dir: &Path) -> Result<()> {
        let staging = staging_dir(dir);
        let result = self.write_staged(&staging, dir);
        if staging.exists() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }

    fn write_staged(&self, staging: &Path, dir: &Path) -> Result<()> {
        if staging.exists() {
            fs::remove_dir_all(staging).with_context(|| format!("clearing {}", staging.display()))?;
        }
        fs::create_dir_all(staging).with_context(|| format!("creating {}", staging.display()))?;
        for (name, bytes) in &self.files {
            fs::write(staging.join(name), bytes).with_context(|| format!("writing {name}"))?;
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, _) in &self.files {
            fs::rename(staging.join(name), dir.join(name))
                .with_context(|| format!("moving {name} into {}", dir.display()))?;
        }
        Ok(())
    }
}

fn staging_dir(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parent.join(format!(".{name}.staging-{}", std::process::id()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_files() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut set = OutputSet::new();
        set.add("a.csv", b"x\n1\n".to_vec());
        set.add("manifest.json", b"{}".to_vec());
        set.commit(&dir).unwrap();
        assert_eq!(fs::read(dir.join("a.csv")).unwrap(), b"x\n1\n");
        assert!(dir.join("manifest.json").exists());
        let leftovers: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn failed_commit_leaves_no_output() {
        let tmp = tempfile::tempdir().unwrap();
        let blocker = tmp.path().join("file");
        fs::write(&blocker, b"").unwrap();
        let dir = blocker.join("run");
        let mut set = OutputSet::new();
        set.add("a.csv", vec![]);
        assert!(set.commit(&dir).is_err());
        assert!(!dir.exists());
    }
}
