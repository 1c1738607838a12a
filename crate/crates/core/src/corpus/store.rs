//! Append-only versioned corpus storage: `root/v0001`, `root/v0002`, ...
//! Each write creates a new version directory; old versions stay loadable.

use std::fs;
use std::path::{Path, PathBuf};

use super::{load_corpus, save_corpus, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CorpusStore {
    root: PathBuf,
}

impl CorpusStore {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        CorpusStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Existing version numbers in ascending order.
    pub fn versions(&self) -> Result<Vec<u32>> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name.strip_prefix('v').and_then(|d| d.parse::<u32>().ok()) {
                out.push(n);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn version_dir(&self, version: u32) -> PathBuf {
        self.root.join(format!("v{version:04}"))
    }

    pub fn load(&self, version: u32) -> Result<Corpus> {
        load_corpus(&self.version_dir(version))
    }

    pub fn latest(&self) -> Result<Option<(u32, Corpus)>> {
        match self.versions()?.last() {
            Some(&v) => Ok(Some((v, self.load(v)?))),
            None => Ok(None),
        }
    }

    /// Writes `corpus` as the next version and returns its number.
    pub fn write_next(&self, corpus: &Corpus) -> Result<u32> {
        let next = self.versions()?.last().copied().unwrap_or(0) + 1;
        let dir = self.version_dir(next);
        if dir.exists() {
            return Err(Error::Invalid(format!("version {} already exists", dir.display())));
        }
        save_corpus(corpus, &dir)?;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{fixture_corpus, FixtureSpec};

    #[test]
    fn versions_append() {
        let dir = tempfile::tempdir().unwrap();
        let store = CorpusStore::open(dir.path());
        assert!(store.latest().unwrap().is_none());
        let a = fixture_corpus(&FixtureSpec::grid(1, 2));
        let b = fixture_corpus(&FixtureSpec::grid(2, 2));
        assert_eq!(store.write_next(&a).unwrap(), 1);
        assert_eq!(store.write_next(&b).unwrap(), 2);
        assert_eq!(store.load(1).unwrap(), a);
        assert_eq!(store.latest().unwrap().unwrap().1, b);
    }
}
