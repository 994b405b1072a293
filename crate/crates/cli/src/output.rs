//! Artifact writing. Every file goes through a temporary sibling and a
//! rename, and a set of outputs is either written completely or removed.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| io::Error::other(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Outputs collected in memory and committed together.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file into `dir`; on the first failure the files already
    /// written are removed again.
    pub fn commit(self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = write_atomic(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_everything() {
        let dir = std::env::temp_dir().join(format!("maxwell-rb-out-{}", std::process::id()));
        let mut a = Artifacts::new();
        a.add("x.txt", "one");
        a.add("sub/y.txt", "two");
        let paths = a.commit(&dir).unwrap();
        assert_eq!(fs::read_to_string(&paths[1]).unwrap(), "two");
        // no temporaries left behind
        let leftovers =
            fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp"));
        assert_eq!(leftovers.count(), 0);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn failed_commit_leaves_nothing() {
        let dir = std::env::temp_dir().join(format!("maxwell-rb-fail-{}", std::process::id()));
        fs::create_dir_all(dir.join("blocker")).unwrap();
        let mut a = Artifacts::new();
        a.add("first.txt", "ok");
        // a directory already sits where this file should go
        a.add("blocker", "clash");
        assert!(a.commit(&dir).is_err());
        assert!(!dir.join("first.txt").exists());
        fs::remove_dir_all(&dir).unwrap();
    }
}
