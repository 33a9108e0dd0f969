//! Output staging: files are written next to their destination under a
//! temporary name and renamed into place only when the whole command
//! succeeds. Dropping an uncommitted stage removes the temporaries.

use std::fs;
use std::path::{Path, PathBuf};

use viseme_core::Error;

#[derive(Debug, Default)]
pub struct Stage {
    pending: Vec<(PathBuf, PathBuf)>,
    created_dirs: Vec<PathBuf>,
}

impl Stage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, dest: &Path, bytes: &[u8]) -> Result<(), Error> {
        if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.ensure_dir(parent)?;
        }
        let name = dest
            .file_name()
            .ok_or_else(|| Error::Config(format!("output path {} has no file name", dest.display())))?;
        let tmp = dest.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        self.pending.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<(), Error> {
        if dir.is_dir() {
            return Ok(());
        }
        // remember the outermost directory we create so a failed run can
        // remove it again
        let mut missing = dir.to_path_buf();
        while let Some(parent) = missing.parent() {
            if parent.as_os_str().is_empty() || parent.is_dir() {
                break;
            }
            missing = parent.to_path_buf();
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.created_dirs.push(missing);
        Ok(())
    }

    /// Renames every staged file into place.
    pub fn commit(mut self) -> Result<(), Error> {
        let pending = std::mem::take(&mut self.pending);
        for (i, (tmp, dest)) in pending.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, dest) {
                for (t, _) in &pending[i..] {
                    let _ = fs::remove_file(t);
                }
                for (_, d) in &pending[..i] {
                    let _ = fs::remove_file(d);
                }
                return Err(Error::io(dest, e));
            }
        }
        self.created_dirs.clear();
        Ok(())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
        for dir in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir_all(dir);
        }
    }
}
