//! Outputs are written into a scratch directory next to their destination
//! and moved into place only once the whole stage has succeeded. Dropping an
//! uncommitted [`Staging`] deletes the scratch directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io, CliResult};

#[derive(Debug)]
pub struct Staging {
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    /// Creates `<parent>/.staging-<label>`, discarding leftovers from an
    /// interrupted run.
    pub fn new(parent: &Path, label: &str) -> CliResult<Self> {
        let dir = parent.join(format!(".staging-{label}"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(Staging { dir, committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Replaces `target` with the staged directory.
    pub fn commit_dir(mut self, target: &Path) -> CliResult<()> {
        if target.exists() {
            fs::remove_dir_all(target).map_err(|e| io(target, e))?;
        }
        fs::rename(&self.dir, target).map_err(|e| io(target, e))?;
        self.committed = true;
        Ok(())
    }

    /// Moves every staged file into `target`, overwriting same-named files.
    pub fn commit_files(mut self, target: &Path) -> CliResult<()> {
        let mut names: Vec<_> = fs::read_dir(&self.dir)
            .map_err(|e| io(&self.dir, e))?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<Result<_, _>>()
            .map_err(|e| io(&self.dir, e))?;
        names.sort();
        for name in names {
            let to = target.join(&name);
            fs::rename(self.dir.join(&name), &to).map_err(|e| io(&to, e))?;
        }
        fs::remove_dir(&self.dir).map_err(|e| io(&self.dir, e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
