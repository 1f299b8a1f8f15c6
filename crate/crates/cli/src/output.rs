use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Output files staged next to their destination and renamed into place
/// only after every one of them was written.
#[derive(Debug, Default)]
pub struct Outputs {
    staged: Vec<(PathBuf, PathBuf)>,
}

fn temp_path(dest: &Path) -> PathBuf {
    let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    dest.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stage(&mut self, dest: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        let dest = dest.as_ref().to_path_buf();
        let tmp = temp_path(&dest);
        if let Err(e) = fs::write(&tmp, bytes.as_ref()) {
            self.discard();
            return Err(e).with_context(|| format!("writing {}", dest.display()));
        }
        self.staged.push((tmp, dest));
        Ok(())
    }

    pub fn commit(mut self) -> Result<()> {
        let staged = std::mem::take(&mut self.staged);
        for (i, (tmp, dest)) in staged.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, dest) {
                for (t, _) in &staged[i..] {
                    let _ = fs::remove_file(t);
                }
                return Err(e).with_context(|| format!("moving output into {}", dest.display()));
            }
        }
        Ok(())
    }

    fn discard(&mut self) {
        for (tmp, _) in self.staged.drain(..) {
            let _ = fs::remove_file(tmp);
        }
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        self.discard();
    }
}
