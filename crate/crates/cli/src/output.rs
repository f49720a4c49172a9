use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

/// An output directory. Every file lands via a temporary sibling and a rename, so a
/// reader never observes a partial artifact.
pub struct OutDir {
    root: PathBuf,
}

pub const CONFIG_ECHO: &str = "run_config.toml";

impl OutDir {
    /// Creates the directory and echoes the effective configuration into it.
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let out = Self { root: root.to_path_buf() };
        out.write(CONFIG_ECHO, config.to_toml().as_bytes())?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp{}", std::process::id()));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(CliError::io(&target, e));
        }
        Ok(target)
    }

    /// Renders into a buffer with `f`, then writes the buffer atomically.
    pub fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> reco_core::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}
