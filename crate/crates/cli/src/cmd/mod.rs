pub mod eval;
pub mod ingest;
pub mod synth;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

/// `data.csv` → `data.csv.config`: where the config echo for a file artifact goes.
pub fn echo_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    artifact.with_file_name(name)
}
