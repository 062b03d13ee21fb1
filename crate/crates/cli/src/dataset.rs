//! Dataset caches: a JSON header line carrying the SHA-256 of the source
//! file, then the split dataset as JSON.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ccrank_core::ingest::{filter_and_split, parse_checkins};
use ccrank_core::{SplitDataset, SplitOptions};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core {
        context: path.display().to_string(),
        source: ccrank_core::Error::io(path, e),
    }
}

pub fn sha256_hex(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| io_failure(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_failure(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn ingest_file(path: &Path, options: SplitOptions) -> CliResult<SplitDataset> {
    require_file(path)?;
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let parsed = parse_checkins(BufReader::new(file)).context(path.display())?;
    filter_and_split(&parsed.checkins, options).context(path.display())
}

pub struct Cache {
    pub source_sha256: String,
    pub dataset: SplitDataset,
}

pub fn write_cache(path: &Path, source_sha256: &str, dataset: &SplitDataset) -> CliResult<()> {
    let header = json!({ "source_sha256": source_sha256 });
    let body = dataset.to_json().context(path.display())?;
    std::fs::write(path, format!("{header}\n{body}\n")).map_err(|e| io_failure(path, e))
}

pub fn read_cache(path: &Path) -> CliResult<Cache> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let bad = |line: usize, msg: String| CliError::Core {
        context: path.display().to_string(),
        source: ccrank_core::Error::Parse { line, msg },
    };
    let (header, body) = text.split_once('\n').unwrap_or((&text, ""));
    let header: Value = serde_json::from_str(header).map_err(|e| bad(1, format!("not a dataset cache: {e}")))?;
    let source_sha256 = header["source_sha256"]
        .as_str()
        .ok_or_else(|| bad(1, "cache lacks source_sha256".into()))?
        .to_string();
    let dataset = SplitDataset::from_json(body).map_err(|e| bad(2, format!("bad dataset: {e}")))?;
    Ok(Cache { source_sha256, dataset })
}

fn looks_like_cache(path: &Path) -> bool {
    let mut head = [0u8; 64];
    let Ok(mut f) = File::open(path) else {
        return false;
    };
    let n = f.read(&mut head).unwrap_or(0);
    head[..n].iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{')
}

/// The dataset named by the run config: `cache` if set, else `data`, which
/// may itself be a cache or a raw check-in file.
pub fn load(cfg: &RunConfig) -> CliResult<SplitDataset> {
    let path = cfg
        .cache
        .as_ref()
        .or(cfg.data.as_ref())
        .ok_or_else(|| CliError::Usage("no dataset given (use --data or set data/cache in the config)".into()))?;
    require_file(path)?;
    if looks_like_cache(path) {
        Ok(read_cache(path)?.dataset)
    } else {
        ingest_file(path, cfg.split)
    }
}
