use crate::cmd::echo_path;
use crate::config::RunConfig;
use crate::dataset::{ingest_file, read_cache, require_file, sha256_hex, write_cache};
use crate::error::{CliError, CliResult};

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("ingest needs a data file".into()))?;
    let out = cfg
        .cache
        .as_ref()
        .ok_or_else(|| CliError::Usage("ingest needs --out (or cache in the config)".into()))?;
    require_file(data)?;
    let hash = sha256_hex(data)?;
    if out.is_file() {
        if let Ok(cache) = read_cache(out) {
            if cache.source_sha256 == hash && cache.dataset.options == cfg.split {
                println!("{}: up to date", out.display());
                return Ok(());
            }
        }
    }
    let ds = ingest_file(data, cfg.split)?;
    write_cache(out, &hash, &ds)?;
    cfg.write_echo(&echo_path(out))?;
    println!("users\tPOIs\tcheck-ins");
    println!("{}\t{}\t{}", ds.num_users(), ds.num_pois(), ds.num_checkins());
    println!("wrote {}", out.display());
    Ok(())
}
