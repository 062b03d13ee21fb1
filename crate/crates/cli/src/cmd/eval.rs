use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ccrank_core::eval::{eval_instances, evaluate, instance_pool, pool_size_sweep, PoolMode};
use ccrank_core::model::load_checkpoint;
use ccrank_core::{CandidateSlate, PaddedHistory};

use crate::cmd::create_dir;
use crate::cmd::{train::CONFIG_ECHO, write_file};
use crate::config::RunConfig;
use crate::dataset::{self, require_file};
use crate::error::{CliError, CliResult, Context};

pub const REPORT: &str = "report.json";
pub const RANKS: &str = "ranks.tsv";
pub const SWEEP: &str = "sweep.tsv";
pub const ATTENTION: &str = "attention.tsv";

pub fn run(cfg: &RunConfig, checkpoint: &Path, sweep: &[usize], dump_attention: bool) -> CliResult<()> {
    if cfg.pool.mode == PoolMode::Sampled && cfg.pool.size < 2 {
        return Err(CliError::Usage("pool_size must be at least 2".into()));
    }
    if let Some(&s) = sweep.iter().find(|&&s| s < 2) {
        return Err(CliError::Usage(format!("sweep size {s} is below 2")));
    }
    require_file(checkpoint)?;
    let data = dataset::load(cfg)?;
    let model = load_checkpoint(checkpoint).context(checkpoint.display())?;

    let dir = &cfg.report_dir;
    create_dir(dir)?;
    cfg.write_echo(&dir.join(CONFIG_ECHO))?;
    let report = evaluate(&model, &data, &cfg.pool).context("eval")?;
    write_file(&dir.join(REPORT), report.to_json().context("eval")?)?;
    write_file(&dir.join(RANKS), report.ranks_tsv())?;

    let m = &report.metrics;
    println!("pool {} ({} candidates), seed {}", report.pool_mode, report.pool_size, report.seed);
    println!("instances\tHR@5\tHR@10\tNDCG@5\tNDCG@10\tMRR");
    println!(
        "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
        m.instances, m.hr5, m.hr10, m.ndcg5, m.ndcg10, m.mrr
    );
    if report.skipped > 0 {
        println!("skipped {} instances with POIs unknown to the checkpoint", report.skipped);
    }

    if !sweep.is_empty() {
        let points = pool_size_sweep(&model, &data, sweep, cfg.pool.seed).context("sweep")?;
        let mut tsv = String::from("pool_size\thr10\n");
        for p in &points {
            let _ = writeln!(tsv, "{}\t{}", p.size, p.hr10);
            println!("pool {:>6}  HR@10 {:.4}", p.size, p.hr10);
        }
        write_file(&dir.join(SWEEP), tsv)?;
    }

    if dump_attention {
        let inst = eval_instances(&data, model.config.history_len)
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Failed("no evaluation instance to dump".into()))?;
        let known = model.config.num_pois.min(data.num_pois());
        let pool = instance_pool(&inst, known, &cfg.pool).context("attention dump")?;
        let history = PaddedHistory::new(&inst.history, model.config.history_len, &data.stats).context("attention dump")?;
        let slate = CandidateSlate::from_dataset(pool.poi_ids, &data).context("attention dump")?;
        let dump = model.attention_dump(&history, &slate).context("attention dump")?;
        let path = dir.join(ATTENTION);
        let fail = |e: std::io::Error| CliError::Failed(format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(&path).map_err(fail)?);
        dump.write_tsv(&mut w).map_err(fail)?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}
