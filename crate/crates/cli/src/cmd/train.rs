use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ccrank_core::model::save_checkpoint;
use ccrank_core::train::{train_with, StopReason};
use ccrank_core::ModelConfig;
use serde_json::{json, Value};

use crate::cmd::create_dir;
use crate::config::RunConfig;
use crate::dataset;
use crate::error::{CliError, CliResult, Context};

pub const CHECKPOINT: &str = "model.ckpt";
pub const LAST_FINITE: &str = "last-finite.ckpt";
pub const RUN_LOG: &str = "run.log";
pub const CONFIG_ECHO: &str = "config.txt";

fn log_line(log: &mut impl Write, path: &Path, line: &Value) -> CliResult<()> {
    writeln!(log, "{line}")
        .and_then(|_| log.flush())
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate()?;
    let data = dataset::load(cfg)?;
    let model_config = ModelConfig {
        num_pois: data.num_pois(),
        ..cfg.model.clone()
    };
    let dir = &cfg.checkpoint_dir;
    create_dir(dir)?;
    cfg.write_echo(&dir.join(CONFIG_ECHO))?;

    let log_path = dir.join(RUN_LOG);
    let file = File::create(&log_path).map_err(|e| CliError::Failed(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    log_line(
        &mut log,
        &log_path,
        &json!({
            "event": "start",
            "seed": cfg.seed,
            "users": data.num_users(),
            "pois": data.num_pois(),
            "checkins": data.num_checkins(),
        }),
    )?;

    let mut log_error = None;
    let outcome = train_with(&data, model_config, cfg.train.clone(), |record, _| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val HR@10 {:.4}  val MRR {:.4}",
            record.epoch, record.train_loss, record.val.hr10, record.val.mrr
        );
        let mut line = serde_json::to_value(record).expect("epoch records serialize");
        line["event"] = json!("epoch");
        if let Err(e) = log_line(&mut log, &log_path, &line) {
            log_error.get_or_insert(e);
        }
    })
    .context("train")?;
    if let Some(e) = log_error {
        return Err(e);
    }
    log_line(
        &mut log,
        &log_path,
        &json!({
            "event": "end",
            "stop": outcome.stop,
            "best_epoch": outcome.best_epoch,
            "initial_loss": outcome.initial_loss,
        }),
    )?;

    if let StopReason::Diverged { message } = &outcome.stop {
        let path = dir.join(LAST_FINITE);
        save_checkpoint(&path, &outcome.model).context(path.display())?;
        return Err(CliError::Diverged(format!(
            "{message}; last finite parameters saved to {}",
            path.display()
        )));
    }
    let path = dir.join(CHECKPOINT);
    save_checkpoint(&path, &outcome.model).context(path.display())?;
    println!(
        "trained {} epochs ({}), best epoch {}; wrote {}",
        outcome.history.len(),
        serde_json::to_value(&outcome.stop).expect("stop reasons serialize")["reason"]
            .as_str()
            .unwrap_or("done"),
        outcome.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        path.display()
    );
    Ok(())
}
