//! Checkpoints: a `key = value` model config header, a `---` separator line,
//! then the binary parameter table.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::ParamTable;

use super::config::ModelConfig;
use super::network::Model;

const SEPARATOR: &str = "---";

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model) -> std::io::Result<()> {
    w.write_all(model.config.to_text().as_bytes())?;
    writeln!(w, "{SEPARATOR}")?;
    model.params.write_to(w)
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Model> {
    let mut header = String::new();
    loop {
        let mut line = String::new();
        let n = r
            .read_line(&mut line)
            .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        if n == 0 {
            return Err(Error::Checkpoint("missing header separator".into()));
        }
        if line.trim_end() == SEPARATOR {
            break;
        }
        header.push_str(&line);
    }
    let config = ModelConfig::from_text(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = Model::new(config, 0)?;
    let entries = ParamTable::read_entries(r)?;
    model.params.load_values(entries)?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, model).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_scores_bit_for_bit() {
        let cfg = ModelConfig { num_pois: 7, dim: 8, heads: 2, layers: 1, history_len: 4, ..Default::default() };
        let model = Model::new(cfg, 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        let back = read_checkpoint(&mut &buf[..]).unwrap();
        assert_eq!(back.config, model.config);
        for id in model.params.ids() {
            assert_eq!(back.params.get(id), model.params.get(id));
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let cfg = ModelConfig { num_pois: 3, dim: 4, heads: 1, layers: 1, history_len: 2, ..Default::default() };
        let model = Model::new(cfg, 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(read_checkpoint(&mut &buf[..]), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&mut &b"dim = 4\n"[..]).is_err());
    }
}
