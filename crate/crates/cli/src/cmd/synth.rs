use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ccrank_core::synth::{generate, write_checkins, SynthConfig};

use crate::cmd::{echo_path, write_file};
use crate::error::{CliError, CliResult, Context};

pub fn run(synth: &SynthConfig, out: &Path) -> CliResult<()> {
    let checkins = generate(synth).context("synth")?;
    let fail = |e: std::io::Error| CliError::Failed(format!("{}: {e}", out.display()));
    let mut w = BufWriter::new(File::create(out).map_err(fail)?);
    write_checkins(&mut w, &checkins).map_err(fail)?;
    w.flush().map_err(fail)?;
    let echo = format!(
        "kind = {}\nusers = {}\npois = {}\nlength = {}\nspan_deg = {}\nradius_km = {}\nseed = {}\n",
        synth.kind, synth.users, synth.pois, synth.length, synth.span_deg, synth.radius_km, synth.seed
    );
    write_file(&echo_path(out), echo)?;
    println!("wrote {} check-ins to {}", checkins.len(), out.display());
    Ok(())
}
