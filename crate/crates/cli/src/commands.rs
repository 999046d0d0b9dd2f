//! Subcommand bodies. Each resolves its settings, creates
//! `<out root>/<run_id>/`, writes `config.echo` there first and then runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use empowerkit::rl::{self, PpoConfig};
use empowerkit::synth::{rmse_benchmark, run_oracle};

use crate::config::{echo, resolve, Settings};
use crate::exit::CliError;
use crate::settings::{BenchSettings, EvalSettings, OracleSettings, TrainSettings};

pub const OUT_ENV: &str = "EMPOWERKIT_OUT";
const DEFAULT_OUT: &str = "out";

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}

/// Stdout write that tolerates a closed pipe; files are the record.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn prepare<S: Settings>(command: &str, run_id: &str, settings: &S) -> Result<PathBuf, CliError> {
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == "." || run_id == ".." {
        return Err(CliError::usage(format!("invalid run_id '{run_id}'")));
    }
    let dir = out_root().join(run_id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.echo"), echo(command, settings))?;
    Ok(dir)
}

pub fn mi_bench(file: Option<&Path>, sets: &[(String, String)]) -> Result<(), CliError> {
    let mut s = BenchSettings::default();
    resolve(&mut s, file, sets)?;
    let dir = prepare("mi-bench", &s.run_id, &s)?;
    let report = rmse_benchmark(&s.bench)?;
    let summary = report.summary(&s.bench.kinds);
    fs::write(dir.join("table1.csv"), report.to_csv())?;
    fs::write(dir.join("summary.txt"), &summary)?;
    emit(&summary);
    if s.strict && report.any_failed() {
        let n = report.seed_rows().filter(|r| r.failed()).count();
        return Err(CliError::runtime(format!("{n} benchmark cell(s) failed")));
    }
    Ok(())
}

pub fn train(file: Option<&Path>, sets: &[(String, String)]) -> Result<(), CliError> {
    let mut s = TrainSettings::default();
    resolve(&mut s, file, sets)?;
    s.train.validate()?;
    let dir = prepare("train", &s.run_id(), &s)?;
    let report = rl::train(&s.train, Some(&dir))?;
    match report.final_episodes(rl::EPISODE_WINDOW) {
        Some((ret, succ)) => emit(&format!(
            "{}: {} episodes, final mean return {ret:.4}, success rate {succ:.3}\n",
            s.run_id(),
            report.episodes.len()
        )),
        None => emit(&format!("{}: no episode finished\n", s.run_id())),
    }
    Ok(())
}

pub fn eval(file: Option<&Path>, sets: &[(String, String)]) -> Result<(), CliError> {
    let mut s = EvalSettings::default();
    resolve(&mut s, file, sets)?;
    let ckpt = s.checkpoint.clone().ok_or_else(|| CliError::usage("eval needs --checkpoint"))?;
    let dir = prepare("eval", &s.run_id, &s)?;
    let loaded = rl::load_checkpoint(Path::new(&ckpt), PpoConfig::default().lr)?;
    let env = s.env_for(&loaded.meta.env).map_err(CliError::usage)?;
    let report = rl::evaluate(&loaded, &env, s.episodes, s.seed)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?;
    let json = format!("{json}\n");
    fs::write(dir.join("eval.json"), &json)?;
    emit(&json);
    Ok(())
}

pub fn oracle(file: Option<&Path>, sets: &[(String, String)]) -> Result<(), CliError> {
    let mut s = OracleSettings::default();
    resolve(&mut s, file, sets)?;
    let dir = prepare("oracle", &s.run_id, &s)?;
    let report = run_oracle(&s.oracle)?;
    fs::write(dir.join("oracle.csv"), report.to_csv())?;
    let mut table = format!("{:<16} {:<5} {:>9} {:>9} {:>9}\n", "joint", "kind", "exact", "estimate", "abs_err");
    for r in &report.rows {
        table += &format!(
            "{:<16} {:<5} {:>9.4} {:>9.4} {:>9.4}\n",
            r.joint.as_str(),
            r.kind.as_str(),
            r.exact,
            r.estimate,
            r.abs_error()
        );
    }
    emit(&table);
    Ok(())
}
