//! `sse` command-line driver: reads one run config, executes its task and writes
//! the artifacts into an output directory.

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Map, Value};

use config::{RunConfig, SchemaError, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "sse", version, about = "Sequential sampling equilibrium solver")]
struct Args {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "SSE_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Seed for stochastic dynamics; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    threads: Option<usize>,
    /// Solver tolerance; overrides the config.
    #[arg(long)]
    tol: Option<f64>,
}

fn emit(summary: &Map<String, Value>) {
    let line = serde_json::to_string(summary).expect("summary serializes");
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{line}");
}

fn schema_failure(command: Option<&str>, e: &SchemaError) -> ExitCode {
    let mut s = Map::new();
    s.insert("schema_version".into(), json!(SCHEMA_VERSION));
    s.insert("command".into(), json!(command));
    s.insert("status".into(), json!("schema_error"));
    s.insert("path".into(), json!(e.path));
    s.insert("error".into(), json!(e.message));
    s.insert("files".into(), json!([]));
    emit(&s);
    eprintln!("schema error at `{}`: {}", e.path, e.message);
    ExitCode::from(2)
}

fn runtime_failure(command: &str, message: &str) -> ExitCode {
    let mut s = Map::new();
    s.insert("schema_version".into(), json!(SCHEMA_VERSION));
    s.insert("command".into(), json!(command));
    s.insert("status".into(), json!("error"));
    s.insert("error".into(), json!(message));
    s.insert("files".into(), json!([]));
    emit(&s);
    eprintln!("error: {message}");
    ExitCode::from(1)
}

/// Writes through a sibling temp file and renames it into place.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, dir.join(name))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return runtime_failure("", &format!("cannot read {}: {e}", args.config.display())),
    };
    let mut cfg: RunConfig = match config::parse(&text) {
        Ok(c) => c,
        Err(e) => return schema_failure(None, &e),
    };
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.tol.is_some() {
        cfg.tol = args.tol;
    }
    let command = cfg.task.name();
    let resolved = match config::resolve(&cfg) {
        Ok(r) => r,
        Err(e) => return schema_failure(Some(command), &e),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return schema_failure(Some(command), &SchemaError { path: "--threads".into(), message: "must be at least 1".into() });
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return runtime_failure(command, &e.to_string());
        }
    }

    let outcome = match commands::execute(&cfg, &resolved.ext) {
        Ok(o) => o,
        Err(msg) => return runtime_failure(command, &msg),
    };

    let mut files = Vec::with_capacity(outcome.files.len() + 2);
    let config_text = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
    let game_text = serde_json::to_string_pretty(&config::canonical_game(resolved.ext.game())).expect("game serializes") + "\n";
    files.push(("config.json".to_string(), config_text));
    files.push(("game.json".to_string(), game_text));
    files.extend(outcome.files);

    if let Err(e) = fs::create_dir_all(&args.out) {
        return runtime_failure(command, &format!("cannot create {}: {e}", args.out.display()));
    }
    for (name, contents) in &files {
        if let Err(e) = write_atomic(&args.out, name, contents) {
            return runtime_failure(command, &format!("cannot write {name}: {e}"));
        }
    }

    let mut s = outcome.summary;
    s.insert("schema_version".into(), json!(SCHEMA_VERSION));
    s.insert("command".into(), json!(command));
    s.insert("status".into(), json!(if outcome.ok { "ok" } else { "failed" }));
    s.insert("files".into(), json!(files.iter().map(|(n, _)| n).collect::<Vec<_>>()));
    emit(&s);
    if outcome.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
