//! Command-line front end. Flags build a run configuration; a JSON config
//! file given with --config is deep-merged last and overrides any flag.
//!
//! Exit codes: 0 success, 2 input error, 3 training diverged, 4 checkpoint
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ransomstream::harness::{run, Mode, RunConfig};
use ransomstream::neural::parse_freeze_list;

#[derive(Parser, Debug)]
#[command(
    name = "ransomstream",
    version,
    about = "Batch-incremental CNN-LSTM ransomware detection over Sysmon-style JSONL event streams"
)]
struct Cli {
    /// train-stream | infer-stream | generate | compare | sweep-threshold
    #[arg(long)]
    mode: Mode,

    /// JSONL file path or tcp:host:port to listen on
    #[arg(long)]
    input: Option<String>,

    /// Directory for metrics, checkpoints and reports
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,

    /// Seed driving every random choice of the run
    #[arg(long)]
    seed: Option<u64>,

    /// Event schema JSON (defaults to the built-in 52-feature schema)
    #[arg(long)]
    schema: Option<PathBuf>,

    /// Checkpoint to load (infer-stream, sweep-threshold, resume)
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Resume train-stream from the latest checkpoint in --out-dir
    #[arg(long, default_value_t = false)]
    resume: bool,

    /// Architecture variant: parallel_attention | stacked_sequential |
    /// lstm_only | cnn_attention_only
    #[arg(long)]
    arch_variant: Option<String>,

    /// Number of parallel LSTM branches (or stacked layers)
    #[arg(long)]
    branches: Option<usize>,

    /// Parameter groups to freeze during updates, e.g. "conv" or
    /// "conv,lstm" or "all" or "none"
    #[arg(long)]
    freeze: Option<String>,

    #[arg(long)]
    initial_window: Option<usize>,

    #[arg(long)]
    update_window: Option<usize>,

    /// Decision threshold on P(ransomware)
    #[arg(long)]
    threshold: Option<f64>,

    /// Flush a partial window after this many idle seconds (off by default)
    #[arg(long)]
    flush_interval: Option<f64>,

    /// JSON config file overriding any flag
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = RunConfig { mode: cli.mode, ..Default::default() };
    cfg.input = cli.input.clone();
    cfg.out_dir = cli.out_dir.clone();
    cfg.seed = cli.seed;
    cfg.schema_path = cli.schema.clone();
    cfg.checkpoint = cli.checkpoint.clone();
    cfg.resume = cli.resume;
    cfg.flush_interval_secs = cli.flush_interval;
    if let Some(v) = &cli.arch_variant {
        cfg.arch.variant = v.parse()?;
    }
    if let Some(b) = cli.branches {
        cfg.arch.branches = b;
    }
    if let Some(f) = &cli.freeze {
        cfg.engine.freeze_groups = parse_freeze_list(f).map_err(|e| e.to_string())?;
    }
    if let Some(w) = cli.initial_window {
        cfg.engine.initial_window = w;
    }
    if let Some(w) = cli.update_window {
        cfg.engine.update_window = w;
    }
    if let Some(t) = cli.threshold {
        cfg.engine.threshold = t;
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg = cfg.with_json_overrides(&text).map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let (code, message) = run::<ransomstream::Real>(&cfg);
    if let Some(msg) = message {
        if code == 0 {
            eprintln!("{msg}");
        } else {
            eprintln!("error: {msg}");
        }
    }
    ExitCode::from(code as u8)
}
