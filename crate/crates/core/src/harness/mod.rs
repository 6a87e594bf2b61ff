//! Operator-facing run modes: stream training, checkpoint inference,
//! synthetic data generation, architecture comparison and threshold
//! sweeps. The CLI is a thin flag parser over this module.

mod source;

pub use source::{spawn_file_reader, spawn_tcp_reader, InputSpec, CHANNEL_CAPACITY};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::NgramTable;
use crate::engine::{Engine, EngineConfig, EngineError, ModelCheckpoint};
use crate::event::{parse_event, EventError, EventSchema, Label, SysmonEvent};
use crate::metrics::{confusion, f2_series_csv, f_beta, rates, MetricsRecord};
use crate::neural::{eval_probs, ArchVariant, BranchExec, ModelArch, ModelParams};
use crate::prep::apply_scaler_row;
use crate::scalar::Scalar;
use crate::synth::{describe, generate, GeneratorConfig, SynthError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("input unavailable: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Checkpoint(#[from] crate::engine::CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("stream contains unlabeled events; a labeled stream is required")]
    UnlabeledStream,
    #[error("invalid run config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TrainStream,
    InferStream,
    Generate,
    Compare,
    SweepThreshold,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train-stream" => Ok(Mode::TrainStream),
            "infer-stream" => Ok(Mode::InferStream),
            "generate" => Ok(Mode::Generate),
            "compare" => Ok(Mode::Compare),
            "sweep-threshold" => Ok(Mode::SweepThreshold),
            other => Err(format!("unknown mode {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub arch: ModelArch,
}

/// Full description of one run. A JSON config file deep-merged over this
/// structure overrides any flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<String>,
    pub out_dir: PathBuf,
    /// When set, overrides every nested seed (engine, embedding, generator).
    pub seed: Option<u64>,
    pub schema_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: bool,
    /// Flush a partial window after this many idle seconds (off by default).
    pub flush_interval_secs: Option<f64>,
    /// TCP mode: stop after this many client connections closed.
    pub tcp_max_conns: Option<usize>,
    pub engine: EngineConfig,
    pub arch: ModelArch,
    pub generator: GeneratorConfig,
    /// Architectures for compare mode; empty means the built-in trio.
    pub variants: Vec<VariantSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::TrainStream,
            input: None,
            out_dir: PathBuf::from("out"),
            seed: None,
            schema_path: None,
            checkpoint: None,
            resume: false,
            flush_interval_secs: None,
            tcp_max_conns: None,
            engine: EngineConfig::default(),
            arch: ModelArch::default(),
            generator: GeneratorConfig::default(),
            variants: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Propagate the top-level seed into every nested component.
    pub fn normalize(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.engine.seed = seed;
            self.engine.embedding.seed = seed;
            self.generator.seed = seed;
        }
        self
    }

    /// Deep-merge a JSON document over this config (JSON wins).
    pub fn with_json_overrides(self, json_text: &str) -> Result<Self, HarnessError> {
        let overlay: serde_json::Value =
            serde_json::from_str(json_text).map_err(|e| HarnessError::Config(format!("config JSON: {e}")))?;
        let mut base = serde_json::to_value(&self).expect("config serializes");
        merge_json(&mut base, overlay);
        serde_json::from_value(base).map_err(|e| HarnessError::Config(format!("merged config: {e}")))
    }

    pub fn schema(&self) -> Result<EventSchema, HarnessError> {
        match &self.schema_path {
            Some(path) => Ok(EventSchema::from_file(path)?),
            None => Ok(EventSchema::default_schema()),
        }
    }
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Outcome of a streaming run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub windows_processed: u32,
    pub events_ingested: u64,
    pub parse_errors: u64,
    pub retrains: u32,
    pub diverged: u32,
    pub mean_f2: f64,
    pub min_f2: f64,
    pub final_f2: f64,
    /// Sum of per-window train+evaluate runtime.
    pub total_runtime_s: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<MetricsRecord>,
    pub out_dir: PathBuf,
}

fn summarize(
    mode: &str,
    records: &[MetricsRecord],
    engine_stats: (u32, u32, u32),
    ingested: u64,
    parse_errors: u64,
    wall: f64,
) -> RunSummary {
    let (windows, retrains, diverged) = engine_stats;
    let f2s: Vec<f64> = records.iter().map(|r| r.f2).collect();
    RunSummary {
        mode: mode.to_string(),
        windows_processed: windows,
        events_ingested: ingested,
        parse_errors,
        retrains,
        diverged,
        mean_f2: if f2s.is_empty() { 0.0 } else { f2s.iter().sum::<f64>() / f2s.len() as f64 },
        min_f2: f2s.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0),
        final_f2: f2s.last().copied().unwrap_or(0.0),
        total_runtime_s: records.iter().map(|r| r.runtime_s).sum(),
        wall_clock_s: wall,
    }
}

struct MetricsLog {
    path: PathBuf,
    existing: BTreeSet<u32>,
}

impl MetricsLog {
    fn open(path: PathBuf) -> Result<(Self, Vec<MetricsRecord>), HarnessError> {
        let mut existing = BTreeSet::new();
        let mut records = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            for line in text.lines().skip(1) {
                if let Some(rec) = MetricsRecord::from_csv_row(line) {
                    existing.insert(rec.window_id);
                    records.push(rec);
                }
            }
        } else {
            std::fs::write(&path, format!("{}\n", MetricsRecord::csv_header()))?;
        }
        Ok((Self { path, existing }, records))
    }

    fn append(&mut self, rec: &MetricsRecord) -> Result<bool, HarnessError> {
        if self.existing.contains(&rec.window_id) {
            return Ok(false);
        }
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", rec.to_csv_row())?;
        f.flush()?;
        self.existing.insert(rec.window_id);
        Ok(true)
    }
}

fn build_source(cfg: &RunConfig) -> Result<Receiver<String>, HarnessError> {
    let input = cfg.input.as_deref().ok_or_else(|| HarnessError::Input("no --input given".into()))?;
    match InputSpec::parse(input) {
        InputSpec::File(path) => {
            let (rx, _handle) =
                spawn_file_reader(&path).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
            Ok(rx)
        }
        InputSpec::Tcp(addr) => {
            let (local, rx, _handle) = spawn_tcp_reader(&addr, cfg.tcp_max_conns)
                .map_err(|e| HarnessError::Input(format!("tcp {addr}: {e}")))?;
            eprintln!("listening on tcp:{local}");
            Ok(rx)
        }
    }
}

/// Run the training engine over a line source until it ends. Used by both
/// file replay and TCP ingestion; tests feed a receiver directly.
pub fn run_with_receiver<T: Scalar>(cfg: &RunConfig, rx: Receiver<String>) -> Result<RunOutcome, HarnessError> {
    let cfg = cfg.clone().normalize();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let schema = cfg.schema()?;

    let ckpt_path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint_latest.icls"));
    let mut engine: Engine<T> = if cfg.resume && ckpt_path.exists() {
        let ckpt = ModelCheckpoint::<T>::load(&ckpt_path)?;
        Engine::resume(cfg.engine.clone(), schema.clone(), Some(cfg.out_dir.clone()), ckpt)?
    } else {
        Engine::new(cfg.engine.clone(), cfg.arch, schema.clone(), Some(cfg.out_dir.clone()))?
    };

    let (mut log, mut records) = MetricsLog::open(cfg.out_dir.join("metrics.csv"))?;
    // crash between checkpoint write and metrics emission: re-emit the row
    // stored inside the checkpoint instead of reprocessing the window
    if cfg.resume {
        if let Some(rec) = engine.last_record().copied() {
            if log.append(&rec)? {
                records.push(rec);
            }
        }
    }

    let started = Instant::now();
    let mut ingested = 0u64;
    let mut parse_errors = 0u64;
    let mut last_line_at = Instant::now();
    let mut heatmap_sample: Vec<SysmonEvent> = Vec::new();
    let heatmap_cap = 5000.min(cfg.engine.initial_window);

    let poll = Duration::from_millis(200);
    loop {
        match rx.recv_timeout(poll) {
            Ok(line) => {
                last_line_at = Instant::now();
                let event = match parse_event(&line, &schema) {
                    Ok(ev) => ev,
                    Err(_) => {
                        parse_errors += 1;
                        continue;
                    }
                };
                ingested += 1;
                if heatmap_sample.len() < heatmap_cap {
                    heatmap_sample.push(event.clone());
                }
                if engine.ingest(event)?.is_some() {
                    let rec = engine.process_window()?;
                    if log.append(&rec)? {
                        records.push(rec);
                    }
                }
            }
            Err(RecvTimeoutError::Timeout) => {
                if let Some(interval) = cfg.flush_interval_secs {
                    if last_line_at.elapsed().as_secs_f64() >= interval && engine.flush_partial()?.is_some() {
                        let rec = engine.process_window()?;
                        if log.append(&rec)? {
                            records.push(rec);
                        }
                        last_line_at = Instant::now();
                    }
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }

    // reporting artifacts
    std::fs::write(cfg.out_dir.join("f2_series.csv"), f2_series_csv(&records))?;
    let mut ranking_file = std::fs::File::create(cfg.out_dir.join("rankings.jsonl"))?;
    for (wid, r) in engine.ranking_log() {
        let line = serde_json::json!({
            "window_id": wid,
            "selected": r.selected,
            "scores": r.scores.iter().map(|(n, s)| serde_json::json!([n, s])).collect::<Vec<_>>(),
        });
        writeln!(ranking_file, "{line}")?;
    }
    if !heatmap_sample.is_empty() {
        let matrix = engine.heatmap_on(&heatmap_sample);
        let heatmap = serde_json::json!({
            "features": schema.feature_names,
            "sample_events": heatmap_sample.len(),
            "matrix": matrix,
        });
        std::fs::write(cfg.out_dir.join("heatmap.json"), serde_json::to_string(&heatmap).unwrap())?;
    }

    let summary = summarize(
        "train-stream",
        &records,
        (engine.windows_processed, engine.retrain_count, engine.diverged_count),
        ingested,
        parse_errors,
        started.elapsed().as_secs_f64(),
    );
    std::fs::write(cfg.out_dir.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap())?;
    Ok(RunOutcome { summary, records, out_dir: cfg.out_dir })
}

/// Replay a file or serve a TCP socket through the training engine.
pub fn run_stream<T: Scalar>(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let rx = build_source(cfg)?;
    run_with_receiver::<T>(cfg, rx)
}

/// Inference pipeline rebuilt from a checkpoint; reproduces training-time
/// embeddings and scaling exactly.
pub struct InferencePipeline<T: Scalar> {
    pub params: ModelParams<T>,
    table: NgramTable<T>,
    schema: EventSchema,
    order: Vec<usize>,
    scaler: crate::prep::ScalerParams<T>,
    pub threshold: f64,
}

impl<T: Scalar> InferencePipeline<T> {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint<T>, threshold: f64) -> Self {
        let table = NgramTable::new(ckpt.embedding);
        let mut order: Vec<usize> = ckpt.ranking.selected.iter().filter_map(|n| ckpt.schema.index_of(n)).collect();
        order.sort_unstable();
        Self {
            params: ckpt.params.clone(),
            table,
            schema: ckpt.schema.clone(),
            order,
            scaler: ckpt.scaler.clone(),
            threshold,
        }
    }

    pub fn schema(&self) -> &EventSchema {
        &self.schema
    }

    fn embed(&self, event: &SysmonEvent) -> Vec<T> {
        let dim = self.table.dim();
        let mut row = Vec::with_capacity(self.order.len() * dim);
        for &fi in &self.order {
            row.extend(crate::embed::embed_field(&event.fields[fi], &self.table));
        }
        row
    }

    pub fn prob_ransomware(&self, event: &SysmonEvent) -> Result<f64, HarnessError> {
        Ok(self.prob_batch(std::slice::from_ref(event))?[0])
    }

    pub fn prob_batch(&self, events: &[SysmonEvent]) -> Result<Vec<f64>, HarnessError> {
        let mut xs = Vec::with_capacity(events.len());
        for ev in events {
            let row = self.embed(ev);
            xs.push(apply_scaler_row(&row, &self.scaler).map_err(EngineError::Prep)?);
        }
        let probs = eval_probs(&self.params, &xs, BranchExec::Sequential).map_err(EngineError::Neural)?;
        Ok(probs.iter().map(|p| p[1].as_f64()).collect())
    }

    pub fn classify(&self, event: &SysmonEvent) -> Result<Label, HarnessError> {
        let p = self.prob_ransomware(event)?;
        Ok(if p >= self.threshold { Label::Ransomware } else { Label::Benign })
    }
}

/// Evaluate a loaded checkpoint over a stream without any training. Emits
/// per-window metrics (when the stream is labeled) and a predictions file.
pub fn infer_stream<T: Scalar>(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let cfg = cfg.clone().normalize();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let ckpt_path = cfg.checkpoint.clone().ok_or_else(|| HarnessError::Config("--checkpoint required".into()))?;
    let ckpt = ModelCheckpoint::<T>::load(&ckpt_path)?;
    let pipeline = InferencePipeline::from_checkpoint(&ckpt, cfg.engine.threshold);
    let schema = pipeline.schema().clone();

    let rx = build_source(&cfg)?;
    let started = Instant::now();
    let mut preds_file = std::fs::File::create(cfg.out_dir.join("predictions.csv"))?;
    writeln!(preds_file, "timestamp_ms,p_ransomware,prediction,label")?;
    let (mut log, mut records) = MetricsLog::open(cfg.out_dir.join("metrics.csv"))?;

    let mut window: Vec<SysmonEvent> = Vec::new();
    let mut window_id = 0u32;
    let mut ingested = 0u64;
    let mut parse_errors = 0u64;

    let mut flush_window = |window: &mut Vec<SysmonEvent>,
                            window_id: &mut u32,
                            records: &mut Vec<MetricsRecord>,
                            log: &mut MetricsLog|
     -> Result<(), HarnessError> {
        if window.is_empty() {
            return Ok(());
        }
        let t0 = Instant::now();
        let probs = pipeline.prob_batch(window)?;
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for (ev, p) in window.iter().zip(&probs) {
            let pred = if *p >= pipeline.threshold { Label::Ransomware } else { Label::Benign };
            writeln!(
                preds_file,
                "{},{:.6},{},{}",
                ev.timestamp_ms,
                p,
                pred,
                ev.label.map(|l| l.as_str()).unwrap_or("")
            )?;
            if let Some(l) = ev.label {
                truths.push(l);
                preds.push(pred);
            }
        }
        if !truths.is_empty() && truths.len() == window.len() {
            let counts = confusion(&truths, &preds).expect("equal lengths");
            let rec = MetricsRecord::from_counts(*window_id, now_ms(), &counts, t0.elapsed().as_secs_f64());
            if log.append(&rec)? {
                records.push(rec);
            }
        }
        *window_id += 1;
        window.clear();
        Ok(())
    };

    loop {
        match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(line) => match parse_event(&line, &schema) {
                Ok(ev) => {
                    ingested += 1;
                    window.push(ev);
                    if window.len() >= cfg.engine.update_window {
                        flush_window(&mut window, &mut window_id, &mut records, &mut log)?;
                    }
                }
                Err(_) => parse_errors += 1,
            },
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    flush_window(&mut window, &mut window_id, &mut records, &mut log)?;
    drop(flush_window);

    std::fs::write(cfg.out_dir.join("f2_series.csv"), f2_series_csv(&records))?;
    let summary = summarize(
        "infer-stream",
        &records,
        (window_id, 0, 0),
        ingested,
        parse_errors,
        started.elapsed().as_secs_f64(),
    );
    std::fs::write(cfg.out_dir.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap())?;
    Ok(RunOutcome { summary, records, out_dir: cfg.out_dir })
}

/// Generate a synthetic stream plus its ground-truth manifest.
pub fn generate_stream(cfg: &RunConfig) -> Result<(PathBuf, PathBuf), HarnessError> {
    let cfg = cfg.clone().normalize();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let stream_path = cfg.out_dir.join("stream.jsonl");
    let manifest_path = cfg.out_dir.join("manifest.json");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&stream_path)?);
    let manifest = generate(&cfg.generator, &mut file)?;
    file.flush()?;
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok((stream_path, manifest_path))
}

/// The built-in comparison set: the parallel model, the same capacity
/// stacked sequentially, and a small single LSTM.
pub fn default_variants(base: ModelArch) -> Vec<VariantSpec> {
    let parallel = ModelArch { variant: ArchVariant::ParallelAttention, ..base };
    let stacked = ModelArch { variant: ArchVariant::StackedSequential, ..base };
    let lstm_only = ModelArch { variant: ArchVariant::LstmOnly, lstm_units: 8, branches: 1, ..base };
    vec![
        VariantSpec { name: "parallel_attention".into(), arch: parallel },
        VariantSpec { name: "stacked_sequential".into(), arch: stacked },
        VariantSpec { name: "lstm_only_8".into(), arch: lstm_only },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
    pub windows: u32,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub mean_f2: f64,
    pub mean_fpr: f64,
    pub mean_fnr: f64,
    pub min_f2: f64,
    pub total_runtime_s: f64,
    pub wall_clock_s: f64,
}

impl VariantResult {
    fn failed(name: &str, err: String) -> Self {
        Self {
            name: name.to_string(),
            ok: false,
            error: Some(err),
            windows: 0,
            mean_precision: 0.0,
            mean_recall: 0.0,
            mean_f1: 0.0,
            mean_f2: 0.0,
            mean_fpr: 0.0,
            mean_fnr: 0.0,
            min_f2: 0.0,
            total_runtime_s: 0.0,
            wall_clock_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub input: String,
    pub seed: Option<u64>,
    pub variants: Vec<VariantResult>,
}

/// Run every variant over the identical stream and seed; one variant's
/// failure is recorded without aborting the rest.
pub fn compare_architectures<T: Scalar>(cfg: &RunConfig) -> Result<ComparisonReport, HarnessError> {
    let cfg = cfg.clone().normalize();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let input = cfg.input.clone().ok_or_else(|| HarnessError::Input("compare mode needs --input".into()))?;
    let variants = if cfg.variants.is_empty() { default_variants(cfg.arch) } else { cfg.variants.clone() };
    if variants.len() < 2 {
        return Err(HarnessError::Config("compare mode needs at least 2 variants".into()));
    }

    let mut results = Vec::new();
    for spec in &variants {
        let mut sub = cfg.clone();
        sub.arch = spec.arch;
        sub.out_dir = cfg.out_dir.join(format!("variant_{}", spec.name));
        sub.input = Some(input.clone());
        sub.resume = false;
        match run_stream::<T>(&sub) {
            Ok(outcome) => {
                let r = &outcome.records;
                let mean = |f: fn(&MetricsRecord) -> f64| {
                    if r.is_empty() {
                        0.0
                    } else {
                        r.iter().map(f).sum::<f64>() / r.len() as f64
                    }
                };
                results.push(VariantResult {
                    name: spec.name.clone(),
                    ok: true,
                    error: None,
                    windows: outcome.summary.windows_processed,
                    mean_precision: mean(|x| x.precision),
                    mean_recall: mean(|x| x.recall),
                    mean_f1: mean(|x| x.f1),
                    mean_f2: mean(|x| x.f2),
                    mean_fpr: mean(|x| x.fpr),
                    mean_fnr: mean(|x| x.fnr),
                    min_f2: outcome.summary.min_f2,
                    total_runtime_s: outcome.summary.total_runtime_s,
                    wall_clock_s: outcome.summary.wall_clock_s,
                });
            }
            Err(e) => results.push(VariantResult::failed(&spec.name, e.to_string())),
        }
    }
    let report = ComparisonReport { input, seed: cfg.seed, variants: results };
    std::fs::write(cfg.out_dir.join("comparison.json"), serde_json::to_string_pretty(&report).unwrap())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best_threshold: f64,
    pub best_f2: f64,
}

/// Score a labeled validation stream once, then sweep thresholds
/// 0.01..=0.99 in 0.01 steps.
pub fn sweep_threshold<T: Scalar>(cfg: &RunConfig) -> Result<SweepReport, HarnessError> {
    let cfg = cfg.clone().normalize();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let ckpt_path = cfg.checkpoint.clone().ok_or_else(|| HarnessError::Config("--checkpoint required".into()))?;
    let ckpt = ModelCheckpoint::<T>::load(&ckpt_path)?;
    let pipeline = InferencePipeline::from_checkpoint(&ckpt, cfg.engine.threshold);
    let schema = pipeline.schema().clone();

    let input = cfg.input.as_deref().ok_or_else(|| HarnessError::Input("sweep mode needs --input".into()))?;
    let path = match InputSpec::parse(input) {
        InputSpec::File(p) => p,
        InputSpec::Tcp(_) => return Err(HarnessError::Config("sweep mode reads a file".into())),
    };
    let text =
        std::fs::read_to_string(&path).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    let mut events = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let ev = parse_event(line, &schema)?;
        if ev.label.is_none() {
            return Err(HarnessError::UnlabeledStream);
        }
        events.push(ev);
    }
    if events.is_empty() {
        return Err(HarnessError::UnlabeledStream);
    }

    let probs = pipeline.prob_batch(&events)?;
    let labels: Vec<Label> = events.iter().map(|e| e.label.unwrap()).collect();

    let rows = sweep_rows(&labels, &probs);
    let best = rows.iter().cloned().reduce(|a, b| if b.f2 > a.f2 { b } else { a }).expect("rows non-empty");

    let mut csv = String::from("threshold,precision,recall,f2\n");
    for r in &rows {
        csv.push_str(&format!("{:.2},{:.6},{:.6},{:.6}\n", r.threshold, r.precision, r.recall, r.f2));
    }
    std::fs::write(cfg.out_dir.join("threshold_sweep.csv"), csv)?;
    let report = SweepReport { rows, best_threshold: best.threshold, best_f2: best.f2 };
    std::fs::write(
        cfg.out_dir.join("threshold_sweep.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "best_threshold": report.best_threshold,
            "best_f2": report.best_f2,
        }))
        .unwrap(),
    )?;
    Ok(report)
}

/// F2 per threshold over cached probabilities (0.01..=0.99, step 0.01).
pub fn sweep_rows(labels: &[Label], probs: &[f64]) -> Vec<SweepRow> {
    (1..=99)
        .map(|i| {
            let threshold = i as f64 / 100.0;
            let preds: Vec<Label> =
                probs.iter().map(|&p| if p >= threshold { Label::Ransomware } else { Label::Benign }).collect();
            let counts = confusion(labels, &preds).expect("equal lengths");
            let r = rates(&counts);
            let (f2, _) = f_beta(r.precision, r.recall, 2.0);
            SweepRow { threshold, precision: r.precision, recall: r.recall, f2 }
        })
        .collect()
}

fn now_ms() -> i64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

/// Dispatch a run config to its mode handler. Returns an exit code per the
/// documented scheme: 0 success, 2 input error, 3 training diverged, 4
/// checkpoint error.
pub fn run<T: Scalar>(cfg: &RunConfig) -> (i32, Option<String>) {
    let outcome: Result<u32, HarnessError> = (|| match cfg.mode {
        Mode::TrainStream => {
            let out = run_stream::<T>(cfg)?;
            Ok(out.summary.diverged)
        }
        Mode::InferStream => {
            infer_stream::<T>(cfg)?;
            Ok(0)
        }
        Mode::Generate => {
            let (stream, manifest) = generate_stream(cfg)?;
            let desc = describe(&cfg.clone().normalize().generator)?;
            eprintln!(
                "generated {} events ({} ransomware) -> {} / {}",
                desc.total_events,
                desc.ransomware,
                stream.display(),
                manifest.display()
            );
            Ok(0)
        }
        Mode::Compare => {
            compare_architectures::<T>(cfg)?;
            Ok(0)
        }
        Mode::SweepThreshold => {
            sweep_threshold::<T>(cfg)?;
            Ok(0)
        }
    })();
    match outcome {
        Ok(0) => (0, None),
        Ok(diverged) => (3, Some(format!("{diverged} window(s) diverged during training"))),
        Err(e) => {
            let code = match &e {
                HarnessError::Input(_) => 2,
                HarnessError::Checkpoint(_) | HarnessError::Engine(EngineError::Checkpoint(_)) => 4,
                _ => 2,
            };
            (code, Some(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_override_wins_over_flags() {
        let cfg = RunConfig { seed: Some(1), ..Default::default() };
        let merged = cfg
            .with_json_overrides(r#"{"seed": 9, "engine": {"update_window": 777}, "arch": {"lstm_units": 12}}"#)
            .unwrap();
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.engine.update_window, 777);
        assert_eq!(merged.arch.lstm_units, 12);
        // untouched fields keep their values
        assert_eq!(merged.engine.initial_window, 40_000);
    }

    #[test]
    fn normalize_propagates_seed() {
        let cfg = RunConfig { seed: Some(123), ..Default::default() }.normalize();
        assert_eq!(cfg.engine.seed, 123);
        assert_eq!(cfg.engine.embedding.seed, 123);
        assert_eq!(cfg.generator.seed, 123);
        // without a top-level seed nested seeds stay put
        let cfg = RunConfig { seed: None, ..Default::default() }.normalize();
        assert_eq!(cfg.engine.seed, EngineConfig::default().seed);
    }

    #[test]
    fn mode_strings_round_trip() {
        for (s, m) in [
            ("train-stream", Mode::TrainStream),
            ("infer-stream", Mode::InferStream),
            ("generate", Mode::Generate),
            ("compare", Mode::Compare),
            ("sweep-threshold", Mode::SweepThreshold),
        ] {
            assert_eq!(s.parse::<Mode>().unwrap(), m);
        }
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn sweep_rows_monotone_recall() {
        let labels = vec![Label::Ransomware, Label::Benign, Label::Ransomware, Label::Benign, Label::Ransomware];
        let probs = vec![0.9, 0.8, 0.6, 0.3, 0.2];
        let rows = sweep_rows(&labels, &probs);
        assert_eq!(rows.len(), 99);
        for pair in rows.windows(2) {
            assert!(pair[1].recall <= pair[0].recall + 1e-12, "recall must not increase with threshold");
        }
        // perfectly separable scores reach f2 = 1 on a plateau
        let sep_labels = vec![Label::Ransomware, Label::Ransomware, Label::Benign, Label::Benign];
        let sep_probs = vec![0.95, 0.9, 0.1, 0.05];
        let rows = sweep_rows(&sep_labels, &sep_probs);
        let perfect = rows.iter().filter(|r| r.f2 == 1.0).count();
        assert!(perfect > 50, "wide plateau expected, got {perfect}");
    }
}
