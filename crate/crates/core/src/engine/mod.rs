//! Batch-incremental engine: windows the event stream, runs the per-window
//! preprocessing pipeline, fine-tunes the model with configured groups
//! frozen, evaluates on the held-out split, and persists checkpoints.
//!
//! Window k's test split never reaches scaler fitting, feature ranking,
//! SMOTE or gradient updates for window k.

mod checkpoint;

pub use checkpoint::{CheckpointError, ModelCheckpoint, FORMAT_VERSION};

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{embed_field, EmbedError, NgramTable, NgramVocabConfig};
use crate::event::{EventError, EventSchema, Label, SysmonEvent};
use crate::metrics::{confusion, ConfusionCounts, MetricsRecord};
use crate::neural::{
    eval_probs, set_frozen, train_minibatch, AdamState, BranchExec, ModelArch, ModelParams, NeuralError,
    ParamGroup,
};
use crate::prep::{
    apply_scaler_row, fit_scaler, pcc_heatmap, scalarize, select_features, smote, FeatureRanking, PrepError,
    RankMode, ScalerParams, Scalarization, SmoteConfig,
};
use crate::rng::stream;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("window {0} contains a single class and no previous ranking exists")]
    SingleClassWindow(u32),
    #[error("window {0} contains unlabeled events; training requires labels")]
    UnlabeledWindow(u32),
    #[error("history buffer is empty; cannot retrain")]
    EmptyHistory,
    #[error("no pending window to process")]
    NoPendingWindow,
    #[error("window {0} completed before the previous one was processed")]
    UnprocessedWindow(u32),
}

/// Engine knobs. Window sizes and the 80:20 split drive the batching; the
/// training loop reuses the epoch cap with an early stop on stalled loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub initial_window: usize,
    pub update_window: usize,
    pub train_fraction: f64,
    pub sgd_batch: usize,
    pub freeze_groups: BTreeSet<ParamGroup>,
    /// Re-rank features every this many windows (1 = every window).
    pub reselect_every: u32,
    /// Events retained for feature-change retraining.
    pub history_buffer: usize,
    pub selected_k: usize,
    pub max_epochs: u32,
    pub early_stop_patience: u32,
    pub early_stop_delta: f64,
    pub learning_rate: f64,
    pub threshold: f64,
    pub chronological_split: bool,
    pub rank_mode: RankMode,
    pub scalarization: Scalarization,
    pub smote_k: usize,
    pub smote_ratio: f64,
    pub parallel_branches: bool,
    pub seed: u64,
    pub embedding: NgramVocabConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            initial_window: 40_000,
            update_window: 10_000,
            train_fraction: 0.8,
            sgd_batch: 1024,
            freeze_groups: [ParamGroup::Conv].into_iter().collect(),
            reselect_every: 1,
            history_buffer: 40_000,
            selected_k: 6,
            max_epochs: 100,
            early_stop_patience: 5,
            early_stop_delta: 1e-5,
            learning_rate: 0.001,
            threshold: 0.5,
            chronological_split: false,
            rank_mode: RankMode::Absolute,
            scalarization: Scalarization::Mean,
            smote_k: 5,
            smote_ratio: 1.0,
            parallel_branches: true,
            seed: 42,
            embedding: NgramVocabConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.initial_window < 4 || self.update_window < 4 {
            return Err(EngineError::Config("windows must hold at least 4 events".into()));
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(EngineError::Config("train_fraction must be in (0, 1)".into()));
        }
        let train_cap = (self.update_window as f64 * self.train_fraction) as usize;
        if self.sgd_batch == 0 || self.sgd_batch > train_cap.max(1) {
            return Err(EngineError::Config(format!(
                "sgd_batch {} exceeds the update window's training share {}",
                self.sgd_batch, train_cap
            )));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(EngineError::Config("threshold must be in (0, 1)".into()));
        }
        if self.selected_k == 0 {
            return Err(EngineError::Config("selected_k must be positive".into()));
        }
        if self.smote_k == 0 || !(0.0 < self.smote_ratio && self.smote_ratio <= 1.0) {
            return Err(EngineError::Config("smote_k >= 1 and smote_ratio in (0, 1] required".into()));
        }
        self.embedding.validate().map_err(EngineError::Config)?;
        Ok(())
    }
}

/// Signal that a window filled up and is ready for processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowReady {
    pub window_id: u32,
    pub size: usize,
}

struct ModelState<T> {
    params: ModelParams<T>,
    opt: AdamState<T>,
}

struct CachedField<T> {
    vec: Vec<T>,
    scalar: T,
}

struct PendingWindow {
    id: u32,
    events: Vec<SysmonEvent>,
}

pub struct Engine<T: Scalar> {
    config: EngineConfig,
    arch: ModelArch,
    schema: EventSchema,
    table: NgramTable<T>,
    out_dir: Option<PathBuf>,

    model: Option<ModelState<T>>,
    ranking: Option<FeatureRanking>,
    scaler: Option<ScalerParams<T>>,
    last_record: Option<MetricsRecord>,

    open: Vec<SysmonEvent>,
    pending: Option<PendingWindow>,
    next_window_id: u32,
    /// Windows below this id were already covered by a loaded checkpoint;
    /// they are replayed into history without training.
    skip_below: u32,
    history: VecDeque<SysmonEvent>,

    field_cache: HashMap<String, CachedField<T>>,
    ranking_log: Vec<(u32, FeatureRanking)>,
    pub retrain_count: u32,
    pub diverged_count: u32,
    pub windows_processed: u32,
}

impl<T: Scalar> Engine<T> {
    pub fn new(
        config: EngineConfig,
        arch: ModelArch,
        schema: EventSchema,
        out_dir: Option<PathBuf>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        arch.validate()?;
        let table = NgramTable::new(config.embedding);
        Ok(Self {
            config,
            arch,
            schema,
            table,
            out_dir,
            model: None,
            ranking: None,
            scaler: None,
            last_record: None,
            open: Vec::new(),
            pending: None,
            next_window_id: 0,
            skip_below: 0,
            history: VecDeque::new(),
            field_cache: HashMap::new(),
            ranking_log: Vec::new(),
            retrain_count: 0,
            diverged_count: 0,
            windows_processed: 0,
        })
    }

    /// Resume from a checkpoint: the model, ranking, scaler, embedding
    /// config and seed come from the checkpoint; windows it already covered
    /// are replayed into the history buffer without retraining.
    pub fn resume(
        mut config: EngineConfig,
        schema: EventSchema,
        out_dir: Option<PathBuf>,
        ckpt: ModelCheckpoint<T>,
    ) -> Result<Self, EngineError> {
        if ckpt.initial_window != config.initial_window as u64 || ckpt.update_window != config.update_window as u64 {
            return Err(EngineError::Checkpoint(CheckpointError::Incompatible(format!(
                "checkpoint windows {}/{} vs configured {}/{}",
                ckpt.initial_window, ckpt.update_window, config.initial_window, config.update_window
            ))));
        }
        if ckpt.schema != schema {
            return Err(EngineError::Checkpoint(CheckpointError::Incompatible(
                "checkpoint was built against a different event schema".into(),
            )));
        }
        config.seed = ckpt.seed;
        config.embedding = ckpt.embedding;
        let arch = ckpt.params.arch;
        let mut engine = Self::new(config, arch, schema, out_dir)?;
        engine.skip_below = ckpt.window_id + 1;
        engine.model = Some(ModelState { params: ckpt.params, opt: ckpt.opt });
        engine.ranking = Some(ckpt.ranking);
        engine.scaler = Some(ckpt.scaler);
        engine.last_record = Some(ckpt.last_metrics);
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn schema(&self) -> &EventSchema {
        &self.schema
    }

    pub fn ranking(&self) -> Option<&FeatureRanking> {
        self.ranking.as_ref()
    }

    pub fn ranking_log(&self) -> &[(u32, FeatureRanking)] {
        &self.ranking_log
    }

    pub fn last_record(&self) -> Option<&MetricsRecord> {
        self.last_record.as_ref()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn next_window_id(&self) -> u32 {
        self.next_window_id
    }

    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join("checkpoint_latest.icls"))
    }

    fn window_target(&self, id: u32) -> usize {
        if id == 0 {
            self.config.initial_window
        } else {
            self.config.update_window
        }
    }

    /// Append one event to the open window. Returns `WindowReady` exactly
    /// when the window reaches its configured size.
    pub fn ingest(&mut self, event: SysmonEvent) -> Result<Option<WindowReady>, EngineError> {
        self.open.push(event);
        let id = self.next_window_id;
        if self.open.len() < self.window_target(id) {
            return Ok(None);
        }
        let events = std::mem::take(&mut self.open);
        self.next_window_id += 1;
        if id < self.skip_below {
            self.push_history(events);
            return Ok(None);
        }
        if self.pending.is_some() {
            return Err(EngineError::UnprocessedWindow(id));
        }
        let size = events.len();
        self.pending = Some(PendingWindow { id, events });
        Ok(Some(WindowReady { window_id: id, size }))
    }

    /// Promote a non-empty partial window (wall-clock flush support).
    pub fn flush_partial(&mut self) -> Result<Option<WindowReady>, EngineError> {
        if self.open.len() < 4 {
            return Ok(None);
        }
        if self.pending.is_some() {
            return Err(EngineError::UnprocessedWindow(self.next_window_id));
        }
        let events = std::mem::take(&mut self.open);
        let id = self.next_window_id;
        self.next_window_id += 1;
        if id < self.skip_below {
            self.push_history(events);
            return Ok(None);
        }
        let size = events.len();
        self.pending = Some(PendingWindow { id, events });
        Ok(Some(WindowReady { window_id: id, size }))
    }

    fn push_history(&mut self, events: Vec<SysmonEvent>) {
        for ev in events {
            self.history.push_back(ev);
        }
        while self.history.len() > self.config.history_buffer {
            self.history.pop_front();
        }
    }

    fn field_embedding(&mut self, value: &str) -> (Vec<T>, T) {
        if let Some(hit) = self.field_cache.get(value) {
            return (hit.vec.clone(), hit.scalar);
        }
        let vec = embed_field(value, &self.table);
        let scalar = scalarize(&vec, self.config.scalarization);
        self.field_cache.insert(value.to_string(), CachedField { vec: vec.clone(), scalar });
        (vec, scalar)
    }

    fn field_scalar(&mut self, value: &str) -> T {
        if let Some(hit) = self.field_cache.get(value) {
            return hit.scalar;
        }
        self.field_embedding(value).1
    }

    /// Selected features in schema order; keeps model input columns stable
    /// while scores jitter between windows.
    fn embedding_order(&self, ranking: &FeatureRanking) -> Vec<usize> {
        let mut idx: Vec<usize> = ranking.selected.iter().filter_map(|name| self.schema.index_of(name)).collect();
        idx.sort_unstable();
        idx
    }

    fn embed_rows(&mut self, events: &[SysmonEvent], order: &[usize]) -> Vec<Vec<T>> {
        let dim = self.table.dim();
        events
            .iter()
            .map(|ev| {
                let mut row = Vec::with_capacity(order.len() * dim);
                for &fi in order {
                    let value = ev.fields[fi].clone();
                    let (vec, _) = self.field_embedding(&value);
                    row.extend(vec);
                }
                row
            })
            .collect()
    }

    fn split_indices(&self, n: usize, window_id: u32, tag: &str) -> (Vec<usize>, Vec<usize>) {
        let n_train = ((n as f64) * self.config.train_fraction).round() as usize;
        let n_train = n_train.clamp(1, n.saturating_sub(1).max(1));
        if self.config.chronological_split {
            ((0..n_train).collect(), (n_train..n).collect())
        } else {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = stream(self.config.seed, tag, u64::from(window_id));
            idx.shuffle(&mut rng);
            let test = idx.split_off(n_train);
            (idx, test)
        }
    }

    fn exec(&self) -> BranchExec {
        if self.config.parallel_branches {
            BranchExec::Parallel
        } else {
            BranchExec::Sequential
        }
    }

    fn labels_of(events: &[SysmonEvent], window_id: u32) -> Result<Vec<Label>, EngineError> {
        events.iter().map(|e| e.label.ok_or(EngineError::UnlabeledWindow(window_id))).collect()
    }

    /// Rank all schema features on the given training events.
    fn rank_on(&mut self, events: &[SysmonEvent], labels: &[Label]) -> Result<FeatureRanking, PrepError> {
        let f = self.schema.len();
        let mut columns: Vec<Vec<T>> = vec![Vec::with_capacity(events.len()); f];
        for ev in events {
            for (fi, col) in columns.iter_mut().enumerate() {
                let value = ev.fields[fi].clone();
                col.push(self.field_scalar(&value));
            }
        }
        let labels01: Vec<u8> = labels.iter().map(|&l| u8::from(l == Label::Ransomware)).collect();
        let names = self.schema.feature_names.clone();
        select_features(&columns, &names, &labels01, self.config.selected_k, self.config.rank_mode)
    }

    /// Embed, scale, oversample and train on `events`; evaluates on the
    /// held-out split. With `fresh` a new model replaces the current one.
    fn run_training_pass(
        &mut self,
        events: &[SysmonEvent],
        window_id: u32,
        fresh: bool,
        freeze: BTreeSet<ParamGroup>,
        tag: &str,
    ) -> Result<(ScalerParams<T>, ConfusionCounts), EngineError> {
        let ranking = self.ranking.clone().expect("ranking set before training");
        let order = self.embedding_order(&ranking);
        let labels = Self::labels_of(events, window_id)?;
        let (train_idx, test_idx) = self.split_indices(events.len(), window_id, tag);

        let rows = self.embed_rows(events, &order);
        let train_rows: Vec<Vec<T>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
        let scaler = fit_scaler(&train_rows, window_id)?;

        let mut train_x: Vec<Vec<T>> = Vec::with_capacity(train_rows.len());
        for r in &train_rows {
            train_x.push(apply_scaler_row(r, &scaler)?);
        }
        let mut train_y: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();

        // oversample the minority class inside the training split only
        if self.config.max_epochs > 0 {
            let rw: Vec<Vec<T>> = train_x
                .iter()
                .zip(&train_y)
                .filter(|(_, &y)| y == Label::Ransomware)
                .map(|(x, _)| x.clone())
                .collect();
            let benign_count = train_x.len() - rw.len();
            let (minority, minority_label, majority_count) = if rw.len() <= benign_count {
                (rw, Label::Ransomware, benign_count)
            } else {
                let benign: Vec<Vec<T>> = train_x
                    .iter()
                    .zip(&train_y)
                    .filter(|(_, &y)| y == Label::Benign)
                    .map(|(x, _)| x.clone())
                    .collect();
                (benign, Label::Benign, rw.len())
            };
            if minority.len() >= 2 {
                let smote_cfg = SmoteConfig {
                    k_neighbors: self.config.smote_k.min(minority.len() - 1),
                    target_ratio: self.config.smote_ratio,
                    seed: stream_seed(self.config.seed, "smote", window_id),
                };
                let out = smote(&minority, majority_count, &smote_cfg)?;
                for row in out.synthetic {
                    train_x.push(row);
                    train_y.push(minority_label);
                }
            }
        }

        // build or reuse the model
        let input_len = order.len() * self.table.dim();
        if fresh || self.model.is_none() {
            let params = ModelParams::new(self.arch, input_len, self.config.seed)?;
            let opt = AdamState::new(self.config.learning_rate);
            self.model = Some(ModelState { params, opt });
        }
        {
            let state = self.model.as_mut().expect("model just ensured");
            if state.params.input_len != input_len {
                return Err(EngineError::Config(format!(
                    "feature set implies input length {input_len}, model expects {}",
                    state.params.input_len
                )));
            }
            set_frozen(&mut state.params, freeze);
        }

        // train with early stop; restore the snapshot if the loss diverges
        if self.config.max_epochs > 0 && !train_x.is_empty() {
            let exec = self.exec();
            let seed = self.config.seed;
            let sgd_batch = self.config.sgd_batch;
            let max_epochs = self.config.max_epochs;
            let patience = self.config.early_stop_patience as usize;
            let delta = self.config.early_stop_delta;
            let state = self.model.as_mut().expect("model present");
            let snapshot_params = state.params.clone();
            let snapshot_opt = state.opt.clone();
            let mut dropout_rng = stream(seed, "train-dropout", u64::from(window_id));
            let mut epoch_losses: Vec<f64> = Vec::new();
            let mut diverged = false;
            'epochs: for epoch in 0..max_epochs {
                let mut order_rng = stream(seed, "epoch-order", (u64::from(window_id) << 20) | u64::from(epoch));
                let mut idx: Vec<usize> = (0..train_x.len()).collect();
                idx.shuffle(&mut order_rng);
                let mut loss_sum = 0.0;
                let mut batches = 0usize;
                for chunk in idx.chunks(sgd_batch) {
                    let xs: Vec<Vec<T>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
                    let ys: Vec<Label> = chunk.iter().map(|&i| train_y[i]).collect();
                    match train_minibatch(&mut state.params, &mut state.opt, &xs, &ys, &mut dropout_rng, exec) {
                        Ok(loss) => {
                            loss_sum += loss.as_f64();
                            batches += 1;
                        }
                        Err(NeuralError::NonFiniteLoss) => {
                            diverged = true;
                            break 'epochs;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                let epoch_loss = if batches > 0 { loss_sum / batches as f64 } else { 0.0 };
                epoch_losses.push(epoch_loss);
                if patience > 0 && epoch_losses.len() > patience {
                    let before = epoch_losses[epoch_losses.len() - 1 - patience];
                    if before - epoch_loss < delta {
                        break;
                    }
                }
            }
            if diverged {
                state.params = snapshot_params;
                state.opt = snapshot_opt;
                self.diverged_count += 1;
            }
        }

        // evaluate on the untouched split
        let mut test_x: Vec<Vec<T>> = Vec::with_capacity(test_idx.len());
        let mut test_y: Vec<Label> = Vec::with_capacity(test_idx.len());
        for &i in &test_idx {
            test_x.push(apply_scaler_row(&rows[i], &scaler)?);
            test_y.push(labels[i]);
        }
        let exec = self.exec();
        let threshold = self.config.threshold;
        let state = self.model.as_ref().expect("model present");
        let probs = eval_probs(&state.params, &test_x, exec)?;
        let preds: Vec<Label> = probs
            .iter()
            .map(|p| if p[1].as_f64() >= threshold { Label::Ransomware } else { Label::Benign })
            .collect();
        let counts = confusion(&test_y, &preds).expect("equal lengths by construction");
        Ok((scaler, counts))
    }

    /// Process the pending window end to end and return its metrics row.
    /// The caller appends the row to the metrics log; the checkpoint is
    /// written (atomically) before this returns.
    pub fn process_window(&mut self) -> Result<MetricsRecord, EngineError> {
        let PendingWindow { id, events } = self.pending.take().ok_or(EngineError::NoPendingWindow)?;
        let started = Instant::now();

        let labels = Self::labels_of(&events, id)?;
        let (train_idx, _) = self.split_indices(events.len(), id, "split");

        // feature re-ranking on the training split, per cadence
        let due =
            self.ranking.is_none() || (self.config.reselect_every > 0 && id % self.config.reselect_every == 0);
        if due {
            let train_events: Vec<SysmonEvent> = train_idx.iter().map(|&i| events[i].clone()).collect();
            let train_labels: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
            match self.rank_on(&train_events, &train_labels) {
                Ok(new_ranking) => {
                    let changed = match (&self.ranking, &self.model) {
                        (Some(old), Some(_)) => old.selected_set() != new_ranking.selected_set(),
                        _ => false,
                    };
                    self.ranking_log.push((id, new_ranking.clone()));
                    self.ranking = Some(new_ranking);
                    if changed {
                        self.retrain_from_history(id)?;
                    }
                }
                Err(PrepError::SingleClassBatch) => {
                    if self.ranking.is_none() {
                        return Err(EngineError::SingleClassWindow(id));
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }

        let freeze = if self.model.is_some() { self.config.freeze_groups.clone() } else { BTreeSet::new() };
        let (scaler, counts) = self.run_training_pass(&events, id, false, freeze, "split")?;
        self.scaler = Some(scaler);

        let record = MetricsRecord::from_counts(id, now_ms(), &counts, started.elapsed().as_secs_f64());
        self.last_record = Some(record);
        self.windows_processed += 1;
        self.push_history(events);

        if let Some(path) = self.checkpoint_path() {
            if let Some(ckpt) = self.checkpoint() {
                ckpt.save(&path)?;
            }
        }
        Ok(record)
    }

    /// Train a fresh model on the retained history under the current
    /// (changed) feature set. Replaces the model; consumption of new events
    /// is naturally paused while this runs.
    pub fn retrain_from_history(&mut self, window_id: u32) -> Result<MetricsRecord, EngineError> {
        if self.history.is_empty() {
            return Err(EngineError::EmptyHistory);
        }
        let events: Vec<SysmonEvent> = self.history.iter().cloned().collect();
        let started = Instant::now();
        let (scaler, counts) = self.run_training_pass(&events, window_id, true, BTreeSet::new(), "retrain")?;
        self.scaler = Some(scaler);
        self.retrain_count += 1;
        Ok(MetricsRecord::from_counts(window_id, now_ms(), &counts, started.elapsed().as_secs_f64()))
    }

    /// Assemble a checkpoint of the current state, if a model exists.
    pub fn checkpoint(&self) -> Option<ModelCheckpoint<T>> {
        let state = self.model.as_ref()?;
        Some(ModelCheckpoint {
            window_id: self.last_record.map(|r| r.window_id).unwrap_or(0),
            seed: self.config.seed,
            initial_window: self.config.initial_window as u64,
            update_window: self.config.update_window as u64,
            params: state.params.clone(),
            opt: state.opt.clone(),
            embedding: self.config.embedding,
            scaler: self.scaler.clone()?,
            ranking: self.ranking.clone()?,
            schema: self.schema.clone(),
            last_metrics: self.last_record?,
        })
    }

    /// Feature-by-feature correlation heatmap over the given events
    /// (reporting artifact; covers all schema features).
    pub fn heatmap_on(&mut self, events: &[SysmonEvent]) -> Vec<Vec<f64>> {
        let f = self.schema.len();
        let mut columns: Vec<Vec<T>> = vec![Vec::with_capacity(events.len()); f];
        for ev in events {
            for (fi, col) in columns.iter_mut().enumerate() {
                let value = ev.fields[fi].clone();
                col.push(self.field_scalar(&value));
            }
        }
        pcc_heatmap(&columns)
    }

    /// Classify one event against the current model.
    pub fn classify(&mut self, event: &SysmonEvent) -> Result<(Label, f64), EngineError> {
        let ranking = self.ranking.clone().ok_or(EngineError::NoPendingWindow)?;
        let scaler = self.scaler.clone().ok_or(EngineError::NoPendingWindow)?;
        let order = self.embedding_order(&ranking);
        let rows = self.embed_rows(std::slice::from_ref(event), &order);
        let x = apply_scaler_row(&rows[0], &scaler)?;
        let exec = self.exec();
        let threshold = self.config.threshold;
        let state = self.model.as_ref().ok_or(EngineError::NoPendingWindow)?;
        let probs = eval_probs(&state.params, &[x], exec)?;
        let p = probs[0][1].as_f64();
        let label = if p >= threshold { Label::Ransomware } else { Label::Benign };
        Ok((label, p))
    }
}

fn now_ms() -> i64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

fn stream_seed(seed: u64, tag: &str, window_id: u32) -> u64 {
    use rand::RngCore;
    stream(seed, tag, u64::from(window_id)).next_u64()
}
