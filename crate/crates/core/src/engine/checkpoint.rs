//! Versioned binary checkpoint format.
//!
//! Layout: magic `ICLS`, format version (u32 LE), then length-prefixed
//! sections (meta, arch, params with freeze flags, optimizer, embedding
//! config, scaler, ranking, schema, last metrics record), and a trailing
//! CRC32 over everything before it. Parameters and optimizer moments are
//! stored as 32-bit floats, little-endian. Files are written to a temp
//! path and renamed so a crash never leaves a torn checkpoint behind.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::embed::NgramVocabConfig;
use crate::event::EventSchema;
use crate::metrics::MetricsRecord;
use crate::neural::{AdamState, ArchVariant, Combine, ModelArch, ModelParams, ParamGroup};
use crate::prep::{FeatureRanking, RankMode, ScalerParams};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"ICLS";
pub const FORMAT_VERSION: u32 = 1;

const SEC_META: u32 = 1;
const SEC_ARCH: u32 = 2;
const SEC_PARAMS: u32 = 3;
const SEC_OPTIMIZER: u32 = 4;
const SEC_EMBEDDING: u32 = 5;
const SEC_SCALER: u32 = 6;
const SEC_RANKING: u32 = 7;
const SEC_SCHEMA: u32 = 8;
const SEC_METRICS: u32 = 9;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint incompatible with run configuration: {0}")]
    Incompatible(String),
}

/// Everything needed to reproduce predictions and continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint<T> {
    pub window_id: u32,
    pub seed: u64,
    pub initial_window: u64,
    pub update_window: u64,
    pub params: ModelParams<T>,
    pub opt: AdamState<T>,
    pub embedding: NgramVocabConfig,
    pub scaler: ScalerParams<T>,
    pub ranking: FeatureRanking,
    pub schema: EventSchema,
    pub last_metrics: MetricsRecord,
}

fn write_string(buf: &mut Vec<u8>, s: &str) {
    buf.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    buf.extend_from_slice(s.as_bytes());
}

fn read_string(cur: &mut Cursor<&[u8]>) -> Result<String, CheckpointError> {
    let len = cur.read_u32::<LittleEndian>()? as usize;
    let mut bytes = vec![0u8; len];
    cur.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| CheckpointError::Corrupt(format!("bad utf8: {e}")))
}

fn write_f32_tensor<T: Scalar>(buf: &mut Vec<u8>, tensor: &[T]) {
    buf.write_u64::<LittleEndian>(tensor.len() as u64).unwrap();
    for &v in tensor {
        buf.write_f32::<LittleEndian>(v.to_f32().unwrap_or(f32::NAN)).unwrap();
    }
}

fn read_f32_tensor_into<T: Scalar>(cur: &mut Cursor<&[u8]>, out: &mut [T]) -> Result<(), CheckpointError> {
    let len = cur.read_u64::<LittleEndian>()? as usize;
    if len != out.len() {
        return Err(CheckpointError::Corrupt(format!("tensor length {len}, expected {}", out.len())));
    }
    for slot in out.iter_mut() {
        *slot = T::of(f64::from(cur.read_f32::<LittleEndian>()?));
    }
    Ok(())
}

fn read_f32_vec<T: Scalar>(cur: &mut Cursor<&[u8]>) -> Result<Vec<T>, CheckpointError> {
    let len = cur.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(T::of(f64::from(cur.read_f32::<LittleEndian>()?)));
    }
    Ok(out)
}

fn variant_code(v: ArchVariant) -> u8 {
    match v {
        ArchVariant::ParallelAttention => 0,
        ArchVariant::StackedSequential => 1,
        ArchVariant::LstmOnly => 2,
        ArchVariant::CnnAttentionOnly => 3,
    }
}

fn variant_from(code: u8) -> Result<ArchVariant, CheckpointError> {
    Ok(match code {
        0 => ArchVariant::ParallelAttention,
        1 => ArchVariant::StackedSequential,
        2 => ArchVariant::LstmOnly,
        3 => ArchVariant::CnnAttentionOnly,
        other => return Err(CheckpointError::Corrupt(format!("unknown variant code {other}"))),
    })
}

impl<T: Scalar> ModelCheckpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();

        let section = |id: u32, payload: Vec<u8>, out: &mut Vec<u8>| {
            out.write_u32::<LittleEndian>(id).unwrap();
            out.write_u64::<LittleEndian>(payload.len() as u64).unwrap();
            out.extend_from_slice(&payload);
        };

        let mut meta = Vec::new();
        meta.write_u32::<LittleEndian>(self.window_id).unwrap();
        meta.write_u64::<LittleEndian>(self.seed).unwrap();
        meta.write_u64::<LittleEndian>(self.initial_window).unwrap();
        meta.write_u64::<LittleEndian>(self.update_window).unwrap();
        section(SEC_META, meta, &mut out);

        let arch = &self.params.arch;
        let mut a = Vec::new();
        a.push(variant_code(arch.variant));
        a.write_u32::<LittleEndian>(arch.branches as u32).unwrap();
        a.write_u32::<LittleEndian>(arch.conv_depth as u32).unwrap();
        a.write_u32::<LittleEndian>(arch.conv_filters as u32).unwrap();
        a.write_u32::<LittleEndian>(arch.conv_kernel as u32).unwrap();
        a.write_u32::<LittleEndian>(arch.lstm_units as u32).unwrap();
        a.write_u32::<LittleEndian>(arch.attention_dim as u32).unwrap();
        a.write_u32::<LittleEndian>(arch.dense_hidden as u32).unwrap();
        a.write_f64::<LittleEndian>(arch.dropout_lstm).unwrap();
        a.write_f64::<LittleEndian>(arch.dropout_dense).unwrap();
        a.push(match arch.combine {
            Combine::ContextAndLast => 0,
            Combine::ContextOnly => 1,
        });
        a.write_u32::<LittleEndian>(self.params.input_len as u32).unwrap();
        section(SEC_ARCH, a, &mut out);

        let mut p = Vec::new();
        for group in ParamGroup::ALL {
            p.push(u8::from(self.params.frozen.contains(&group)));
        }
        let tensors = self.params.tensors();
        p.write_u32::<LittleEndian>(tensors.len() as u32).unwrap();
        for (_, tensor) in tensors {
            write_f32_tensor(&mut p, tensor);
        }
        section(SEC_PARAMS, p, &mut out);

        let mut o = Vec::new();
        o.write_f64::<LittleEndian>(self.opt.learning_rate).unwrap();
        o.write_f64::<LittleEndian>(self.opt.beta1).unwrap();
        o.write_f64::<LittleEndian>(self.opt.beta2).unwrap();
        o.write_f64::<LittleEndian>(self.opt.epsilon).unwrap();
        o.write_u64::<LittleEndian>(self.opt.step).unwrap();
        o.write_u32::<LittleEndian>(self.opt.m.len() as u32).unwrap();
        for (m, v) in self.opt.m.iter().zip(&self.opt.v) {
            write_f32_tensor(&mut o, m);
            write_f32_tensor(&mut o, v);
        }
        section(SEC_OPTIMIZER, o, &mut out);

        let mut e = Vec::new();
        e.write_u32::<LittleEndian>(self.embedding.n_min as u32).unwrap();
        e.write_u32::<LittleEndian>(self.embedding.n_max as u32).unwrap();
        e.write_u32::<LittleEndian>(self.embedding.dim as u32).unwrap();
        e.write_u64::<LittleEndian>(self.embedding.buckets as u64).unwrap();
        e.write_u64::<LittleEndian>(self.embedding.seed).unwrap();
        section(SEC_EMBEDDING, e, &mut out);

        let mut s = Vec::new();
        s.write_u32::<LittleEndian>(self.scaler.fitted_on).unwrap();
        write_f32_tensor(&mut s, &self.scaler.mean);
        write_f32_tensor(&mut s, &self.scaler.std);
        s.write_u64::<LittleEndian>(self.scaler.constant.len() as u64).unwrap();
        for &c in &self.scaler.constant {
            s.push(u8::from(c));
        }
        section(SEC_SCALER, s, &mut out);

        let mut r = Vec::new();
        r.write_u32::<LittleEndian>(self.ranking.k as u32).unwrap();
        r.push(match self.ranking.mode {
            RankMode::Absolute => 0,
            RankMode::Signed => 1,
        });
        r.write_u32::<LittleEndian>(self.ranking.scores.len() as u32).unwrap();
        for (name, score) in &self.ranking.scores {
            write_string(&mut r, name);
            r.write_f64::<LittleEndian>(*score).unwrap();
        }
        r.write_u32::<LittleEndian>(self.ranking.selected.len() as u32).unwrap();
        for name in &self.ranking.selected {
            write_string(&mut r, name);
        }
        r.write_u32::<LittleEndian>(self.ranking.degenerate.len() as u32).unwrap();
        for name in &self.ranking.degenerate {
            write_string(&mut r, name);
        }
        section(SEC_RANKING, r, &mut out);

        let mut sc = Vec::new();
        sc.write_u32::<LittleEndian>(self.schema.feature_names.len() as u32).unwrap();
        for name in &self.schema.feature_names {
            write_string(&mut sc, name);
        }
        sc.write_u32::<LittleEndian>(self.schema.required.len() as u32).unwrap();
        for (code, fields) in &self.schema.required {
            sc.write_u16::<LittleEndian>(*code).unwrap();
            sc.write_u32::<LittleEndian>(fields.len() as u32).unwrap();
            for f in fields {
                write_string(&mut sc, f);
            }
        }
        section(SEC_SCHEMA, sc, &mut out);

        let mut m = Vec::new();
        let rec = &self.last_metrics;
        m.write_u32::<LittleEndian>(rec.window_id).unwrap();
        m.write_i64::<LittleEndian>(rec.timestamp_ms).unwrap();
        for v in [rec.precision, rec.recall, rec.f1, rec.f2, rec.accuracy, rec.fpr, rec.fnr, rec.runtime_s] {
            m.write_f64::<LittleEndian>(v).unwrap();
        }
        section(SEC_METRICS, m, &mut out);

        let crc = crc32fast::hash(&out);
        out.write_u32::<LittleEndian>(crc).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(CheckpointError::Corrupt("file too short".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::Corrupt("bad magic".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored_crc {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }
        let mut cur = Cursor::new(body);
        cur.set_position(4);
        let version = cur.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }

        let mut sections: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
        while (cur.position() as usize) < body.len() {
            let id = cur.read_u32::<LittleEndian>()?;
            let len = cur.read_u64::<LittleEndian>()? as usize;
            let start = cur.position() as usize;
            let end = start.checked_add(len).ok_or_else(|| CheckpointError::Corrupt("section overflow".into()))?;
            if end > body.len() {
                return Err(CheckpointError::Corrupt(format!("section {id} runs past end of file")));
            }
            sections.insert(id, body[start..end].to_vec());
            cur.set_position(end as u64);
        }
        let take = |id: u32, name: &str| -> Result<Vec<u8>, CheckpointError> {
            sections.get(&id).cloned().ok_or_else(|| CheckpointError::Corrupt(format!("missing {name} section")))
        };

        let meta = take(SEC_META, "meta")?;
        let mut cur = Cursor::new(meta.as_slice());
        let window_id = cur.read_u32::<LittleEndian>()?;
        let seed = cur.read_u64::<LittleEndian>()?;
        let initial_window = cur.read_u64::<LittleEndian>()?;
        let update_window = cur.read_u64::<LittleEndian>()?;

        let a = take(SEC_ARCH, "arch")?;
        let mut cur = Cursor::new(a.as_slice());
        let variant = variant_from(cur.read_u8()?)?;
        let arch = ModelArch {
            variant,
            branches: cur.read_u32::<LittleEndian>()? as usize,
            conv_depth: cur.read_u32::<LittleEndian>()? as usize,
            conv_filters: cur.read_u32::<LittleEndian>()? as usize,
            conv_kernel: cur.read_u32::<LittleEndian>()? as usize,
            lstm_units: cur.read_u32::<LittleEndian>()? as usize,
            attention_dim: cur.read_u32::<LittleEndian>()? as usize,
            dense_hidden: cur.read_u32::<LittleEndian>()? as usize,
            dropout_lstm: cur.read_f64::<LittleEndian>()?,
            dropout_dense: cur.read_f64::<LittleEndian>()?,
            combine: match cur.read_u8()? {
                0 => Combine::ContextAndLast,
                1 => Combine::ContextOnly,
                other => return Err(CheckpointError::Corrupt(format!("unknown combine code {other}"))),
            },
        };
        let input_len = cur.read_u32::<LittleEndian>()? as usize;

        let mut params = ModelParams::<T>::zeros(arch, input_len)
            .map_err(|e| CheckpointError::Corrupt(format!("invalid architecture: {e}")))?;
        let p = take(SEC_PARAMS, "params")?;
        let mut cur = Cursor::new(p.as_slice());
        let mut frozen = std::collections::BTreeSet::new();
        for group in ParamGroup::ALL {
            if cur.read_u8()? != 0 {
                frozen.insert(group);
            }
        }
        let tensor_count = cur.read_u32::<LittleEndian>()? as usize;
        {
            let mut tensors = params.tensors_mut();
            if tensor_count != tensors.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "{tensor_count} tensors, architecture implies {}",
                    tensors.len()
                )));
            }
            for (_, tensor) in tensors.iter_mut() {
                read_f32_tensor_into(&mut cur, tensor)?;
            }
        }
        params.frozen = frozen;

        let o = take(SEC_OPTIMIZER, "optimizer")?;
        let mut cur = Cursor::new(o.as_slice());
        let mut opt = AdamState::<T>::new(cur.read_f64::<LittleEndian>()?);
        opt.beta1 = cur.read_f64::<LittleEndian>()?;
        opt.beta2 = cur.read_f64::<LittleEndian>()?;
        opt.epsilon = cur.read_f64::<LittleEndian>()?;
        opt.step = cur.read_u64::<LittleEndian>()?;
        let moments = cur.read_u32::<LittleEndian>()? as usize;
        for _ in 0..moments {
            opt.m.push(read_f32_vec(&mut cur)?);
            opt.v.push(read_f32_vec(&mut cur)?);
        }

        let e = take(SEC_EMBEDDING, "embedding")?;
        let mut cur = Cursor::new(e.as_slice());
        let embedding = NgramVocabConfig {
            n_min: cur.read_u32::<LittleEndian>()? as usize,
            n_max: cur.read_u32::<LittleEndian>()? as usize,
            dim: cur.read_u32::<LittleEndian>()? as usize,
            buckets: cur.read_u64::<LittleEndian>()? as usize,
            seed: cur.read_u64::<LittleEndian>()?,
        };

        let s = take(SEC_SCALER, "scaler")?;
        let mut cur = Cursor::new(s.as_slice());
        let fitted_on = cur.read_u32::<LittleEndian>()?;
        let mean: Vec<T> = read_f32_vec(&mut cur)?;
        let std: Vec<T> = read_f32_vec(&mut cur)?;
        let clen = cur.read_u64::<LittleEndian>()? as usize;
        let mut constant = Vec::with_capacity(clen);
        for _ in 0..clen {
            constant.push(cur.read_u8()? != 0);
        }
        let scaler = ScalerParams { mean, std, constant, fitted_on };

        let r = take(SEC_RANKING, "ranking")?;
        let mut cur = Cursor::new(r.as_slice());
        let k = cur.read_u32::<LittleEndian>()? as usize;
        let mode = match cur.read_u8()? {
            0 => RankMode::Absolute,
            1 => RankMode::Signed,
            other => return Err(CheckpointError::Corrupt(format!("unknown rank mode {other}"))),
        };
        let n = cur.read_u32::<LittleEndian>()? as usize;
        let mut scores = Vec::with_capacity(n);
        for _ in 0..n {
            let name = read_string(&mut cur)?;
            let score = cur.read_f64::<LittleEndian>()?;
            scores.push((name, score));
        }
        let m = cur.read_u32::<LittleEndian>()? as usize;
        let mut selected = Vec::with_capacity(m);
        for _ in 0..m {
            selected.push(read_string(&mut cur)?);
        }
        let d = cur.read_u32::<LittleEndian>()? as usize;
        let mut degenerate = Vec::with_capacity(d);
        for _ in 0..d {
            degenerate.push(read_string(&mut cur)?);
        }
        let ranking = FeatureRanking { scores, selected, k, mode, degenerate };

        let sc = take(SEC_SCHEMA, "schema")?;
        let mut cur = Cursor::new(sc.as_slice());
        let n = cur.read_u32::<LittleEndian>()? as usize;
        let mut feature_names = Vec::with_capacity(n);
        for _ in 0..n {
            feature_names.push(read_string(&mut cur)?);
        }
        let n = cur.read_u32::<LittleEndian>()? as usize;
        let mut required = BTreeMap::new();
        for _ in 0..n {
            let code = cur.read_u16::<LittleEndian>()?;
            let fcount = cur.read_u32::<LittleEndian>()? as usize;
            let mut fields = Vec::with_capacity(fcount);
            for _ in 0..fcount {
                fields.push(read_string(&mut cur)?);
            }
            required.insert(code, fields);
        }
        let schema = EventSchema::new(feature_names, required)
            .map_err(|e| CheckpointError::Corrupt(format!("invalid schema: {e}")))?;

        let mrec = take(SEC_METRICS, "metrics")?;
        let mut cur = Cursor::new(mrec.as_slice());
        let last_metrics = MetricsRecord {
            window_id: cur.read_u32::<LittleEndian>()?,
            timestamp_ms: cur.read_i64::<LittleEndian>()?,
            precision: cur.read_f64::<LittleEndian>()?,
            recall: cur.read_f64::<LittleEndian>()?,
            f1: cur.read_f64::<LittleEndian>()?,
            f2: cur.read_f64::<LittleEndian>()?,
            accuracy: cur.read_f64::<LittleEndian>()?,
            fpr: cur.read_f64::<LittleEndian>()?,
            fnr: cur.read_f64::<LittleEndian>()?,
            runtime_s: cur.read_f64::<LittleEndian>()?,
        };

        Ok(Self {
            window_id,
            seed,
            initial_window,
            update_window,
            params,
            opt,
            embedding,
            scaler,
            ranking,
            schema,
            last_metrics,
        })
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
