//! Sysmon-style event schema, JSONL parsing and stream validation.
//!
//! Events arrive as one JSON object per line. After parsing, every event
//! carries a value for every schema feature; features missing on the wire
//! are normalized to the `"absent"` sentinel so downstream embedding always
//! has a token to work with.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel stored for features missing from the wire record.
pub const ABSENT: &str = "absent";

/// Event codes accepted by the pipeline.
pub const SUPPORTED_EVENT_IDS: [u16; 14] = [1, 2, 3, 5, 7, 8, 10, 11, 12, 13, 17, 22, 23, 25];

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Ransomware,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Ransomware => "ransomware",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("malformed json: {0}")]
    MalformedJson(String),
    #[error("unknown event id {0}")]
    UnknownEventId(u64),
    #[error("event id {event_id} missing required field {field}")]
    MissingRequired { event_id: u16, field: String },
    #[error("schema error: {0}")]
    Schema(String),
}

/// Ordered feature catalogue plus per-code required fields.
///
/// The feature order is fixed for a run; it determines the column order of
/// every matrix built downstream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct EventSchema {
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub required: BTreeMap<u16, Vec<String>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl EventSchema {
    pub fn new(feature_names: Vec<String>, required: BTreeMap<u16, Vec<String>>) -> Result<Self, EventError> {
        let mut index = HashMap::with_capacity(feature_names.len());
        for (i, name) in feature_names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(EventError::Schema(format!("duplicate feature name {name}")));
            }
        }
        for (code, fields) in &required {
            if !SUPPORTED_EVENT_IDS.contains(code) {
                return Err(EventError::Schema(format!("required map names unsupported code {code}")));
            }
            for f in fields {
                if !index.contains_key(f) {
                    return Err(EventError::Schema(format!("required field {f} not in schema")));
                }
            }
        }
        Ok(Self { feature_names, required, index })
    }

    /// The six named features plus opaque slots f07..f52.
    pub fn default_schema() -> Self {
        let mut names: Vec<String> = ["CallTrace", "GrantedAccess", "SourceUser", "TargetImage", "TargetUser", "Task"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 7..=52 {
            names.push(format!("f{i:02}"));
        }
        let mut required = BTreeMap::new();
        for code in SUPPORTED_EVENT_IDS {
            required.insert(code, vec!["Task".to_string()]);
        }
        Self::new(names, required).expect("default schema is well formed")
    }

    pub fn from_json(text: &str) -> Result<Self, EventError> {
        #[derive(Deserialize)]
        struct Wire {
            feature_names: Vec<String>,
            #[serde(default)]
            required: BTreeMap<u16, Vec<String>>,
        }
        let w: Wire = serde_json::from_str(text).map_err(|e| EventError::Schema(e.to_string()))?;
        Self::new(w.feature_names, w.required)
    }

    pub fn from_file(path: &Path) -> Result<Self, EventError> {
        let text = std::fs::read_to_string(path).map_err(|e| EventError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "feature_names": self.feature_names, "required": self.required }).to_string()
    }

    pub fn len(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// One parsed log record. `fields` holds values in schema order, with the
/// `"absent"` sentinel filled in for anything the wire record omitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SysmonEvent {
    pub event_id: u16,
    pub timestamp_ms: i64,
    pub label: Option<Label>,
    pub family: Option<String>,
    pub fields: Vec<String>,
}

impl SysmonEvent {
    pub fn field<'a>(&'a self, schema: &EventSchema, name: &str) -> Option<&'a str> {
        schema.index_of(name).map(|i| self.fields[i].as_str())
    }

    pub fn populated_count(&self) -> usize {
        self.fields.iter().filter(|v| v.as_str() != ABSENT).count()
    }
}

fn value_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Parse one JSONL line into a normalized event.
pub fn parse_event(line: &str, schema: &EventSchema) -> Result<SysmonEvent, EventError> {
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(line).map_err(|e| EventError::MalformedJson(e.to_string()))?;

    let event_id = obj
        .get("event_id")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| EventError::MalformedJson("missing integer event_id".into()))?;
    if !SUPPORTED_EVENT_IDS.iter().any(|&c| u64::from(c) == event_id) {
        return Err(EventError::UnknownEventId(event_id));
    }
    let event_id = event_id as u16;

    let timestamp_ms = obj.get("timestamp").and_then(|v| v.as_i64()).unwrap_or(0);

    let label = match obj.get("label") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => match s.as_str() {
            "benign" => Some(Label::Benign),
            "ransomware" => Some(Label::Ransomware),
            other => return Err(EventError::MalformedJson(format!("unknown label {other}"))),
        },
        Some(other) => return Err(EventError::MalformedJson(format!("label must be a string, got {other}"))),
    };

    let family = obj.get("family").and_then(|v| v.as_str()).map(|s| s.to_string());

    let mut fields = Vec::with_capacity(schema.len());
    for name in &schema.feature_names {
        let value = obj
            .get(name.as_str())
            .and_then(value_to_string)
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ABSENT.to_string());
        fields.push(value);
    }

    if let Some(required) = schema.required.get(&event_id) {
        for name in required {
            let idx = schema.index_of(name).expect("required fields validated at schema build");
            if fields[idx] == ABSENT {
                return Err(EventError::MissingRequired { event_id, field: name.clone() });
            }
        }
    }

    Ok(SysmonEvent { event_id, timestamp_ms, label, family, fields })
}

/// Serialize an event back to its wire form (absent features are omitted).
pub fn serialize_event(event: &SysmonEvent, schema: &EventSchema) -> String {
    #[derive(Serialize)]
    struct Wire<'a> {
        event_id: u16,
        timestamp: i64,
        #[serde(skip_serializing_if = "Option::is_none")]
        label: Option<&'a str>,
        #[serde(skip_serializing_if = "Option::is_none")]
        family: Option<&'a str>,
        #[serde(flatten)]
        fields: BTreeMap<&'a str, &'a str>,
    }
    let mut fields = BTreeMap::new();
    for (name, value) in schema.feature_names.iter().zip(&event.fields) {
        if value != ABSENT {
            fields.insert(name.as_str(), value.as_str());
        }
    }
    let wire = Wire {
        event_id: event.event_id,
        timestamp: event.timestamp_ms,
        label: event.label.map(Label::as_str),
        family: event.family.as_deref(),
        fields,
    };
    serde_json::to_string(&wire).expect("event serialization cannot fail")
}

/// Aggregate counts over a stream; never mutates its input.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub total: u64,
    pub per_code: BTreeMap<u16, u64>,
    pub benign: u64,
    pub ransomware: u64,
    pub unlabeled: u64,
    /// Fraction of events missing each feature, in schema order.
    pub missing_rate: Vec<f64>,
}

impl ValidationReport {
    pub fn benign_fraction(&self) -> f64 {
        let labeled = self.benign + self.ransomware;
        if labeled == 0 {
            0.0
        } else {
            self.benign as f64 / labeled as f64
        }
    }
}

pub fn validate_stream<'a, I>(events: I, schema: &EventSchema) -> ValidationReport
where
    I: IntoIterator<Item = &'a SysmonEvent>,
{
    let mut report = ValidationReport { missing_rate: vec![0.0; schema.len()], ..Default::default() };
    let mut missing = vec![0u64; schema.len()];
    for ev in events {
        report.total += 1;
        *report.per_code.entry(ev.event_id).or_insert(0) += 1;
        match ev.label {
            Some(Label::Benign) => report.benign += 1,
            Some(Label::Ransomware) => report.ransomware += 1,
            None => report.unlabeled += 1,
        }
        for (i, v) in ev.fields.iter().enumerate() {
            if v == ABSENT {
                missing[i] += 1;
            }
        }
    }
    if report.total > 0 {
        for (rate, m) in report.missing_rate.iter_mut().zip(&missing) {
            *rate = *m as f64 / report.total as f64;
        }
    }
    report
}
