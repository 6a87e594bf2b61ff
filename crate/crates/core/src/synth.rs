//! Seeded synthetic event stream generator.
//!
//! Produces labeled, imbalanced Sysmon-style JSONL streams with scheduled
//! onset of new "ransomware family" behaviour signatures. Ransomware
//! arrives in contiguous bursts rather than uniformly. Family signatures
//! live in CallTrace/TargetImage token mixtures; GrantedAccess and the
//! user fields carry class-level signal shared by all families, which is
//! what lets a model catch a family it has never seen.
//!
//! A signal-free mode draws ransomware fields from the benign profile so
//! leakage bugs show up as above-chance scores.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{serialize_event, EventSchema, Label, SysmonEvent};
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    /// First stream index at which this family may appear.
    pub onset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub total_events: usize,
    pub benign_fraction: f64,
    pub families: Vec<FamilySpec>,
    pub seed: u64,
    /// Draw ransomware fields from the benign profile (ablation mode).
    pub signal_free: bool,
    pub burst_min: usize,
    pub burst_max: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let total = 200_000;
        Self {
            total_events: total,
            benign_fraction: 0.88,
            families: default_families(total),
            seed: 7,
            signal_free: false,
            burst_min: 50,
            burst_max: 400,
        }
    }
}

/// Six families with staggered onsets; two are present from the start so
/// the baseline window sees the class, the rest arrive mid-stream.
pub fn default_families(total: usize) -> Vec<FamilySpec> {
    let fractions = [0.0, 0.10, 0.30, 0.45, 0.60, 0.80];
    let names = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"];
    names
        .iter()
        .zip(fractions)
        .map(|(n, f)| FamilySpec { name: n.to_string(), onset: (total as f64 * f) as usize })
        .collect()
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.total_events == 0 {
            return Err(SynthError::InvalidConfig("total_events must be positive".into()));
        }
        if !(0.0 < self.benign_fraction && self.benign_fraction <= 1.0) {
            return Err(SynthError::InvalidConfig("benign_fraction must be in (0, 1]".into()));
        }
        if self.burst_min == 0 || self.burst_min > self.burst_max {
            return Err(SynthError::InvalidConfig("burst bounds must satisfy 1 <= min <= max".into()));
        }
        let mut prev: Option<usize> = None;
        for f in &self.families {
            if f.onset >= self.total_events {
                return Err(SynthError::InvalidConfig(format!("family {} onset beyond stream end", f.name)));
            }
            if let Some(p) = prev {
                if f.onset <= p {
                    return Err(SynthError::InvalidConfig("family onsets must be strictly increasing".into()));
                }
            }
            prev = Some(f.onset);
        }
        Ok(())
    }
}

/// Ground truth for a generated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub total_events: usize,
    pub benign: usize,
    pub ransomware: usize,
    pub benign_fraction: f64,
    pub families: Vec<FamilyManifest>,
    pub signal_free: bool,
    /// Distinctive ransomware tokens per feature, strongest first; the
    /// learnability oracle builds its stump from the first entry.
    pub signal_tokens: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub name: String,
    pub onset: usize,
    pub first_index: Option<usize>,
    pub count: usize,
}

/// One contiguous run of ransomware events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Burst {
    start: usize,
    len: usize,
    family: usize,
}

/// Deterministic burst layout for a config. Anchored bursts start exactly
/// at each family's onset; filler bursts are spread over the rest of the
/// stream and choose among families already active at their position.
fn build_layout(config: &GeneratorConfig) -> Vec<Burst> {
    let target = ((1.0 - config.benign_fraction) * config.total_events as f64).round() as usize;
    if target == 0 || config.families.is_empty() {
        return Vec::new();
    }
    let mut rng = stream(config.seed, "generator-layout", 0);
    let draw_len = |rng: &mut ChaCha8Rng| rng.gen_range(config.burst_min..=config.burst_max);

    // planned (start, family) pairs; anchors first
    let mut planned: Vec<(usize, Option<usize>)> =
        config.families.iter().enumerate().map(|(i, f)| (f.onset, Some(i))).collect();
    let first_onset = config.families[0].onset;

    let mut lens: Vec<usize> = Vec::new();
    let mut sum = 0usize;
    while sum < target {
        let l = draw_len(&mut rng).min(target - sum);
        lens.push(l.max(1));
        sum += lens.last().copied().unwrap_or(1);
    }
    while planned.len() < lens.len() {
        let start = rng.gen_range(first_onset..config.total_events);
        planned.push((start, None));
    }
    planned.sort_by_key(|(s, _)| *s);

    let active_at = |pos: usize| -> Vec<usize> {
        config.families.iter().enumerate().filter(|(_, f)| f.onset <= pos).map(|(i, _)| i).collect()
    };

    let mut bursts = Vec::with_capacity(lens.len());
    let mut cursor = 0usize;
    for ((planned_start, family), len) in planned.into_iter().zip(lens) {
        let start = planned_start.max(cursor);
        if start >= config.total_events {
            break;
        }
        let len = len.min(config.total_events - start);
        if len == 0 {
            continue;
        }
        let family = family.unwrap_or_else(|| {
            let active = active_at(planned_start);
            active[rng.gen_range(0..active.len())]
        });
        bursts.push(Burst { start, len, family });
        cursor = start + len;
    }
    bursts
}

struct Profiles {
    benign_ids: Vec<(u16, u32)>,
    ransom_ids: Vec<(u16, u32)>,
    benign_traces: Vec<String>,
    ransom_shared_frames: Vec<String>,
    benign_access: Vec<String>,
    ransom_access: Vec<String>,
    benign_source_users: Vec<String>,
    ransom_source_users: Vec<String>,
    benign_images: Vec<String>,
    ransom_shared_images: Vec<String>,
    benign_target_users: Vec<String>,
    ransom_target_users: Vec<String>,
    noise_tokens: Vec<String>,
}

fn task_name(event_id: u16) -> &'static str {
    match event_id {
        1 => "Process Create",
        2 => "File creation time changed",
        3 => "Network connection detected",
        5 => "Process terminated",
        7 => "Image loaded",
        8 => "CreateRemoteThread detected",
        10 => "Process accessed",
        11 => "File created",
        12 => "Registry object added or deleted",
        13 => "Registry value set",
        17 => "Pipe Created",
        22 => "Dns query",
        23 => "File Delete archived",
        25 => "Process Tampering",
        _ => "Unknown",
    }
}

fn profiles() -> Profiles {
    let sys = |dll: &str| format!("C:\\Windows\\System32\\{dll}");
    Profiles {
        benign_ids: vec![
            (1, 20),
            (2, 2),
            (3, 15),
            (5, 8),
            (7, 18),
            (8, 1),
            (10, 8),
            (11, 10),
            (12, 4),
            (13, 6),
            (17, 2),
            (22, 12),
            (23, 2),
            (25, 1),
        ],
        ransom_ids: vec![
            (1, 6),
            (2, 6),
            (3, 3),
            (5, 3),
            (7, 4),
            (8, 5),
            (10, 8),
            (11, 22),
            (12, 6),
            (13, 10),
            (17, 2),
            (22, 2),
            (23, 18),
            (25, 5),
        ],
        benign_traces: vec![
            sys("ntdll.dll+4f2a1"),
            sys("kernel32.dll+1b3e4"),
            sys("KERNELBASE.dll+2a5f8"),
            sys("user32.dll+8a21"),
            sys("combase.dll+3c470"),
            sys("rpcrt4.dll+7d02"),
            sys("shell32.dll+11c2f"),
            sys("gdi32full.dll+9a01"),
        ],
        ransom_shared_frames: vec![sys("bcrypt.dll+11a2"), sys("crypt32.dll+52b0"), sys("advapi32.dll+77aa")],
        benign_access: vec!["0x1000", "0x1400", "0x100000", "0x1410", "0x2000", "0x3000"]
            .into_iter()
            .map(String::from)
            .collect(),
        ransom_access: vec!["0x1F0FFF", "0x1F1FFF", "0x1F3FFF", "0x1FFFFF"]
            .into_iter()
            .map(String::from)
            .collect(),
        benign_source_users: vec![
            "NT AUTHORITY\\SYSTEM",
            "NT AUTHORITY\\SYSTEM",
            "NT AUTHORITY\\LOCAL SERVICE",
            "NT AUTHORITY\\NETWORK SERVICE",
            "WS01\\svc_backup",
            "WS01\\alice",
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        ransom_source_users: vec!["WS01\\alice", "WS01\\alice", "WS01\\bob"].into_iter().map(String::from).collect(),
        benign_images: vec![
            sys("svchost.exe"),
            "C:\\Windows\\explorer.exe".to_string(),
            "C:\\Program Files\\Mozilla Firefox\\firefox.exe".to_string(),
            sys("SearchIndexer.exe"),
            "C:\\Program Files\\7-Zip\\7z.exe".to_string(),
            sys("RuntimeBroker.exe"),
        ],
        ransom_shared_images: vec![sys("vssadmin.exe"), sys("cipher.exe"), sys("wbadmin.exe")],
        benign_target_users: vec!["WS01\\alice", "WS01\\bob", "NT AUTHORITY\\SYSTEM", "NT AUTHORITY\\SYSTEM"]
            .into_iter()
            .map(String::from)
            .collect(),
        ransom_target_users: vec!["NT AUTHORITY\\SYSTEM", "WS01\\administrator"]
            .into_iter()
            .map(String::from)
            .collect(),
        noise_tokens: (0..32).map(|i| format!("tok{i:02}")).collect(),
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [String]) -> &'a str {
    &pool[rng.gen_range(0..pool.len())]
}

fn weighted_id(rng: &mut ChaCha8Rng, weights: &[(u16, u32)]) -> u16 {
    let total: u32 = weights.iter().map(|(_, w)| w).sum();
    let mut roll = rng.gen_range(0..total);
    for &(id, w) in weights {
        if roll < w {
            return id;
        }
        roll -= w;
    }
    weights[0].0
}

struct EventSink<'a> {
    schema: &'a EventSchema,
    idx: [usize; 6],
    noise_start: usize,
}

impl<'a> EventSink<'a> {
    fn new(schema: &'a EventSchema) -> Self {
        let at = |n: &str| schema.index_of(n).expect("default feature present");
        Self {
            schema,
            idx: [
                at("CallTrace"),
                at("GrantedAccess"),
                at("SourceUser"),
                at("TargetImage"),
                at("TargetUser"),
                at("Task"),
            ],
            noise_start: at("f07"),
        }
    }
}

fn synth_event(
    sink: &EventSink<'_>,
    p: &Profiles,
    rng: &mut ChaCha8Rng,
    index: usize,
    family: Option<&str>,
    signal_free: bool,
) -> SysmonEvent {
    let rw = family.is_some() && !signal_free;
    let event_id = weighted_id(rng, if rw { &p.ransom_ids } else { &p.benign_ids });
    let mut fields = vec![crate::event::ABSENT.to_string(); sink.schema.len()];

    // CallTrace: 2-4 frames joined by '|'
    if rng.gen::<f64>() < 0.92 {
        let frames = rng.gen_range(2..=4);
        let mut parts: Vec<String> = Vec::with_capacity(frames);
        for fi in 0..frames {
            if rw && fi == 0 {
                let fam = family.unwrap_or("x");
                parts.push(format!("C:\\Users\\Public\\{fam}_core.dll+{:x}", 0x1000 + (index % 7) * 0x24));
            } else if rw && fi == 1 {
                parts.push(pick(rng, &p.ransom_shared_frames).to_string());
            } else {
                parts.push(pick(rng, &p.benign_traces).to_string());
            }
        }
        fields[sink.idx[0]] = parts.join("|");
    }
    if rng.gen::<f64>() < 0.95 {
        fields[sink.idx[1]] = pick(rng, if rw { &p.ransom_access } else { &p.benign_access }).to_string();
    }
    if rng.gen::<f64>() < 0.95 {
        fields[sink.idx[2]] =
            pick(rng, if rw { &p.ransom_source_users } else { &p.benign_source_users }).to_string();
    }
    if rng.gen::<f64>() < 0.95 {
        fields[sink.idx[3]] = if rw {
            let fam = family.unwrap_or("x");
            if rng.gen::<f64>() < 0.5 {
                format!("C:\\Users\\Public\\{fam}_payload.exe")
            } else {
                pick(rng, &p.ransom_shared_images).to_string()
            }
        } else {
            pick(rng, &p.benign_images).to_string()
        };
    }
    if rng.gen::<f64>() < 0.90 {
        fields[sink.idx[4]] = pick(rng, if rw { &p.ransom_target_users } else { &p.benign_target_users }).to_string();
    }
    fields[sink.idx[5]] = task_name(event_id).to_string();

    // class-independent noise fields
    for slot in 0..(sink.schema.len() - sink.noise_start) {
        if rng.gen::<f64>() < 0.25 {
            fields[sink.noise_start + slot] = pick(rng, &p.noise_tokens).to_string();
        }
    }

    SysmonEvent {
        event_id,
        timestamp_ms: 1_700_000_000_000 + (index as i64) * 25,
        label: Some(if family.is_some() { Label::Ransomware } else { Label::Benign }),
        family: family.map(String::from),
        fields,
    }
}

fn manifest_from_layout(config: &GeneratorConfig, layout: &[Burst]) -> GeneratorManifest {
    let p = profiles();
    let mut families: Vec<FamilyManifest> = config
        .families
        .iter()
        .map(|f| FamilyManifest { name: f.name.clone(), onset: f.onset, first_index: None, count: 0 })
        .collect();
    let mut ransomware = 0usize;
    for b in layout {
        ransomware += b.len;
        let fm = &mut families[b.family];
        fm.count += b.len;
        fm.first_index = Some(fm.first_index.map_or(b.start, |cur| cur.min(b.start)));
    }
    let benign = config.total_events - ransomware;
    let mut signal_tokens = BTreeMap::new();
    if !config.signal_free {
        signal_tokens.insert("GrantedAccess".to_string(), p.ransom_access.clone());
        signal_tokens.insert("TargetImage".to_string(), p.ransom_shared_images.clone());
        signal_tokens.insert("CallTrace".to_string(), p.ransom_shared_frames.clone());
    }
    GeneratorManifest {
        total_events: config.total_events,
        benign,
        ransomware,
        benign_fraction: benign as f64 / config.total_events as f64,
        families,
        signal_free: config.signal_free,
        signal_tokens,
    }
}

/// Ground-truth manifest without generating the stream.
pub fn describe(config: &GeneratorConfig) -> Result<GeneratorManifest, SynthError> {
    config.validate()?;
    Ok(manifest_from_layout(config, &build_layout(config)))
}

/// Stream the configured events as JSONL into `out`. Byte-identical for
/// identical configs.
pub fn generate<W: Write>(config: &GeneratorConfig, out: &mut W) -> Result<GeneratorManifest, SynthError> {
    config.validate()?;
    let layout = build_layout(config);
    let manifest = manifest_from_layout(config, &layout);
    let schema = EventSchema::default_schema();
    let sink = EventSink::new(&schema);
    let p = profiles();
    let mut rng = stream(config.seed, "generator-events", 0);

    let mut burst_iter = layout.iter().peekable();
    let mut active: Option<(&Burst, usize)> = None;
    for i in 0..config.total_events {
        if active.is_none() {
            if let Some(b) = burst_iter.peek() {
                if b.start == i {
                    active = Some((burst_iter.next().unwrap(), 0));
                }
            }
        }
        let family = match &mut active {
            Some((b, emitted)) => {
                let name = config.families[b.family].name.as_str();
                *emitted += 1;
                let fam = Some(name);
                if *emitted >= b.len {
                    active = None;
                }
                fam
            }
            None => None,
        };
        let ev = synth_event(&sink, &p, &mut rng, i, family, config.signal_free);
        out.write_all(serialize_event(&ev, &schema).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(manifest)
}

/// Generate straight into a vector of parsed events (test convenience).
pub fn generate_events(config: &GeneratorConfig) -> Result<(Vec<SysmonEvent>, GeneratorManifest), SynthError> {
    let mut buf = Vec::new();
    let manifest = generate(config, &mut buf)?;
    let schema = EventSchema::default_schema();
    let text = String::from_utf8(buf).expect("generator emits utf8");
    let events = text
        .lines()
        .map(|l| crate::event::parse_event(l, &schema).expect("generator emits valid events"))
        .collect();
    Ok((events, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(total: usize) -> GeneratorConfig {
        GeneratorConfig {
            total_events: total,
            benign_fraction: 0.885,
            families: default_families(total),
            seed: 11,
            signal_free: false,
            burst_min: 10,
            burst_max: 60,
        }
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = small(3000);
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate(&cfg, &mut a).unwrap();
        generate(&cfg, &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate(&GeneratorConfig { seed: 12, ..cfg }, &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_ratio_within_one_percent() {
        let cfg = small(10_000);
        let (events, manifest) = generate_events(&cfg).unwrap();
        assert_eq!(events.len(), 10_000);
        let benign = events.iter().filter(|e| e.label == Some(Label::Benign)).count();
        assert_eq!(benign, manifest.benign);
        let frac = benign as f64 / events.len() as f64;
        assert!((frac - 0.885).abs() < 0.01, "benign fraction {frac}");
    }

    #[test]
    fn validation_report_matches_generator_ratio() {
        let cfg = small(10_000);
        let (events, _) = generate_events(&cfg).unwrap();
        let schema = EventSchema::default_schema();
        let report = crate::event::validate_stream(&events, &schema);
        assert!((report.benign_fraction() - 0.885).abs() < 0.02);
        assert_eq!(report.total, 10_000);
        assert!(report.per_code.keys().all(|c| crate::event::SUPPORTED_EVENT_IDS.contains(c)));
    }

    #[test]
    fn families_respect_onsets() {
        let cfg = small(8000);
        let (events, manifest) = generate_events(&cfg).unwrap();
        for fam in &manifest.families {
            if let Some(first) = fam.first_index {
                assert!(first >= fam.onset, "family {} appeared at {first} before onset {}", fam.name, fam.onset);
            }
            for (i, ev) in events.iter().enumerate() {
                if ev.family.as_deref() == Some(fam.name.as_str()) {
                    assert!(i >= fam.onset);
                    break;
                }
            }
        }
    }

    #[test]
    fn manifest_counts_match_rescan() {
        let cfg = small(6000);
        let (events, manifest) = generate_events(&cfg).unwrap();
        let mut by_family: BTreeMap<String, usize> = BTreeMap::new();
        for ev in &events {
            if let Some(f) = &ev.family {
                *by_family.entry(f.clone()).or_insert(0) += 1;
            }
        }
        for fam in &manifest.families {
            assert_eq!(by_family.get(&fam.name).copied().unwrap_or(0), fam.count, "family {}", fam.name);
        }
        let rw = events.iter().filter(|e| e.label == Some(Label::Ransomware)).count();
        assert_eq!(rw, manifest.ransomware);
        assert_eq!(manifest.benign + manifest.ransomware, manifest.total_events);
    }

    #[test]
    fn benign_only_modes() {
        let cfg = GeneratorConfig { benign_fraction: 1.0, ..small(1000) };
        let (events, manifest) = generate_events(&cfg).unwrap();
        assert_eq!(manifest.ransomware, 0);
        assert!(events.iter().all(|e| e.label == Some(Label::Benign)));

        let no_fams = GeneratorConfig { families: Vec::new(), ..small(1000) };
        let manifest = describe(&no_fams).unwrap();
        assert_eq!(manifest.ransomware, 0);
        assert!(manifest.families.is_empty());
    }

    #[test]
    fn bursts_are_contiguous_runs() {
        let cfg = small(5000);
        let (events, _) = generate_events(&cfg).unwrap();
        // count label runs of ransomware; each run must be at least burst_min
        // unless clipped by the stream end or a neighbouring burst
        let mut runs = Vec::new();
        let mut current = 0usize;
        for ev in &events {
            if ev.label == Some(Label::Ransomware) {
                current += 1;
            } else if current > 0 {
                runs.push(current);
                current = 0;
            }
        }
        if current > 0 {
            runs.push(current);
        }
        assert!(!runs.is_empty());
        let decent = runs.iter().filter(|&&r| r >= cfg.burst_min).count();
        assert!(decent * 2 >= runs.len(), "most runs should reach burst_min: {runs:?}");
    }

    #[test]
    fn stump_on_granted_access_beats_chance() {
        // depth-1 rule from the manifest's strongest signal tokens
        let cfg = small(8000);
        let (events, manifest) = generate_events(&cfg).unwrap();
        let schema = EventSchema::default_schema();
        let tokens = manifest.signal_tokens.get("GrantedAccess").unwrap();
        let rw: Vec<&SysmonEvent> = events.iter().filter(|e| e.label == Some(Label::Ransomware)).collect();
        let benign: Vec<&SysmonEvent> = events.iter().filter(|e| e.label == Some(Label::Benign)).collect();
        let n = rw.len().min(benign.len());
        assert!(n > 100);
        let hit = |e: &SysmonEvent| {
            let v = e.field(&schema, "GrantedAccess").unwrap_or("");
            tokens.iter().any(|t| t == v)
        };
        let correct = rw.iter().take(n).filter(|e| hit(e)).count()
            + benign.iter().take(n).filter(|e| !hit(e)).count();
        let acc = correct as f64 / (2 * n) as f64;
        assert!(acc >= 0.8, "stump accuracy {acc}");
    }

    #[test]
    fn signal_free_strips_class_structure() {
        let cfg = GeneratorConfig { signal_free: true, ..small(4000) };
        let (events, manifest) = generate_events(&cfg).unwrap();
        assert!(manifest.signal_tokens.is_empty());
        assert!(manifest.ransomware > 0);
        // ransomware rows still labeled, but GrantedAccess values come from
        // the benign pool
        let schema = EventSchema::default_schema();
        let p = profiles();
        for ev in events.iter().filter(|e| e.label == Some(Label::Ransomware)).take(200) {
            let v = ev.field(&schema, "GrantedAccess").unwrap();
            if v != crate::event::ABSENT {
                assert!(p.benign_access.iter().any(|t| t == v), "unexpected access token {v}");
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(100);
        cfg.families =
            vec![FamilySpec { name: "a".into(), onset: 5 }, FamilySpec { name: "b".into(), onset: 5 }];
        assert!(matches!(describe(&cfg), Err(SynthError::InvalidConfig(_))));
        let cfg = GeneratorConfig { benign_fraction: 0.0, ..small(100) };
        assert!(matches!(describe(&cfg), Err(SynthError::InvalidConfig(_))));
    }
}
