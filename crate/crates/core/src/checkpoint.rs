//! Block-tagged parameter collections.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::graph::GraphConfig;
use crate::graph::GeneratorGraph;
use crate::manifest::{BlockId, ParamKind};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

mod format;
mod stats;

pub use format::{load, load_bytes, save, to_bytes, FORMAT_VERSION, MAGIC};
pub use stats::{compute_stats, entry_stats, EntryStats, NamedStats, StatsMode, WeightStats};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated in {entry}")]
    Truncated { entry: String },
    #[error("payload checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("duplicate entry name `{0}`")]
    DuplicateName(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("entry `{name}` holds a negative running variance")]
    NegativeVariance { name: String },
    #[error("invalid entry name `{0}` (must be non-empty without whitespace)")]
    InvalidName(String),
    #[error("invalid metadata key `{0}`")]
    InvalidMetadata(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub block: BlockId,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

impl Entry {
    pub fn bit_eq(&self, other: &Entry) -> bool {
        self.name == other.name
            && self.block == other.block
            && self.kind == other.kind
            && self.tensor.bit_eq(&other.tensor)
    }
}

/// Metadata key under which perturbation plans are recorded, oldest first.
pub const PROVENANCE_KEY: &str = "provenance";
pub const GRAPH_KEY: &str = "graph";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    entries: Vec<Entry>,
    metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(entries: Vec<Entry>, metadata: Vec<(String, String)>) -> Result<Self, CheckpointError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.name.is_empty() || e.name.chars().any(char::is_whitespace) {
                return Err(CheckpointError::InvalidName(e.name.clone()));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(CheckpointError::DuplicateName(e.name.clone()));
            }
            if e.kind == ParamKind::BnRunningVar && e.tensor.data().iter().any(|&v| v < 0.0) {
                return Err(CheckpointError::NegativeVariance {
                    name: e.name.clone(),
                });
            }
        }
        for (k, v) in &metadata {
            let key_ok = !k.is_empty()
                && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
            if !key_ok || v.contains('\n') {
                return Err(CheckpointError::InvalidMetadata(k.clone()));
            }
        }
        Ok(Self { entries, metadata })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    pub fn metadata_values<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.metadata
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn graph_name(&self) -> Option<&str> {
        self.metadata_values(GRAPH_KEY).next()
    }

    /// Plan texts that produced this checkpoint, in application order.
    pub fn provenance(&self) -> Vec<&str> {
        self.metadata_values(PROVENANCE_KEY).collect()
    }

    pub fn with_provenance(mut self, plan_text: &str) -> Result<Self, CheckpointError> {
        if plan_text.contains('\n') {
            return Err(CheckpointError::InvalidMetadata(PROVENANCE_KEY.into()));
        }
        self.metadata
            .push((PROVENANCE_KEY.to_string(), plan_text.to_string()));
        Ok(self)
    }

    pub fn blocks(&self) -> BTreeSet<BlockId> {
        self.entries.iter().map(|e| e.block).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Same metadata, entries replaced one-for-one by `f`.
    pub fn map_entries(&self, f: impl Fn(&Entry) -> Tensor + Sync) -> Self {
        use rayon::prelude::*;
        let entries = self
            .entries
            .par_iter()
            .map(|e| Entry {
                name: e.name.clone(),
                block: e.block,
                kind: e.kind,
                tensor: f(e),
            })
            .collect();
        Self {
            entries,
            metadata: self.metadata.clone(),
        }
    }

    /// Reorders entries to follow `graph`'s manifest; unknown names go last
    /// in their current relative order.
    pub fn canonicalize(mut self, graph: &GeneratorGraph) -> Self {
        let rank: HashMap<&str, usize> = graph
            .manifest()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        self.entries
            .sort_by_key(|e| rank.get(e.name.as_str()).copied().unwrap_or(usize::MAX));
        self
    }

    /// Payload checksum as written to disk.
    pub fn checksum(&self) -> u64 {
        format::payload_checksum(self)
    }

    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.metadata == other.metadata
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.bit_eq(b))
    }
}

/// Initialization scheme for synthetic checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every trainable element drawn from N(0, 1).
    UnitNormal,
    /// Trainable elements drawn from N(0, 1/fan_in).
    ScaledFanIn,
}

impl std::str::FromStr for InitScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit_normal" => Ok(Self::UnitNormal),
            "scaled_fan_in" => Ok(Self::ScaledFanIn),
            other => Err(format!(
                "unknown scheme `{other}` (expected unit_normal or scaled_fan_in)"
            )),
        }
    }
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::UnitNormal => "unit_normal",
            Self::ScaledFanIn => "scaled_fan_in",
        }
    }
}

/// Stream-name prefix for synthesis draws, distinct from perturbation draws.
const SYNTH_DOMAIN: &str = "synthesize/";

/// Deterministic stand-in for pretrained weights. Running means are 0 and
/// running variances 1.
pub fn synthesize(config: &GraphConfig, seed: u64, scheme: InitScheme) -> Result<Checkpoint, CheckpointError> {
    let graph = GeneratorGraph::build(config.clone())?;
    let streams = SeedStream::new(seed);
    let entries = {
        use rayon::prelude::*;
        graph
            .manifest()
            .par_iter()
            .map(|spec| {
                let tensor = match spec.kind {
                    ParamKind::BnRunningMean => Tensor::zeros(spec.shape.clone()),
                    ParamKind::BnRunningVar => Tensor::full(spec.shape.clone(), 1.0),
                    _ => {
                        let stream = streams.substream(&format!("{SYNTH_DOMAIN}{}", spec.name));
                        let scale = match scheme {
                            InitScheme::UnitNormal => 1.0,
                            InitScheme::ScaledFanIn => 1.0 / (spec.fan_in as f64).sqrt(),
                        };
                        Tensor::from_fn(spec.shape.clone(), |i| {
                            (stream.normal(i as u64) * scale) as f32
                        })
                    }
                }
                .expect("manifest shapes are non-degenerate");
                Entry {
                    name: spec.name.clone(),
                    block: spec.block,
                    kind: spec.kind,
                    tensor,
                }
            })
            .collect()
    };
    Checkpoint::new(
        entries,
        vec![
            (GRAPH_KEY.to_string(), config.name.clone()),
            (
                "synthesized".to_string(),
                format!("seed={seed};scheme={}", scheme.as_str()),
            ),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryDiff {
    pub name: String,
    pub block: BlockId,
    pub kind: ParamKind,
    pub numel: usize,
    pub max_abs_diff: f64,
    /// Elements whose bit patterns differ.
    pub differing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiffReport {
    pub entries: Vec<EntryDiff>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub shape_mismatch: Vec<String>,
}

impl DiffReport {
    pub fn is_identical(&self) -> bool {
        self.only_in_a.is_empty()
            && self.only_in_b.is_empty()
            && self.shape_mismatch.is_empty()
            && self.entries.iter().all(|e| e.differing == 0)
    }

    pub fn touched(&self) -> impl Iterator<Item = &EntryDiff> {
        self.entries.iter().filter(|e| e.differing > 0)
    }

    /// One JSON record per entry, then one per structural mismatch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        for (status, names) in [
            ("only_in_a", &self.only_in_a),
            ("only_in_b", &self.only_in_b),
            ("shape_mismatch", &self.shape_mismatch),
        ] {
            for name in names {
                out.push_str(&serde_json::json!({ "name": name, "status": status }).to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Per-entry comparison of two checkpoints, matched by name.
pub fn diff(a: &Checkpoint, b: &Checkpoint) -> DiffReport {
    let b_by_name: HashMap<&str, &Entry> = b.entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut report = DiffReport::default();
    for ea in &a.entries {
        let Some(eb) = b_by_name.get(ea.name.as_str()) else {
            report.only_in_a.push(ea.name.clone());
            continue;
        };
        if ea.tensor.shape() != eb.tensor.shape() {
            report.shape_mismatch.push(ea.name.clone());
            continue;
        }
        let (mut max_abs, mut differing) = (0f64, 0usize);
        for (&x, &y) in ea.tensor.data().iter().zip(eb.tensor.data()) {
            if x.to_bits() != y.to_bits() {
                differing += 1;
                max_abs = max_abs.max((f64::from(x) - f64::from(y)).abs());
            }
        }
        report.entries.push(EntryDiff {
            name: ea.name.clone(),
            block: ea.block,
            kind: ea.kind,
            numel: ea.tensor.numel(),
            max_abs_diff: max_abs,
            differing,
        });
    }
    let a_names: BTreeSet<&str> = a.entries.iter().map(|e| e.name.as_str()).collect();
    report.only_in_b = b
        .entries
        .iter()
        .filter(|e| !a_names.contains(e.name.as_str()))
        .map(|e| e.name.clone())
        .collect();
    report
}
