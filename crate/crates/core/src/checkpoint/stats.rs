//! Population statistics of checkpoint entries.
//!
//! Convolution kernels `[C_out, C_in, kH, kW]` get one mean/std per kernel
//! position, pooled over all `C_out x C_in` filter pairs. Every other entry
//! gets a single whole-entry mean/std. Variances divide by `n`.

use serde::Serialize;

use super::Checkpoint;
use crate::manifest::{BlockId, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    /// Per kernel position for conv kernels, whole entry otherwise.
    #[default]
    PerPixel,
    /// Whole-entry statistics for every kind.
    WholeEntry,
}

impl StatsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StatsMode::PerPixel => "per_pixel",
            StatsMode::WholeEntry => "whole_entry",
        }
    }
}

impl std::str::FromStr for StatsMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_pixel" => Ok(Self::PerPixel),
            "whole_entry" => Ok(Self::WholeEntry),
            _ => Err(format!("unknown stats mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum EntryStats {
    Whole {
        count: usize,
        mean: f64,
        std: f64,
    },
    /// Row-major `[kH, kW]` grids of statistics.
    PerPixel {
        kh: usize,
        kw: usize,
        count: usize,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

impl EntryStats {
    /// `(mean, std)` for the group owning row-major element `index`.
    pub fn group_of(&self, index: usize) -> (f64, f64) {
        match self {
            EntryStats::Whole { mean, std, .. } => (*mean, *std),
            EntryStats::PerPixel {
                kh, kw, mean, std, ..
            } => {
                let p = index % (kh * kw);
                (mean[p], std[p])
            }
        }
    }

    /// `(samples, mean, std)` per statistics group.
    pub fn groups(&self) -> Vec<(usize, f64, f64)> {
        match self {
            EntryStats::Whole { count, mean, std } => vec![(*count, *mean, *std)],
            EntryStats::PerPixel {
                count, mean, std, ..
            } => mean.iter().zip(std).map(|(&m, &s)| (*count, m, s)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedStats {
    pub name: String,
    pub block: BlockId,
    pub kind: ParamKind,
    pub stats: EntryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightStats {
    pub mode: StatsMode,
    pub entries: Vec<NamedStats>,
}

impl WeightStats {
    pub fn get(&self, name: &str) -> Option<&EntryStats> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.stats)
    }

    /// One JSON record per entry.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }
}

/// Welford accumulator.
#[derive(Default, Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std(&self) -> f64 {
        (self.m2 / self.n as f64).max(0.0).sqrt()
    }
}

pub fn entry_stats(kind: ParamKind, shape: &[usize], data: &[f32], mode: StatsMode) -> EntryStats {
    match (kind, shape, mode) {
        (ParamKind::ConvKernel, &[_, _, kh, kw], StatsMode::PerPixel) => {
            let mut acc = vec![Moments::default(); kh * kw];
            for (i, &v) in data.iter().enumerate() {
                acc[i % (kh * kw)].push(f64::from(v));
            }
            EntryStats::PerPixel {
                kh,
                kw,
                count: data.len() / (kh * kw),
                mean: acc.iter().map(|m| m.mean).collect(),
                std: acc.iter().map(Moments::std).collect(),
            }
        }
        _ => {
            let mut m = Moments::default();
            data.iter().for_each(|&v| m.push(f64::from(v)));
            EntryStats::Whole {
                count: data.len(),
                mean: m.mean,
                std: m.std(),
            }
        }
    }
}

pub fn compute_stats(checkpoint: &Checkpoint, mode: StatsMode) -> WeightStats {
    use rayon::prelude::*;
    WeightStats {
        mode,
        entries: checkpoint
            .entries()
            .par_iter()
            .map(|e| NamedStats {
                name: e.name.clone(),
                block: e.block,
                kind: e.kind,
                stats: entry_stats(e.kind, e.tensor.shape(), e.tensor.data(), mode),
            })
            .collect(),
    }
}
