//! Quantitative comparisons of images and checkpoints.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{entry_stats, Checkpoint, EntryStats, WeightStats};
use crate::graph::{GeneratorGraph, GraphError};
use crate::manifest::{BlockId, ParamKind};
use crate::perturb::{perturb_multiplicative, PerturbError};
use crate::tensor::Tensor;

/// Sample count from which the fixed relative std tolerance applies.
pub const LARGE_GROUP: usize = 10_000;
/// Relative std tolerance for groups of at least [`LARGE_GROUP`] samples.
pub const STD_REL_TOLERANCE: f64 = 0.05;
/// Width of the two-sided standard-error bands, in standard errors.
pub const SIGMA_BAND: f64 = 4.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("alphas must be ascending and start at 0")]
    Alphas,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

/// Root-mean-square elementwise difference.
pub fn image_l2(a: &Tensor, b: &Tensor) -> Result<f64, MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::Shape(a.shape().to_vec(), b.shape().to_vec()));
    }
    let sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok((sq / a.numel() as f64).sqrt())
}

/// Per-channel counts of `[C, H, W]` values over `bins` equal slices of
/// `[-1, 1]`. Out-of-range values land in the end bins, NaN in bin 0.
pub fn channel_histogram(image: &Tensor, bins: usize) -> Result<Vec<Vec<usize>>, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let &[c, h, w] = image.shape() else {
        return Err(MetricsError::Shape(image.shape().to_vec(), vec![3, 0, 0]));
    };
    let plane = h * w;
    Ok((0..c)
        .map(|ch| {
            let mut counts = vec![0usize; bins];
            for &v in &image.data()[ch * plane..(ch + 1) * plane] {
                let pos = (f64::from(v).clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64;
                let bin = if pos.is_nan() { 0 } else { (pos as usize).min(bins - 1) };
                counts[bin] += 1;
            }
            counts
        })
        .collect())
}

/// RMS distance of multiplicatively perturbed outputs from the base output,
/// one point per alpha, for a fixed `(z, class)`.
pub fn divergence_curve(
    base: &Checkpoint,
    graph: &GeneratorGraph,
    alphas: &[f64],
    seed: u64,
    z: &Tensor,
    class: usize,
    kinds: &BTreeSet<ParamKind>,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let ascending = alphas.windows(2).all(|w| w[0] <= w[1]);
    if alphas.first() != Some(&0.0) || !ascending {
        return Err(MetricsError::Alphas);
    }
    let reference = graph.forward(base, z, class)?;
    alphas
        .iter()
        .map(|&alpha| {
            let ck = perturb_multiplicative(base, alpha, seed, kinds)?;
            let img = graph.forward(&ck, z, class)?;
            Ok((alpha, image_l2(&img, &reference)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    /// Outside the targets and statistically unchanged.
    Identical,
    /// Target entry whose every group passed.
    Pass,
    /// Target entry with at least one failing group.
    Fail,
    /// Outside the targets but its statistics moved.
    Changed,
    /// Running variances are redrawn folded (`|x|`) and are not compared.
    Skipped,
    /// No base statistics for this name.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub samples: usize,
    pub base_mean: f64,
    pub base_std: f64,
    pub mean: f64,
    pub std: f64,
    /// `(mean - base_mean) / (base_std / sqrt(n))`.
    pub mean_z: f64,
    /// `(std - base_std) / base_std`.
    pub std_rel: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryMatch {
    pub name: String,
    pub block: BlockId,
    pub kind: ParamKind,
    pub status: MatchStatus,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub entries: Vec<EntryMatch>,
}

impl MatchReport {
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| matches!(e.status, MatchStatus::Identical | MatchStatus::Pass | MatchStatus::Skipped))
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }
}

/// Slack for float rounding when the base group is constant.
fn rounding_slack(reference: f64) -> f64 {
    1e-6 * reference.abs().max(1.0)
}

/// Standard-error check of one statistics group: the mean must sit within
/// [`SIGMA_BAND`] standard errors of the base mean, the std within
/// [`STD_REL_TOLERANCE`] of the base std for groups of at least
/// [`LARGE_GROUP`] samples and within [`SIGMA_BAND`] standard errors of the
/// std (`s / sqrt(2n)`) for smaller groups.
pub fn check_group(samples: usize, base_mean: f64, base_std: f64, mean: f64, std: f64) -> GroupCheck {
    let n = samples as f64;
    let mean_se = base_std / n.sqrt();
    let mean_tol = SIGMA_BAND * mean_se + rounding_slack(base_mean);
    let std_tol = if samples >= LARGE_GROUP {
        STD_REL_TOLERANCE * base_std
    } else {
        SIGMA_BAND * base_std / (2.0 * n).sqrt()
    } + rounding_slack(base_std);
    let pass = (mean - base_mean).abs() <= mean_tol && (std - base_std).abs() <= std_tol;
    GroupCheck {
        samples,
        base_mean,
        base_std,
        mean,
        std,
        mean_z: (mean - base_mean) / mean_se,
        std_rel: (std - base_std) / base_std,
        pass,
    }
}

/// Checks that target-block entries of `replaced` match `base_stats`
/// distributionally and that all other entries kept their statistics.
pub fn stats_match_report(
    replaced: &Checkpoint,
    base_stats: &WeightStats,
    targets: &BTreeSet<BlockId>,
) -> MatchReport {
    let base: HashMap<&str, &EntryStats> = base_stats
        .entries
        .iter()
        .map(|e| (e.name.as_str(), &e.stats))
        .collect();
    let entries = replaced
        .entries()
        .iter()
        .map(|e| {
            let current = entry_stats(e.kind, e.tensor.shape(), e.tensor.data(), base_stats.mode);
            let mut groups = Vec::new();
            let status = match base.get(e.name.as_str()) {
                None => MatchStatus::Unknown,
                Some(&b) if !targets.contains(&e.block) => {
                    if *b == current {
                        MatchStatus::Identical
                    } else {
                        MatchStatus::Changed
                    }
                }
                Some(_) if e.kind == ParamKind::BnRunningVar => MatchStatus::Skipped,
                Some(&b) => {
                    let bg = b.groups();
                    let cg = current.groups();
                    if bg.len() != cg.len() {
                        MatchStatus::Fail
                    } else {
                        groups = bg
                            .iter()
                            .zip(&cg)
                            .map(|(&(n, bm, bs), &(_, m, s))| check_group(n, bm, bs, m, s))
                            .collect();
                        if groups.iter().all(|g| g.pass) {
                            MatchStatus::Pass
                        } else {
                            MatchStatus::Fail
                        }
                    }
                }
            };
            EntryMatch {
                name: e.name.clone(),
                block: e.block,
                kind: e.kind,
                status,
                groups,
            }
        })
        .collect();
    MatchReport { entries }
}
