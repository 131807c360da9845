//! Weight-space interventions that derive new checkpoints from a base one.
//!
//! * multiplicative: `θ = θ* · (1 + α·g)` elementwise, `g ~ N(0, 1)`
//! * block randomization: every entry of the target blocks is redrawn from a
//!   normal distribution matching the base entry's statistics (per kernel
//!   position for conv kernels)
//! * masked substitution: a seeded random subset of elements of the selected
//!   entries is redrawn the same way
//!
//! Draws come from per-entry [`SeedStream`] substreams, so every result is a
//! pure function of `(base, plan)`.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use thiserror::Error;

use crate::checkpoint::{entry_stats, Checkpoint, CheckpointError, Entry, StatsMode};
use crate::manifest::{format_block_set, parse_block_set, BlockId, ParamKind};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

const PERTURB_DOMAIN: &str = "perturb/";
const MASK_DOMAIN: &str = "mask/";

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("block randomization needs at least one target block")]
    EmptyTargets,
    #[error("target block {0} owns no entries of the selected kinds")]
    EmptyBlock(BlockId),
    #[error("mask fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("invalid mask pattern `{0}` (no whitespace, `;` or `=`)")]
    InvalidPattern(String),
    #[error("seed range is empty")]
    EmptySeedRange,
    #[error("cannot parse plan: {0}")]
    Parse(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Multiplicative,
    BlockRandomize,
    MaskedSubstitute,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Multiplicative => "multiplicative",
            Mode::BlockRandomize => "block_randomize",
            Mode::MaskedSubstitute => "masked_substitute",
        }
    }
}

impl FromStr for Mode {
    type Err = PerturbError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multiplicative" => Ok(Mode::Multiplicative),
            "block_randomize" => Ok(Mode::BlockRandomize),
            "masked_substitute" => Ok(Mode::MaskedSubstitute),
            _ => Err(PerturbError::Parse(format!("unknown mode `{s}`"))),
        }
    }
}

/// Which elements a masked substitution touches.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// Glob over entry names (`*` and `?`).
    pub pattern: String,
    /// Restricts matches to these blocks; empty means any block.
    pub blocks: BTreeSet<BlockId>,
    /// Probability that any single element of a matched entry is replaced.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            pattern: "*".into(),
            blocks: BTreeSet::new(),
            fraction: 0.0,
            seed: 0,
        }
    }
}

/// Declarative description of one intervention. Its [`Display`] form is the
/// canonical plan text recorded as provenance; [`FromStr`] inverts it.
///
/// [`Display`]: fmt::Display
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPlan {
    pub mode: Mode,
    pub alpha: f64,
    pub seed: u64,
    pub target_blocks: BTreeSet<BlockId>,
    pub mask: MaskSpec,
    pub kinds: BTreeSet<ParamKind>,
    pub stats_mode: StatsMode,
}

impl PerturbationPlan {
    pub fn multiplicative(alpha: f64, seed: u64) -> Self {
        Self {
            mode: Mode::Multiplicative,
            alpha,
            seed,
            target_blocks: BTreeSet::new(),
            mask: MaskSpec::default(),
            kinds: ParamKind::trainable(),
            stats_mode: StatsMode::PerPixel,
        }
    }

    /// Running statistics inside the targets are regenerated too.
    pub fn block_randomize(targets: BTreeSet<BlockId>, seed: u64) -> Self {
        Self {
            mode: Mode::BlockRandomize,
            target_blocks: targets,
            kinds: ParamKind::ALL.into(),
            ..Self::multiplicative(0.0, seed)
        }
    }

    pub fn masked_substitute(mask: MaskSpec, seed: u64) -> Self {
        Self {
            mode: Mode::MaskedSubstitute,
            mask,
            kinds: ParamKind::ALL.into(),
            ..Self::multiplicative(0.0, seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(PerturbError::InvalidAlpha(self.alpha));
        }
        if self.mode == Mode::BlockRandomize && self.target_blocks.is_empty() {
            return Err(PerturbError::EmptyTargets);
        }
        if !(0.0..=1.0).contains(&self.mask.fraction) {
            return Err(PerturbError::InvalidFraction(self.mask.fraction));
        }
        let p = &self.mask.pattern;
        if p.is_empty() || p.chars().any(|c| c.is_whitespace() || c == ';' || c == '=') {
            return Err(PerturbError::InvalidPattern(p.clone()));
        }
        Ok(())
    }
}

impl fmt::Display for PerturbationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.as_str()).collect();
        write!(
            f,
            "mode={};alpha={};seed={};blocks={};kinds={};stats={};\
             mask_pattern={};mask_blocks={};mask_fraction={};mask_seed={}",
            self.mode.as_str(),
            self.alpha,
            self.seed,
            format_block_set(&self.target_blocks),
            kinds.join(","),
            self.stats_mode.as_str(),
            self.mask.pattern,
            format_block_set(&self.mask.blocks),
            self.mask.fraction,
            self.mask.seed,
        )
    }
}

impl FromStr for PerturbationPlan {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const KEYS: [&str; 10] = [
            "mode",
            "alpha",
            "seed",
            "blocks",
            "kinds",
            "stats",
            "mask_pattern",
            "mask_blocks",
            "mask_fraction",
            "mask_seed",
        ];
        let parse_err = |m: String| PerturbError::Parse(m);
        let mut values: [Option<&str>; 10] = [None; 10];
        for field in s.trim().split(';') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| parse_err(format!("field `{field}` lacks `=`")))?;
            let slot = KEYS
                .iter()
                .position(|&key| key == k)
                .ok_or_else(|| parse_err(format!("unknown field `{k}`")))?;
            if values[slot].replace(v).is_some() {
                return Err(parse_err(format!("duplicate field `{k}`")));
            }
        }
        let get = |i: usize| values[i].ok_or_else(|| parse_err(format!("missing field `{}`", KEYS[i])));
        let num = |i: usize| -> Result<f64, PerturbError> {
            get(i)?
                .parse()
                .map_err(|_| parse_err(format!("bad number for `{}`", KEYS[i])))
        };
        let int = |i: usize| -> Result<u64, PerturbError> {
            get(i)?
                .parse()
                .map_err(|_| parse_err(format!("bad integer for `{}`", KEYS[i])))
        };
        let blocks = |i: usize| parse_block_set(get(i)?).map_err(|e| parse_err(e.to_string()));
        let kinds = get(4)?
            .split(',')
            .filter(|k| !k.is_empty())
            .map(|k| k.parse::<ParamKind>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let plan = PerturbationPlan {
            mode: get(0)?.parse()?,
            alpha: num(1)?,
            seed: int(2)?,
            target_blocks: blocks(3)?,
            kinds,
            stats_mode: get(5)?.parse().map_err(parse_err)?,
            mask: MaskSpec {
                pattern: get(6)?.to_string(),
                blocks: blocks(7)?,
                fraction: num(8)?,
                seed: int(9)?,
            },
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// `θ = θ* · (1 + α·g)` on entries whose kind is in `kinds`; exact zeros
/// and all other entries are copied bit for bit.
pub fn perturb_multiplicative(
    base: &Checkpoint,
    alpha: f64,
    seed: u64,
    kinds: &BTreeSet<ParamKind>,
) -> Result<Checkpoint, PerturbError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(PerturbError::InvalidAlpha(alpha));
    }
    let streams = SeedStream::new(seed);
    Ok(base.map_entries(|e| {
        if alpha == 0.0 || !kinds.contains(&e.kind) {
            return e.tensor.clone();
        }
        let stream = streams.substream(&format!("{PERTURB_DOMAIN}{}", e.name));
        let data = e.tensor.data();
        Tensor::from_fn(e.tensor.shape().to_vec(), |i| {
            let v = data[i];
            if v == 0.0 {
                v
            } else {
                (f64::from(v) * (1.0 + alpha * stream.normal(i as u64))) as f32
            }
        })
        .expect("shape unchanged")
    }))
}

fn matched_draw(kind: ParamKind, mean: f64, std: f64, g: f64) -> f32 {
    let v = (mean + std * g) as f32;
    if kind == ParamKind::BnRunningVar {
        v.abs()
    } else {
        v
    }
}

/// Redraws `selected` elements of `e` from normals matched to its statistics.
fn substitute(
    e: &Entry,
    streams: &SeedStream,
    stats_mode: StatsMode,
    selected: impl Fn(usize) -> bool,
) -> Tensor {
    let stats = entry_stats(e.kind, e.tensor.shape(), e.tensor.data(), stats_mode);
    let stream = streams.substream(&format!("{PERTURB_DOMAIN}{}", e.name));
    let data = e.tensor.data();
    Tensor::from_fn(e.tensor.shape().to_vec(), |i| {
        if selected(i) {
            let (mean, std) = stats.group_of(i);
            matched_draw(e.kind, mean, std, stream.normal(i as u64))
        } else {
            data[i]
        }
    })
    .expect("shape unchanged")
}

/// Replaces every entry of the target blocks (restricted to `kinds`) by
/// statistics-matched normal draws. Running variances are redrawn as
/// `|mean + std·g|`.
pub fn randomize_block(
    base: &Checkpoint,
    targets: &BTreeSet<BlockId>,
    seed: u64,
    stats_mode: StatsMode,
    kinds: &BTreeSet<ParamKind>,
) -> Result<Checkpoint, PerturbError> {
    if targets.is_empty() {
        return Err(PerturbError::EmptyTargets);
    }
    for &t in targets {
        if !base
            .entries()
            .iter()
            .any(|e| e.block == t && kinds.contains(&e.kind))
        {
            return Err(PerturbError::EmptyBlock(t));
        }
    }
    let streams = SeedStream::new(seed);
    Ok(base.map_entries(|e| {
        if targets.contains(&e.block) && kinds.contains(&e.kind) {
            substitute(e, &streams, stats_mode, |_| true)
        } else {
            e.tensor.clone()
        }
    }))
}

/// Result of an operation that may succeed with caveats.
#[derive(Debug, Clone)]
pub struct Derived {
    pub checkpoint: Checkpoint,
    pub warnings: Vec<String>,
}

/// Replaces a seeded random subset of the elements of every entry matched by
/// `mask` (name glob, optional block filter, `kinds`).
pub fn masked_substitute(
    base: &Checkpoint,
    mask: &MaskSpec,
    seed: u64,
    stats_mode: StatsMode,
    kinds: &BTreeSet<ParamKind>,
) -> Result<Derived, PerturbError> {
    if !(0.0..=1.0).contains(&mask.fraction) {
        return Err(PerturbError::InvalidFraction(mask.fraction));
    }
    let matches = |e: &Entry| {
        kinds.contains(&e.kind)
            && (mask.blocks.is_empty() || mask.blocks.contains(&e.block))
            && glob_match(&mask.pattern, &e.name)
    };
    let mut warnings = Vec::new();
    if !base.entries().iter().any(matches) {
        warnings.push(format!(
            "mask pattern `{}` (blocks [{}]) matched no entries",
            mask.pattern,
            format_block_set(&mask.blocks)
        ));
    }
    let values = SeedStream::new(seed);
    let selectors = SeedStream::new(mask.seed);
    let checkpoint = base.map_entries(|e| {
        if mask.fraction == 0.0 || !matches(e) {
            return e.tensor.clone();
        }
        let selector = selectors.substream(&format!("{MASK_DOMAIN}{}", e.name));
        substitute(e, &values, stats_mode, |i| {
            selector.uniform(i as u64) < mask.fraction
        })
    });
    Ok(Derived {
        checkpoint,
        warnings,
    })
}

/// Validates `plan`, runs it and records its canonical text as provenance.
pub fn apply(base: &Checkpoint, plan: &PerturbationPlan) -> Result<Derived, PerturbError> {
    plan.validate()?;
    let mut derived = match plan.mode {
        Mode::Multiplicative => Derived {
            checkpoint: perturb_multiplicative(base, plan.alpha, plan.seed, &plan.kinds)?,
            warnings: Vec::new(),
        },
        Mode::BlockRandomize => Derived {
            checkpoint: randomize_block(
                base,
                &plan.target_blocks,
                plan.seed,
                plan.stats_mode,
                &plan.kinds,
            )?,
            warnings: Vec::new(),
        },
        Mode::MaskedSubstitute => {
            masked_substitute(base, &plan.mask, plan.seed, plan.stats_mode, &plan.kinds)?
        }
    };
    derived.checkpoint = derived.checkpoint.with_provenance(&plan.to_string())?;
    Ok(derived)
}

/// One member of a seed sweep.
#[derive(Debug, Clone)]
pub struct SweepItem {
    pub seed: u64,
    pub plan_text: String,
    pub checkpoint: Checkpoint,
}

/// Applies `plan` once per seed in `seeds`, overriding the plan's seed.
pub fn sweep(
    base: &Checkpoint,
    plan: &PerturbationPlan,
    seeds: RangeInclusive<u64>,
) -> Result<Vec<SweepItem>, PerturbError> {
    if seeds.is_empty() {
        return Err(PerturbError::EmptySeedRange);
    }
    seeds
        .map(|seed| {
            let p = plan.with_seed(seed);
            apply(base, &p).map(|d| SweepItem {
                seed,
                plan_text: p.to_string(),
                checkpoint: d.checkpoint,
            })
        })
        .collect()
}

/// Shell-style glob supporting `*` and `?`.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut backtrack: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            backtrack = Some((pi, ti));
            pi += 1;
        } else if let Some((star, matched)) = backtrack {
            pi = star + 1;
            ti = matched + 1;
            backtrack = Some((star, matched + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{diff, synthesize, InitScheme};
    use crate::graph::GraphConfig;

    fn base() -> Checkpoint {
        synthesize(&GraphConfig::tiny64(), 0, InitScheme::ScaledFanIn).unwrap()
    }

    #[test]
    fn plan_text_round_trips() {
        let plans = [
            PerturbationPlan::multiplicative(0.35, 3),
            PerturbationPlan::block_randomize([BlockId::Block(2)].into(), 7),
            PerturbationPlan::masked_substitute(
                MaskSpec {
                    pattern: "blocks.2.*".into(),
                    blocks: [BlockId::Block(2), BlockId::Output].into(),
                    fraction: 0.125,
                    seed: 11,
                },
                4,
            ),
        ];
        for plan in plans {
            let text = plan.to_string();
            assert!(!text.contains(char::is_whitespace));
            assert_eq!(text.parse::<PerturbationPlan>().unwrap(), plan);
        }
        assert_eq!(
            PerturbationPlan::multiplicative(0.35, 3).to_string(),
            "mode=multiplicative;alpha=0.35;seed=3;blocks=;\
             kinds=conv_kernel,conv_bias,linear_weight,linear_bias,embedding,scalar_gamma;\
             stats=per_pixel;mask_pattern=*;mask_blocks=;mask_fraction=0;mask_seed=0"
        );
    }

    #[test]
    fn plan_parsing_rejects_garbage() {
        assert!("mode=multiplicative".parse::<PerturbationPlan>().is_err());
        let text = PerturbationPlan::multiplicative(0.35, 3).to_string();
        assert!(text.replace("alpha=0.35", "alpha=-1").parse::<PerturbationPlan>().is_err());
        assert!(format!("{text};seed=4").parse::<PerturbationPlan>().is_err());
        assert!(text.replace("mode=multiplicative", "mode=blend").parse::<PerturbationPlan>().is_err());
    }

    #[test]
    fn validation() {
        assert!(matches!(
            PerturbationPlan::block_randomize(BTreeSet::new(), 0).validate(),
            Err(PerturbError::EmptyTargets)
        ));
        assert!(matches!(
            PerturbationPlan::multiplicative(f64::NAN, 0).validate(),
            Err(PerturbError::InvalidAlpha(_))
        ));
        let mut p = PerturbationPlan::masked_substitute(MaskSpec::default(), 0);
        p.mask.fraction = 1.5;
        assert!(matches!(p.validate(), Err(PerturbError::InvalidFraction(_))));
        p.mask.fraction = 0.5;
        p.mask.pattern = "a b".into();
        assert!(matches!(p.validate(), Err(PerturbError::InvalidPattern(_))));
    }

    #[test]
    fn zero_alpha_is_identity() {
        let b = base();
        let out = perturb_multiplicative(&b, 0.0, 9, &ParamKind::trainable()).unwrap();
        assert!(out.bit_eq(&b));
    }

    #[test]
    fn exact_zeros_survive() {
        let b = base();
        let zeroed = b.map_entries(|e| e.tensor.map(|v| if v.abs() < 0.05 { 0.0 } else { v }));
        for seed in 0..3 {
            let out = perturb_multiplicative(&zeroed, 0.35, seed, &ParamKind::trainable()).unwrap();
            for (a, o) in zeroed.entries().iter().zip(out.entries()) {
                for (&x, &y) in a.tensor.data().iter().zip(o.tensor.data()) {
                    assert_eq!(x == 0.0, y == 0.0, "{}", a.name);
                    if x == 0.0 {
                        assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn kind_filter_limits_multiplicative() {
        let b = base();
        let kinds: BTreeSet<_> = [ParamKind::ConvBias].into();
        let out = perturb_multiplicative(&b, 0.35, 1, &kinds).unwrap();
        for d in diff(&b, &out).touched() {
            assert_eq!(d.kind, ParamKind::ConvBias);
        }
        assert!(diff(&b, &out).touched().count() > 0);
    }

    #[test]
    fn randomize_block_is_local() {
        let b = base();
        let out = randomize_block(
            &b,
            &[BlockId::Block(2)].into(),
            5,
            StatsMode::PerPixel,
            &ParamKind::ALL.into(),
        )
        .unwrap();
        let report = diff(&b, &out);
        for d in &report.entries {
            if d.block == BlockId::Block(2) && d.kind.is_trainable() {
                assert!(d.differing > 0, "{} unchanged", d.name);
            } else if d.block != BlockId::Block(2) {
                assert_eq!(d.differing, 0, "{} touched", d.name);
            }
        }
    }

    #[test]
    fn randomize_block_errors() {
        let b = base();
        assert!(matches!(
            randomize_block(&b, &BTreeSet::new(), 0, StatsMode::PerPixel, &ParamKind::ALL.into()),
            Err(PerturbError::EmptyTargets)
        ));
        assert!(matches!(
            randomize_block(
                &b,
                &[BlockId::Block(12)].into(),
                0,
                StatsMode::PerPixel,
                &ParamKind::ALL.into()
            ),
            Err(PerturbError::EmptyBlock(BlockId::Block(12)))
        ));
    }

    #[test]
    fn running_variance_stays_valid() {
        let b = base();
        // give block 3 variances a spread so redraws can go negative before abs
        let spread = b.map_entries(|e| {
            if e.kind == ParamKind::BnRunningVar && e.block == BlockId::Block(3) {
                Tensor::from_fn(e.tensor.shape().to_vec(), |i| (i % 5) as f32 * 0.5).unwrap()
            } else {
                e.tensor.clone()
            }
        });
        let out = randomize_block(
            &spread,
            &[BlockId::Block(3)].into(),
            2,
            StatsMode::PerPixel,
            &ParamKind::ALL.into(),
        )
        .unwrap();
        let mut changed = false;
        for (a, e) in spread.entries().iter().zip(out.entries()) {
            if e.kind == ParamKind::BnRunningVar {
                assert!(e.tensor.data().iter().all(|&v| v >= 0.0));
                changed |= !a.tensor.bit_eq(&e.tensor);
            }
        }
        assert!(changed);
    }

    #[test]
    fn masked_edge_cases() {
        let b = base();
        let none = masked_substitute(
            &b,
            &MaskSpec {
                fraction: 0.0,
                ..MaskSpec::default()
            },
            1,
            StatsMode::PerPixel,
            &ParamKind::ALL.into(),
        )
        .unwrap();
        assert!(none.checkpoint.bit_eq(&b));
        assert!(none.warnings.is_empty());

        let nomatch = masked_substitute(
            &b,
            &MaskSpec {
                pattern: "no.such.*".into(),
                fraction: 1.0,
                ..MaskSpec::default()
            },
            1,
            StatsMode::PerPixel,
            &ParamKind::ALL.into(),
        )
        .unwrap();
        assert!(nomatch.checkpoint.bit_eq(&b));
        assert_eq!(nomatch.warnings.len(), 1);
    }

    #[test]
    fn masked_respects_pattern_and_blocks() {
        let b = base();
        let out = masked_substitute(
            &b,
            &MaskSpec {
                pattern: "*.conv?.weight".into(),
                blocks: [BlockId::Block(5)].into(),
                fraction: 0.5,
                seed: 3,
            },
            8,
            StatsMode::PerPixel,
            &ParamKind::ALL.into(),
        )
        .unwrap();
        let report = diff(&b, &out.checkpoint);
        let touched: Vec<&str> = report.touched().map(|d| d.name.as_str()).collect();
        assert_eq!(
            touched,
            [
                "blocks.5.conv1.weight",
                "blocks.5.conv2.weight",
                "blocks.5.conv3.weight",
                "blocks.5.conv4.weight"
            ]
        );
    }

    #[test]
    fn sweep_matches_direct_application() {
        let b = base();
        let plan = PerturbationPlan::multiplicative(0.35, 0);
        let items = sweep(&b, &plan, 4..=4).unwrap();
        assert_eq!(items.len(), 1);
        let direct = apply(&b, &plan.with_seed(4)).unwrap().checkpoint;
        assert!(items[0].checkpoint.bit_eq(&direct));
        assert_eq!(items[0].checkpoint.provenance(), [items[0].plan_text.as_str()]);
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(matches!(sweep(&b, &plan, empty), Err(PerturbError::EmptySeedRange)));
    }

    #[test]
    fn globbing() {
        assert!(glob_match("*", "anything"));
        assert!(glob_match("blocks.2.*", "blocks.2.conv1.weight"));
        assert!(!glob_match("blocks.2.*", "blocks.12.conv1.weight"));
        assert!(glob_match("*.bn?.gain.*", "blocks.3.bn4.gain.bias"));
        assert!(glob_match("a*b*c", "aXbYbZc"));
        assert!(!glob_match("a*b*c", "aXbYbZ"));
        assert!(glob_match("", ""));
        assert!(!glob_match("?", ""));
    }
}
