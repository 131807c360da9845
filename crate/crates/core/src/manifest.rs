//! Parameter identities shared by the graph, checkpoints and perturbations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown block `{0}` (expected ENTRY, ATTENTION, OUTPUT or B<n>)")]
    Block(String),
    #[error("unknown parameter kind `{0}`")]
    Kind(String),
    #[error("invalid block range `{0}`")]
    Range(String),
}

/// Architectural group a parameter belongs to.
///
/// Ordered `ENTRY < B1 < B2 < ... < ATTENTION < OUTPUT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BlockId {
    Entry,
    Block(u32),
    Attention,
    Output,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Entry => f.write_str("ENTRY"),
            BlockId::Block(i) => write!(f, "B{i}"),
            BlockId::Attention => f.write_str("ATTENTION"),
            BlockId::Output => f.write_str("OUTPUT"),
        }
    }
}

impl FromStr for BlockId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t.to_ascii_uppercase().as_str() {
            "ENTRY" => return Ok(BlockId::Entry),
            "ATTENTION" => return Ok(BlockId::Attention),
            "OUTPUT" => return Ok(BlockId::Output),
            _ => {}
        }
        t.strip_prefix(['B', 'b'])
            .and_then(|n| n.parse::<u32>().ok())
            .filter(|&n| n >= 1)
            .map(BlockId::Block)
            .ok_or_else(|| ParseError::Block(s.to_string()))
    }
}

impl TryFrom<String> for BlockId {
    type Error = ParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BlockId> for String {
    fn from(b: BlockId) -> String {
        b.to_string()
    }
}

/// Parses a block selection such as `B2`, `B1..B7` or `ENTRY,B3,B5..B6`.
/// Ranges are inclusive and only span numbered blocks.
pub fn parse_block_set(s: &str) -> Result<BTreeSet<BlockId>, ParseError> {
    let mut out = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let (BlockId::Block(a), BlockId::Block(b)) = (lo.parse()?, hi.parse()?) else {
                return Err(ParseError::Range(part.to_string()));
            };
            if a > b {
                return Err(ParseError::Range(part.to_string()));
            }
            out.extend((a..=b).map(BlockId::Block));
        } else {
            out.insert(part.parse()?);
        }
    }
    Ok(out)
}

pub fn format_block_set(blocks: &BTreeSet<BlockId>) -> String {
    blocks
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvKernel,
    ConvBias,
    LinearWeight,
    LinearBias,
    Embedding,
    BnRunningMean,
    BnRunningVar,
    ScalarGamma,
}

impl ParamKind {
    pub const ALL: [ParamKind; 8] = [
        ParamKind::ConvKernel,
        ParamKind::ConvBias,
        ParamKind::LinearWeight,
        ParamKind::LinearBias,
        ParamKind::Embedding,
        ParamKind::BnRunningMean,
        ParamKind::BnRunningVar,
        ParamKind::ScalarGamma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::ConvKernel => "conv_kernel",
            ParamKind::ConvBias => "conv_bias",
            ParamKind::LinearWeight => "linear_weight",
            ParamKind::LinearBias => "linear_bias",
            ParamKind::Embedding => "embedding",
            ParamKind::BnRunningMean => "bn_running_mean",
            ParamKind::BnRunningVar => "bn_running_var",
            ParamKind::ScalarGamma => "scalar_gamma",
        }
    }

    /// Running statistics are buffers, not trainable parameters.
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }

    pub fn trainable() -> BTreeSet<ParamKind> {
        Self::ALL.into_iter().filter(|k| k.is_trainable()).collect()
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| ParseError::Kind(s.to_string()))
    }
}

/// Declaration of one parameter tensor in a graph manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub block: BlockId,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Number of inputs feeding each output of the owning layer.
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_order_and_text() {
        let mut v = vec![
            BlockId::Output,
            BlockId::Block(11),
            BlockId::Attention,
            BlockId::Block(2),
            BlockId::Entry,
        ];
        v.sort();
        let names: Vec<String> = v.iter().map(ToString::to_string).collect();
        assert_eq!(names, ["ENTRY", "B2", "B11", "ATTENTION", "OUTPUT"]);
        for b in v {
            assert_eq!(b.to_string().parse::<BlockId>().unwrap(), b);
        }
        assert!("B0".parse::<BlockId>().is_err());
        assert!("block2".parse::<BlockId>().is_err());
        assert_eq!("b3".parse::<BlockId>().unwrap(), BlockId::Block(3));
    }

    #[test]
    fn block_sets() {
        let s = parse_block_set("B1..B3, OUTPUT").unwrap();
        assert_eq!(format_block_set(&s), "B1,B2,B3,OUTPUT");
        assert!(parse_block_set("B3..B1").is_err());
        assert!(parse_block_set("ENTRY..B2").is_err());
        assert!(parse_block_set("B2,FOO").is_err());
        assert!(parse_block_set("").unwrap().is_empty());
    }

    #[test]
    fn kinds_round_trip() {
        for k in ParamKind::ALL {
            assert_eq!(k.as_str().parse::<ParamKind>().unwrap(), k);
        }
        assert_eq!(ParamKind::trainable().len(), 6);
    }
}
