//! Weight-space exploration for class-conditional image generators.
//!
//! Load or synthesize a generator checkpoint, derive perturbed variants of
//! it, render image grids from every variant under shared latents, and
//! measure how far the variants drift from the original.

pub mod checkpoint;
pub mod graph;
pub mod manifest;
pub mod metrics;
pub mod ops;
pub mod perturb;
pub mod render;
pub mod rng;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, Entry, InitScheme, StatsMode};
pub use graph::{GeneratorGraph, GraphConfig, GraphError};
pub use manifest::{BlockId, ParamKind, ParamSpec};
pub use perturb::{Mode, PerturbError, PerturbationPlan};
pub use render::{ImageGrid, RenderError, RenderRequest, Variant};
pub use tensor::{Tensor, TensorError};
