//! Latent sampling, batch generation and comparison-grid composition.
//!
//! A grid has one row per `(class, latent)` pair, grouped by class, and one
//! column per checkpoint variant. Every tile in a row is generated from the
//! same latent tensor and class index.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::graph::{BoundGenerator, GeneratorGraph, GraphError};
use crate::rng::{fnv1a64, fnv1a64_extend, SeedStream};
use crate::tensor::Tensor;

/// Substream name for latent draws.
const LATENT_STREAM: &str = "latent";

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("render request needs at least one latent, class and variant")]
    EmptyRequest,
    #[error("variant `{label}`: {source}")]
    Variant {
        label: String,
        #[source]
        source: GraphError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("png encoding failed: {0}")]
    Png(String),
}

/// Latent `index` of the stream seeded by `seed`: i.i.d. standard normals.
pub fn latent_at(seed: u64, index: usize, latent_dim: usize) -> Tensor {
    let stream = SeedStream::new(seed).substream(LATENT_STREAM);
    let start = (index * latent_dim) as u64;
    Tensor::from_fn(vec![latent_dim], |j| stream.normal(start + j as u64) as f32)
        .expect("latent_dim is positive")
}

/// The first `count` latents of the stream; prefix-stable in `count`.
pub fn sample_latents(seed: u64, count: usize, latent_dim: usize) -> Vec<Tensor> {
    (0..count).map(|i| latent_at(seed, i, latent_dim)).collect()
}

/// Maps `[-1, 1]` to `0..=255` with `(v + 1) · 127.5`, rounding half away from
/// zero. Values outside the range are clamped; NaN maps to 0.
pub fn to_pixel(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    ((f64::from(v.clamp(-1.0, 1.0)) + 1.0) * 127.5).round() as u8
}

/// FNV-1a over the bit patterns of `z` followed by `class` (little endian).
pub fn input_fingerprint(z: &Tensor, class: usize) -> u64 {
    let h = z
        .data()
        .iter()
        .fold(fnv1a64(b""), |h, v| fnv1a64_extend(h, &v.to_bits().to_le_bytes()));
    fnv1a64_extend(h, &(class as u64).to_le_bytes())
}

pub fn from_pixel(p: u8) -> f32 {
    (f64::from(p) / 127.5 - 1.0) as f32
}

/// Interleaved RGB bytes of a `[3, R, R]` image, row by row.
pub fn to_pixels(image: &Tensor) -> Vec<u8> {
    let [c, h, w] = match *image.shape() {
        [c, h, w] => [c, h, w],
        _ => panic!("to_pixels expects [3, H, W], got {:?}", image.shape()),
    };
    assert_eq!(c, 3, "to_pixels expects three channels");
    let d = image.data();
    let mut out = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for ch in 0..3 {
            out.push(to_pixel(d[ch * h * w + i]));
        }
    }
    out
}

pub fn encode_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>, RenderError> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
        writer
            .write_image_data(rgb)
            .map_err(|e| RenderError::Png(e.to_string()))?;
    }
    Ok(bytes)
}

/// Decodes an 8-bit RGB PNG into `(width, height, rgb)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), RenderError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| RenderError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RenderError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Png(format!(
            "expected 8-bit RGB, got {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// Position of a latent in its seeded stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentRef {
    pub seed: u64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowInput {
    pub latent: LatentRef,
    pub class: usize,
}

/// A checkpoint occupying one grid column.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub checkpoint: Arc<Checkpoint>,
}

impl Variant {
    pub fn new(label: impl Into<String>, checkpoint: Arc<Checkpoint>) -> Self {
        Self {
            label: label.into(),
            checkpoint,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderRequest {
    pub latents: Vec<LatentRef>,
    pub classes: Vec<usize>,
    /// Column order; by convention the unmodified base is last.
    pub variants: Vec<Variant>,
}

impl RenderRequest {
    /// Latents `0..count` of the stream seeded by `latent_seed`.
    pub fn seeded(latent_seed: u64, count: usize, classes: Vec<usize>, variants: Vec<Variant>) -> Self {
        Self {
            latents: (0..count)
                .map(|index| LatentRef {
                    seed: latent_seed,
                    index,
                })
                .collect(),
            classes,
            variants,
        }
    }

    /// Row inputs grouped by class, latents in order within each group.
    pub fn rows(&self) -> Vec<RowInput> {
        self.classes
            .iter()
            .flat_map(|&class| self.latents.iter().map(move |&latent| RowInput { latent, class }))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ImageGrid {
    pub rows: Vec<RowInput>,
    pub labels: Vec<String>,
    pub resolution: usize,
    /// Row-major `rows x cols` generator outputs.
    pub tiles: Vec<Tensor>,
    /// Row-major [`input_fingerprint`] of the `(z, c)` each tile consumed.
    pub tile_inputs: Vec<u64>,
    pixels: Vec<u8>,
}

impl ImageGrid {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn col_count(&self) -> usize {
        self.labels.len()
    }

    pub fn width(&self) -> usize {
        self.col_count() * self.resolution
    }

    pub fn height(&self) -> usize {
        self.row_count() * self.resolution
    }

    /// Interleaved RGB of the whole grid.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn tile(&self, row: usize, col: usize) -> &Tensor {
        &self.tiles[row * self.col_count() + col]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RenderError> {
        encode_png(self.width(), self.height(), &self.pixels)
    }

    pub fn tile_png(&self, row: usize, col: usize) -> Result<Vec<u8>, RenderError> {
        encode_png(self.resolution, self.resolution, &to_pixels(self.tile(row, col)))
    }
}

/// Generates every tile and composes the grid.
pub fn render_grid(graph: &GeneratorGraph, request: &RenderRequest) -> Result<ImageGrid, RenderError> {
    if request.latents.is_empty() || request.classes.is_empty() || request.variants.is_empty() {
        return Err(RenderError::EmptyRequest);
    }
    let bound: Vec<BoundGenerator<'_>> = request
        .variants
        .iter()
        .map(|v| {
            graph.bind(&v.checkpoint).map_err(|source| RenderError::Variant {
                label: v.label.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let latent_dim = graph.config().latent_dim;
    let rows = request.rows();
    let latents: Vec<Tensor> = rows
        .iter()
        .map(|r| latent_at(r.latent.seed, r.latent.index, latent_dim))
        .collect();
    let cols = bound.len();

    let (tiles, tile_inputs): (Vec<Tensor>, Vec<u64>) = (0..rows.len() * cols)
        .into_par_iter()
        .map(|t| {
            let (r, c) = (t / cols, t % cols);
            let (z, class) = (&latents[r], rows[r].class);
            bound[c]
                .forward(z, class)
                .map(|img| (img, input_fingerprint(z, class)))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();

    let res = graph.output_resolution();
    let width = cols * res;
    let mut pixels = vec![0u8; rows.len() * res * width * 3];
    for (t, tile) in tiles.iter().enumerate() {
        let (r, c) = (t / cols, t % cols);
        let rgb = to_pixels(tile);
        for y in 0..res {
            let dst = ((r * res + y) * width + c * res) * 3;
            pixels[dst..dst + res * 3].copy_from_slice(&rgb[y * res * 3..(y + 1) * res * 3]);
        }
    }

    Ok(ImageGrid {
        rows,
        labels: request.variants.iter().map(|v| v.label.clone()).collect(),
        resolution: res,
        tiles,
        tile_inputs,
        pixels,
    })
}

/// Everything needed to regenerate a grid bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProvenance {
    pub graph: String,
    pub resolution: usize,
    pub rows: Vec<RowInput>,
    pub columns: Vec<ColumnProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProvenance {
    pub label: String,
    /// Payload checksum of the column's checkpoint, hex.
    pub checksum: String,
    /// Plan texts applied to the base, oldest first; empty for the base.
    pub plans: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl GridProvenance {
    pub fn new(graph: &GeneratorGraph, request: &RenderRequest) -> Self {
        Self {
            graph: graph.config().name.clone(),
            resolution: graph.output_resolution(),
            rows: request.rows(),
            columns: request
                .variants
                .iter()
                .map(|v| ColumnProvenance {
                    label: v.label.clone(),
                    checksum: format!("{:016x}", v.checkpoint.checksum()),
                    plans: v.checkpoint.provenance().into_iter().map(String::from).collect(),
                    source: None,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    /// Latents and classes whose [`RenderRequest::rows`] give back `rows`.
    pub fn layout(&self) -> (Vec<LatentRef>, Vec<usize>) {
        let mut classes: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !classes.contains(&r.class) {
                classes.push(r.class);
            }
        }
        let latents = match classes.first() {
            Some(&first) => self
                .rows
                .iter()
                .filter(|r| r.class == first)
                .map(|r| r.latent)
                .collect(),
            None => Vec::new(),
        };
        (latents, classes)
    }
}
