//! Numerical kernels for the generator forward pass.
//!
//! All reductions accumulate in `f64` and walk their inputs in a fixed order,
//! so results do not depend on how many rayon workers run them. Parallelism
//! is only ever over independent output elements.

use rayon::prelude::*;

use crate::tensor::{dims1, dims3, Tensor, TensorError};

/// 2-D cross-correlation (no kernel flip), stride 1, zero padding.
///
/// `input` is `[C_in, H, W]`, `kernel` is `[C_out, C_in, kH, kW]` with odd
/// spatial extents, `bias` is `[C_out]`. The output is
/// `[C_out, H + 2p - kH + 1, W + 2p - kW + 1]`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    padding: usize,
) -> Result<Tensor, TensorError> {
    const OP: &str = "conv2d";
    let [c_in, h, w] = dims3(OP, input)?;
    let [c_out, k_in, kh, kw] = match *kernel.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => {
            return Err(TensorError::Rank {
                op: OP,
                expected: 4,
                shape: kernel.shape().to_vec(),
            })
        }
    };
    if k_in != c_in {
        return Err(TensorError::Dim {
            op: OP,
            dim: "input channels",
            expected: k_in,
            actual: c_in,
        });
    }
    let n_bias = dims1(OP, bias)?;
    if n_bias != c_out {
        return Err(TensorError::Dim {
            op: OP,
            dim: "bias length",
            expected: c_out,
            actual: n_bias,
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::EvenKernel { op: OP, kh, kw });
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(TensorError::EmptyOutput {
            op: OP,
            padding,
            kh,
            kw,
            h,
            w,
        });
    }
    let oh = h + 2 * padding - kh + 1;
    let ow = w + 2 * padding - kw + 1;

    let x = input.data();
    let k = kernel.data();
    let b = bias.data();
    let mut out = vec![0f32; c_out * oh * ow];

    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(oc, plane)| {
            let mut acc = vec![0f64; oh * ow];
            for ic in 0..c_in {
                let x_plane = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    // iy = oy + ky - padding must land in [0, h)
                    let oy_lo = padding.saturating_sub(ky);
                    let oy_hi = (h + padding).saturating_sub(ky).min(oh);
                    for kx in 0..kw {
                        let wgt = f64::from(k[((oc * c_in + ic) * kh + ky) * kw + kx]);
                        let ox_lo = padding.saturating_sub(kx);
                        let ox_hi = (w + padding).saturating_sub(kx).min(ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - padding;
                            let src = &x_plane[iy * w + ox_lo + kx - padding..][..ox_hi - ox_lo];
                            let dst = &mut acc[oy * ow + ox_lo..oy * ow + ox_hi];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wgt * f64::from(s);
                            }
                        }
                    }
                }
            }
            let bo = f64::from(b[oc]);
            for (o, a) in plane.iter_mut().zip(&acc) {
                *o = (a + bo) as f32;
            }
        });

    Tensor::new(vec![c_out, oh, ow], out)
}

/// Fully connected layer: `out[m] = sum_n weight[m, n] * input[n] + bias[m]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    const OP: &str = "linear";
    let n = dims1(OP, input)?;
    let (m, wn) = match *weight.shape() {
        [a, b] => (a, b),
        _ => {
            return Err(TensorError::Rank {
                op: OP,
                expected: 2,
                shape: weight.shape().to_vec(),
            })
        }
    };
    if wn != n {
        return Err(TensorError::Dim {
            op: OP,
            dim: "input features",
            expected: wn,
            actual: n,
        });
    }
    let nb = dims1(OP, bias)?;
    if nb != m {
        return Err(TensorError::Dim {
            op: OP,
            dim: "bias length",
            expected: m,
            actual: nb,
        });
    }
    let x = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let out: Vec<f32> = (0..m)
        .into_par_iter()
        .with_min_len(64)
        .map(|row| {
            let dot: f64 = wd[row * n..(row + 1) * n]
                .iter()
                .zip(x)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            (dot + f64::from(bd[row])) as f32
        })
        .collect();
    Tensor::vector(out)
}

/// Inference-mode batch normalization over `[C, H, W]` with per-channel
/// statistics and affine parameters.
pub fn batch_norm_inference(
    input: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    epsilon: f32,
) -> Result<Tensor, TensorError> {
    const OP: &str = "batch_norm";
    let [c, h, w] = dims3(OP, input)?;
    for (dim, t) in [("mean", mean), ("var", var), ("gain", gain), ("bias", bias)] {
        let n = dims1(OP, t)?;
        if n != c {
            return Err(TensorError::Dim {
                op: OP,
                dim,
                expected: c,
                actual: n,
            });
        }
    }
    if !(epsilon > 0.0) {
        return Err(TensorError::NonPositiveEpsilon(epsilon));
    }
    if let Some((channel, &value)) = var.data().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(TensorError::NegativeVariance { channel, value });
    }

    let plane = h * w;
    let mut out = input.data().to_vec();
    out.par_chunks_mut(plane).enumerate().for_each(|(ch, xs)| {
        let scale = f64::from(gain.data()[ch])
            / (f64::from(var.data()[ch]) + f64::from(epsilon)).sqrt();
        let mu = f64::from(mean.data()[ch]);
        let beta = f64::from(bias.data()[ch]);
        for v in xs {
            *v = ((f64::from(*v) - mu) * scale + beta) as f32;
        }
    });
    Tensor::new(vec![c, h, w], out)
}

/// Nearest-neighbour 2x upsampling of `[C, H, W]`: each pixel becomes a 2x2 block.
pub fn upsample_nearest_2x(input: &Tensor) -> Result<Tensor, TensorError> {
    let [c, h, w] = dims3("upsample_nearest_2x", input)?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let src = &x[(ch * h + oy / 2) * w..][..w];
            let dst = &mut out[(ch * oh + oy) * ow..][..ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / 2];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn tanh(input: &Tensor) -> Tensor {
    input.map(f32::tanh)
}

/// Numerically stabilized softmax of a rank-1 tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor, TensorError> {
    dims1("softmax", input)?;
    let probs = softmax_f64(&input.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
    Tensor::vector(probs.into_iter().map(|p| p as f32).collect())
}

fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Parameters of the non-local self-attention block.
///
/// Projections are 1x1 convolution kernels without bias:
/// `query`/`key` are `[C_qk, C, 1, 1]`, `value` is `[C_v, C, 1, 1]` and
/// `out` is `[C, C_v, 1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a> {
    pub query: &'a Tensor,
    pub key: &'a Tensor,
    pub value: &'a Tensor,
    pub out: &'a Tensor,
    pub gamma: f32,
}

/// `out = x + gamma * W_out · V · softmax(Qᵀ K)ᵀ` over all H·W positions.
pub fn self_attention(input: &Tensor, params: &AttentionParams<'_>) -> Result<Tensor, TensorError> {
    const OP: &str = "self_attention";
    let [c, h, w] = dims3(OP, input)?;
    let (c_qk, qc) = projection_dims(OP, params.query)?;
    let (k_qk, kc) = projection_dims(OP, params.key)?;
    let (c_v, vc) = projection_dims(OP, params.value)?;
    let (oc, o_in) = projection_dims(OP, params.out)?;
    for (dim, expected, actual) in [
        ("query input channels", c, qc),
        ("key input channels", c, kc),
        ("value input channels", c, vc),
        ("key channels", c_qk, k_qk),
        ("output channels", c, oc),
        ("output input channels", c_v, o_in),
    ] {
        if expected != actual {
            return Err(TensorError::Dim {
                op: OP,
                dim,
                expected,
                actual,
            });
        }
    }
    if params.gamma == 0.0 {
        return Ok(input.clone());
    }

    let n = h * w;
    let x = input.data();
    let q = project(x, params.query.data(), c, c_qk, n);
    let k = project(x, params.key.data(), c, c_qk, n);
    let v = project(x, params.value.data(), c, c_v, n);
    let wo = params.out.data();
    let gamma = f64::from(params.gamma);

    let keys_by_position = transpose(&k, c_qk, n);

    // Position-major result, transposed into channel-major below.
    let per_position: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let query: Vec<f64> = (0..c_qk).map(|ch| q[ch * n + i]).collect();
            let scores: Vec<f64> = keys_by_position
                .chunks_exact(c_qk)
                .map(|key| key.iter().zip(&query).map(|(a, b)| a * b).sum())
                .collect();
            let beta = softmax_f64(&scores);
            let attended: Vec<f64> = (0..c_v)
                .map(|ch| {
                    let row = &v[ch * n..(ch + 1) * n];
                    row.iter().zip(&beta).map(|(a, b)| a * b).sum()
                })
                .collect();
            (0..c)
                .map(|ch| {
                    let o: f64 = wo[ch * c_v..(ch + 1) * c_v]
                        .iter()
                        .zip(&attended)
                        .map(|(&wt, a)| f64::from(wt) * a)
                        .sum();
                    (f64::from(x[ch * n + i]) + gamma * o) as f32
                })
                .collect()
        })
        .collect();

    let mut out = vec![0f32; c * n];
    for (i, column) in per_position.iter().enumerate() {
        for (ch, &val) in column.iter().enumerate() {
            out[ch * n + i] = val;
        }
    }
    Tensor::new(vec![c, h, w], out)
}

fn projection_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match *t.shape() {
        [o, i, 1, 1] => Ok((o, i)),
        [o, i] => Ok((o, i)),
        _ => Err(TensorError::Rank {
            op,
            expected: 4,
            shape: t.shape().to_vec(),
        }),
    }
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// `W[out_c, in_c] · X[in_c, n]` in f64, channel-major result.
fn project(x: &[f32], weight: &[f32], in_c: usize, out_c: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0f64; out_c * n];
    out.par_chunks_mut(n).enumerate().for_each(|(o, row)| {
        for ic in 0..in_c {
            let wt = f64::from(weight[o * in_c + ic]);
            for (r, &xv) in row.iter_mut().zip(&x[ic * n..(ic + 1) * n]) {
                *r += wt * f64::from(xv);
            }
        }
    });
    out
}
