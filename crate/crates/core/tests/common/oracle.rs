//! Brute-force loop oracles. Deliberately naive: plain nested loops over
//! `Vec<f64>`, no shared code with the library kernels.
#![allow(dead_code)]

use weightscape::Tensor;

fn f(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

pub fn conv2d(x: &Tensor, k: &Tensor, b: &Tensor, pad: usize) -> Vec<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (xs, ks, bs) = (f(x), f(k), f(b));
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bs[o];
                for i in 0..ci {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let sy = y as isize + dy as isize - pad as isize;
                            let sx = xx as isize + dx as isize - pad as isize;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let xv = xs[(i * h + sy as usize) * w + sx as usize];
                            let kv = ks[((o * ci + i) * kh + dy) * kw + dx];
                            acc += xv * kv;
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    out
}

pub fn linear(x: &Tensor, wt: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, n) = (wt.shape()[0], wt.shape()[1]);
    let (xs, ws, bs) = (f(x), f(wt), f(b));
    (0..m)
        .map(|r| bs[r] + (0..n).map(|j| ws[r * n + j] * xs[j]).sum::<f64>())
        .collect()
}

pub fn batch_norm(x: &Tensor, mean: &Tensor, var: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xs = f(x);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let m = f64::from(mean.data()[ch]);
        let s = (f64::from(var.data()[ch]) + f64::from(eps)).sqrt();
        let g = f64::from(gain.data()[ch]);
        let b = f64::from(bias.data()[ch]);
        for p in 0..h * w {
            out[ch * h * w + p] = g * (xs[ch * h * w + p] - m) / s + b;
        }
    }
    out
}

pub fn upsample(x: &Tensor) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xs = f(x);
    let mut out = vec![0.0; c * 4 * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[(ch * 2 * h + y) * 2 * w + xx] = xs[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// 1x1 projection `[O, C, 1, 1]` applied at every position: `[O][N]`.
fn project(k: &Tensor, xs: &[f64], c: usize, n: usize) -> Vec<Vec<f64>> {
    let o = k.shape()[0];
    let ks = f(k);
    (0..o)
        .map(|r| {
            (0..n)
                .map(|p| (0..c).map(|i| ks[r * c + i] * xs[i * n + p]).sum())
                .collect()
        })
        .collect()
}

/// `x + gamma * W_out V A` with `A[j][i] = softmax_j(q_i · k_j)`.
pub fn attention(x: &Tensor, q: &Tensor, k: &Tensor, v: &Tensor, o: &Tensor, gamma: f32) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = h * w;
    let xs = f(x);
    let (qp, kp, vp) = (project(q, &xs, c, n), project(k, &xs, c, n), project(v, &xs, c, n));
    let cv = vp.len();
    // attended[cv][i]
    let mut attended = vec![vec![0.0; n]; cv];
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| (0..qp.len()).map(|d| qp[d][i] * kp[d][j]).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        for ch in 0..cv {
            attended[ch][i] = (0..n).map(|j| e[j] / z * vp[ch][j]).sum();
        }
    }
    let os = f(o);
    let mut out = xs.clone();
    for ch in 0..c {
        for i in 0..n {
            let y: f64 = (0..cv).map(|d| os[ch * cv + d] * attended[d][i]).sum();
            out[ch * n + i] += f64::from(gamma) * y;
        }
    }
    out
}

/// Two-pass population mean and std.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn max_abs_diff(actual: &Tensor, expected: &[f64]) -> f64 {
    assert_eq!(actual.numel(), expected.len(), "element count");
    actual
        .data()
        .iter()
        .zip(expected)
        .map(|(&a, &e)| (f64::from(a) - e).abs())
        .fold(0.0, f64::max)
}
