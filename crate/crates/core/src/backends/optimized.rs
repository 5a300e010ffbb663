//! Kernels with a different summation strategy: convolution lowered to a
//! GEMM over im2col patches, and pairwise reductions everywhere.

use super::kernels::{conv_out, pool, rows_map, Kernels};
use crate::tensor::{element_count, Tensor};

const BLOCK: usize = 32;

/// Pairwise sum of `a[i] * b[i]` in f64, sequential below `BLOCK`.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    if a.len() <= BLOCK {
        return a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    }
    let mid = a.len() / 2;
    dot(&a[..mid], &b[..mid]) + dot(&a[mid..], &b[mid..])
}

fn sum(a: &[f64]) -> f64 {
    if a.len() <= BLOCK {
        return a.iter().sum();
    }
    let mid = a.len() / 2;
    sum(&a[..mid]) + sum(&a[mid..])
}

pub(crate) struct Optimized;

impl Kernels for Optimized {
    fn conv2d(&self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (f, k) = (w.shape[0], w.shape[2]);
        let (ho, wo) = (conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad));
        let patch = c * k * k;
        let positions = ho * wo;
        let mut out = Tensor::zeros(vec![n, f, ho, wo]);
        let mut cols = vec![0.0f32; positions * patch];
        for ni in 0..n {
            // one row of `cols` per output position, laid out like a filter
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = &mut cols[(oy * wo + ox) * patch..][..patch];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd;
                                row[(ci * k + ky) * k + kx] = if inside {
                                    x.data[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
            }
            for fi in 0..f {
                let filter = &w.data[fi * patch..(fi + 1) * patch];
                let dst = &mut out.data[(ni * f + fi) * positions..][..positions];
                for (p, o) in dst.iter_mut().enumerate() {
                    *o = (dot(filter, &cols[p * patch..(p + 1) * patch]) + b.data[fi] as f64) as f32;
                }
            }
        }
        out
    }

    fn dense(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (inp, units) = (w.shape[0], w.shape[1]);
        let mut wt = vec![0.0f32; inp * units];
        for i in 0..inp {
            for u in 0..units {
                wt[u * inp + i] = w.data[i * units + u];
            }
        }
        let rows = x.len() / inp;
        let mut shape = x.shape.clone();
        *shape.last_mut().expect("rank >= 2") = units;
        let mut out = Tensor::zeros(shape);
        for r in 0..rows {
            let xr = &x.data[r * inp..(r + 1) * inp];
            for u in 0..units {
                out.data[r * units + u] = (dot(xr, &wt[u * inp..(u + 1) * inp]) + b.data[u] as f64) as f32;
            }
        }
        out
    }

    fn batch_norm(&self, x: &Tensor, [scale, bias, mean, var]: [&Tensor; 4], eps: f32) -> Tensor {
        // folded into y = x * a + b per channel
        let c = x.shape[1];
        let (a, shift): (Vec<f64>, Vec<f64>) = (0..c)
            .map(|ch| {
                let a = scale.data[ch] as f64 / (var.data[ch] as f64 + eps as f64).sqrt();
                (a, bias.data[ch] as f64 - mean.data[ch] as f64 * a)
            })
            .unzip();
        let inner = element_count(&x.shape[2..]);
        let mut out = x.clone();
        for (plane, chunk) in out.data.chunks_mut(inner).enumerate() {
            let ch = plane % c;
            for v in chunk {
                *v = (*v as f64 * a[ch] + shift[ch]) as f32;
            }
        }
        out
    }

    fn avg_pool(&self, x: &Tensor, k: usize, s: usize) -> Tensor {
        let inv = 1.0 / (k * k) as f64;
        pool(x, k, s, |window| {
            let vals: Vec<f64> = window.map(f64::from).collect();
            (sum(&vals) * inv) as f32
        })
    }

    fn softmax(&self, x: &Tensor) -> Tensor {
        rows_map(x, |row, out| {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let inv = 1.0 / sum(&exps);
            for (o, e) in out.iter_mut().zip(&exps) {
                *o = (e * inv) as f32;
            }
        })
    }
}
