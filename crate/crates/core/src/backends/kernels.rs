//! Kernel interface, the reference kernels, and the layout and elementwise
//! operations every interpreter shares.

use crate::tensor::{element_count, strides, Shape, Tensor};

/// Arithmetic kernels whose summation order differs between interpreters.
pub(crate) trait Kernels: Sync {
    fn conv2d(&self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor;
    fn dense(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor;
    fn batch_norm(&self, x: &Tensor, params: [&Tensor; 4], eps: f32) -> Tensor;
    fn avg_pool(&self, x: &Tensor, k: usize, s: usize) -> Tensor;
    fn softmax(&self, x: &Tensor) -> Tensor;
}

pub(crate) fn conv_out(x: usize, k: usize, s: usize, p: usize) -> usize {
    (x + 2 * p - k) / s + 1
}

/// Direct loops with sequential f64 accumulation.
pub(crate) struct Reference;

impl Kernels for Reference {
    fn conv2d(&self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (f, k) = (w.shape[0], w.shape[2]);
        let (ho, wo) = (conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad));
        let mut out = Tensor::zeros(vec![n, f, ho, wo]);
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data[fi] as f64;
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data[((fi * c + ci) * k + ky) * k + kx];
                                    acc += xv as f64 * wv as f64;
                                }
                            }
                        }
                        out.data[((ni * f + fi) * ho + oy) * wo + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    fn dense(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (inp, units) = (w.shape[0], w.shape[1]);
        let rows = x.len() / inp;
        let mut shape = x.shape.clone();
        *shape.last_mut().expect("rank >= 2") = units;
        let mut out = Tensor::zeros(shape);
        for r in 0..rows {
            for u in 0..units {
                let mut acc = b.data[u] as f64;
                for i in 0..inp {
                    acc += x.data[r * inp + i] as f64 * w.data[i * units + u] as f64;
                }
                out.data[r * units + u] = acc as f32;
            }
        }
        out
    }

    fn batch_norm(&self, x: &Tensor, [scale, bias, mean, var]: [&Tensor; 4], eps: f32) -> Tensor {
        let c = x.shape[1];
        let inner = element_count(&x.shape[2..]);
        let mut out = x.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            let ch = (i / inner) % c;
            let norm = (*v as f64 - mean.data[ch] as f64) / (var.data[ch] as f64 + eps as f64).sqrt();
            *v = (norm * scale.data[ch] as f64 + bias.data[ch] as f64) as f32;
        }
        out
    }

    fn avg_pool(&self, x: &Tensor, k: usize, s: usize) -> Tensor {
        pool(x, k, s, |window| {
            let mut acc = 0.0f64;
            for v in window {
                acc += v as f64;
            }
            (acc / (k * k) as f64) as f32
        })
    }

    fn softmax(&self, x: &Tensor) -> Tensor {
        rows_map(x, |row, out| {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0.0f64;
            for (o, &v) in out.iter_mut().zip(row) {
                let e = ((v - max) as f64).exp();
                *o = e as f32;
                total += e;
            }
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (((v - max) as f64).exp() / total) as f32;
            }
        })
    }
}

/// Applies `f` to each row along the last axis.
pub(crate) fn rows_map(x: &Tensor, f: impl Fn(&[f32], &mut [f32])) -> Tensor {
    let width = *x.shape.last().expect("rank >= 1");
    let mut out = x.clone();
    for (row, dst) in x.data.chunks(width).zip(out.data.chunks_mut(width)) {
        f(row, dst);
    }
    out
}

/// Sliding `k`x`k` windows with stride `s`, no padding, over an NCHW tensor.
pub(crate) fn pool(x: &Tensor, k: usize, s: usize, reduce: impl Fn(Window<'_>) -> f32) -> Tensor {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                out.data[o] = reduce(Window {
                    data: &x.data,
                    start: base + oy * s * w + ox * s,
                    width: w,
                    k,
                    pos: 0,
                });
                o += 1;
            }
        }
    }
    out
}

/// Row-major iterator over one pooling window.
pub(crate) struct Window<'a> {
    data: &'a [f32],
    start: usize,
    width: usize,
    k: usize,
    pos: usize,
}

impl Iterator for Window<'_> {
    type Item = f32;

    fn next(&mut self) -> Option<f32> {
        if self.pos == self.k * self.k {
            return None;
        }
        let (dy, dx) = (self.pos / self.k, self.pos % self.k);
        self.pos += 1;
        Some(self.data[self.start + dy * self.width + dx])
    }
}

pub(crate) fn max_pool(x: &Tensor, k: usize, s: usize) -> Tensor {
    pool(x, k, s, |window| {
        window.fold(f32::NEG_INFINITY, |m, v| if m.is_nan() || v.is_nan() { f32::NAN } else { m.max(v) })
    })
}

pub(crate) fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

pub(crate) fn relu(v: f32) -> f32 {
    if v.is_nan() {
        v
    } else {
        v.max(0.0)
    }
}

pub(crate) fn relu6(v: f32) -> f32 {
    if v.is_nan() {
        v
    } else {
        v.clamp(0.0, 6.0)
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// Constant-zero padding with `[begin.., end..]` amounts; negative amounts crop.
pub(crate) fn pad(x: &Tensor, pads: &[i64], out_shape: &Shape) -> Tensor {
    let r = x.rank();
    let mut out = Tensor::zeros(out_shape.clone());
    let in_strides = strides(&x.shape);
    let mut idx = vec![0usize; r];
    for o in 0..out.len() {
        let mut src = 0usize;
        let mut inside = true;
        for axis in 0..r {
            let i = idx[axis] as i64 - pads[axis];
            if i < 0 || i >= x.shape[axis] as i64 {
                inside = false;
                break;
            }
            src += i as usize * in_strides[axis];
        }
        if inside {
            out.data[o] = x.data[src];
        }
        for axis in (0..r).rev() {
            idx[axis] += 1;
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize, out_shape: &Shape) -> Tensor {
    let outer = element_count(&out_shape[..axis]);
    let mut data = Vec::with_capacity(element_count(out_shape));
    for o in 0..outer {
        for p in parts {
            let chunk = element_count(&p.shape[axis..]);
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor {
        shape: out_shape.clone(),
        data,
    }
}

pub(crate) fn reshape(x: &Tensor, shape: &Shape) -> Tensor {
    Tensor {
        shape: shape.clone(),
        data: x.data.clone(),
    }
}
