//! Dense kernels behind the graph operators.
//!
//! Layouts are row-major: affine inputs are `[batch, in]`, weights
//! `[out, in]`; conv inputs are `[batch, channels, length]`, weights
//! `[filters, channels, width]`.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn affine_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    batch: usize,
    inp: usize,
    out: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for o in 0..out {
        let row = &w[o * inp..(o + 1) * inp];
        for b in 0..batch {
            y[b * out + o] = dot(row, &x[b * inp..(b + 1) * inp]) + bias[o];
        }
    }
    y
}

/// Accumulates into `dx`, `dw`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    inp: usize,
    out: usize,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(dw) = dw {
        for o in 0..out {
            let drow = &mut dw[o * inp..(o + 1) * inp];
            for b in 0..batch {
                let g = dy[b * out + o];
                if g != 0.0 {
                    axpy(g, &x[b * inp..(b + 1) * inp], drow);
                }
            }
        }
    }
    if let Some(db) = db {
        for b in 0..batch {
            for o in 0..out {
                db[o] += dy[b * out + o];
            }
        }
    }
    if let Some(dx) = dx {
        for o in 0..out {
            let row = &w[o * inp..(o + 1) * inp];
            for b in 0..batch {
                let g = dy[b * out + o];
                if g != 0.0 {
                    axpy(g, row, &mut dx[b * inp..(b + 1) * inp]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub channels: usize,
    pub length: usize,
    pub filters: usize,
    pub width: usize,
    pub stride: usize,
}

impl ConvDims {
    pub fn out_len(&self) -> usize {
        (self.length - self.width) / self.stride + 1
    }
}

pub fn conv1d_forward(x: &[f64], w: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let lo = d.out_len();
    let mut y = vec![0.0; d.batch * d.filters * lo];
    for b in 0..d.batch {
        let xb = &x[b * d.channels * d.length..(b + 1) * d.channels * d.length];
        for f in 0..d.filters {
            let yrow = &mut y[(b * d.filters + f) * lo..(b * d.filters + f + 1) * lo];
            yrow.fill(bias[f]);
            for c in 0..d.channels {
                let xrow = &xb[c * d.length..(c + 1) * d.length];
                let kern = &w[(f * d.channels + c) * d.width..(f * d.channels + c + 1) * d.width];
                for (t, yt) in yrow.iter_mut().enumerate() {
                    let start = t * d.stride;
                    *yt += dot(kern, &xrow[start..start + d.width]);
                }
            }
        }
    }
    y
}

pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d: ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let lo = d.out_len();
    for b in 0..d.batch {
        let off = b * d.channels * d.length;
        for f in 0..d.filters {
            let dyrow = &dy[(b * d.filters + f) * lo..(b * d.filters + f + 1) * lo];
            if let Some(db) = db.as_deref_mut() {
                db[f] += dyrow.iter().sum::<f64>();
            }
            for c in 0..d.channels {
                let kidx = (f * d.channels + c) * d.width;
                let xrow = &x[off + c * d.length..off + (c + 1) * d.length];
                for (t, &g) in dyrow.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let start = t * d.stride;
                    if let Some(dw) = dw.as_deref_mut() {
                        axpy(g, &xrow[start..start + d.width], &mut dw[kidx..kidx + d.width]);
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxrow = &mut dx[off + c * d.length..off + (c + 1) * d.length];
                        axpy(g, &w[kidx..kidx + d.width], &mut dxrow[start..start + d.width]);
                    }
                }
            }
        }
    }
}

/// Max pooling over the last axis of `rows` rows of length `len`.
/// Returns the pooled values and the flat argmax index of every window;
/// ties go to the lowest index.
pub fn maxpool_forward(
    x: &[f64],
    rows: usize,
    len: usize,
    width: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let lo = (len - width) / stride + 1;
    let mut y = Vec::with_capacity(rows * lo);
    let mut arg = Vec::with_capacity(rows * lo);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        for t in 0..lo {
            let start = t * stride;
            let mut best = start;
            for i in start + 1..start + width {
                if row[i] > row[best] {
                    best = i;
                }
            }
            y.push(row[best]);
            arg.push(r * len + best);
        }
    }
    (y, arg)
}

pub fn avgpool_forward(x: &[f64], rows: usize, len: usize, width: usize, stride: usize) -> Vec<f64> {
    let lo = (len - width) / stride + 1;
    let inv = 1.0 / width as f64;
    let mut y = Vec::with_capacity(rows * lo);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        for t in 0..lo {
            let start = t * stride;
            y.push(row[start..start + width].iter().sum::<f64>() * inv);
        }
    }
    y
}

pub fn avgpool_backward(
    dy: &[f64],
    dx: &mut [f64],
    rows: usize,
    len: usize,
    width: usize,
    stride: usize,
) {
    let lo = (len - width) / stride + 1;
    let inv = 1.0 / width as f64;
    for r in 0..rows {
        for t in 0..lo {
            let g = dy[r * lo + t] * inv;
            let start = r * len + t * stride;
            for v in &mut dx[start..start + width] {
                *v += g;
            }
        }
    }
}
