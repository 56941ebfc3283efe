//! Dense row-major tensors and the handful of kernels the networks need.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite values in {context}")))
        }
    }
}

/// C = A[m,k] * B[k,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul inner dims");
    let mut c = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(l);
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C = A[m,k] * B[n,k]^T.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul_nt inner dims");
    let mut c = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = 0.0;
            for l in 0..k {
                acc += arow[l] * brow[l];
            }
            crow[j] = acc;
        }
    }
    c
}

/// C = A[k,m]^T * B[k,n].
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul_tn inner dims");
    let mut c = Tensor::zeros(&[m, n]);
    for l in 0..k {
        let arow = a.row(l);
        let brow = b.row(l);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = c.row_mut(i);
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// 3x3 convolution with zero padding; images are [C, H, W].
pub fn conv3x3(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (cin, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let cout = weight.shape[0];
    assert_eq!(weight.shape[1], cin);
    let mut out = Tensor::zeros(&[cout, h, w]);
    for co in 0..cout {
        let b = bias.data[co];
        for y in 0..h {
            for x in 0..w {
                let mut acc = b;
                for ci in 0..cin {
                    for (dy, wy) in (-1i64..=1).zip(0..3usize) {
                        let yy = y as i64 + dy;
                        if yy < 0 || yy >= h as i64 {
                            continue;
                        }
                        for (dx, wx) in (-1i64..=1).zip(0..3usize) {
                            let xx = x as i64 + dx;
                            if xx < 0 || xx >= w as i64 {
                                continue;
                            }
                            let iv = input.data[(ci * h + yy as usize) * w + xx as usize];
                            let wv = weight.data[((co * cin + ci) * 3 + wy) * 3 + wx];
                            acc += iv * wv;
                        }
                    }
                }
                out.data[(co * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Backward of [`conv3x3`]: gradients for input, weight, bias.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (cin, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let cout = weight.shape[0];
    let mut din = Tensor::zeros(&[cin, h, w]);
    let mut dw = Tensor::zeros(&weight.shape);
    let mut db = Tensor::zeros(&[cout]);
    for co in 0..cout {
        for y in 0..h {
            for x in 0..w {
                let g = dout.data[(co * h + y) * w + x];
                if g == 0.0 {
                    continue;
                }
                db.data[co] += g;
                for ci in 0..cin {
                    for (dy, wy) in (-1i64..=1).zip(0..3usize) {
                        let yy = y as i64 + dy;
                        if yy < 0 || yy >= h as i64 {
                            continue;
                        }
                        for (dx, wx) in (-1i64..=1).zip(0..3usize) {
                            let xx = x as i64 + dx;
                            if xx < 0 || xx >= w as i64 {
                                continue;
                            }
                            let ii = (ci * h + yy as usize) * w + xx as usize;
                            let wi = ((co * cin + ci) * 3 + wy) * 3 + wx;
                            din.data[ii] += g * weight.data[wi];
                            dw.data[wi] += g * input.data[ii];
                        }
                    }
                }
            }
        }
    }
    (din, dw, db)
}

/// Average pooling by an integer factor; edge cells average fewer pixels.
pub fn avg_pool(input: &Tensor, factor: usize) -> Tensor {
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let ph = h.div_ceil(factor);
    let pw = w.div_ceil(factor);
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let y0 = py * factor;
                let x0 = px * factor;
                let y1 = (y0 + factor).min(h);
                let x1 = (x0 + factor).min(w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += input.data[(ch * h + y) * w + x];
                    }
                }
                out.data[(ch * ph + py) * pw + px] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

pub fn avg_pool_backward(input_shape: &[usize], factor: usize, dout: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let ph = h.div_ceil(factor);
    let pw = w.div_ceil(factor);
    let mut din = Tensor::zeros(input_shape);
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let y0 = py * factor;
                let x0 = px * factor;
                let y1 = (y0 + factor).min(h);
                let x1 = (x0 + factor).min(w);
                let g = dout.data[(ch * ph + py) * pw + px] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        din.data[(ch * h + y) * w + x] += g;
                    }
                }
            }
        }
    }
    din
}

/// Nearest-neighbor upsample by an integer factor to an exact target size.
pub fn upsample_nearest(input: &Tensor, factor: usize, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ch in 0..c {
        for y in 0..out_h {
            let sy = (y / factor).min(h - 1);
            for x in 0..out_w {
                let sx = (x / factor).min(w - 1);
                out.data[(ch * out_h + y) * out_w + x] = input.data[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward(input_shape: &[usize], factor: usize, dout: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (out_h, out_w) = (dout.shape[1], dout.shape[2]);
    let mut din = Tensor::zeros(input_shape);
    for ch in 0..c {
        for y in 0..out_h {
            let sy = (y / factor).min(h - 1);
            for x in 0..out_w {
                let sx = (x / factor).min(w - 1);
                din.data[(ch * h + sy) * w + sx] += dout.data[(ch * out_h + y) * out_w + x];
            }
        }
    }
    din
}

/// Permute a [C, H, W] image into an [H*W, C] row matrix (row-major pixels).
pub fn image_to_rows(input: &Tensor) -> Tensor {
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let mut out = Tensor::zeros(&[h * w, c]);
    for ch in 0..c {
        for p in 0..h * w {
            out.data[p * c + ch] = input.data[ch * h * w + p];
        }
    }
    out
}

pub fn image_to_rows_backward(input_shape: &[usize], dout: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let mut din = Tensor::zeros(input_shape);
    for ch in 0..c {
        for p in 0..h * w {
            din.data[ch * h * w + p] = dout.data[p * c + ch];
        }
    }
    din
}
