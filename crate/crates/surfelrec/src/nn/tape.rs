//! Eager reverse-mode tape.
//!
//! Operations compute their value immediately and record enough structure
//! to run an exact backward pass from any scalar node. All arithmetic is
//! f64; determinism comes from the fixed evaluation order of the tape.

use super::tensor::{
    avg_pool, avg_pool_backward, conv3x3, conv3x3_backward, image_to_rows,
    image_to_rows_backward, matmul, matmul_nt, matmul_tn, upsample_nearest,
    upsample_nearest_backward, Tensor,
};

pub type NodeId = usize;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    AddScaled(NodeId, NodeId, f64),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    ScatterRows {
        base: NodeId,
        rows: NodeId,
        indices: Vec<usize>,
    },
    ScaleRows(NodeId, Vec<f64>),
    Composite {
        sigma: NodeId,
        rgb: NodeId,
        offsets: Vec<usize>,
        deltas: Vec<f64>,
        background: [f64; 3],
    },
    MeanSquaredError(NodeId, Tensor),
    MaskedMeanAbs(NodeId, Tensor, Vec<bool>),
    Conv3x3 {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    AvgPool(NodeId, usize),
    UpsampleNearest(NodeId, usize),
    ImageToRows(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. node `id`; zeros if the node does not
    /// influence the loss.
    pub fn grad(&self, tape: &Tape, id: NodeId) -> Tensor {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&tape.nodes[id].value.shape),
        }
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// Inserts a tensor as a leaf. Gradients are computed for every leaf;
    /// the caller decides which ones it cares about.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(Op::MatMul(a, b), v)
    }

    /// [m, n] plus a length-n bias broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let bv = &self.nodes[bias].value;
        let n = xv.cols();
        assert_eq!(bv.len(), n, "bias length");
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for j in 0..n {
                row[j] += bv.data[j];
            }
        }
        self.push(Op::AddBias(x, bias), out)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        assert_eq!(av.shape, bv.shape, "elementwise shapes");
        let data = av
            .data
            .iter()
            .zip(bv.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(&av.shape, data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary(a, b, |x, y| x * y);
        self.push(Op::MulElem(a, b), v)
    }

    /// a + s * b.
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, s: f64) -> NodeId {
        let v = self.binary(a, b, |x, y| x + s * y);
        self.push(Op::AddScaled(a, b, s), v)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let xv = &self.nodes[x].value;
        let v = Tensor::from_vec(&xv.shape, xv.data.iter().map(|&a| a * s).collect());
        self.push(Op::Scale(x, s), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let v = Tensor::from_vec(&xv.shape, xv.data.iter().map(|&a| a.max(0.0)).collect());
        self.push(Op::Relu(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let v = Tensor::from_vec(
            &xv.shape,
            xv.data.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect(),
        );
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let v = Tensor::from_vec(&xv.shape, xv.data.iter().map(|&a| a.tanh()).collect());
        self.push(Op::Tanh(x), v)
    }

    /// Concatenate 2-D tensors along columns (same row count).
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut out = Tensor::zeros(&[rows, total]);
        for i in 0..rows {
            let orow = out.row_mut(i);
            let mut at = 0;
            for &p in parts {
                let pv = &self.nodes[p].value;
                assert_eq!(pv.rows(), rows, "concat_cols row counts");
                let c = pv.cols();
                orow[at..at + c].copy_from_slice(pv.row(i));
                at += c;
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Concatenate tensors along the leading dimension (trailing dims must
    /// match); covers both row matrices and channel-major images.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let trailing = self.nodes[parts[0]].value.shape[1..].to_vec();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.shape[0]).sum();
        let mut shape = vec![total];
        shape.extend_from_slice(&trailing);
        let mut out = Tensor::zeros(&shape);
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p].value;
            assert_eq!(pv.shape[1..], trailing[..], "concat_rows trailing dims");
            out.data[at..at + pv.len()].copy_from_slice(&pv.data);
            at += pv.len();
        }
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> NodeId {
        let xv = &self.nodes[x].value;
        let c = xv.cols();
        let mut out = Tensor::zeros(&[indices.len(), c]);
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(xv.row(i));
        }
        self.push(Op::GatherRows(x, indices.to_vec()), out)
    }

    /// base with `indices[k]`-th row replaced by the k-th row of `rows`;
    /// indices must be unique.
    pub fn scatter_rows(&mut self, base: NodeId, rows: NodeId, indices: &[usize]) -> NodeId {
        let mut out = self.nodes[base].value.clone();
        let rv = &self.nodes[rows].value;
        assert_eq!(rv.rows(), indices.len());
        debug_assert!({
            let mut seen = indices.to_vec();
            seen.sort_unstable();
            seen.windows(2).all(|w| w[0] != w[1])
        });
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(rv.row(k));
        }
        self.push(
            Op::ScatterRows {
                base,
                rows,
                indices: indices.to_vec(),
            },
            out,
        )
    }

    /// Multiply each row by a constant scalar.
    pub fn scale_rows(&mut self, x: NodeId, scales: &[f64]) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!(xv.rows(), scales.len());
        let mut out = xv.clone();
        for (i, &s) in scales.iter().enumerate() {
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        self.push(Op::ScaleRows(x, scales.to_vec()), out)
    }

    /// Front-to-back volume compositing over per-pixel hit groups.
    ///
    /// `sigma` is [H, 1] and `rgb` is [H, 3] for H hits total; hits of pixel
    /// p occupy rows offsets[p]..offsets[p+1] sorted by ray parameter, with
    /// `deltas` the inter-hit spacing. Output is [P, 3]; residual
    /// transmittance multiplies `background`.
    pub fn composite(
        &mut self,
        sigma: NodeId,
        rgb: NodeId,
        offsets: &[usize],
        deltas: &[f64],
        background: [f64; 3],
    ) -> NodeId {
        let sv = &self.nodes[sigma].value;
        let cv = &self.nodes[rgb].value;
        let pixels = offsets.len() - 1;
        let mut out = Tensor::zeros(&[pixels, 3]);
        for p in 0..pixels {
            let mut trans = 1.0;
            let mut c = [0.0f64; 3];
            for i in offsets[p]..offsets[p + 1] {
                let e = (-sv.data[i] * deltas[i]).exp();
                let w = trans * (1.0 - e);
                let row = cv.row(i);
                for k in 0..3 {
                    c[k] += w * row[k];
                }
                trans *= e;
            }
            for k in 0..3 {
                c[k] += trans * background[k];
            }
            out.row_mut(p).copy_from_slice(&c);
        }
        self.push(
            Op::Composite {
                sigma,
                rgb,
                offsets: offsets.to_vec(),
                deltas: deltas.to_vec(),
                background,
            },
            out,
        )
    }

    /// Scalar mean of squared differences against a constant target.
    pub fn mean_squared_error(&mut self, pred: NodeId, target: Tensor) -> NodeId {
        let pv = &self.nodes[pred].value;
        assert_eq!(pv.shape, target.shape);
        let n = pv.len().max(1) as f64;
        let mse = pv
            .data
            .iter()
            .zip(target.data.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(Op::MeanSquaredError(pred, target), Tensor::scalar(mse))
    }

    /// Scalar mean of |pred - target| over masked elements.
    pub fn masked_mean_abs(&mut self, pred: NodeId, target: Tensor, mask: Vec<bool>) -> NodeId {
        let pv = &self.nodes[pred].value;
        assert_eq!(pv.len(), target.len());
        assert_eq!(pv.len(), mask.len());
        let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
        let l1 = pv
            .data
            .iter()
            .zip(target.data.iter())
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|((&a, &b), _)| (a - b).abs())
            .sum::<f64>()
            / count;
        self.push(Op::MaskedMeanAbs(pred, target, mask), Tensor::scalar(l1))
    }

    pub fn conv3x3(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        let v = conv3x3(
            &self.nodes[input].value,
            &self.nodes[weight].value,
            &self.nodes[bias].value,
        );
        self.push(
            Op::Conv3x3 {
                input,
                weight,
                bias,
            },
            v,
        )
    }

    pub fn avg_pool(&mut self, x: NodeId, factor: usize) -> NodeId {
        let v = avg_pool(&self.nodes[x].value, factor);
        self.push(Op::AvgPool(x, factor), v)
    }

    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize, out_h: usize, out_w: usize) -> NodeId {
        let v = upsample_nearest(&self.nodes[x].value, factor, out_h, out_w);
        self.push(Op::UpsampleNearest(x, factor), v)
    }

    /// [C, H, W] image to an [H*W, C] pixel-row matrix.
    pub fn image_to_rows(&mut self, x: NodeId) -> NodeId {
        let v = image_to_rows(&self.nodes[x].value);
        self.push(Op::ImageToRows(x), v)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(self.nodes[loss].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], add: impl Fn(&mut Tensor)) {
            let g = grads[id].get_or_insert_with(|| Tensor::zeros(shape));
            add(g);
        }

        for id in (0..=loss).rev() {
            let Some(dout) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da = matmul_nt(&dout, bv);
                    let db = matmul_tn(av, &dout);
                    acc(&mut grads, *a, &av.shape, |g| {
                        for (gi, di) in g.data.iter_mut().zip(da.data.iter()) {
                            *gi += di;
                        }
                    });
                    acc(&mut grads, *b, &bv.shape, |g| {
                        for (gi, di) in g.data.iter_mut().zip(db.data.iter()) {
                            *gi += di;
                        }
                    });
                }
                Op::AddBias(x, bias) => {
                    let xs = self.nodes[*x].value.shape.clone();
                    acc(&mut grads, *x, &xs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dout.data.iter()) {
                            *gi += di;
                        }
                    });
                    let bs = self.nodes[*bias].value.shape.clone();
                    let n = bs[0];
                    acc(&mut grads, *bias, &bs, |g| {
                        for (i, di) in dout.data.iter().enumerate() {
                            g.data[i % n] += di;
                        }
                    });
                }
                Op::Add(a, b) => {
                    for &t in [a, b].iter() {
                        let ts = self.nodes[*t].value.shape.clone();
                        acc(&mut grads, *t, &ts, |g| {
                            for (gi, di) in g.data.iter_mut().zip(dout.data.iter()) {
                                *gi += di;
                            }
                        });
                    }
                }
                Op::Sub(a, b) => {
                    let as_ = self.nodes[*a].value.shape.clone();
                    acc(&mut grads, *a, &as_, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dout.data.iter()) {
                            *gi += di;
                        }
                    });
                    let bs = self.nodes[*b].value.shape.clone();
                    acc(&mut grads, *b, &bs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dout.data.iter()) {
                            *gi -= di;
                        }
                    });
                }
                Op::MulElem(a, b) => {
                    let av = self.nodes[*a].value.clone();
                    let bv = self.nodes[*b].value.clone();
                    acc(&mut grads, *a, &av.shape, |g| {
                        for i in 0..g.data.len() {
                            g.data[i] += dout.data[i] * bv.data[i];
                        }
                    });
                    acc(&mut grads, *b, &bv.shape, |g| {
                        for i in 0..g.data.len() {
                            g.data[i] += dout.data[i] * av.data[i];
                        }
                    });
                }
                Op::AddScaled(a, b, s) => {
                    let as_ = self.nodes[*a].value.shape.clone();
                    acc(&mut grads, *a, &as_, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dout.data.iter()) {
                            *gi += di;
                        }
                    });
                    let bs = self.nodes[*b].value.shape.clone();
                    acc(&mut grads, *b, &bs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dout.data.iter()) {
                            *gi += s * di;
                        }
                    });
                }
                Op::Scale(x, s) => {
                    let xs = self.nodes[*x].value.shape.clone();
                    acc(&mut grads, *x, &xs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dout.data.iter()) {
                            *gi += s * di;
                        }
                    });
                }
                Op::Relu(x) => {
                    let xv = self.nodes[*x].value.clone();
                    acc(&mut grads, *x, &xv.shape, |g| {
                        for i in 0..g.data.len() {
                            if xv.data[i] > 0.0 {
                                g.data[i] += dout.data[i];
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let yv = node.value.clone();
                    let xs = self.nodes[*x].value.shape.clone();
                    acc(&mut grads, *x, &xs, |g| {
                        for i in 0..g.data.len() {
                            g.data[i] += dout.data[i] * yv.data[i] * (1.0 - yv.data[i]);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let yv = node.value.clone();
                    let xs = self.nodes[*x].value.shape.clone();
                    acc(&mut grads, *x, &xs, |g| {
                        for i in 0..g.data.len() {
                            g.data[i] += dout.data[i] * (1.0 - yv.data[i] * yv.data[i]);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let mut at = 0;
                    for &p in parts {
                        let ps = self.nodes[p].value.shape.clone();
                        let c = ps[1];
                        let total = node.value.cols();
                        let start = at;
                        acc(&mut grads, p, &ps, |g| {
                            for i in 0..rows {
                                for j in 0..c {
                                    g.data[i * c + j] += dout.data[i * total + start + j];
                                }
                            }
                        });
                        at += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let ps = self.nodes[p].value.shape.clone();
                        let n = ps.iter().product::<usize>();
                        let start = at;
                        acc(&mut grads, p, &ps, |g| {
                            for i in 0..n {
                                g.data[i] += dout.data[start + i];
                            }
                        });
                        at += n;
                    }
                }
                Op::GatherRows(x, indices) => {
                    let xs = self.nodes[*x].value.shape.clone();
                    let c = xs[1];
                    acc(&mut grads, *x, &xs, |g| {
                        for (k, &i) in indices.iter().enumerate() {
                            for j in 0..c {
                                g.data[i * c + j] += dout.data[k * c + j];
                            }
                        }
                    });
                }
                Op::ScatterRows {
                    base,
                    rows,
                    indices,
                } => {
                    let bs = self.nodes[*base].value.shape.clone();
                    let c = bs[1];
                    let idx = indices.clone();
                    acc(&mut grads, *base, &bs, |g| {
                        let mut overwritten = vec![false; bs[0]];
                        for &i in &idx {
                            overwritten[i] = true;
                        }
                        for i in 0..bs[0] {
                            if !overwritten[i] {
                                for j in 0..c {
                                    g.data[i * c + j] += dout.data[i * c + j];
                                }
                            }
                        }
                    });
                    let rs = self.nodes[*rows].value.shape.clone();
                    acc(&mut grads, *rows, &rs, |g| {
                        for (k, &i) in idx.iter().enumerate() {
                            for j in 0..c {
                                g.data[k * c + j] += dout.data[i * c + j];
                            }
                        }
                    });
                }
                Op::ScaleRows(x, scales) => {
                    let xs = self.nodes[*x].value.shape.clone();
                    let c = xs[1];
                    acc(&mut grads, *x, &xs, |g| {
                        for (i, &s) in scales.iter().enumerate() {
                            for j in 0..c {
                                g.data[i * c + j] += s * dout.data[i * c + j];
                            }
                        }
                    });
                }
                Op::Composite {
                    sigma,
                    rgb,
                    offsets,
                    deltas,
                    background,
                } => {
                    let sv = self.nodes[*sigma].value.clone();
                    let cv = self.nodes[*rgb].value.clone();
                    let hits = sv.len();
                    let mut dsigma = vec![0.0; hits];
                    let mut drgb = vec![0.0; hits * 3];
                    let pixels = offsets.len() - 1;
                    for p in 0..pixels {
                        let range = offsets[p]..offsets[p + 1];
                        let dc = dout.row(p);
                        // Forward quantities per hit.
                        let mut trans = vec![1.0f64; range.len() + 1];
                        let mut e = vec![0.0f64; range.len()];
                        for (k, i) in range.clone().enumerate() {
                            e[k] = (-sv.data[i] * deltas[i]).exp();
                            trans[k + 1] = trans[k] * e[k];
                        }
                        let t_end = trans[range.len()];
                        // Projected color gradient per hit and suffix sums.
                        let proj: Vec<f64> = range
                            .clone()
                            .map(|i| {
                                let row = cv.row(i);
                                row[0] * dc[0] + row[1] * dc[1] + row[2] * dc[2]
                            })
                            .collect();
                        let w: Vec<f64> = (0..range.len()).map(|k| trans[k] * (1.0 - e[k])).collect();
                        let mut suffix = vec![0.0; range.len() + 1];
                        for k in (0..range.len()).rev() {
                            suffix[k] = suffix[k + 1] + w[k] * proj[k];
                        }
                        let bg_proj =
                            background[0] * dc[0] + background[1] * dc[1] + background[2] * dc[2];
                        for (k, i) in range.clone().enumerate() {
                            dsigma[i] += deltas[i]
                                * (trans[k] * e[k] * proj[k] - suffix[k + 1] - t_end * bg_proj);
                            for j in 0..3 {
                                drgb[i * 3 + j] += w[k] * dc[j];
                            }
                        }
                    }
                    let ss = sv.shape.clone();
                    acc(&mut grads, *sigma, &ss, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dsigma.iter()) {
                            *gi += di;
                        }
                    });
                    let cs = cv.shape.clone();
                    acc(&mut grads, *rgb, &cs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(drgb.iter()) {
                            *gi += di;
                        }
                    });
                }
                Op::MeanSquaredError(pred, target) => {
                    let pv = self.nodes[*pred].value.clone();
                    let n = pv.len().max(1) as f64;
                    let d = dout.scalar_value();
                    acc(&mut grads, *pred, &pv.shape, |g| {
                        for i in 0..g.data.len() {
                            g.data[i] += d * 2.0 * (pv.data[i] - target.data[i]) / n;
                        }
                    });
                }
                Op::MaskedMeanAbs(pred, target, mask) => {
                    let pv = self.nodes[*pred].value.clone();
                    let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
                    let d = dout.scalar_value();
                    acc(&mut grads, *pred, &pv.shape, |g| {
                        for i in 0..g.data.len() {
                            if mask[i] {
                                let diff = pv.data[i] - target.data[i];
                                if diff != 0.0 {
                                    g.data[i] += d * diff.signum() / count;
                                }
                            }
                        }
                    });
                }
                Op::Conv3x3 {
                    input,
                    weight,
                    bias,
                } => {
                    let iv = &self.nodes[*input].value;
                    let wv = &self.nodes[*weight].value;
                    let (din, dw, db) = conv3x3_backward(iv, wv, &dout);
                    let is = iv.shape.clone();
                    acc(&mut grads, *input, &is, |g| {
                        for (gi, di) in g.data.iter_mut().zip(din.data.iter()) {
                            *gi += di;
                        }
                    });
                    let ws = wv.shape.clone();
                    acc(&mut grads, *weight, &ws, |g| {
                        for (gi, di) in g.data.iter_mut().zip(dw.data.iter()) {
                            *gi += di;
                        }
                    });
                    let bs = self.nodes[*bias].value.shape.clone();
                    acc(&mut grads, *bias, &bs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(db.data.iter()) {
                            *gi += di;
                        }
                    });
                }
                Op::AvgPool(x, factor) => {
                    let xs = self.nodes[*x].value.shape.clone();
                    let din = avg_pool_backward(&xs, *factor, &dout);
                    acc(&mut grads, *x, &xs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(din.data.iter()) {
                            *gi += di;
                        }
                    });
                }
                Op::ImageToRows(x) => {
                    let xs = self.nodes[*x].value.shape.clone();
                    let din = image_to_rows_backward(&xs, &dout);
                    acc(&mut grads, *x, &xs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(din.data.iter()) {
                            *gi += di;
                        }
                    });
                }
                Op::UpsampleNearest(x, factor) => {
                    let xs = self.nodes[*x].value.shape.clone();
                    let din = upsample_nearest_backward(&xs, *factor, &dout);
                    acc(&mut grads, *x, &xs, |g| {
                        for (gi, di) in g.data.iter_mut().zip(din.data.iter()) {
                            *gi += di;
                        }
                    });
                }
            }
            grads[id] = Some(dout);
        }
        Grads { grads }
    }
}
