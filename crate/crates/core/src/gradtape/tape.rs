use super::tensor::{axpy, gemm};
use super::{Result, TapeError, Tensor};
use crate::gradkit::FlatGradient;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    /// `x [B, in] . w[out, in]^T`
    MatmulNt(Var, Var),
    /// `x [B, n] + b [n]` per row
    BiasAdd(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        geom: ConvGeom,
        /// im2col buffers per batch element, kept only when the kernel needs a gradient.
        cols: Vec<f64>,
    },
    SelectMse {
        q: Var,
        actions: Vec<usize>,
        targets: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive operations for reverse-mode
/// differentiation. Nodes are stored in creation order, which is a valid
/// topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Smallest `|x|` among all ReLU inputs on the tape, if any. Finite
    /// differences with step `h` are only meaningful when this exceeds the
    /// largest pre-activation shift a step can cause.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(
                    self.value(a)
                        .data()
                        .iter()
                        .fold(f64::INFINITY, |m, v| m.min(v.abs())),
                ),
                _ => None,
            })
            .reduce(f64::min)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A differentiable leaf. `index` fixes its position in the flattened
    /// gradient returned by [`Tape::backward`].
    pub fn param(&mut self, index: usize, value: Tensor) -> Result<Var> {
        if self.params.iter().any(|(i, _)| *i == index) {
            return Err(TapeError::Param(format!(
                "parameter {index} registered twice"
            )));
        }
        let v = self.push(value, Op::Param, true);
        self.params.push((index, v));
        Ok(v)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TapeError::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| c * v).collect());
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v * v).collect());
        let rg = self.rg(a);
        self.push(t, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::from_parts(
            x.shape().to_vec(),
            x.data()
                .iter()
                .map(|v| if *v > 0.0 { *v } else { 0.0 })
                .collect(),
        );
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// `x [B, in]` times the transpose of `w [out, in]`.
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(TapeError::Shape(format!("matmul_nt: {xs:?} x {ws:?}^T")));
        }
        let (batch, outs) = (xs[0], ws[0]);
        let (xv, wv) = (self.value(x), self.value(w));
        let inputs = xs[1];
        let mut out = vec![0.0; batch * outs];
        gemm(
            (batch, inputs, outs),
            xv.data(),
            false,
            wv.data(),
            true,
            0.0,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            Tensor::from_parts(vec![batch, outs], out),
            Op::MatmulNt(x, w),
            rg,
        ))
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x).shape(), self.value(b).shape());
        if xs.len() != 2 || bs != [xs[1]] {
            return Err(TapeError::Shape(format!("bias_add: {xs:?} + {bs:?}")));
        }
        let n = xs[1];
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % n])
            .collect();
        let t = Tensor::from_parts(xs.to_vec(), data);
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, Op::BiasAdd(x, b), rg))
    }

    /// Valid (unpadded) strided convolution with bias:
    /// `x [B, C, H, W]`, `k [O, C, kh, kw]`, `b [O]` -> `[B, O, Ho, Wo]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
        let (xs, ks, bs) = (
            self.value(x).shape(),
            self.value(k).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || bs != [ks[0]] || stride == 0 {
            return Err(TapeError::Shape(format!(
                "conv2d: input {xs:?}, kernel {ks:?}, bias {bs:?}, stride {stride}"
            )));
        }
        if xs[2] < ks[2] || xs[3] < ks[3] {
            return Err(TapeError::Shape(format!(
                "conv2d: kernel {ks:?} larger than input {xs:?}"
            )));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_c: xs[1],
            h: xs[2],
            w: xs[3],
            out_c: ks[0],
            kh: ks[2],
            kw: ks[3],
            oh: (xs[2] - ks[2]) / stride + 1,
            ow: (xs[3] - ks[3]) / stride + 1,
        };
        let keep_cols = self.rg(k);
        let (patch, pos) = (geom.patch(), geom.positions());
        let span = geom.batch * pos;
        let xv = self.value(x).data();
        let kv = self.value(k);
        let bias = self.value(b).data();
        // Batch-wide columns: row r holds patch element r for every output
        // position of every sample, so each product runs over long rows.
        let mut cols = vec![0.0; patch * span];
        let img = geom.in_c * geom.h * geom.w;
        for n in 0..geom.batch {
            im2col(
                &xv[n * img..(n + 1) * img],
                &geom,
                stride,
                &mut cols,
                span,
                n * pos,
            );
        }
        let mut out_t = vec![0.0; geom.out_c * span];
        for (o, row) in out_t.chunks_exact_mut(span).enumerate() {
            row.fill(bias[o]);
        }
        gemm(
            (geom.out_c, patch, span),
            kv.data(),
            false,
            &cols,
            false,
            1.0,
            &mut out_t,
        );
        let mut out = vec![0.0; geom.batch * geom.out_c * pos];
        for n in 0..geom.batch {
            for o in 0..geom.out_c {
                let dst = (n * geom.out_c + o) * pos;
                let src = o * span + n * pos;
                out[dst..dst + pos].copy_from_slice(&out_t[src..src + pos]);
            }
        }
        let all_cols = if keep_cols { cols } else { Vec::new() };
        let rg = self.rg(x) || self.rg(k) || self.rg(b);
        let t = Tensor::from_parts(vec![geom.batch, geom.out_c, geom.oh, geom.ow], out);
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                k,
                b,
                stride,
                geom,
                cols: all_cols,
            },
            rg,
        ))
    }

    /// Mean over the batch of `(q[b, actions[b]] - targets[b])^2`.
    pub fn select_mse(&mut self, q: Var, actions: &[usize], targets: &[f64]) -> Result<Var> {
        let qs = self.value(q).shape();
        if qs.len() != 2 || actions.len() != qs[0] || targets.len() != qs[0] {
            return Err(TapeError::Shape(format!(
                "select_mse: q {qs:?}, {} actions, {} targets",
                actions.len(),
                targets.len()
            )));
        }
        if let Some(a) = actions.iter().find(|a| **a >= qs[1]) {
            return Err(TapeError::Shape(format!(
                "action index {a} out of range for {} actions",
                qs[1]
            )));
        }
        let qv = self.value(q);
        let batch = qs[0];
        let loss = actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(b, (a, t))| {
                let d = qv.row(b)[*a] - t;
                d * d
            })
            .sum::<f64>()
            / batch as f64;
        let rg = self.rg(q);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SelectMse {
                q,
                actions: actions.to_vec(),
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse accumulation from a scalar node. The result concatenates the
    /// gradients of all registered parameters in index order, which must be
    /// `0..P` without gaps.
    pub fn backward(&self, root: Var) -> Result<FlatGradient> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(TapeError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut order: Vec<(usize, Var)> = self.params.clone();
        order.sort_by_key(|(i, _)| *i);
        if let Some((pos, (i, _))) = order.iter().enumerate().find(|(pos, (i, _))| pos != i) {
            return Err(TapeError::Param(format!(
                "parameter indices must be contiguous; slot {pos} holds index {i}"
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Param) {
                grads[id] = Some(g);
            }
        }

        let mut flat = Vec::new();
        for (_, v) in order {
            match v.0 <= root.0 {
                true => match &grads[v.0] {
                    Some(g) => flat.extend_from_slice(g),
                    None => flat.extend(std::iter::repeat_n(0.0, self.value(v).len())),
                },
                false => flat.extend(std::iter::repeat_n(0.0, self.value(v).len())),
            }
        }
        FlatGradient::new(flat).map_err(|_| TapeError::NonFinite)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |d| axpy(d, 1.0, g));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |d| axpy(d, *c, g)),
            Op::Square(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += 2.0 * av[i] * g[i];
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        if av[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |d| axpy(d, 1.0, g)),
            Op::MatmulNt(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, inputs) = (xv.shape()[0], xv.shape()[1]);
                let outs = wv.shape()[0];
                self.accumulate(grads, *w, |d| {
                    gemm((outs, batch, inputs), g, true, xv.data(), false, 1.0, d);
                });
                self.accumulate(grads, *x, |d| {
                    gemm((batch, outs, inputs), g, false, wv.data(), false, 1.0, d);
                });
            }
            Op::BiasAdd(x, b) => {
                let n = self.value(*b).len();
                self.accumulate(grads, *x, |d| axpy(d, 1.0, g));
                self.accumulate(grads, *b, |d| {
                    for row in g.chunks_exact(n) {
                        axpy(d, 1.0, row);
                    }
                });
            }
            Op::Conv2d {
                x,
                k,
                b,
                stride,
                geom,
                cols,
            } => self.conv_backward(*x, *k, *b, *stride, geom, cols, g, grads),
            Op::SelectMse {
                q,
                actions,
                targets,
            } => {
                let qv = self.value(*q);
                let batch = actions.len();
                let n = qv.shape()[1];
                self.accumulate(grads, *q, |d| {
                    for (bi, (a, t)) in actions.iter().zip(targets).enumerate() {
                        d[bi * n + a] += g[0] * 2.0 * (qv.row(bi)[*a] - t) / batch as f64;
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        geom: &ConvGeom,
        cols: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (patch, pos) = (geom.patch(), geom.positions());
        let span = geom.batch * pos;
        // Upstream gradient in [O, B*pos] layout, matching the columns.
        let mut g_t = vec![0.0; geom.out_c * span];
        for n in 0..geom.batch {
            for o in 0..geom.out_c {
                let src = (n * geom.out_c + o) * pos;
                let dst = o * span + n * pos;
                g_t[dst..dst + pos].copy_from_slice(&g[src..src + pos]);
            }
        }
        self.accumulate(grads, b, |d| {
            for (o, row) in g_t.chunks_exact(span).enumerate() {
                d[o] += row.iter().sum::<f64>();
            }
        });
        self.accumulate(grads, k, |d| {
            gemm((geom.out_c, span, patch), &g_t, false, cols, true, 1.0, d);
        });
        if self.rg(x) {
            let kv = self.value(k);
            let img = geom.in_c * geom.h * geom.w;
            let mut dcols = vec![0.0; patch * span];
            gemm(
                (patch, geom.out_c, span),
                kv.data(),
                true,
                &g_t,
                false,
                0.0,
                &mut dcols,
            );
            self.accumulate(grads, x, |d| {
                for n in 0..geom.batch {
                    col2im(
                        &dcols,
                        geom,
                        stride,
                        &mut d[n * img..(n + 1) * img],
                        span,
                        n * pos,
                    );
                }
            });
        }
    }
}

/// Rows indexed by (channel, ky, kx), each `span` long; the output positions
/// of one sample fill columns `offset..offset + positions`.
fn im2col(img: &[f64], g: &ConvGeom, stride: usize, cols: &mut [f64], span: usize, offset: usize) {
    let pos = g.positions();
    for c in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[r * span + offset..r * span + offset + pos];
                for oy in 0..g.oh {
                    let src = (c * g.h + oy * stride + ky) * g.w + kx;
                    for ox in 0..g.ow {
                        dst[oy * g.ow + ox] = img[src + ox * stride];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] for one sample.
fn col2im(cols: &[f64], g: &ConvGeom, stride: usize, img: &mut [f64], span: usize, offset: usize) {
    let pos = g.positions();
    for c in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[r * span + offset..r * span + offset + pos];
                for oy in 0..g.oh {
                    let base = (c * g.h + oy * stride + ky) * g.w + kx;
                    for ox in 0..g.ow {
                        img[base + ox * stride] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}
