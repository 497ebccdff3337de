//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and enough
//! information to push gradients back to its inputs. A tape lives for one
//! forward/backward pass and is confined to the thread that built it.

use rand::Rng;

use crate::error::{dim_err, NumericsError, Result};
use crate::fault;
use crate::tensor::{axis_split, gemm, softmax_in_place, Tensor};

/// Clamping window applied to probabilities inside the cross-entropy losses.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Bmm { a: Var, b: Var },
    AdjMatMul { adj: Var, x: Var },
    TransposeLast2(Var),
    Reshape(Var),
    Add(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    Dropout { x: Var, mask: Vec<f64> },
    NarrowLast { x: Var, start: usize },
    ConcatLast(Vec<Var>),
    Bce { p: Var, target: Vec<f64> },
    Cce { p: Var, target: Vec<f64> },
    Mse { p: Var, target: Vec<f64> },
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // -----------------------------------------------------------------------
    // forward ops

    /// `x[.., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return dim_err("linear", &xs, &ws);
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return dim_err("linear bias", &ws, self.shape(b));
            }
        }
        let rows = self.value(x).len() / din;
        let mut out = vec![0.0; rows * dout];
        gemm(
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
            rows,
            din,
            dout,
            false,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b }, rg))
    }

    /// Batched product `a[B, m, k] · b[B, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return dim_err("bmm", &sa, &sb);
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
                false,
                false,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![batch, m, n], out)?, Op::Bmm { a, b }, rg))
    }

    /// Left-multiplies every `[N, f]` slab of `x` by the `[N, N]` matrix `adj`.
    pub fn adj_matmul(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(adj).to_vec(), self.shape(x).to_vec());
        if sa.len() != 2 || sa[0] != sa[1] || sx.len() < 2 || sx[sx.len() - 2] != sa[0] {
            return dim_err("adj_matmul", &sa, &sx);
        }
        let n = sa[0];
        let f = sx[sx.len() - 1];
        let slab = n * f;
        let count = self.value(x).len() / slab;
        let mut out = vec![0.0; count * slab];
        let (av, xv) = (self.value(adj).data(), self.value(x).data());
        for i in 0..count {
            gemm(
                av,
                &xv[i * slab..(i + 1) * slab],
                &mut out[i * slab..(i + 1) * slab],
                n,
                n,
                f,
                false,
                false,
            );
        }
        let rg = self.rg(adj) || self.rg(x);
        Ok(self.push(Tensor::new(sx, out)?, Op::AdjMatMul { adj, x }, rg))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return dim_err("transpose_last2", &s, &[]);
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let out = transpose_blocks(self.value(x).data(), m, n);
        let mut shape = s;
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::TransposeLast2(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err("add", self.shape(a), self.shape(b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a constant whose shape is a suffix of `x`'s shape, repeated over the leading dims.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let xs = self.shape(x);
        if c.rank() > xs.len() || xs[xs.len() - c.rank()..] != *c.shape() {
            return dim_err("add_const", xs, c.shape());
        }
        let cd = c.data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + cd[i % cd.len()])
            .collect();
        let out = Tensor::new(xs.to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AddConst(x), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err("mul", self.shape(a), self.shape(b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.value(x).ensure_finite("relu input")?;
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.value(x).ensure_finite("sigmoid input")?;
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sigmoid(x), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(NumericsError::Config(format!(
                "softmax axis {axis} out of range for shape {s:?}"
            )));
        }
        self.value(x).ensure_finite("softmax input")?;
        let (outer, len, inner) = axis_split(&s, axis);
        let mut data = self.value(x).data().to_vec();
        softmax_in_place(&mut data, outer, len, inner);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(s, data)?, Op::Softmax { x, axis }, rg))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::Config(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn narrow_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        if len == 0 || start + len > d {
            return dim_err("narrow_last", &s, &[start, len]);
        }
        let data = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::NarrowLast { x, start }, rg))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return dim_err("concat_last", &first, s);
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = first;
        *shape.last_mut().unwrap() = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatLast(parts.to_vec()), rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// Binary cross-entropy averaged over every element.
    pub fn bce(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        self.check_probs(p, target, "bce")?;
        let n = target.len() as f64;
        let loss: f64 = self
            .value(p)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(p);
        let target = target.data().to_vec();
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, target }, rg))
    }

    /// Categorical cross-entropy against one-hot (or soft) targets, averaged over rows.
    pub fn cce(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        self.check_probs(p, target, "cce")?;
        let rows = (target.len() / target.last_dim()) as f64;
        let loss: f64 = self
            .value(p)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| -y * p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln())
            .sum::<f64>()
            / rows;
        let rg = self.rg(p);
        let target = target.data().to_vec();
        Ok(self.push(Tensor::scalar(loss), Op::Cce { p, target }, rg))
    }

    pub fn mse(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        if self.shape(p) != target.shape() {
            return dim_err("mse", self.shape(p), target.shape());
        }
        self.value(p).ensure_finite("mse prediction")?;
        let n = target.len() as f64;
        let loss = zip_map(self.value(p), target, |a, b| (a - b) * (a - b))
            .iter()
            .sum::<f64>()
            / n;
        let rg = self.rg(p);
        let target = target.data().to_vec();
        Ok(self.push(Tensor::scalar(loss), Op::Mse { p, target }, rg))
    }

    fn check_probs(&self, p: Var, target: &Tensor, op: &'static str) -> Result<()> {
        if self.shape(p) != target.shape() {
            return dim_err(op, self.shape(p), target.shape());
        }
        for &v in self.value(p).data() {
            if !(0.0..=1.0).contains(&v) {
                return Err(NumericsError::Probability { op, value: v });
            }
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // backward

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return dim_err("backward (needs scalar)", out_val.shape(), &[1]);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (din, dout) = (ws[0], ws[1]);
                let rows = g.len() / dout;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                acc(*x, &mut |gx| gemm(g, wv, gx, rows, dout, din, false, true));
                acc(*w, &mut |gw| gemm(xv, g, gw, din, rows, dout, true, false));
                if let Some(b) = b {
                    acc(*b, &mut |gb| {
                        for row in g.chunks(dout) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    });
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| gemm(g, bv, ga, m, n, k, false, true));
                acc(*b, &mut |gb| gemm(av, g, gb, k, m, n, true, false));
            }
            Op::Bmm { a, b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.shape(*b)[2];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for i in 0..batch {
                        gemm(
                            &g[i * m * n..(i + 1) * m * n],
                            &bv[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                            false,
                            true,
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..batch {
                        gemm(
                            &av[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                            true,
                            false,
                        );
                    }
                });
            }
            Op::AdjMatMul { adj, x } => {
                let n = self.shape(*adj)[0];
                let f = *self.shape(*x).last().unwrap();
                let slab = n * f;
                let count = g.len() / slab;
                let av = self.value(*adj).data();
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for i in 0..count {
                        let r = i * slab..(i + 1) * slab;
                        gemm(av, &g[r.clone()], &mut gx[r], n, n, f, true, false);
                    }
                });
                acc(*adj, &mut |ga| {
                    for i in 0..count {
                        let r = i * slab..(i + 1) * slab;
                        gemm(&g[r.clone()], &xv[r], ga, n, f, n, false, true);
                    }
                });
            }
            Op::TransposeLast2(x) => {
                let s = node.value.shape();
                let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                let back = transpose_blocks(g, m, n);
                acc(*x, &mut |gx| add_into(gx, &back));
            }
            Op::Reshape(x) | Op::AddConst(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| {
                for (o, gi) in gx.iter_mut().zip(g) {
                    *o += gi * s;
                }
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let sign = if fault::active(fault::Fault::SigmoidBackwardSignFlip) {
                    -1.0
                } else {
                    1.0
                };
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                        *o += sign * gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                gx[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for ((o, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gi * m;
                }
            }),
            Op::NarrowLast { x, start } => {
                let d = *self.shape(*x).last().unwrap();
                let len = node.value.last_dim();
                acc(*x, &mut |gx| {
                    for (row, grow) in gx.chunks_mut(d).zip(g.chunks(len)) {
                        add_into(&mut row[*start..*start + len], grow);
                    }
                });
            }
            Op::ConcatLast(parts) => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let len = *self.shape(p).last().unwrap();
                    acc(p, &mut |gp| {
                        for (prow, grow) in gp.chunks_mut(len).zip(g.chunks(total)) {
                            add_into(prow, &grow[offset..offset + len]);
                        }
                    });
                    offset += len;
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Bce { p, target } => {
                let n = target.len() as f64;
                let pv = self.value(*p).data();
                acc(*p, &mut |gp| {
                    for ((o, &pi), &y) in gp.iter_mut().zip(pv).zip(target) {
                        if (PROB_EPS..=1.0 - PROB_EPS).contains(&pi) {
                            *o += g[0] * (-(y / pi) + (1.0 - y) / (1.0 - pi)) / n;
                        }
                    }
                });
            }
            Op::Cce { p, target } => {
                let rows = (target.len() / self.value(*p).last_dim()) as f64;
                let pv = self.value(*p).data();
                acc(*p, &mut |gp| {
                    for ((o, &pi), &y) in gp.iter_mut().zip(pv).zip(target) {
                        if (PROB_EPS..=1.0 - PROB_EPS).contains(&pi) {
                            *o -= g[0] * y / pi / rows;
                        }
                    }
                });
            }
            Op::Mse { p, target } => {
                let n = target.len() as f64;
                let pv = self.value(*p).data();
                acc(*p, &mut |gp| {
                    for ((o, &pi), &y) in gp.iter_mut().zip(pv).zip(target) {
                        *o += g[0] * 2.0 * (pi - y) / n;
                    }
                });
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Transposes each trailing `[m, n]` block of `data`.
fn transpose_blocks(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(m * n).zip(out.chunks_mut(m * n)) {
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn linear_backward_by_hand() {
        // y = sum(x·W + b) with x = [[1, 2]], W = [[1],[1]], b = [0]
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.param(t(&[1], &[0.0]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        let l = tape.mean(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn bce_rejects_out_of_domain() {
        let mut tape = Tape::new();
        let p = tape.param(t(&[1], &[1.5]));
        let err = tape.bce(p, &t(&[1], &[1.0])).unwrap_err();
        assert!(matches!(err, NumericsError::Probability { .. }));
    }

    #[test]
    fn bce_clamps_zero_probability() {
        let mut tape = Tape::new();
        let p = tape.param(t(&[1], &[0.0]));
        let l = tape.bce(p, &t(&[1], &[1.0])).unwrap();
        let v = tape.value(l).data()[0];
        assert!((v + PROB_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_rejects_nan() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[f64::NAN]));
        assert!(matches!(tape.sigmoid(x), Err(NumericsError::NonFinite(_))));
    }

    #[test]
    fn narrow_and_concat_are_inverse() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 4], &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let a = tape.narrow_last(x, 0, 1).unwrap();
        let b = tape.narrow_last(x, 1, 3).unwrap();
        let y = tape.concat_last(&[a, b]).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let l = tape.mean(y);
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0 / 8.0));
    }

    #[test]
    fn transpose_last_two() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]));
        let y = tape.transpose_last2(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 2]);
        assert_eq!(tape.value(y).data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1., 2., 3.]));
        assert_eq!(tape.dropout(x, 0.0, &mut rng).unwrap(), x);
        assert!(tape.dropout(x, 1.0, &mut rng).is_err());
    }
}
