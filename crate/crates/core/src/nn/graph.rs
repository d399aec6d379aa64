//! Dynamically recorded reverse-mode autodiff.
//!
//! A [`Graph`] borrows a [`ParamSet`] immutably, records every operation as a
//! node in execution order, and produces a fresh [`Gradients`] buffer on
//! [`Graph::backward`]. Parameters are never copied into the graph: parameter nodes
//! read straight from the borrowed set, so many graphs over the same
//! parameters can run on different threads.

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamId, ParamSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Slice(Var, usize),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    Row(Var, usize),
    SoftmaxXent { logits: Var, target: usize },
    Sum(Var),
    AddN(Vec<Var>),
    MaxOver { inputs: Vec<Var>, argmax: Vec<usize> },
    ClipBall { input: Var, radius: f64, norm: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    // Empty for parameter nodes; their value lives in the borrowed ParamSet.
    value: Tensor,
    // Softmax probabilities for cross-entropy nodes.
    aux: Vec<f64>,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_of(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Tensor::scalar(0.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::nn::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `w × x` for a matrix `w` of shape `[m, k]` and vector `x` of length `k`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let wt = self.value(w);
        let (m, k) = wt.dims2()?;
        let xt = self.value(x);
        if xt.shape() != [k] {
            return Err(Error::Dimension(format!(
                "matvec of {:?} and {:?}",
                wt.shape(),
                xt.shape()
            )));
        }
        let xd = xt.data();
        let out: Vec<f64> = (0..m)
            .map(|i| {
                wt.data()[i * k..(i + 1) * k]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(Op::MatVec(w, x), Tensor::vector(out)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let at = self.value(a);
        let data = at.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(at.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Scale(a, factor), out)
    }

    fn unary(&mut self, a: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let at = self.value(a);
        let data = at.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(at.shape().to_vec(), data).expect("shape preserved");
        self.push(op, out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Contiguous slice `[start, start + len)` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let at = self.value(a);
        if at.shape().len() != 1 || start + len > at.len() || len == 0 {
            return Err(Error::Dimension(format!(
                "slice [{start}, {}) of {:?}",
                start + len,
                at.shape()
            )));
        }
        let out = Tensor::vector(at.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice(a, start), out))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero vectors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(Error::Dimension(format!("concat of non-vector {:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Row gather from a `[V, d]` table, producing `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::Dimension("gather with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    index: id,
                    size: v,
                    context: "embedding lookup",
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.push(Op::Gather(table, ids.to_vec()), out))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = t.dims2()?;
        if i >= r {
            return Err(Error::Index {
                index: i,
                size: r,
                context: "matrix row",
            });
        }
        let out = Tensor::vector(t.row(i).to_vec());
        Ok(self.push(Op::Row(a, i), out))
    }

    /// `-log softmax(logits)[target]`, stabilized by max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 1 || t.len() < 2 {
            return Err(Error::Dimension(format!(
                "cross-entropy needs a vector of >= 2 logits, got {:?}",
                t.shape()
            )));
        }
        if target >= t.len() {
            return Err(Error::Index {
                index: target,
                size: t.len(),
                context: "cross-entropy target",
            });
        }
        let probs = softmax(t.data());
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - t.data()[target];
        let v = self.push(Op::SoftmaxXent { logits, target }, Tensor::scalar(loss));
        self.nodes[v.0].aux = probs;
        Ok(v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("add_n of zero terms".into()))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            self.same_shape(first, p, "add_n")?;
            for (a, b) in acc.data_mut().iter_mut().zip(self.value(p).data()) {
                *a += b;
            }
        }
        Ok(self.push(Op::AddN(parts.to_vec()), acc))
    }

    /// Elementwise maximum across same-shaped nodes (max-pooling over time).
    /// Ties resolve to the earliest input.
    pub fn max_over(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Dimension("max over zero inputs".into()))?;
        let mut best = self.value(first).clone();
        let mut argmax = vec![0usize; best.len()];
        for (k, &p) in inputs.iter().enumerate().skip(1) {
            self.same_shape(first, p, "max_over")?;
            for (j, &x) in self.value(p).data().iter().enumerate() {
                if x > best.data()[j] {
                    best.data_mut()[j] = x;
                    argmax[j] = k;
                }
            }
        }
        Ok(self.push(
            Op::MaxOver {
                inputs: inputs.to_vec(),
                argmax,
            },
            best,
        ))
    }

    /// Projection onto the L2 ball of `radius`: `a * min(1, radius / ||a||)`.
    ///
    /// At `||a|| == radius` the backward pass uses the scaled branch.
    pub fn clip_to_ball(&mut self, a: Var, radius: f64) -> Result<Var> {
        if !(radius > 0.0) {
            return Err(Error::Contract(format!("clip radius must be positive, got {radius}")));
        }
        let at = self.value(a);
        let norm = at.l2_norm();
        let factor = if norm >= radius && norm > 0.0 {
            radius / norm
        } else {
            1.0
        };
        let data = at.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(
            Op::ClipBall {
                input: a,
                radius,
                norm,
            },
            out,
        ))
    }

    /// Reverse pass from a scalar `loss`. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this graph; build a new graph per pass".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut pgrads = self.params.zero_grads();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let (m, k) = at.dims2()?;
                    let (_, n) = bt.dims2()?;
                    let (ad, bd) = (at.data().to_vec(), bt.data().to_vec());
                    {
                        let ga = slot(&self.nodes, &mut grads, &mut pgrads, *a);
                        for r in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for c in 0..n {
                                    s += g[r * n + c] * bd[p * n + c];
                                }
                                ga[r * k + p] += s;
                            }
                        }
                    }
                    let gb = slot(&self.nodes, &mut grads, &mut pgrads, *b);
                    for r in 0..m {
                        for p in 0..k {
                            let av = ad[r * k + p];
                            for c in 0..n {
                                gb[p * n + c] += av * g[r * n + c];
                            }
                        }
                    }
                }
                Op::MatVec(w, x) => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let (m, k) = wt.dims2()?;
                    let xd = xt.data();
                    let wd = wt.data();
                    let mut gx = vec![0.0; k];
                    for r in 0..m {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for (gxj, wv) in gx.iter_mut().zip(&wd[r * k..(r + 1) * k]) {
                            *gxj += gr * wv;
                        }
                    }
                    let gw = slot(&self.nodes, &mut grads, &mut pgrads, *w);
                    for r in 0..m {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for (gwv, xv) in gw[r * k..(r + 1) * k].iter_mut().zip(xd) {
                            *gwv += gr * xv;
                        }
                    }
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *x), &gx);
                }
                Op::Add(a, b) => {
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *a), &g);
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *b), &g);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *a), &ga);
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *b), &gb);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *a), &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, y)| gv * y * (1.0 - y))
                        .collect();
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *a), &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, y)| gv * (1.0 - y * y))
                        .collect();
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *a), &ga);
                }
                Op::Slice(a, start) => {
                    let ga = slot(&self.nodes, &mut grads, &mut pgrads, *a);
                    add_into(&mut ga[*start..*start + g.len()], &g);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(
                            slot(&self.nodes, &mut grads, &mut pgrads, p),
                            &g[offset..offset + n],
                        );
                        offset += n;
                    }
                }
                Op::Gather(table, ids) => {
                    let d = self.value(*table).dims2()?.1;
                    let gt = slot(&self.nodes, &mut grads, &mut pgrads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
                Op::Row(a, r) => {
                    let d = g.len();
                    let ga = slot(&self.nodes, &mut grads, &mut pgrads, *a);
                    add_into(&mut ga[r * d..(r + 1) * d], &g);
                }
                Op::SoftmaxXent { logits, target } => {
                    let mut gl: Vec<f64> = node.aux.iter().map(|p| p * g[0]).collect();
                    gl[*target] -= g[0];
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *logits), &gl);
                }
                Op::Sum(a) => {
                    let ga = slot(&self.nodes, &mut grads, &mut pgrads, *a);
                    ga.iter_mut().for_each(|v| *v += g[0]);
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        add_into(slot(&self.nodes, &mut grads, &mut pgrads, p), &g);
                    }
                }
                Op::MaxOver { inputs, argmax } => {
                    for (j, &k) in argmax.iter().enumerate() {
                        slot(&self.nodes, &mut grads, &mut pgrads, inputs[k])[j] += g[j];
                    }
                }
                Op::ClipBall {
                    input,
                    radius,
                    norm,
                } => {
                    let a = self.value(*input).data();
                    let ga: Vec<f64> = if *norm >= *radius && *norm > 0.0 {
                        let dot: f64 = a.iter().zip(&g).map(|(x, y)| x * y).sum();
                        let n2 = norm * norm;
                        a.iter()
                            .zip(&g)
                            .map(|(x, gv)| radius / norm * (gv - x * dot / n2))
                            .collect()
                    } else {
                        g.clone()
                    };
                    add_into(slot(&self.nodes, &mut grads, &mut pgrads, *input), &ga);
                }
            }
        }
        Ok(pgrads)
    }
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    pgrads: &'a mut Gradients,
    v: Var,
) -> &'a mut [f64] {
    match nodes[v.0].op {
        Op::Param(id) => pgrads.tensors[id.0].data_mut(),
        _ => {
            let n = nodes[v.0].value.len();
            grads[v.0].get_or_insert_with(|| vec![0.0; n])
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
