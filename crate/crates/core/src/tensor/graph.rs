//! Tape-based reverse-mode autodiff.
//!
//! Every primitive appends one node to the tape; node order is therefore a
//! topological order and `backward` is a single reverse sweep. A graph is
//! built per batch and thrown away afterwards.

use super::conv::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};
use crate::parallel;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Zero mean, unit variance.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn uninitialized() -> Self {
        RunningStats {
            mean: Vec::new(),
            var: Vec::new(),
        }
    }

    pub fn is_initialized(&self) -> bool {
        !self.mean.is_empty() && self.mean.len() == self.var.len()
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        if !self.is_initialized() {
            *self = RunningStats::new(batch.mean.len());
        }
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
    }
}

/// Batch mean and population variance per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    Abs(Var),
    Gap(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<f64>,
    },
    Cosine {
        a: Var,
        b: Var,
        eps: f64,
        norms_a: Vec<f64>,
        norms_b: Vec<f64>,
    },
    OffDiagAbsSum {
        input: Var,
        include_diag: bool,
    },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. Gradients accumulate into it iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        tensor.ensure_finite("graph input")?;
        let needs_grad = tensor.requires_grad();
        Ok(self.push(tensor, Op::Leaf, needs_grad))
    }

    pub fn param(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Which side of its kink every relu/abs input element sits on, in tape
    /// order. Two evaluations with equal patterns lie on one linear piece of
    /// every non-smooth primitive.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            let (input, strict) = match n.op {
                Op::Relu(x) => (x, true),
                Op::Abs(x) | Op::OffDiagAbsSum { input: x, .. } => (x, false),
                _ => continue,
            };
            let data = self.nodes[input.0].value.data();
            out.extend(data.iter().map(|&v| if strict { v > 0.0 } else { v >= 0.0 }));
        }
        out
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        let geo = ConvGeometry::new(self.shape(input), self.shape(kernel), dilation, groups)?;
        if let Some(b) = bias {
            if self.shape(b) != [geo.out_channels] {
                return Err(Error::Dimension(format!(
                    "conv bias shape {:?}, expected [{}]",
                    self.shape(b),
                    geo.out_channels
                )));
            }
        }
        let out = conv::forward(
            &geo,
            self.data(input),
            self.data(kernel),
            bias.map(|b| self.data(b)),
        );
        let value = Tensor::new(&[geo.batch, geo.out_channels, geo.len], out)?;
        let ng = self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
                geo,
            },
            ng,
        ))
    }

    /// Batch normalisation over a `[B, C, T]` input.
    ///
    /// In train mode statistics come from the batch (jointly over B and T,
    /// population variance) and are returned so the caller can update its
    /// running statistics. In eval mode `running` is used as is.
    pub fn batch_norm_1d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        mode: Mode,
        epsilon: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        if epsilon <= 0.0 {
            return Err(Error::Config("batch-norm epsilon must be positive".into()));
        }
        let shape = self.shape(input).to_vec();
        if shape.len() != 3 {
            return Err(Error::Dimension(format!("batch_norm_1d expects [B, C, T], got {shape:?}")));
        }
        let (b, c, t) = (shape[0], shape[1], shape[2]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Dimension(format!(
                "batch-norm affine params must have shape [{c}]"
            )));
        }
        let x = self.data(input);
        let (mean, var) = match mode {
            Mode::Train => {
                let m = (b * t) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += x[(bi * c + ch) * t..(bi * c + ch + 1) * t].iter().sum::<f64>();
                    }
                    let mu = s / m;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        for &v in &x[(bi * c + ch) * t..(bi * c + ch + 1) * t] {
                            ss += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = ss / m;
                }
                (mean, var)
            }
            Mode::Eval => {
                if !running.is_initialized() {
                    return Err(Error::State(
                        "eval-mode batch norm with uninitialised running statistics".into(),
                    ));
                }
                if running.mean.len() != c {
                    return Err(Error::Dimension(format!(
                        "running statistics have {} channels, input has {c}",
                        running.mean.len()
                    )));
                }
                (running.mean.clone(), running.var.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let g = self.data(gamma);
        let be = self.data(beta);
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * t;
                for i in off..off + t {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + be[ch];
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let ng = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let train = mode == Mode::Train;
        let var_out = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            ng,
        );
        Ok((var_out, train.then_some(BatchStats { mean, var })))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let data = self.data(input).iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(self.shape(input), data).expect("same shape");
        let ng = self.needs(input);
        self.push(value, Op::Relu(input), ng)
    }

    pub fn abs(&mut self, input: Var) -> Var {
        let data = self.data(input).iter().map(|v| v.abs()).collect();
        let value = Tensor::new(self.shape(input), data).expect("same shape");
        let ng = self.needs(input);
        self.push(value, Op::Abs(input), ng)
    }

    /// Mean over the time axis: `[B, C, T] -> [B, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 3 {
            return Err(Error::Dimension(format!("global_avg_pool expects [B, C, T], got {shape:?}")));
        }
        let t = shape[2];
        let data = self
            .data(input)
            .chunks(t)
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        let value = Tensor::new(&shape[..2], data)?;
        let ng = self.needs(input);
        Ok(self.push(value, Op::Gap(input), ng))
    }

    /// `x W^T + b` for `x: [B, C]`, `W: [K, C]`, `b: [K]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return Err(Error::Dimension(format!(
                "dense shapes incompatible: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (b, c, k) = (xs[0], xs[1], ws[0]);
        let x = self.data(input);
        let w = self.data(weight);
        let bb = self.data(bias);
        let mut out = vec![0.0; b * k];
        for i in 0..b {
            for j in 0..k {
                let mut acc = bb[j];
                for (xv, wv) in x[i * c..(i + 1) * c].iter().zip(&w[j * c..(j + 1) * c]) {
                    acc += xv * wv;
                }
                out[i * k + j] = acc;
            }
        }
        let value = Tensor::new(&[b, k], out)?;
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            ng,
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[true class]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || targets.shape() != ls.as_slice() {
            return Err(Error::Dimension(format!(
                "logits {ls:?} and targets {:?} must both be [B, classes]",
                targets.shape()
            )));
        }
        let (b, k) = (ls[0], ls[1]);
        for row in targets.data().chunks(k) {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != k - 1 {
                return Err(Error::Input(format!("target row {row:?} is not one-hot")));
            }
        }
        let z = self.data(logits);
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &z[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - m).exp();
                s += *p;
            }
            let log_s = s.ln();
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= s;
            }
            let cls = targets.data()[i * k..(i + 1) * k]
                .iter()
                .position(|&v| v == 1.0)
                .expect("validated one-hot");
            loss += -(row[cls] - m - log_s);
        }
        let value = Tensor::scalar(loss / b as f64);
        let ng = self.needs(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCe {
                logits,
                probs,
                targets: targets.data().to_vec(),
            },
            ng,
        ))
    }

    /// Cosine similarity between all rows of `a` and all rows of `b`.
    ///
    /// Accepts `[C, T]` pairs (result `[C, C]`) or batched `[B, C, T]` pairs
    /// (result `[B, C, C]`). Entry `(i, j)` is
    /// `<a_i, b_j> / max(|a_i| |b_j|, epsilon)`; a zero row yields zeros.
    pub fn cosine_similarity_matrix(&mut self, a: Var, b: Var, epsilon: f64) -> Result<Var> {
        if epsilon <= 0.0 {
            return Err(Error::Config("cosine epsilon must be positive".into()));
        }
        let shape = self.shape(a).to_vec();
        if shape != self.shape(b) || !(shape.len() == 2 || shape.len() == 3) {
            return Err(Error::Dimension(format!(
                "cosine similarity needs equal [C, T] or [B, C, T] shapes, got {shape:?} and {:?}",
                self.shape(b)
            )));
        }
        let (nb, c, t) = batch_dims(&shape);
        let norms_a = row_norms(self.data(a), t);
        let norms_b = row_norms(self.data(b), t);
        let da = self.data(a);
        let db = self.data(b);
        let blocks = parallel::map_indexed(nb, |s| {
            let mut m = vec![0.0; c * c];
            for i in 0..c {
                let ai = &da[(s * c + i) * t..(s * c + i + 1) * t];
                for j in 0..c {
                    let bj = &db[(s * c + j) * t..(s * c + j + 1) * t];
                    let dot: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                    m[i * c + j] = dot / (norms_a[s * c + i] * norms_b[s * c + j]).max(epsilon);
                }
            }
            m
        });
        let out_shape: Vec<usize> = if shape.len() == 2 { vec![c, c] } else { vec![nb, c, c] };
        let value = Tensor::new(&out_shape, blocks.concat())?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            value,
            Op::Cosine {
                a,
                b,
                eps: epsilon,
                norms_a,
                norms_b,
            },
            ng,
        ))
    }

    /// Sum of absolute off-diagonal entries of each square matrix.
    ///
    /// `[C, C] -> scalar`, `[B, C, C] -> [B]`. With `include_diag` the
    /// diagonal is summed as well.
    pub fn offdiag_abs_sum(&mut self, input: Var, include_diag: bool) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (nb, c) = match shape.as_slice() {
            [r, c] if r == c => (1, *c),
            [b, r, c] if r == c => (*b, *c),
            _ => {
                return Err(Error::Dimension(format!(
                    "offdiag_abs_sum needs square matrices, got {shape:?}"
                )))
            }
        };
        let x = self.data(input);
        let sums: Vec<f64> = (0..nb)
            .map(|s| {
                let mut acc = 0.0;
                for i in 0..c {
                    for j in 0..c {
                        if include_diag || i != j {
                            acc += x[(s * c + i) * c + j].abs();
                        }
                    }
                }
                acc
            })
            .collect();
        let value = if shape.len() == 2 {
            Tensor::scalar(sums[0])
        } else {
            Tensor::from_vec(sums)
        };
        let ng = self.needs(input);
        Ok(self.push(value, Op::OffDiagAbsSum { input, include_diag }, ng))
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 3 {
            return Err(Error::Dimension("concat_channels expects [B, C, T] inputs".into()));
        }
        let (b, t) = (s0[0], s0[2]);
        let mut total_c = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != 3 || s[0] != b || s[2] != t {
                return Err(Error::Dimension(format!(
                    "cannot concat {s:?} with {s0:?} along channels"
                )));
            }
            total_c += s[1];
        }
        let mut out = Vec::with_capacity(b * total_c * t);
        for bi in 0..b {
            for &v in inputs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.data(v)[bi * c * t..(bi + 1) * c * t]);
            }
        }
        let value = Tensor::new(&[b, total_c, t], out)?;
        let ng = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(value, Op::Concat(inputs.to_vec()), ng))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.data(input).iter().sum();
        let ng = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum(input), ng)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let d = self.data(input);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let ng = self.needs(input);
        self.push(Tensor::scalar(s), Op::Mean(input), ng)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let data = self.data(input).iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(input), data).expect("same shape");
        let ng = self.needs(input);
        self.push(value, Op::Scale(input, factor), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(Var, Var) -> Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, op(a, b), ng))
    }

    /// Reverse sweep from a single-element `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                self.nodes[id].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernel,
                bias,
                geo,
            } => {
                let grads = conv::backward(
                    geo,
                    self.data(*input),
                    self.data(*kernel),
                    g,
                    self.needs(*input),
                    self.needs(*kernel),
                    bias.is_some_and(|b| self.needs(b)),
                );
                if let Some(gi) = grads.input {
                    send(*input, gi);
                }
                if let Some(gk) = grads.kernel {
                    send(*kernel, gk);
                }
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    send(*b, gb);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = self.shape(*input);
                let (b, c, t) = (s[0], s[1], s[2]);
                let gam = self.data(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * t;
                        for i in off..off + t {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                            let dh = g[i] * gam[ch];
                            sum_dxhat[ch] += dh;
                            sum_dxhat_xhat[ch] += dh * xhat[i];
                        }
                    }
                }
                if self.needs(*input) {
                    let mut dx = vec![0.0; g.len()];
                    let m = (b * t) as f64;
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * t;
                            for i in off..off + t {
                                let dh = g[i] * gam[ch];
                                dx[i] = if *train {
                                    inv_std[ch] / m
                                        * (m * dh - sum_dxhat[ch] - xhat[i] * sum_dxhat_xhat[ch])
                                } else {
                                    dh * inv_std[ch]
                                };
                            }
                        }
                    }
                    send(*input, dx);
                }
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                let dx = g
                    .iter()
                    .zip(xd)
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                send(*x, dx);
            }
            Op::Abs(x) => {
                let xd = self.data(*x);
                let dx = g.iter().zip(xd).map(|(&gi, &xi)| gi * sign(xi)).collect();
                send(*x, dx);
            }
            Op::Gap(x) => {
                let t = self.shape(*x)[2];
                let mut dx = Vec::with_capacity(g.len() * t);
                for &gi in g {
                    dx.extend(std::iter::repeat_n(gi / t as f64, t));
                }
                send(*x, dx);
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let xs = self.shape(*input);
                let (b, c) = (xs[0], xs[1]);
                let k = self.shape(*weight)[0];
                let x = self.data(*input);
                let w = self.data(*weight);
                if self.needs(*input) {
                    let mut dx = vec![0.0; b * c];
                    for i in 0..b {
                        for j in 0..k {
                            let gij = g[i * k + j];
                            for (d, wv) in dx[i * c..(i + 1) * c].iter_mut().zip(&w[j * c..(j + 1) * c]) {
                                *d += gij * wv;
                            }
                        }
                    }
                    send(*input, dx);
                }
                if self.needs(*weight) {
                    let mut dw = vec![0.0; k * c];
                    for i in 0..b {
                        for j in 0..k {
                            let gij = g[i * k + j];
                            for (d, xv) in dw[j * c..(j + 1) * c].iter_mut().zip(&x[i * c..(i + 1) * c]) {
                                *d += gij * xv;
                            }
                        }
                    }
                    send(*weight, dw);
                }
                let mut db = vec![0.0; k];
                for i in 0..b {
                    for j in 0..k {
                        db[j] += g[i * k + j];
                    }
                }
                send(*bias, db);
            }
            Op::SoftmaxCe {
                logits,
                probs,
                targets,
            } => {
                let b = self.shape(*logits)[0] as f64;
                let dz = probs
                    .iter()
                    .zip(targets)
                    .map(|(p, y)| g[0] * (p - y) / b)
                    .collect();
                send(*logits, dz);
            }
            Op::Cosine {
                a,
                b,
                eps,
                norms_a,
                norms_b,
            } => {
                let shape = self.shape(*a);
                let (nb, c, t) = batch_dims(shape);
                let da = self.data(*a);
                let db = self.data(*b);
                let eps = *eps;
                let parts = parallel::map_indexed(nb, |s| {
                    let mut ga = vec![0.0; c * t];
                    let mut gb = vec![0.0; c * t];
                    for i in 0..c {
                        let ai = &da[(s * c + i) * t..(s * c + i + 1) * t];
                        let na = norms_a[s * c + i];
                        for j in 0..c {
                            let gij = g[(s * c + i) * c + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let bj = &db[(s * c + j) * t..(s * c + j + 1) * t];
                            let nbj = norms_b[s * c + j];
                            let den = (na * nbj).max(eps);
                            let dot: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                            // d/da_i = b_j / den - dot / (|a_i|^3 |b_j|) * a_i; a clamped
                            // denominator is a constant.
                            let (ca, cb) = if na * nbj > eps {
                                (dot * nbj / (den * den * na), dot * na / (den * den * nbj))
                            } else {
                                (0.0, 0.0)
                            };
                            for k in 0..t {
                                ga[i * t + k] += gij * (bj[k] / den - ca * ai[k]);
                                gb[j * t + k] += gij * (ai[k] / den - cb * bj[k]);
                            }
                        }
                    }
                    (ga, gb)
                });
                let mut ga = Vec::with_capacity(da.len());
                let mut gb = Vec::with_capacity(db.len());
                for (pa, pb) in parts {
                    ga.extend_from_slice(&pa);
                    gb.extend_from_slice(&pb);
                }
                if a == b {
                    ga.iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                    send(*a, ga);
                } else {
                    send(*a, ga);
                    send(*b, gb);
                }
            }
            Op::OffDiagAbsSum { input, include_diag } => {
                let shape = self.shape(*input);
                let c = *shape.last().expect("square");
                let x = self.data(*input);
                let mut dx = vec![0.0; x.len()];
                for (idx, (d, &v)) in dx.iter_mut().zip(x).enumerate() {
                    let s = idx / (c * c);
                    let i = (idx / c) % c;
                    let j = idx % c;
                    if *include_diag || i != j {
                        *d = g[s] * sign(v);
                    }
                }
                send(*input, dx);
            }
            Op::Concat(inputs) => {
                let s = node.value.shape();
                let (b, total_c, t) = (s[0], s[1], s[2]);
                let mut offset = 0;
                for &v in inputs {
                    let c = self.shape(v)[1];
                    if self.needs(v) {
                        let mut dv = Vec::with_capacity(b * c * t);
                        for bi in 0..b {
                            let start = (bi * total_c + offset) * t;
                            dv.extend_from_slice(&g[start..start + c * t]);
                        }
                        send(v, dv);
                    }
                    offset += c;
                }
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                send(*x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Scale(x, f) => {
                send(*x, g.iter().map(|v| v * f).collect());
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let ga: Vec<f64> = g.iter().zip(db).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = g.iter().zip(da).map(|(g, x)| g * x).collect();
                send(*a, ga);
                send(*b, gb);
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn batch_dims(shape: &[usize]) -> (usize, usize, usize) {
    if shape.len() == 2 {
        (1, shape[0], shape[1])
    } else {
        (shape[0], shape[1], shape[2])
    }
}

fn row_norms(data: &[f64], t: usize) -> Vec<f64> {
    data.chunks(t)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}
