use std::collections::HashMap;

use crate::error::{dim_error, NumError, Result};
use crate::kernels;
use crate::params::{ParamId, ParamSet};
use crate::real::Real;
use crate::tensor::{as_matrix, Tensor};

/// Handle of a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation catalogue addressable by kind, see [`Tape::forward_op`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Softmax,
    LogSoftmax,
    Embedding(Vec<usize>),
    Dropout {
        p: f64,
        seed: u64,
    },
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow {
        a: Var,
        bias: Var,
        cols: usize,
    },
    Mul(Var, Var),
    Scale(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        inner: usize,
        sizes: Vec<usize>,
    },
    Slice {
        input: Var,
        outer: usize,
        inner: usize,
        size: usize,
        start: usize,
        len: usize,
    },
    Softmax {
        input: Var,
        cols: usize,
    },
    LogSoftmax {
        input: Var,
        cols: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
        dim: usize,
    },
    Dropout {
        input: Var,
        mask: Vec<F>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    RepeatRows {
        input: Var,
        times: usize,
        cols: usize,
    },
    InterleaveRows {
        inputs: Vec<Var>,
        cols: usize,
    },
    GroupWeightedSum {
        weights: Var,
        values: Var,
        groups: usize,
        group_len: usize,
        cols: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<F>,
        scale: F,
    },
}

#[derive(Debug, Clone)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    grad: Option<Vec<F>>,
    needs_grad: bool,
    op: Op<F>,
}

/// Records operations for one forward pass and replays them in reverse.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumers and a single reverse sweep visits each node once.
#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    bound: HashMap<ParamId, Var>,
    bound_order: Vec<ParamId>,
    no_grad: bool,
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            bound_order: Vec::new(),
            no_grad: false,
        }
    }

    /// A tape for inference: parameters are bound as constants, so nothing
    /// is recorded and no backward rules are kept.
    pub fn no_grad() -> Self {
        Self {
            no_grad: true,
            ..Self::new()
        }
    }

    pub fn is_no_grad(&self) -> bool {
        self.no_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes that carry a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.needs_grad && !matches!(n.op, Op::Leaf))
            .count()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, needs_grad: bool, op: Op<F>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf; it is differentiated iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        let needs = tensor.requires_grad;
        let shape = tensor.shape().to_vec();
        let values = tensor.values().to_vec();
        self.push(shape, values, needs, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<F>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(t))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        self.leaf(Tensor::zeros(shape))
    }

    /// Binds a learned parameter; repeated binds return the same node so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, params: &ParamSet<F>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let t = params.get(id);
        let needs = !self.no_grad;
        let v = self.push(t.shape().to_vec(), t.values().to_vec(), needs, Op::Leaf);
        self.bound.insert(id, v);
        self.bound_order.push(id);
        v
    }

    /// Makes `param(_, id)` return `v` from now on. Used to drive a model's
    /// forward pass from externally supplied leaves, as in gradient checks.
    pub fn bind(&mut self, id: ParamId, v: Var) -> Result<()> {
        if self.bound.contains_key(&id) {
            return Err(NumError::Contract(format!(
                "parameter {} is already bound",
                id.0
            )));
        }
        self.bound.insert(id, v);
        self.bound_order.push(id);
        Ok(())
    }

    pub fn bound_params(&self) -> &[ParamId] {
        &self.bound_order
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        let mut t = Tensor::new(n.shape.clone(), n.value.clone()).expect("valid node");
        t.grad = n.grad.clone();
        t
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_error(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    // ---------------------------------------------------------------------
    // Forward operations
    // ---------------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_error("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], value, needs, Op::MatMul { a, b, m, k, n }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), value, needs, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), value, needs, Op::Sub(a, b)))
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, cols) = as_matrix(self.shape(a));
        if self.value(bias).len() != cols {
            return Err(dim_error("add_row", &[self.shape(a), self.shape(bias)]));
        }
        let b = self.value(bias);
        let mut value = self.value(a).to_vec();
        for row in value.chunks_mut(cols) {
            row.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(
            self.shape(a).to_vec(),
            value,
            needs,
            Op::AddRow { a, bias, cols },
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), value, needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).iter().map(|&x| x * c).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), value, needs, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), value, needs, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| kernels::sigmoid(x)).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), value, needs, Op::Sigmoid(a))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| NumError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(dim_error("concat", &[&base]));
        }
        let mut sizes = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(dim_error("concat", &[&base, s]));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &size) in inputs.iter().zip(&sizes) {
                let block = size * inner;
                value.extend_from_slice(&self.value(v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = inputs.iter().any(|&v| self.needs(v));
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            outer,
            inner,
            sizes,
        };
        Ok(self.push(shape, value, needs, op))
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(NumError::Dimension {
                op: "slice",
                shapes: format!("{s:?} axis {axis} range {start}..{}", start + len),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let size = s[axis];
        let src = self.value(input);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * size + start) * inner;
            value.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let needs = self.needs(input);
        let op = Op::Slice {
            input,
            outer,
            inner,
            size,
            start,
            len,
        };
        Ok(self.push(shape, value, needs, op))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Var {
        let (_, cols) = as_matrix(self.shape(input));
        let value = kernels::softmax_rows(self.value(input), cols);
        let needs = self.needs(input);
        self.push(
            self.shape(input).to_vec(),
            value,
            needs,
            Op::Softmax { input, cols },
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, input: Var) -> Var {
        let (_, cols) = as_matrix(self.shape(input));
        let value = kernels::log_softmax_rows(self.value(input), cols);
        let needs = self.needs(input);
        self.push(
            self.shape(input).to_vec(),
            value,
            needs,
            Op::LogSoftmax { input, cols },
        )
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || ids.is_empty() {
            return Err(dim_error("embedding", &[s]));
        }
        let (vocab, dim) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(NumError::Index {
                op: "embedding",
                index: bad,
                bound: vocab,
            });
        }
        let src = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            value.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let needs = self.needs(table);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
            dim,
        };
        Ok(self.push(vec![ids.len(), dim], value, needs, op))
    }

    /// Inverted dropout: kept entries are scaled by 1/(1-p).
    pub fn dropout<R: rand::Rng + ?Sized>(
        &mut self,
        input: Var,
        p: f64,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::Parameter {
                op: "dropout",
                message: format!("p = {p} outside [0, 1)"),
            });
        }
        if p == 0.0 {
            return Ok(input);
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(input).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let value = zip_map(self.value(input), &mask, |x, m| x * m);
        let needs = self.needs(input);
        Ok(self.push(
            self.shape(input).to_vec(),
            value,
            needs,
            Op::Dropout { input, mask },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).iter().copied().sum();
        let needs = self.needs(input);
        self.push(vec![1], vec![total], needs, Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let total: F = v.iter().copied().sum();
        let mean = total / F::of(v.len() as f64);
        let needs = self.needs(input);
        self.push(vec![1], vec![mean], needs, Op::Mean(input))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.contains(&0) || shape.iter().product::<usize>() != self.value(input).len() {
            return Err(dim_error("reshape", &[self.shape(input), &shape]));
        }
        let value = self.value(input).to_vec();
        let needs = self.needs(input);
        Ok(self.push(shape, value, needs, Op::Reshape(input)))
    }

    /// `[rows, cols]` → `[rows * times, cols]`; row `i * times + j` copies row `i`.
    pub fn repeat_rows(&mut self, input: Var, times: usize) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 2 || times == 0 {
            return Err(dim_error("repeat_rows", &[s]));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(input);
        let mut value = Vec::with_capacity(rows * times * cols);
        for row in src.chunks(cols) {
            for _ in 0..times {
                value.extend_from_slice(row);
            }
        }
        let needs = self.needs(input);
        let op = Op::RepeatRows { input, times, cols };
        Ok(self.push(vec![rows * times, cols], value, needs, op))
    }

    /// Stacks `L` tensors of shape `[B, C]` into `[B * L, C]` with row
    /// `b * L + t` taken from `inputs[t]`, i.e. grouped by batch element.
    pub fn interleave_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| NumError::Contract("interleave of zero tensors".into()))?;
        let s = self.shape(first).to_vec();
        if s.len() != 2 {
            return Err(dim_error("interleave_rows", &[&s]));
        }
        for &v in inputs {
            if self.shape(v) != s.as_slice() {
                return Err(dim_error("interleave_rows", &[&s, self.shape(v)]));
            }
        }
        let (rows, cols) = (s[0], s[1]);
        let steps = inputs.len();
        let mut value = Vec::with_capacity(rows * steps * cols);
        for b in 0..rows {
            for &v in inputs {
                value.extend_from_slice(&self.value(v)[b * cols..(b + 1) * cols]);
            }
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        let op = Op::InterleaveRows {
            inputs: inputs.to_vec(),
            cols,
        };
        Ok(self.push(vec![rows * steps, cols], value, needs, op))
    }

    /// For weights `[B, L]` and values `[B * L, C]` returns `[B, C]` with
    /// `out[b] = Σ_j weights[b, j] · values[b * L + j]`.
    pub fn group_weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (sw, sv) = (self.shape(weights), self.shape(values));
        if sw.len() != 2 || sv.len() != 2 || sw[0] * sw[1] != sv[0] {
            return Err(dim_error("group_weighted_sum", &[sw, sv]));
        }
        let (groups, group_len, cols) = (sw[0], sw[1], sv[1]);
        let (w, x) = (self.value(weights), self.value(values));
        let mut value = vec![F::zero(); groups * cols];
        for b in 0..groups {
            let out = &mut value[b * cols..(b + 1) * cols];
            for j in 0..group_len {
                let wj = w[b * group_len + j];
                let row = &x[(b * group_len + j) * cols..(b * group_len + j + 1) * cols];
                out.iter_mut().zip(row).for_each(|(o, &r)| *o += wj * r);
            }
        }
        let needs = self.needs(weights) || self.needs(values);
        let op = Op::GroupWeightedSum {
            weights,
            values,
            groups,
            group_len,
            cols,
        };
        Ok(self.push(vec![groups, cols], value, needs, op))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t: Vec<Option<usize>> = targets.iter().map(|&i| Some(i)).collect();
        self.nll(logits, &t, true)
    }

    /// Negative log-likelihood over the rows whose target is `Some`; rows with
    /// `None` are padding. Returns the mean when `mean` is set, else the sum.
    pub fn nll(&mut self, logits: Var, targets: &[Option<usize>], mean: bool) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(NumError::Dimension {
                op: "cross_entropy",
                shapes: format!("{s:?} vs {} targets", targets.len()),
            });
        }
        let vocab = s[1];
        if let Some(bad) = targets.iter().flatten().find(|&&i| i >= vocab) {
            return Err(NumError::Index {
                op: "cross_entropy",
                index: *bad,
                bound: vocab,
            });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(NumError::Contract("cross_entropy over zero targets".into()));
        }
        let x = self.value(logits);
        let logp = kernels::log_softmax_rows(x, vocab);
        let mut total = F::zero();
        for (row, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                total -= logp[row * vocab + t];
            }
        }
        let scale = if mean {
            F::one() / F::of(count as f64)
        } else {
            F::one()
        };
        let probs = logp.iter().map(|l| l.exp()).collect();
        let needs = self.needs(logits);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            scale,
        };
        Ok(self.push(vec![1], vec![total * scale], needs, op))
    }

    /// Catalogue dispatch used by property tests and tooling.
    pub fn forward_op(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Mul => 2,
            OpKind::Concat { .. } => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(NumError::Contract(format!(
                "{kind:?} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::Slice { axis, start, len } => self.slice(inputs[0], *axis, *start, *len),
            OpKind::Softmax => Ok(self.softmax(inputs[0])),
            OpKind::LogSoftmax => Ok(self.log_softmax(inputs[0])),
            OpKind::Embedding(ids) => self.embedding(inputs[0], ids),
            OpKind::Dropout { p, seed } => {
                let mut rng = crate::seeded_rng(*seed);
                self.dropout(inputs[0], *p, &mut rng)
            }
            OpKind::Sum => Ok(self.sum(inputs[0])),
            OpKind::Mean => Ok(self.mean(inputs[0])),
        }
    }

    // ---------------------------------------------------------------------
    // Backward
    // ---------------------------------------------------------------------

    /// Propagates d(loss)/d(node) to every node that needs a gradient.
    /// Returns the number of nodes visited.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.value(loss).len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.needs(loss) {
            return Ok(0);
        }
        let seed = [F::one()];
        self.accumulate(loss, |g, _| g[0] += seed[0]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || node.grad.is_none() {
                continue;
            }
            visited += 1;
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = self.nodes[i].grad.take().expect("checked above");
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(visited)
    }

    /// Runs `f` on the gradient buffer of `v` (allocated as zeros on first use).
    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [F], &Self)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let mut buf = self.nodes[v.0]
            .grad
            .take()
            .unwrap_or_else(|| vec![F::zero(); len]);
        f(&mut buf, self);
        self.nodes[v.0].grad = Some(buf);
    }

    fn propagate(&mut self, i: usize, op: &Op<F>, g: &[F]) {
        match op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                self.accumulate(a, |da, t| {
                    kernels::matmul_grad_a(da, g, t.value(b), m, k, n)
                });
                self.accumulate(b, |db, t| {
                    kernels::matmul_grad_b(db, g, t.value(a), m, k, n)
                });
            }
            &Op::Add(a, b) => {
                self.accumulate(a, |d, _| add_into(d, g));
                self.accumulate(b, |d, _| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, |d, _| add_into(d, g));
                self.accumulate(b, |d, _| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            &Op::AddRow { a, bias, cols } => {
                self.accumulate(a, |d, _| add_into(d, g));
                self.accumulate(bias, |d, _| {
                    for row in g.chunks(cols) {
                        add_into(d, row);
                    }
                });
            }
            &Op::Mul(a, b) => {
                self.accumulate(a, |d, t| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(t.value(b)) {
                        *d += g * y;
                    }
                });
                self.accumulate(b, |d, t| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(t.value(a)) {
                        *d += g * x;
                    }
                });
            }
            &Op::Scale(a, c) => {
                self.accumulate(a, |d, _| {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * c)
                });
            }
            &Op::Tanh(a) => {
                self.accumulate(a, |d, t| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(&t.nodes[i].value) {
                        *d += g * (F::one() - y * y);
                    }
                });
            }
            &Op::Sigmoid(a) => {
                self.accumulate(a, |d, t| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(&t.nodes[i].value) {
                        *d += g * y * (F::one() - y);
                    }
                });
            }
            Op::Concat {
                inputs,
                outer,
                inner,
                sizes,
            } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&v, &size) in inputs.iter().zip(sizes) {
                    let block = size * inner;
                    self.accumulate(v, |d, _| {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..][..block];
                            add_into(&mut d[o * block..(o + 1) * block], src);
                        }
                    });
                    offset += size;
                }
            }
            &Op::Slice {
                input,
                outer,
                inner,
                size,
                start,
                len,
            } => {
                self.accumulate(input, |d, _| {
                    for o in 0..outer {
                        let dst = &mut d[(o * size + start) * inner..][..len * inner];
                        add_into(dst, &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            &Op::Softmax { input, cols } => {
                self.accumulate(input, |d, t| {
                    let y = &t.nodes[i].value;
                    for ((drow, grow), yrow) in
                        d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                    {
                        let dot: F = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            &Op::LogSoftmax { input, cols } => {
                self.accumulate(input, |d, t| {
                    let y = &t.nodes[i].value;
                    for ((drow, grow), yrow) in
                        d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                    {
                        let total: F = grow.iter().copied().sum();
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gv - yv.exp() * total;
                        }
                    }
                });
            }
            Op::Embedding { table, ids, dim } => {
                self.accumulate(*table, |d, _| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                });
            }
            Op::Dropout { input, mask } => {
                self.accumulate(*input, |d, _| {
                    for ((d, &g), &m) in d.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                });
            }
            &Op::Sum(a) => {
                self.accumulate(a, |d, _| d.iter_mut().for_each(|d| *d += g[0]));
            }
            &Op::Mean(a) => {
                self.accumulate(a, |d, _| {
                    let share = g[0] / F::of(d.len() as f64);
                    d.iter_mut().for_each(|d| *d += share);
                });
            }
            &Op::Reshape(a) => {
                self.accumulate(a, |d, _| add_into(d, g));
            }
            &Op::RepeatRows { input, times, cols } => {
                self.accumulate(input, |d, _| {
                    for (r, drow) in d.chunks_mut(cols).enumerate() {
                        for j in 0..times {
                            add_into(drow, &g[(r * times + j) * cols..][..cols]);
                        }
                    }
                });
            }
            Op::InterleaveRows { inputs, cols } => {
                let steps = inputs.len();
                for (tpos, &v) in inputs.iter().enumerate() {
                    self.accumulate(v, |d, _| {
                        for (b, drow) in d.chunks_mut(*cols).enumerate() {
                            add_into(drow, &g[(b * steps + tpos) * cols..][..*cols]);
                        }
                    });
                }
            }
            &Op::GroupWeightedSum {
                weights,
                values,
                groups,
                group_len,
                cols,
            } => {
                self.accumulate(weights, |d, t| {
                    let x = t.value(values);
                    for b in 0..groups {
                        let grow = &g[b * cols..(b + 1) * cols];
                        for j in 0..group_len {
                            let row = &x[(b * group_len + j) * cols..][..cols];
                            d[b * group_len + j] +=
                                grow.iter().zip(row).map(|(&a, &c)| a * c).sum();
                        }
                    }
                });
                self.accumulate(values, |d, t| {
                    let w = t.value(weights);
                    for b in 0..groups {
                        let grow = &g[b * cols..(b + 1) * cols];
                        for j in 0..group_len {
                            let wj = w[b * group_len + j];
                            let drow = &mut d[(b * group_len + j) * cols..][..cols];
                            drow.iter_mut().zip(grow).for_each(|(d, &gv)| *d += wj * gv);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                let vocab = probs.len() / targets.len();
                let factor = g[0] * *scale;
                self.accumulate(*logits, |d, _| {
                    for (row, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let drow = &mut d[row * vocab..(row + 1) * vocab];
                        let prow = &probs[row * vocab..(row + 1) * vocab];
                        for (dv, &p) in drow.iter_mut().zip(prow) {
                            *dv += factor * p;
                        }
                        drow[*t] -= factor;
                    }
                });
            }
        }
    }

    /// Adds the gradients of every bound parameter into `params` and returns
    /// the ids touched. Bound parameters that received no gradient get zeros.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet<F>) -> Vec<ParamId> {
        for &id in &self.bound_order {
            let v = self.bound[&id];
            let node = &self.nodes[v.0];
            let t = params.get_mut(id);
            match &node.grad {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![F::zero(); node.value.len()]),
            }
        }
        self.bound_order.clone()
    }
}

fn zip_map<F: Real>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[inline]
fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape<f64>, shape: Vec<usize>, v: &[f64]) -> Var {
        tape.leaf(Tensor::from_f64(shape, v).unwrap().with_grad())
    }

    #[test]
    fn matmul_shape_rule() {
        let mut t = Tape::<f64>::new();
        let a = t.zeros(vec![2, 3]);
        let b = t.zeros(vec![3, 4]);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 4]);
    }

    #[test]
    fn matmul_mismatch_names_op_and_shapes() {
        let mut t = Tape::<f64>::new();
        let a = t.zeros(vec![2, 3]);
        let b = t.zeros(vec![4, 4]);
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 4]"),
            "{msg}"
        );
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::<f64>::new();
        let x = t.zeros(vec![3]);
        let y = t.softmax(x);
        for &p in t.value(y) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_at_zero_and_its_gradient() {
        let mut t = Tape::<f64>::new();
        let x = leaf(&mut t, vec![1], &[0.0]);
        let y = t.tanh(x);
        assert_eq!(t.value(y), &[0.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_vocab() {
        let mut t = Tape::<f64>::new();
        let x = t.zeros(vec![3, 4]);
        let l = t.cross_entropy(x, &[0, 3, 1]).unwrap();
        assert!((t.value(l)[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_logits() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(vec![1, 2], vec![10.0, -10.0]).unwrap();
        let l = t.cross_entropy(x, &[0]).unwrap();
        // -ln(e^10 / (e^10 + e^-10)) = ln(1 + e^-20)
        let expected = (-20f64).exp().ln_1p();
        assert!((t.value(l)[0] - expected).abs() < 1e-20);
        assert!((t.value(l)[0] - 2.061_153_6e-9).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_margin_limit() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 10.0, 20.0, 40.0] {
            let mut t = Tape::<f64>::new();
            let x = t
                .constant(vec![2, 3], vec![margin, 0.0, 0.0, 0.0, margin, 0.0])
                .unwrap();
            let l = t.cross_entropy(x, &[0, 1]).unwrap();
            let v = t.value(l)[0];
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-16);
    }

    #[test]
    fn cross_entropy_index_error() {
        let mut t = Tape::<f64>::new();
        let x = t.zeros(vec![2, 4]);
        assert!(matches!(
            t.cross_entropy(x, &[0, 4]),
            Err(NumError::Index {
                index: 4,
                bound: 4,
                ..
            })
        ));
    }

    #[test]
    fn backward_of_sum_and_square() {
        let mut t = Tape::<f64>::new();
        let w = leaf(&mut t, vec![3], &[0.5, -1.0, 2.0]);
        let s = t.sum(w);
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::<f64>::new();
        let w = leaf(&mut t, vec![2], &[1.0, 2.0]);
        let sq = t.mul(w, w).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::<f64>::new();
        let w = leaf(&mut t, vec![2], &[1.0, 2.0]);
        assert!(matches!(t.backward(w), Err(NumError::Contract(_))));
    }

    #[test]
    fn dropout_probability_validated() {
        let mut t = Tape::<f64>::new();
        let x = t.zeros(vec![4]);
        let mut rng = crate::seeded_rng(0);
        assert!(t.dropout(x, 1.0, &mut rng).is_err());
        assert!(t.dropout(x, -0.1, &mut rng).is_err());
        assert!(t.dropout(x, 0.5, &mut rng).is_ok());
    }

    #[test]
    fn ops_without_grad_are_not_recorded() {
        let mut t = Tape::<f64>::new();
        let a = t.zeros(vec![2, 2]);
        let b = t.tanh(a);
        let _ = t.add(a, b).unwrap();
        assert_eq!(t.recorded_ops(), 0);
        let w = leaf(&mut t, vec![2, 2], &[1.0; 4]);
        let _ = t.add(a, w).unwrap();
        assert_eq!(t.recorded_ops(), 1);
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let mut params = ParamSet::<f64>::new();
        let id = params.register(
            "w",
            Tensor::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let mut t = Tape::no_grad();
        let w = t.param(&params, id);
        let y = t.matmul(w, w).unwrap();
        let s = t.sum(y);
        assert_eq!(t.value(s), &[54.0]);
        assert_eq!(t.recorded_ops(), 0);
        assert_eq!(t.backward(s).unwrap(), 0);
    }

    #[test]
    fn backward_visits_each_node_once() {
        let mut t = Tape::<f64>::new();
        let w = leaf(&mut t, vec![2], &[1.0, 2.0]);
        let a = t.tanh(w);
        let b = t.mul(a, w).unwrap();
        let c = t.add(b, a).unwrap();
        let s = t.sum(c);
        // w, a, b, c, s
        assert_eq!(t.backward(s).unwrap(), 5);
    }

    #[test]
    fn interleave_and_group_sum_layout() {
        let mut t = Tape::<f64>::new();
        let x0 = t.constant(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let x1 = t.constant(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let s = t.interleave_rows(&[x0, x1]).unwrap();
        assert_eq!(t.value(s), &[1.0, 3.0, 2.0, 4.0]);
        let w = t.constant(vec![2, 2], vec![0.5, 0.5, 1.0, 0.0]).unwrap();
        let c = t.group_weighted_sum(w, s).unwrap();
        assert_eq!(t.value(c), &[2.0, 2.0]);
    }
}
