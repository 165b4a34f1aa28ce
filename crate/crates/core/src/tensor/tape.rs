use rand::Rng;

use super::kernels::{gemm, sigmoid, split_axis};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a[..., k] · b[k, n]`
    MatMul(Var, Var),
    /// `a[N, m, k] · b[N, k, n]`, or `· b[N, n, k]ᵀ` when transposed.
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Softmax { x: Var, axis: usize },
    /// aux = normalized values, then one inverse std per row.
    LayerNorm { x: Var, gain: Var, bias: Var },
    CausalConv { x: Var, weight: Var, bias: Option<Var>, dilation: usize },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Select { x: Var, axis: usize, index: usize },
    Stack { inputs: Vec<Var>, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Repeat { x: Var, axis: usize, count: usize },
    Sum(Var),
    Mean(Var),
    /// aux = activated gates `[B, 4H]`, then `tanh(c)` `[B, H]`.
    LstmCell { gates: Var, c_prev: Var },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
    aux: Vec<f64>,
}

/// Records operations in execution order and replays them in reverse to
/// compute gradients.
///
/// Nodes are appended in topological order by construction, so the reverse
/// sweep in [`Tape::backward`] visits every consumer before its producers.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    retain_grads: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

type Grads = Vec<Option<Vec<f64>>>;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            retain_grads: true,
        }
    }

    /// When false, `backward` stores gradients on leaves only and frees
    /// intermediate buffers as soon as they have been propagated.
    pub fn set_retain_grads(&mut self, retain: bool) {
        self.retain_grads = retain;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.grad = None;
        self.push_node(tensor, Op::Leaf, Vec::new())
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    /// Records a leaf that always receives a gradient.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.values
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    /// Zeroes every stored gradient on the tape.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.zero_grad();
        }
    }

    fn push_node(&mut self, tensor: Tensor, op: Op, aux: Vec<f64>) -> Var {
        self.nodes.push(Node { tensor, op, aux });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        self.push_aux(shape, values, op, inputs, Vec::new())
    }

    fn push_aux(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        op: Op,
        inputs: &[Var],
        aux: Vec<f64>,
    ) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].tensor.requires_grad);
        let tensor = Tensor {
            shape,
            values,
            requires_grad,
            grad: None,
        };
        self.push_node(tensor, op, aux)
    }

    // ---------------------------------------------------------------------
    // linear algebra

    /// Matrix product of `a[..., k]` (leading axes flattened into rows) with
    /// `b[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = numel(&sa) / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.values(a), false, self.values(b), false, &mut out, false);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        Ok(self.push(shape, out, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product over the leading axis: `a[N, m, k] · b[N, k, n]`, or
    /// `a[N, m, k] · b[N, n, k]ᵀ` when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::dim("batch_matmul", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        {
            let (va, vb) = (self.values(a), self.values(b));
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &va[i * m * k..(i + 1) * m * k],
                    false,
                    &vb[i * k * n..(i + 1) * k * n],
                    transpose_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        Ok(self.push(
            vec![batch, m, n],
            out,
            Op::BatchMatMul { a, b, transpose_b },
            &[a, b],
        ))
    }

    // ---------------------------------------------------------------------
    // element-wise

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape == tb.shape {
            let out = ta.values.iter().zip(&tb.values).map(|(&x, &y)| f(x, y)).collect();
            Ok((ta.shape.clone(), out))
        } else if tb.len() == 1 {
            let y = tb.values[0];
            Ok((ta.shape.clone(), ta.values.iter().map(|&x| f(x, y)).collect()))
        } else if ta.len() == 1 {
            let x = ta.values[0];
            Ok((tb.shape.clone(), tb.values.iter().map(|&y| f(x, y)).collect()))
        } else {
            Err(Error::dim(name, &ta.shape, &tb.shape))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, out, Op::Sub(a, b), &[a, b]))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(shape, out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds `bias[n]` to every row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.is_empty() || sb.len() != 1 || sb[0] != sx[sx.len() - 1] {
            return Err(Error::dim("add_bias", &sx, &sb));
        }
        let n = sb[0];
        let b = self.values(bias).to_vec();
        let mut out = self.values(x).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            row.iter_mut().zip(&b).for_each(|(v, bi)| *v += bi);
        }
        Ok(self.push(sx, out, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.values(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale { x, factor }, &[x])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.values(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu(x), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`. The mask is a constant.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::config(format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.shape(x).to_vec();
        let mask = (0..numel(&shape))
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, mask)
    }

    // ---------------------------------------------------------------------
    // normalisation

    /// Softmax along `axis`, stabilised by subtracting the per-slice max.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = self.values(x).to_vec();
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| out[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = (out[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[idx(i)] /= total;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { x, axis }, &[x]))
    }

    /// Normalises each row of the last axis to zero mean and unit variance
    /// (population variance plus `LAYER_NORM_EPS`), then applies
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("layer_norm", &shape, &[]))?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::dim("layer_norm", &shape, self.shape(p)));
            }
        }
        let (g, b) = (self.values(gain).to_vec(), self.values(bias).to_vec());
        let xs = self.values(x);
        let rows = xs.len() / d.max(1);
        let mut out = vec![0.0; xs.len()];
        let mut aux = vec![0.0; xs.len() + rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for i in 0..d {
                let xhat = (row[i] - mean) * inv_std;
                aux[r * d + i] = xhat;
                out[r * d + i] = g[i] * xhat + b[i];
            }
            aux[xs.len() + r] = inv_std;
        }
        Ok(self.push_aux(shape, out, Op::LayerNorm { x, gain, bias }, &[x, gain, bias], aux))
    }

    // ---------------------------------------------------------------------
    // convolution

    /// Causal dilated 1-D convolution.
    ///
    /// `x[B, C, T]`, `weight[F, C, K]`, `bias[F]` → `y[B, F, T]` with
    /// `y[b, f, t] = bias[f] + Σ_c Σ_i weight[f, c, i] · x[b, c, t − d·i]`,
    /// where inputs before `t = 0` read as zero (left padding of
    /// `(K − 1)·d`). Tap `i = 0` is the current step.
    pub fn causal_conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || sw[2] == 0 {
            return Err(Error::dim("causal_conv1d", &sx, &sw));
        }
        if dilation == 0 {
            return Err(Error::config("dilation must be >= 1"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(Error::dim("causal_conv1d bias", &sw, self.shape(b)));
            }
        }
        let (batch, channels, steps) = (sx[0], sx[1], sx[2]);
        let (filters, taps) = (sw[0], sw[2]);
        let ck = channels * taps;
        let mut out = vec![0.0; batch * filters * steps];
        let mut col = vec![0.0; ck * steps];
        {
            let (xs, ws) = (self.values(x), self.values(weight));
            for b in 0..batch {
                im2col(&xs[b * channels * steps..(b + 1) * channels * steps], channels, steps, taps, dilation, &mut col);
                let y = &mut out[b * filters * steps..(b + 1) * filters * steps];
                gemm(filters, ck, steps, ws, false, &col, false, y, false);
                if let Some(bv) = bias {
                    let bv = self.values(bv);
                    for f in 0..filters {
                        y[f * steps..(f + 1) * steps].iter_mut().for_each(|v| *v += bv[f]);
                    }
                }
            }
        }
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            vec![batch, filters, steps],
            out,
            Op::CausalConv { x, weight, bias, dilation },
            &inputs,
        ))
    }

    // ---------------------------------------------------------------------
    // shape manipulation

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let out = self.values(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim("permute", &shape, axes));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let map = permute_index_map(&shape, axes);
        let xs = self.values(x);
        let out = map.iter().map(|&src| xs[src]).collect();
        Ok(self.push(out_shape, out, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::dim("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim("slice", &shape, &[axis, start, len]));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let xs = self.values(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xs[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(out_shape, out, Op::Slice { x, axis, start }, &[x]))
    }

    /// Picks one index along `axis` and drops that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(Error::dim("select", &shape, &[axis, index]));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let xs = self.values(x);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * full + index) * inner;
            out.extend_from_slice(&xs[base..base + inner]);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(out_shape, out, Op::Select { x, axis, index }, &[x]))
    }

    /// Stacks equal-shaped tensors along a new axis.
    pub fn stack(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("stack of zero tensors"))?;
        let shape = self.shape(*first).to_vec();
        if axis > shape.len() {
            return Err(Error::dim("stack", &shape, &[axis]));
        }
        for v in inputs {
            if self.shape(*v) != shape.as_slice() {
                return Err(Error::dim("stack", &shape, self.shape(*v)));
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * inputs.len() * inner);
        for o in 0..outer {
            for v in inputs {
                out.extend_from_slice(&self.values(*v)[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, inputs.len());
        Ok(self.push(out_shape, out, Op::Stack { inputs: inputs.to_vec(), axis }, inputs))
    }

    /// Concatenates along an existing axis.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let shape = self.shape(*first).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("concat", &shape, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == shape.len()
                && s.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &shape, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.values(*v)[o * len..(o + 1) * len]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = total;
        Ok(self.push(out_shape, out, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
    }

    /// Inserts a new axis of size `count` at `axis`, repeating the input.
    pub fn repeat(&mut self, x: Var, axis: usize, count: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis > shape.len() {
            return Err(Error::dim("repeat", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let xs = self.values(x);
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            for _ in 0..count {
                out.extend_from_slice(&xs[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, count);
        Ok(self.push(out_shape, out, Op::Repeat { x, axis, count }, &[x]))
    }

    // ---------------------------------------------------------------------
    // reductions

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values(x).iter().sum();
        self.push(vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let s = self.values(x).iter().sum::<f64>() / n as f64;
        Ok(self.push(vec![], vec![s], Op::Mean(x), &[x]))
    }

    // ---------------------------------------------------------------------
    // fused recurrent cell

    /// One LSTM cell update from pre-activations.
    ///
    /// `gates[B, 4H]` holds the pre-activations in block order
    /// (input, forget, output, candidate); `c_prev[B, H]`. Returns
    /// `[B, 2H]` = `[h_t | c_t]` with `c_t = f⊙c_prev + i⊙c̃` and
    /// `h_t = o⊙tanh(c_t)`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (sg, sc) = (self.shape(gates).to_vec(), self.shape(c_prev).to_vec());
        if sg.len() != 2 || sc.len() != 2 || sg[0] != sc[0] || sg[1] != 4 * sc[1] {
            return Err(Error::dim("lstm_cell", &sg, &sc));
        }
        let (batch, h) = (sc[0], sc[1]);
        let (pre, cp) = (self.values(gates), self.values(c_prev));
        let mut out = vec![0.0; batch * 2 * h];
        let mut aux = vec![0.0; batch * 5 * h];
        let (acts, tcs) = aux.split_at_mut(batch * 4 * h);
        for b in 0..batch {
            let p = &pre[b * 4 * h..(b + 1) * 4 * h];
            let act = &mut acts[b * 4 * h..(b + 1) * 4 * h];
            for j in 0..3 * h {
                act[j] = sigmoid(p[j]);
            }
            for j in 3 * h..4 * h {
                act[j] = p[j].tanh();
            }
            for j in 0..h {
                let (i, f, o, g) = (act[j], act[h + j], act[2 * h + j], act[3 * h + j]);
                let c = f * cp[b * h + j] + i * g;
                let tc = c.tanh();
                out[b * 2 * h + j] = o * tc;
                out[b * 2 * h + h + j] = c;
                tcs[b * h + j] = tc;
            }
        }
        Ok(self.push_aux(
            vec![batch, 2 * h],
            out,
            Op::LstmCell { gates, c_prev },
            &[gates, c_prev],
            aux,
        ))
    }

    // ---------------------------------------------------------------------
    // backward

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Gradients are added into each node's stored gradient, so repeated
    /// calls accumulate until [`Tape::zero_grads`] (or the owning parameter's
    /// `zero_grad`) clears them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Grads = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].tensor.requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
            let node = &mut self.nodes[id];
            if self.retain_grads || matches!(node.op, Op::Leaf) {
                match &mut node.tensor.grad {
                    Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.tensor.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut Grads, v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].tensor.requires_grad {
            return None;
        }
        let n = self.nodes[v.0].tensor.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut Grads) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.tensor.values;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (k, n) = (sb[0], sb[1]);
                let m = numel(sa) / k.max(1);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(m, n, k, g, false, self.values(*b), true, ga, true);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(k, m, n, self.values(*a), true, g, false, gb, true);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = g.len() / (batch * m).max(1);
                let (va, vb) = (self.values(*a), self.values(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..batch {
                        // y = a·b → da = dy·bᵀ ; y = a·bᵀ → da = dy·b
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &vb[i * k * n..(i + 1) * k * n],
                            !transpose_b,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &va[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // db[n, k] = dyᵀ·a
                            gemm(n, m, k, gi, true, ai, false, out, true);
                        } else {
                            // db[k, n] = aᵀ·dy
                            gemm(k, m, n, ai, true, gi, false, out, true);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.reduce_into(grads, *a, g, |gi, _| gi);
                self.reduce_into(grads, *b, g, |gi, _| gi);
            }
            Op::Sub(a, b) => {
                self.reduce_into(grads, *a, g, |gi, _| gi);
                self.reduce_into(grads, *b, g, |gi, _| -gi);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.values(*a).to_vec(), self.values(*b).to_vec());
                let other = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                self.reduce_into(grads, *a, g, |gi, i| gi * other(&vb, i));
                self.reduce_into(grads, *b, g, |gi, i| gi * other(&va, i));
            }
            Op::AddBias { x, bias } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                let n = self.shape(*bias)[0];
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks(n.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += factor * b);
                }
            }
            Op::Sigmoid(x) => self.pointwise(grads, *x, g, |i| y[i] * (1.0 - y[i])),
            Op::Tanh(x) => self.pointwise(grads, *x, g, |i| 1.0 - y[i] * y[i]),
            Op::Relu(x) => {
                let xv = self.values(*x);
                self.pointwise(grads, *x, g, |i| if xv[i] > 0.0 { 1.0 } else { 0.0 })
            }
            Op::Elu(x) => {
                let xv = self.values(*x);
                self.pointwise(grads, *x, g, |i| if xv[i] > 0.0 { 1.0 } else { y[i] + 1.0 })
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(&node.tensor.shape, *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + j;
                            let dot: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..len {
                                gx[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let d = self.shape(*gain)[0];
                let rows = g.len() / d.max(1);
                let (xhat, inv_std) = node.aux.split_at(g.len());
                let gain_v = self.values(*gain);
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let rg = &g[r * d..(r + 1) * d];
                        let rx = &xhat[r * d..(r + 1) * d];
                        let dxhat: Vec<f64> = rg.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(rx).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for i in 0..d {
                            gx[r * d + i] += inv_std[r] * (dxhat[i] - mean_d - rx[i] * mean_dx);
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gain) {
                    for r in 0..rows {
                        for i in 0..d {
                            gg[i] += g[r * d + i] * xhat[r * d + i];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks(d.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::CausalConv { x, weight, bias, dilation } => {
                let (sx, sw) = (self.shape(*x), self.shape(*weight));
                let (batch, channels, steps) = (sx[0], sx[1], sx[2]);
                let (filters, taps) = (sw[0], sw[2]);
                let ck = channels * taps;
                let (xs, ws) = (self.values(*x), self.values(*weight));
                let mut col = vec![0.0; ck * steps];
                let mut dcol = vec![0.0; ck * steps];
                let need_x = self.requires_grad(*x);
                let need_w = self.requires_grad(*weight);
                for b in 0..batch {
                    let gy = &g[b * filters * steps..(b + 1) * filters * steps];
                    if need_w {
                        im2col(&xs[b * channels * steps..(b + 1) * channels * steps], channels, steps, taps, *dilation, &mut col);
                        let gw = self.slot(grads, *weight).expect("weight requires grad");
                        gemm(filters, steps, ck, gy, false, &col, true, gw, true);
                    }
                    if need_x {
                        gemm(ck, filters, steps, ws, true, gy, false, &mut dcol, false);
                        let gx = self.slot(grads, *x).expect("input requires grad");
                        col2im_add(&dcol, channels, steps, taps, *dilation, &mut gx[b * channels * steps..(b + 1) * channels * steps]);
                    }
                }
                if let Some(bv) = bias {
                    if let Some(gb) = self.slot(grads, *bv) {
                        for b in 0..batch {
                            for f in 0..filters {
                                let start = (b * filters + f) * steps;
                                gb[f] += g[start..start + steps].iter().sum::<f64>();
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Permute { x, axes } => {
                let map = permute_index_map(self.shape(*x), axes);
                if let Some(gx) = self.slot(grads, *x) {
                    for (out_i, &src) in map.iter().enumerate() {
                        gx[src] += g[out_i];
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let sx = self.shape(*x);
                let (outer, full, inner) = split_axis(sx, *axis);
                let len = node.tensor.shape[*axis];
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        gx[base..base + len * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Select { x, axis, index } => {
                let (outer, full, inner) = split_axis(self.shape(*x), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let base = (o * full + index) * inner;
                        let src = &g[o * inner..(o + 1) * inner];
                        gx[base..base + inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Stack { inputs, axis } => {
                let shape = self.shape(inputs[0]);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis..].iter().product();
                let count = inputs.len();
                for (k, v) in inputs.iter().enumerate() {
                    if let Some(gv) = self.slot(grads, *v) {
                        for o in 0..outer {
                            let src = &g[(o * count + k) * inner..(o * count + k + 1) * inner];
                            gv[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.tensor.shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if let Some(gv) = self.slot(grads, *v) {
                        for o in 0..outer {
                            let src_start = (o * total + offset) * inner;
                            let src = &g[src_start..src_start + len * inner];
                            gv[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += len;
                }
            }
            Op::Repeat { x, axis, count } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis..].iter().product();
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for r in 0..*count {
                            let src = &g[(o * count + r) * inner..(o * count + r + 1) * inner];
                            gx[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0] / n);
                }
            }
            Op::LstmCell { gates, c_prev } => {
                let sc = self.shape(*c_prev);
                let (batch, h) = (sc[0], sc[1]);
                let cp = self.values(*c_prev);
                let (act, tcs) = node.aux.split_at(batch * 4 * h);
                let mut d_pre = vec![0.0; batch * 4 * h];
                let mut d_cp = vec![0.0; batch * h];
                for b in 0..batch {
                    let a = &act[b * 4 * h..(b + 1) * 4 * h];
                    for j in 0..h {
                        let (i, f, o, gg) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = tcs[b * h + j];
                        let dh = g[b * 2 * h + j];
                        let dc = g[b * 2 * h + h + j] + dh * o * (1.0 - tc * tc);
                        let dp = &mut d_pre[b * 4 * h..(b + 1) * 4 * h];
                        dp[j] = dc * gg * i * (1.0 - i);
                        dp[h + j] = dc * cp[b * h + j] * f * (1.0 - f);
                        dp[2 * h + j] = dh * tc * o * (1.0 - o);
                        dp[3 * h + j] = dc * i * (1.0 - gg * gg);
                        d_cp[b * h + j] = dc * f;
                    }
                }
                if let Some(gp) = self.slot(grads, *gates) {
                    gp.iter_mut().zip(&d_pre).for_each(|(a, b)| *a += b);
                }
                if let Some(gc) = self.slot(grads, *c_prev) {
                    gc.iter_mut().zip(&d_cp).for_each(|(a, b)| *a += b);
                }
            }
        }
        Ok(())
    }

    fn pointwise(&self, grads: &mut Grads, x: Var, g: &[f64], local: impl Fn(usize) -> f64) {
        if let Some(gx) = self.slot(grads, x) {
            for (i, a) in gx.iter_mut().enumerate() {
                *a += g[i] * local(i);
            }
        }
    }

    /// Accumulates `f(g[i], i)` into `v`, summing when `v` was a broadcast
    /// one-element operand.
    fn reduce_into(&self, grads: &mut Grads, v: Var, g: &[f64], f: impl Fn(f64, usize) -> f64) {
        let n = self.value(v).len();
        if let Some(gv) = self.slot(grads, v) {
            if n == g.len() {
                for (i, a) in gv.iter_mut().enumerate() {
                    *a += f(g[i], i);
                }
            } else {
                gv[0] += g.iter().enumerate().map(|(i, &gi)| f(gi, i)).sum::<f64>();
            }
        }
    }
}

/// Layer-norm variance stabiliser.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Unrolls one sample `x[C, T]` into `col[C·K, T]` with
/// `col[c·K + i, t] = x[c, t − d·i]` (zero before the sequence start).
fn im2col(x: &[f64], channels: usize, steps: usize, taps: usize, dilation: usize, col: &mut [f64]) {
    for c in 0..channels {
        let src = &x[c * steps..(c + 1) * steps];
        for i in 0..taps {
            let lag = dilation * i;
            let row = &mut col[(c * taps + i) * steps..(c * taps + i + 1) * steps];
            if lag >= steps {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            row[..lag].iter_mut().for_each(|v| *v = 0.0);
            row[lag..].copy_from_slice(&src[..steps - lag]);
        }
    }
}

fn col2im_add(col: &[f64], channels: usize, steps: usize, taps: usize, dilation: usize, gx: &mut [f64]) {
    for c in 0..channels {
        let dst = &mut gx[c * steps..(c + 1) * steps];
        for i in 0..taps {
            let lag = dilation * i;
            if lag >= steps {
                continue;
            }
            let row = &col[(c * taps + i) * steps..(c * taps + i + 1) * steps];
            dst[..steps - lag].iter_mut().zip(&row[lag..]).for_each(|(a, b)| *a += b);
        }
    }
}

/// For each flat output position of `permute(shape, axes)`, the flat source
/// position in the input.
fn permute_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}
