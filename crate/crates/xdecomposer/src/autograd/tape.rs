//! Reverse-mode tape: enum-op nodes over NdArray values, exact analytic
//! backward rules, no broadcasting beyond scalars and bias-add.

use rand::Rng;

use super::array::NdArray;
use super::AutogradError;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    /// Node index on the tape; indexes the gradient vector from `backward`.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    /// tensor * scalar-variable (shape [1])
    MulScalarVar(Var, Var),
    /// [R, C] + [C], broadcast over rows
    AddBias(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    /// rows start..start+len along axis 0
    Slice(Var, usize),
    Concat(Vec<Var>),
    Softmax(Var, usize),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Softplus(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
    },
    Sum(Var),
    Mean(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    ConvT1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Embedding(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
}

struct Node {
    op: Op,
    value: NdArray,
    requires_grad: bool,
}

const LN_EPS: f64 = 1e-5;

/// Computation graph; nodes are appended in topological order by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    nan_checks: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            nan_checks: cfg!(debug_assertions) || std::env::var_os("XDC_NAN_CHECKS").is_some(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: NdArray, requires_grad: bool) -> Var {
        if self.nan_checks && value.has_non_finite() {
            panic!("non-finite value produced by {op:?}");
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: NdArray) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.push(Op::Leaf, value, false)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<(), AutogradError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutogradError::ShapeMismatch(format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AutogradError> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = NdArray::new(self.value(a).shape(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        let rg = self.requires(a);
        self.push(Op::Neg(a), value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.requires(a);
        self.push(Op::AddScalar(a), value, rg)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.requires(a);
        self.push(Op::MulScalar(a, c), value, rg)
    }

    /// Elementwise product of a tensor with a scalar variable of shape [1].
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var, AutogradError> {
        if self.value(s).len() != 1 {
            return Err(AutogradError::ShapeMismatch(format!(
                "scalar operand has shape {:?}",
                self.value(s).shape()
            )));
        }
        let c = self.value(s).item();
        let value = self.value(a).map(|x| x * c);
        let rg = self.requires(a) || self.requires(s);
        Ok(self.push(Op::MulScalarVar(a, s), value, rg))
    }

    /// [R, C] plus a length-C bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutogradError> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 || self.value(bias).shape() != [shape[1]] {
            return Err(AutogradError::ShapeMismatch(format!(
                "{:?} + bias {:?}",
                shape,
                self.value(bias).shape()
            )));
        }
        let cols = shape[1];
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + self.value(bias).data()[i % cols])
            .collect();
        let value = NdArray::new(&shape, data)?;
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(Op::AddBias(a, bias), value, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutogradError::ShapeMismatch(format!(
                "matmul {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * db[p * n + j];
                }
            }
        }
        let value = NdArray::new(&[m, n], out)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Matmul(a, b), value, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutogradError> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(AutogradError::ShapeMismatch(format!("transpose {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let value = NdArray::new(&[c, r], out)?;
        let rg = self.requires(a);
        Ok(self.push(Op::Transpose(a), value, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutogradError> {
        let value = self.value(a).reshaped(shape)?;
        let rg = self.requires(a);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    /// Rows start..start+len along axis 0 (plain range for 1D).
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutogradError> {
        let shape = self.value(a).shape().to_vec();
        if start + len > shape[0] {
            return Err(AutogradError::ShapeMismatch(format!(
                "slice {start}+{len} of {shape:?}"
            )));
        }
        let row: usize = shape[1..].iter().product();
        let data = self.value(a).data()[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let value = NdArray::new(&out_shape, data)?;
        let rg = self.requires(a);
        Ok(self.push(Op::Slice(a, start), value, rg))
    }

    /// Concatenate along axis 0; trailing dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutogradError> {
        if parts.is_empty() {
            return Err(AutogradError::ShapeMismatch("empty concat".into()));
        }
        let tail = self.value(parts[0]).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.value(p).shape();
            if s[1..] != tail[..] {
                return Err(AutogradError::ShapeMismatch(format!(
                    "concat {:?} vs tail {tail:?}",
                    s
                )));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(&tail);
        let value = NdArray::new(&shape, data)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    /// Softmax over `axis` of a 1D or 2D tensor.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, AutogradError> {
        let shape = self.value(a).shape().to_vec();
        let value = match (shape.len(), axis) {
            (1, 0) => {
                let mut v = self.value(a).data().to_vec();
                softmax_slice(&mut v);
                NdArray::new(&shape, v)?
            }
            (2, 1) => {
                let mut v = self.value(a).data().to_vec();
                for row in v.chunks_mut(shape[1]) {
                    softmax_slice(row);
                }
                NdArray::new(&shape, v)?
            }
            (2, 0) => {
                let (r, c) = (shape[0], shape[1]);
                let d = self.value(a).data();
                let mut v = vec![0.0; r * c];
                let mut col = vec![0.0; r];
                for j in 0..c {
                    for i in 0..r {
                        col[i] = d[i * c + j];
                    }
                    softmax_slice(&mut col);
                    for i in 0..r {
                        v[i * c + j] = col[i];
                    }
                }
                NdArray::new(&shape, v)?
            }
            _ => {
                return Err(AutogradError::UnsupportedAxis {
                    axis,
                    rank: shape.len(),
                })
            }
        };
        let rg = self.requires(a);
        Ok(self.push(Op::Softmax(a, axis), value, rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires(a);
        self.push(op, value, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), gelu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Layer normalization over the last dim, with per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutogradError> {
        let shape = self.value(x).shape().to_vec();
        let c = *shape.last().unwrap();
        if self.value(gain).shape() != [c] || self.value(bias).shape() != [c] {
            return Err(AutogradError::ShapeMismatch(format!(
                "layer_norm gain/bias for {shape:?}"
            )));
        }
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).data().chunks(c) {
            let (mu, var) = row_moments(row);
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out.push((v - mu) * inv * self.value(gain).data()[j] + self.value(bias).data()[j]);
            }
        }
        let value = NdArray::new(&shape, out)?;
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        Ok(self.push(Op::LayerNorm { x, gain, bias }, value, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = NdArray::scalar(self.value(a).data().iter().sum());
        let rg = self.requires(a);
        self.push(Op::Sum(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let value = NdArray::scalar(self.value(a).data().iter().sum::<f64>() / n);
        let rg = self.requires(a);
        self.push(Op::Mean(a), value, rg)
    }

    /// 1D convolution: x [C_in, L], w [C_out, C_in, K], b [C_out].
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, AutogradError> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] {
            return Err(AutogradError::ShapeMismatch(format!(
                "conv1d x {sx:?} w {sw:?}"
            )));
        }
        let (c_in, l) = (sx[0], sx[1]);
        let (c_out, k) = (sw[0], sw[2]);
        if self.value(b).shape() != [c_out] {
            return Err(AutogradError::ShapeMismatch("conv1d bias".into()));
        }
        if l + 2 * padding < k {
            return Err(AutogradError::ShapeMismatch(format!(
                "conv1d length {l} + 2*{padding} < kernel {k}"
            )));
        }
        let l_out = (l + 2 * padding - k) / stride + 1;
        let (dx, dw, db) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; c_out * l_out];
        for co in 0..c_out {
            for t in 0..l_out {
                let mut acc = db[co];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let pos = t * stride + kk;
                        if pos < padding || pos - padding >= l {
                            continue;
                        }
                        acc += dw[(co * c_in + ci) * k + kk] * dx[ci * l + pos - padding];
                    }
                }
                out[co * l_out + t] = acc;
            }
        }
        let value = NdArray::new(&[c_out, l_out], out)?;
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            value,
            rg,
        ))
    }

    /// Transposed 1D convolution: x [C_in, L], w [C_in, C_out, K], b [C_out].
    /// Output length (L-1)*stride - 2*padding + K.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, AutogradError> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 2 || sw.len() != 3 || sw[0] != sx[0] {
            return Err(AutogradError::ShapeMismatch(format!(
                "conv_transpose1d x {sx:?} w {sw:?}"
            )));
        }
        let (c_in, l) = (sx[0], sx[1]);
        let (c_out, k) = (sw[1], sw[2]);
        if self.value(b).shape() != [c_out] {
            return Err(AutogradError::ShapeMismatch("conv_transpose1d bias".into()));
        }
        let full = (l - 1) * stride + k;
        if full < 2 * padding + 1 {
            return Err(AutogradError::ShapeMismatch(
                "conv_transpose1d output underflow".into(),
            ));
        }
        let l_out = full - 2 * padding;
        let (dx, dw, db) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; c_out * l_out];
        for (co, chunk) in out.chunks_mut(l_out).enumerate() {
            for v in chunk.iter_mut() {
                *v = db[co];
            }
        }
        for ci in 0..c_in {
            for t in 0..l {
                let xv = dx[ci * l + t];
                if xv == 0.0 {
                    continue;
                }
                for co in 0..c_out {
                    for kk in 0..k {
                        let pos = t * stride + kk;
                        if pos < padding || pos - padding >= l_out {
                            continue;
                        }
                        out[co * l_out + pos - padding] += xv * dw[(ci * c_out + co) * k + kk];
                    }
                }
            }
        }
        let value = NdArray::new(&[c_out, l_out], out)?;
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(
            Op::ConvT1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            value,
            rg,
        ))
    }

    /// Row lookup: table [V, D], indices -> [n, D].
    pub fn embedding_lookup(
        &mut self,
        table: Var,
        indices: &[usize],
    ) -> Result<Var, AutogradError> {
        let s = self.value(table).shape().to_vec();
        if s.len() != 2 {
            return Err(AutogradError::ShapeMismatch(format!("embedding {s:?}")));
        }
        let d = s[1];
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= s[0] {
                return Err(AutogradError::ShapeMismatch(format!(
                    "index {i} out of {} rows",
                    s[0]
                )));
            }
            out.extend_from_slice(&self.value(table).data()[i * d..(i + 1) * d]);
        }
        let value = NdArray::new(&[indices.len(), d], out)?;
        let rg = self.requires(table);
        Ok(self.push(Op::Embedding(table, indices.to_vec()), value, rg))
    }

    /// Inverted dropout; identity when `p` is 0. Train-time only by contract.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            let mask = vec![1.0; self.value(a).len()];
            let value = self.value(a).clone();
            let rg = self.requires(a);
            return self.push(Op::Dropout(a, mask), value, rg);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = NdArray::new(self.value(a).shape(), data).unwrap();
        let rg = self.requires(a);
        self.push(Op::Dropout(a, mask), value, rg)
    }

    /// Single-head scaled dot-product attention, composed from primitives:
    /// softmax(q kᵀ / √D) v with q [Tq, D], k [Tk, D], v [Tk, Dv].
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, AutogradError> {
        let d = self.value(q).shape()[1] as f64;
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.mul_scalar(scores, 1.0 / d.sqrt());
        let attn = self.softmax(scaled, 1)?;
        self.matmul(attn, v)
    }

    /// Reverse sweep from a scalar root; returns per-node gradients
    /// (None for nodes not requiring or not reaching the root).
    pub fn backward(&mut self, root: Var) -> Result<Vec<Option<NdArray>>, AutogradError> {
        if self.value(root).len() != 1 {
            return Err(AutogradError::ShapeMismatch(format!(
                "backward root has shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<NdArray>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(NdArray::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_inputs(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn accumulate_inputs(
        &self,
        i: usize,
        g: &NdArray,
        grads: &mut [Option<NdArray>],
    ) -> Result<(), AutogradError> {
        let add_to = |grads: &mut [Option<NdArray>], v: Var, delta: &[f64]| {
            let slot = grads[v.0]
                .get_or_insert_with(|| NdArray::zeros(self.value(v).shape()));
            for (a, b) in slot.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        };
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires(*a) {
                    add_to(grads, *a, gd);
                }
                if self.requires(*b) {
                    add_to(grads, *b, gd);
                }
            }
            Op::Sub(a, b) => {
                if self.requires(*a) {
                    add_to(grads, *a, gd);
                }
                if self.requires(*b) {
                    let neg: Vec<f64> = gd.iter().map(|&v| -v).collect();
                    add_to(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let d: Vec<f64> = gd
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    add_to(grads, *a, &d);
                }
                if self.requires(*b) {
                    let d: Vec<f64> = gd
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &x)| g * x)
                        .collect();
                    add_to(grads, *b, &d);
                }
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires(*a) {
                    let d: Vec<f64> = gd.iter().zip(xb).map(|(&g, &y)| g / y).collect();
                    add_to(grads, *a, &d);
                }
                if self.requires(*b) {
                    let d: Vec<f64> = gd
                        .iter()
                        .zip(xa.iter().zip(xb))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    add_to(grads, *b, &d);
                }
            }
            Op::Neg(a) => {
                if self.requires(*a) {
                    let d: Vec<f64> = gd.iter().map(|&v| -v).collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::AddScalar(a) => {
                if self.requires(*a) {
                    add_to(grads, *a, gd);
                }
            }
            Op::MulScalar(a, c) => {
                if self.requires(*a) {
                    let d: Vec<f64> = gd.iter().map(|&v| v * c).collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::MulScalarVar(a, s) => {
                let c = self.value(*s).item();
                if self.requires(*a) {
                    let d: Vec<f64> = gd.iter().map(|&v| v * c).collect();
                    add_to(grads, *a, &d);
                }
                if self.requires(*s) {
                    let ds: f64 = gd
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &x)| g * x)
                        .sum();
                    add_to(grads, *s, &[ds]);
                }
            }
            Op::AddBias(a, bias) => {
                if self.requires(*a) {
                    add_to(grads, *a, gd);
                }
                if self.requires(*bias) {
                    let c = self.value(*bias).len();
                    let mut d = vec![0.0; c];
                    for (j, &v) in gd.iter().enumerate() {
                        d[j % c] += v;
                    }
                    add_to(grads, *bias, &d);
                }
            }
            Op::Matmul(a, b) => {
                let sa = self.value(*a).shape();
                let sb = self.value(*b).shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.requires(*a) {
                    // dA = dC . B^T
                    let mut d = vec![0.0; m * k];
                    for i2 in 0..m {
                        for j in 0..n {
                            let gij = gd[i2 * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                d[i2 * k + p] += gij * db[p * n + j];
                            }
                        }
                    }
                    add_to(grads, *a, &d);
                }
                if self.requires(*b) {
                    // dB = A^T . dC
                    let mut d = vec![0.0; k * n];
                    for i2 in 0..m {
                        for p in 0..k {
                            let aip = da[i2 * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                d[p * n + j] += aip * gd[i2 * n + j];
                            }
                        }
                    }
                    add_to(grads, *b, &d);
                }
            }
            Op::Transpose(a) => {
                if self.requires(*a) {
                    let s = self.value(*a).shape();
                    let (r, c) = (s[0], s[1]);
                    let mut d = vec![0.0; r * c];
                    for i2 in 0..r {
                        for j in 0..c {
                            d[i2 * c + j] = gd[j * r + i2];
                        }
                    }
                    add_to(grads, *a, &d);
                }
            }
            Op::Reshape(a) => {
                if self.requires(*a) {
                    add_to(grads, *a, gd);
                }
            }
            Op::Slice(a, start) => {
                if self.requires(*a) {
                    let shape = self.value(*a).shape();
                    let row: usize = shape[1..].iter().product::<usize>().max(1);
                    let mut d = vec![0.0; self.value(*a).len()];
                    d[start * row..start * row + gd.len()].copy_from_slice(gd);
                    add_to(grads, *a, &d);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.requires(p) {
                        add_to(grads, p, &gd[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Softmax(a, axis) => {
                if self.requires(*a) {
                    let y = self.nodes[i].value.data();
                    let shape = self.nodes[i].value.shape();
                    let mut d = vec![0.0; y.len()];
                    let groups: Vec<Vec<usize>> = match (shape.len(), *axis) {
                        (1, 0) => vec![(0..y.len()).collect()],
                        (2, 1) => (0..shape[0])
                            .map(|r| (r * shape[1]..(r + 1) * shape[1]).collect())
                            .collect(),
                        (2, 0) => (0..shape[1])
                            .map(|c| (0..shape[0]).map(|r| r * shape[1] + c).collect())
                            .collect(),
                        _ => unreachable!("validated at forward"),
                    };
                    for idxs in groups {
                        let dot: f64 = idxs.iter().map(|&t| gd[t] * y[t]).sum();
                        for &t in &idxs {
                            d[t] = y[t] * (gd[t] - dot);
                        }
                    }
                    add_to(grads, *a, &d);
                }
            }
            Op::Sigmoid(a) => {
                if self.requires(*a) {
                    let y = self.nodes[i].value.data();
                    let d: Vec<f64> = gd
                        .iter()
                        .zip(y)
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::Relu(a) => {
                if self.requires(*a) {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::Gelu(a) => {
                if self.requires(*a) {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = gd.iter().zip(x).map(|(&g, &v)| g * gelu_grad(v)).collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::Softplus(a) => {
                if self.requires(*a) {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = gd.iter().zip(x).map(|(&g, &v)| g * sigmoid(v)).collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::Log(a) => {
                if self.requires(*a) {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = gd.iter().zip(x).map(|(&g, &v)| g / v).collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::Sqrt(a) => {
                if self.requires(*a) {
                    let y = self.nodes[i].value.data();
                    let d: Vec<f64> = gd.iter().zip(y).map(|(&g, &s)| g * 0.5 / s).collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::Abs(a) => {
                if self.requires(*a) {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| g * if v >= 0.0 { 1.0 } else { -1.0 })
                        .collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.requires(*a) {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > *lo && v < *hi { g } else { 0.0 })
                        .collect();
                    add_to(grads, *a, &d);
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let c = *self.value(*x).shape().last().unwrap();
                let xd = self.value(*x).data();
                let gaind = self.value(*gain).data();
                let mut dx = vec![0.0; xd.len()];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for (r, row) in xd.chunks(c).enumerate() {
                    let (mu, var) = row_moments(row);
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let go = &gd[r * c..(r + 1) * c];
                    // xhat_j = (x_j - mu) * inv
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mu) * inv).collect();
                    for j in 0..c {
                        dgain[j] += go[j] * xhat[j];
                        dbias[j] += go[j];
                    }
                    if self.requires(*x) {
                        let gxhat: Vec<f64> =
                            (0..c).map(|j| go[j] * gaind[j]).collect();
                        let mean_g: f64 = gxhat.iter().sum::<f64>() / c as f64;
                        let mean_gx: f64 = gxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(&a, &b)| a * b)
                            .sum::<f64>()
                            / c as f64;
                        for j in 0..c {
                            dx[r * c + j] = inv * (gxhat[j] - mean_g - xhat[j] * mean_gx);
                        }
                    }
                }
                if self.requires(*x) {
                    add_to(grads, *x, &dx);
                }
                if self.requires(*gain) {
                    add_to(grads, *gain, &dgain);
                }
                if self.requires(*bias) {
                    add_to(grads, *bias, &dbias);
                }
            }
            Op::Sum(a) => {
                if self.requires(*a) {
                    let d = vec![gd[0]; self.value(*a).len()];
                    add_to(grads, *a, &d);
                }
            }
            Op::Mean(a) => {
                if self.requires(*a) {
                    let n = self.value(*a).len();
                    let d = vec![gd[0] / n as f64; n];
                    add_to(grads, *a, &d);
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let sx = self.value(*x).shape();
                let sw = self.value(*w).shape();
                let (c_in, l) = (sx[0], sx[1]);
                let (c_out, k) = (sw[0], sw[2]);
                let l_out = self.nodes[i].value.shape()[1];
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; c_out];
                for co in 0..c_out {
                    for t in 0..l_out {
                        let go = gd[co * l_out + t];
                        if go == 0.0 {
                            continue;
                        }
                        db[co] += go;
                        for ci in 0..c_in {
                            for kk in 0..k {
                                let pos = t * stride + kk;
                                if pos < *padding || pos - padding >= l {
                                    continue;
                                }
                                let xi = ci * l + pos - padding;
                                dw[(co * c_in + ci) * k + kk] += go * xd[xi];
                                dx[xi] += go * wd[(co * c_in + ci) * k + kk];
                            }
                        }
                    }
                }
                if self.requires(*x) {
                    add_to(grads, *x, &dx);
                }
                if self.requires(*w) {
                    add_to(grads, *w, &dw);
                }
                if self.requires(*b) {
                    add_to(grads, *b, &db);
                }
            }
            Op::ConvT1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let sx = self.value(*x).shape();
                let sw = self.value(*w).shape();
                let (c_in, l) = (sx[0], sx[1]);
                let (c_out, k) = (sw[1], sw[2]);
                let l_out = self.nodes[i].value.shape()[1];
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; c_out];
                for co in 0..c_out {
                    for t in 0..l_out {
                        db[co] += gd[co * l_out + t];
                    }
                }
                for ci in 0..c_in {
                    for t in 0..l {
                        for co in 0..c_out {
                            for kk in 0..k {
                                let pos = t * stride + kk;
                                if pos < *padding || pos - padding >= l_out {
                                    continue;
                                }
                                let go = gd[co * l_out + pos - padding];
                                dx[ci * l + t] += go * wd[(ci * c_out + co) * k + kk];
                                dw[(ci * c_out + co) * k + kk] += go * xd[ci * l + t];
                            }
                        }
                    }
                }
                if self.requires(*x) {
                    add_to(grads, *x, &dx);
                }
                if self.requires(*w) {
                    add_to(grads, *w, &dw);
                }
                if self.requires(*b) {
                    add_to(grads, *b, &db);
                }
            }
            Op::Embedding(table, indices) => {
                if self.requires(*table) {
                    let d = self.value(*table).shape()[1];
                    let mut dt = vec![0.0; self.value(*table).len()];
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..d {
                            dt[idx * d + j] += gd[r * d + j];
                        }
                    }
                    add_to(grads, *table, &dt);
                }
            }
            Op::Dropout(a, mask) => {
                if self.requires(*a) {
                    let d: Vec<f64> = gd.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    add_to(grads, *a, &d);
                }
            }
        }
        Ok(())
    }
}

fn softmax_slice(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // keep the output strictly inside (0,1) even where rounding saturates
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

/// Exact derivative of the tanh-form gelu above.
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
