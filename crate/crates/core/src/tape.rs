//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every primitive appends one node holding its forward value. Nodes are
//! pushed in evaluation order, so the tape is topologically sorted by
//! construction and `backward` is a single reverse sweep.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Abs,
    Square,
    Mean,
    Concat,
    Slice,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Log,
    Clamp,
    FeatureNormalize,
}

impl Primitive {
    pub const ALL: [Primitive; 17] = [
        Primitive::MatMul,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::Abs,
        Primitive::Square,
        Primitive::Mean,
        Primitive::Concat,
        Primitive::Slice,
        Primitive::Relu,
        Primitive::LeakyRelu,
        Primitive::Tanh,
        Primitive::Sigmoid,
        Primitive::Log,
        Primitive::Clamp,
        Primitive::FeatureNormalize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Abs => "abs",
            Primitive::Square => "square",
            Primitive::Mean => "mean",
            Primitive::Concat => "concat",
            Primitive::Slice => "slice",
            Primitive::Relu => "relu",
            Primitive::LeakyRelu => "leaky-relu",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Log => "log",
            Primitive::Clamp => "clamp",
            Primitive::FeatureNormalize => "feature-normalize",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `broadcast`: rhs is a single row added to every row of lhs.
    Add { lhs: Var, rhs: Var, broadcast: bool },
    Sub { lhs: Var, rhs: Var, broadcast: bool },
    Mul(Var, Var),
    Scale { x: Var, mul: f64 },
    Abs(Var),
    Square(Var),
    Mean(Var),
    Concat(Var, Var),
    Slice { x: Var, start: usize },
    Relu(Var),
    LeakyRelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    FeatureNorm { x: Var, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Hands a mutable view of a variable's gradient to the closure.
type GradSink<'a> = dyn FnMut(Var, &mut dyn FnMut(&mut [f64])) + 'a;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

/// `c += a · b` for row-major operands described by explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides describe dense m×k, k×n and m×n views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Copies the value of `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (shape, value) = (node.shape.clone(), node.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape invariant")
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        rows_cols(self.shape(v)).ok_or_else(|| Error::Shape {
            op,
            lhs: self.shape(v).to_vec(),
            rhs: vec![],
        })
    }

    /// Generic dispatch used by the gradient checker. `Scale` multiplies by
    /// `param`, `Slice` keeps columns `[0, param)`, `Clamp` clamps to
    /// `[-param, param]`.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var], param: f64) -> Result<Var> {
        let arity = match prim {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Concat => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Invalid(format!(
                "{} takes {arity} inputs, got {}",
                prim.name(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        match prim {
            Primitive::MatMul => self.matmul(x, inputs[1]),
            Primitive::Add => self.add(x, inputs[1]),
            Primitive::Sub => self.sub(x, inputs[1]),
            Primitive::Mul => self.mul(x, inputs[1]),
            Primitive::Scale => Ok(self.scale(x, param)),
            Primitive::Abs => Ok(self.abs(x)),
            Primitive::Square => Ok(self.square(x)),
            Primitive::Mean => Ok(self.mean(x)),
            Primitive::Concat => self.concat(x, inputs[1]),
            Primitive::Slice => self.slice(x, 0, param as usize),
            Primitive::Relu => Ok(self.relu(x)),
            Primitive::LeakyRelu => Ok(self.leaky_relu(x)),
            Primitive::Tanh => Ok(self.tanh(x)),
            Primitive::Sigmoid => Ok(self.sigmoid(x)),
            Primitive::Log => self.log(x),
            Primitive::Clamp => Ok(self.clamp(x, -param, param)),
            Primitive::FeatureNormalize => self.feature_normalize(x),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let ((m, k), (k2, n)) = match (rows_cols(&sa), rows_cols(&sb)) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => return Err(Error::Shape { op: "matmul", lhs: sa, rhs: sb }),
        };
        debug_assert_eq!(k, k2);
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (n as isize, 1),
            &mut out,
        );
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    fn binary_shapes(&self, op: &'static str, lhs: Var, rhs: Var) -> Result<bool> {
        let sl = self.shape(lhs);
        let sr = self.shape(rhs);
        if sl == sr {
            return Ok(false);
        }
        if let Some((_, c)) = rows_cols(sl) {
            if sr == [c] || sr == [1, c] {
                return Ok(true);
            }
        }
        Err(Error::Shape {
            op,
            lhs: sl.to_vec(),
            rhs: sr.to_vec(),
        })
    }

    fn zip_broadcast(&self, lhs: Var, rhs: Var, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let l = self.value(lhs);
        let r = self.value(rhs);
        if broadcast {
            let c = r.len();
            l.chunks(c)
                .flat_map(|row| row.iter().zip(r).map(|(&x, &y)| f(x, y)))
                .collect()
        } else {
            l.iter().zip(r).map(|(&x, &y)| f(x, y)).collect()
        }
    }

    /// Elementwise sum; `rhs` may be one row broadcast over the batch axis.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let broadcast = self.binary_shapes("add", lhs, rhs)?;
        let out = self.zip_broadcast(lhs, rhs, broadcast, |x, y| x + y);
        let shape = self.shape(lhs).to_vec();
        let ng = self.ng(&[lhs, rhs]);
        Ok(self.push(shape, out, Op::Add { lhs, rhs, broadcast }, ng))
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let broadcast = self.binary_shapes("sub", lhs, rhs)?;
        let out = self.zip_broadcast(lhs, rhs, broadcast, |x, y| x - y);
        let shape = self.shape(lhs).to_vec();
        let ng = self.ng(&[lhs, rhs]);
        Ok(self.push(shape, out, Op::Sub { lhs, rhs, broadcast }, ng))
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        if self.shape(lhs) != self.shape(rhs) {
            return Err(Error::Shape {
                op: "mul",
                lhs: self.shape(lhs).to_vec(),
                rhs: self.shape(rhs).to_vec(),
            });
        }
        let out = self.zip_broadcast(lhs, rhs, false, |x, y| x * y);
        let shape = self.shape(lhs).to_vec();
        let ng = self.ng(&[lhs, rhs]);
        Ok(self.push(shape, out, Op::Mul(lhs, rhs), ng))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(&[x]);
        self.push(shape, out, op, ng)
    }

    pub fn scale(&mut self, x: Var, mul: f64) -> Var {
        self.unary(x, Op::Scale { x, mul }, |v| v * mul)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::LeakyRelu(x), |v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    /// Mean over all elements; the result is a scalar (shape `[]`).
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(&[x]);
        self.push(Vec::new(), vec![m], Op::Mean(x), ng)
    }

    /// Concatenation along the feature (last) axis of two matrices.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.matrix("concat", a)?;
        let (rb, cb) = self.matrix("concat", b)?;
        if ra != rb {
            return Err(Error::Shape {
                op: "concat",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![ra, ca + cb], out, Op::Concat(a, b), ng))
    }

    /// Feature columns `[start, end)` of a matrix.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.matrix("slice", x)?;
        if start >= end || end > c {
            return Err(Error::Shape {
                op: "slice",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, end],
            });
        }
        let v = self.value(x);
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + end]);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(vec![r, w], out, Op::Slice { x, start }, ng))
    }

    /// Per-row standardization over the feature axis:
    /// `(x - mean) / sqrt(var + 1e-5)` with the biased variance.
    pub fn feature_normalize(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix("feature-normalize", x)?;
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&u| (u - mean) * (u - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for (o, &u) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (u - mean) * inv;
            }
            inv_std.push(inv);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(vec![r, c], out, Op::FeatureNorm { x, inv_std }, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(&self.nodes[a.0].shape).unwrap();
                let n = node.shape[1];
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                // dA = dC · Bᵀ
                acc(*a, &mut |ga| {
                    gemm_acc(m, n, k, g, (n as isize, 1), vb, (1, n as isize), ga)
                });
                // dB = Aᵀ · dC
                acc(*b, &mut |gb| {
                    gemm_acc(k, m, n, va, (1, k as isize), g, (n as isize, 1), gb)
                });
            }
            Op::Add { lhs, rhs, broadcast } | Op::Sub { lhs, rhs, broadcast } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                acc(*lhs, &mut |gl| add_into(gl, g, 1.0));
                acc(*rhs, &mut |gr| {
                    if *broadcast {
                        for row in g.chunks(gr.len()) {
                            add_into(gr, row, sign);
                        }
                    } else {
                        add_into(gr, g, sign);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for ((o, &d), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *o += d * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &d), &x) in gb.iter_mut().zip(g).zip(va) {
                        *o += d * x;
                    }
                });
            }
            Op::Scale { x, mul } => acc(*x, &mut |gx| add_into(gx, g, *mul)),
            Op::Abs(x) => self.elementwise(*x, g, &mut acc, |u, _| {
                if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }, &node.value),
            Op::Square(x) => self.elementwise(*x, g, &mut acc, |u, _| 2.0 * u, &node.value),
            Op::Relu(x) => {
                self.elementwise(*x, g, &mut acc, |u, _| if u > 0.0 { 1.0 } else { 0.0 }, &node.value)
            }
            Op::LeakyRelu(x) => self.elementwise(
                *x,
                g,
                &mut acc,
                |u, _| if u > 0.0 { 1.0 } else { LEAKY_SLOPE },
                &node.value,
            ),
            Op::Tanh(x) => self.elementwise(*x, g, &mut acc, |_, y| 1.0 - y * y, &node.value),
            Op::Sigmoid(x) => self.elementwise(*x, g, &mut acc, |_, y| y * (1.0 - y), &node.value),
            Op::Log(x) => self.elementwise(*x, g, &mut acc, |u, _| 1.0 / u, &node.value),
            Op::Clamp { x, lo, hi } => self.elementwise(
                *x,
                g,
                &mut acc,
                |u, _| if u >= *lo && u <= *hi { 1.0 } else { 0.0 },
                &node.value,
            ),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                let d = g[0] / n;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += d));
            }
            Op::Concat(a, b) => {
                let ca = self.nodes[a.0].shape[1];
                let cb = self.nodes[b.0].shape[1];
                let c = ca + cb;
                acc(*a, &mut |ga| {
                    for (dst, src) in ga.chunks_mut(ca).zip(g.chunks(c)) {
                        add_into(dst, &src[..ca], 1.0);
                    }
                });
                acc(*b, &mut |gb| {
                    for (dst, src) in gb.chunks_mut(cb).zip(g.chunks(c)) {
                        add_into(dst, &src[ca..], 1.0);
                    }
                });
            }
            Op::Slice { x, start } => {
                let c = self.nodes[x.0].shape[1];
                let w = node.shape[1];
                acc(*x, &mut |gx| {
                    for (dst, src) in gx.chunks_mut(c).zip(g.chunks(w)) {
                        add_into(&mut dst[*start..*start + w], src, 1.0);
                    }
                });
            }
            Op::FeatureNorm { x, inv_std } => {
                let c = node.shape[1];
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for (i, inv) in inv_std.iter().enumerate() {
                        let dy = &g[i * c..(i + 1) * c];
                        let yr = &y[i * c..(i + 1) * c];
                        let mean_dy = dy.iter().sum::<f64>() / c as f64;
                        let mean_dyy = dy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[i * c + j] += inv * (dy[j] - mean_dy - yr[j] * mean_dyy);
                        }
                    }
                });
            }
        }
    }

    /// Accumulates `g * f(input, output)` into the input's gradient.
    fn elementwise(
        &self,
        x: Var,
        g: &[f64],
        acc: &mut GradSink,
        f: impl Fn(f64, f64) -> f64,
        out: &[f64],
    ) {
        let vx = &self.nodes[x.0].value;
        acc(x, &mut |gx| {
            for i in 0..gx.len() {
                gx[i] += g[i] * f(vx[i], out[i]);
            }
        });
    }
}

fn add_into(dst: &mut [f64], src: &[f64], mul: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += mul * s;
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`; zeros when `v` is unused.
    pub fn tensor(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape invariant"),
            None => Tensor::zeros(&shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let eye = tape.constant(&mat(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let x = mat(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let xv = tape.constant(&x);
        let y = tape.matmul(eye, xv).unwrap();
        assert_eq!(tape.value(y), x.data());
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.scalar(y), 0.5);
    }

    #[test]
    fn feature_normalize_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(&mat(1, 4, &[3.0; 4]));
        let y = tape.feature_normalize(x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(&[2, 3]));
        let b = tape.constant(&Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(&Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn l1_subgradient_entries() {
        let mut tape = Tape::new();
        let u = tape.param(&mat(2, 2, &[1.0, -2.0, 0.5, 3.0]));
        let v = tape.constant(&mat(2, 2, &[0.0, 0.0, 1.0, 1.0]));
        let d = tape.sub(u, v).unwrap();
        let a = tape.abs(d);
        let l = tape.mean(a);
        let g = tape.backward(l).unwrap();
        for &x in g.get(u).unwrap() {
            assert!((x.abs() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn abs_tie_has_zero_gradient() {
        let mut tape = Tape::new();
        let u = tape.param(&Tensor::new(vec![2], vec![0.0, 2.0]).unwrap());
        let a = tape.abs(u);
        let l = tape.mean(a);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(u).unwrap(), &[0.0, 0.5]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let u = tape.param(&Tensor::zeros(&[2, 2]));
        assert!(tape.backward(u).is_err());
    }

    #[test]
    fn broadcast_add_sums_bias_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[3, 2]));
        let b = tape.param(&Tensor::zeros(&[2]));
        let y = tape.add(x, b).unwrap();
        let l = tape.mean(y);
        let g = tape.backward(l).unwrap();
        for &v in g.get(b).unwrap() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(1.0));
        let unused = tape.param(&Tensor::zeros(&[2]));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.tensor(&tape, unused), Tensor::zeros(&[2]));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(2.0));
        let y = tape.square(x);
        let yd = tape.detach(y);
        let z = tape.mul(yd, x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap(), &[4.0]);
    }
}
