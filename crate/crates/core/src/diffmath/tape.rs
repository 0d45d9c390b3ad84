//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation on a [`Value`] appends a node to its [`Tape`]. Nodes are
//! appended in evaluation order, so the tape is already a topological order
//! of the graph and [`Value::backward`] walks it once in reverse.
//!
//! ```
//! use mvtn::diffmath::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = x.mul(x);
//! let grads = y.backward().unwrap();
//! assert_eq!(grads.get(x).item(), 6.0);
//! ```

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MulConst(usize, Tensor),
    MatMul(usize, usize),
    Conv2d(Box<ConvSaved>),
    MaxPool2d { input: usize, argmax: Vec<usize> },
    MaxRows { input: usize, argmax: Vec<usize> },
    Maximum { a: usize, b: usize, take_a: Vec<bool> },
    Relu(usize),
    Tanh(usize),
    Log(usize),
    Softmax(usize),
    Sum(usize),
    Mean(usize),
    MeanSpatial(usize),
    Concat(Vec<usize>),
    Slice { input: usize, start: usize },
    Reshape(usize),
    L2Norm(usize),
    CrossEntropy { logits: usize, label: usize, probs: Vec<f64> },
    Custom { inputs: Vec<usize>, backward: BackwardFn },
}

struct ConvSaved {
    input: usize,
    weight: usize,
    bias: usize,
    cols: Vec<f64>,
    geom: ConvGeom,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.k * self.k * self.ci
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Value<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Value<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Value#{}({:?})", self.id, self.tape.nodes.borrow()[self.id].value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Value<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Value { tape: self, id: nodes.len() - 1 }
    }

    /// A constant input; never receives gradient.
    pub fn constant(&self, t: Tensor) -> Value<'_> {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&self, t: Tensor) -> Value<'_> {
        self.push(t, Op::Leaf, true)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Appends an op whose backward rule is supplied by the caller.
    ///
    /// `backward` receives the gradient of the output and must return one
    /// entry per input (`None` where no gradient flows).
    pub fn custom<'t>(
        &'t self,
        inputs: &[Value<'t>],
        output: Tensor,
        backward: impl Fn(&Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Value<'t> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = ids.iter().any(|&i| self.rg(i));
        self.push(output, Op::Custom { inputs: ids, backward: Box::new(backward) }, rg)
    }
}

/// Gradients produced by [`Value::backward`], keyed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if `v` is unreachable
    /// or does not require gradient.
    pub fn get(&self, v: Value<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }

    /// Like [`Gradients::get`] but moves the tensor out.
    pub fn take(&mut self, v: Value<'_>) -> Tensor {
        match self.grads[v.id].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }

    /// Collects the gradients of a set of named leaves.
    pub fn collect_named(&mut self, named: &HashMap<String, Value<'_>>) -> HashMap<String, Tensor> {
        named.iter().map(|(k, v)| (k.clone(), self.take(*v))).collect()
    }
}

fn bin_check(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl<'t> Value<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn unary(&self, out: Tensor, op: Op) -> Value<'t> {
        let rg = self.requires_grad();
        self.tape.push(out, op, rg)
    }

    fn binary(&self, other: Value<'t>, out: Tensor, op: Op) -> Value<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(out, op, rg)
    }

    pub fn add(&self, other: Value<'t>) -> Value<'t> {
        let out = {
            let (a, b) = (self.value(), other.value());
            bin_check("add", &a, &b);
            a.zip_map(&b, |x, y| x + y)
        };
        self.binary(other, out, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Value<'t>) -> Value<'t> {
        let out = {
            let (a, b) = (self.value(), other.value());
            bin_check("sub", &a, &b);
            a.zip_map(&b, |x, y| x - y)
        };
        self.binary(other, out, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Value<'t>) -> Value<'t> {
        let out = {
            let (a, b) = (self.value(), other.value());
            bin_check("mul", &a, &b);
            a.zip_map(&b, |x, y| x * y)
        };
        self.binary(other, out, Op::Mul(self.id, other.id))
    }

    /// `[.., C] + [C]`, broadcasting the bias over leading axes.
    pub fn add_row(&self, bias: Value<'t>) -> Value<'t> {
        let out = {
            let (a, b) = (self.value(), bias.value());
            let c = b.numel();
            assert_eq!(a.shape().last().copied(), Some(c), "add_row: bias width mismatch");
            let mut out = a.clone();
            for row in out.data_mut().chunks_mut(c) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        self.binary(bias, out, Op::AddRow(self.id, bias.id))
    }

    pub fn scale(&self, s: f64) -> Value<'t> {
        let out = self.value().map(|x| x * s);
        self.unary(out, Op::Scale(self.id, s))
    }

    /// Adds a constant tensor of the same shape (identity gradient).
    pub fn add_const(&self, c: &Tensor) -> Value<'t> {
        let out = {
            let a = self.value();
            bin_check("add_const", &a, c);
            a.zip_map(c, |x, y| x + y)
        };
        self.unary(out, Op::AddConst(self.id))
    }

    /// Element-wise product with a constant tensor of the same shape.
    pub fn mul_const(&self, c: &Tensor) -> Value<'t> {
        let out = {
            let a = self.value();
            bin_check("mul_const", &a, c);
            a.zip_map(c, |x, y| x * y)
        };
        self.unary(out, Op::MulConst(self.id, c.clone()))
    }

    /// `[n, k] x [k, m] -> [n, m]`
    pub fn matmul(&self, other: Value<'t>) -> Value<'t> {
        let out = {
            let (a, b) = (self.value(), other.value());
            let (sa, sb) = (a.shape(), b.shape());
            assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul: {sa:?} x {sb:?}");
            let (n, k, m) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; n * m];
            matmul_acc(a.data(), b.data(), &mut out, n, k, m);
            Tensor::new(&[n, m], out)
        };
        self.binary(other, out, Op::MatMul(self.id, other.id))
    }

    /// 2-D convolution over an `[N, H, W, Ci]` input with a `[k, k, Ci, Co]`
    /// kernel and `[Co]` bias; output `[N, Ho, Wo, Co]`.
    pub fn conv2d(&self, weight: Value<'t>, bias: Value<'t>, stride: usize, pad: usize) -> Value<'t> {
        let (out, cols, geom) = {
            let (x, w, b) = (self.value(), weight.value(), bias.value());
            let (sx, sw) = (x.shape(), w.shape());
            assert!(sx.len() == 4 && sw.len() == 4, "conv2d expects NHWC input and kkCiCo kernel");
            assert_eq!(sw[0], sw[1], "conv2d: square kernels only");
            assert_eq!(sx[3], sw[2], "conv2d: channel mismatch");
            assert_eq!(b.numel(), sw[3], "conv2d: bias width mismatch");
            let k = sw[0];
            let ho = (sx[1] + 2 * pad - k) / stride + 1;
            let wo = (sx[2] + 2 * pad - k) / stride + 1;
            let geom = ConvGeom { n: sx[0], h: sx[1], w: sx[2], ci: sx[3], co: sw[3], k, stride, pad, ho, wo };
            let cols = im2col(x.data(), &geom);
            let rows = geom.n * ho * wo;
            let mut out = Vec::with_capacity(rows * geom.co);
            for _ in 0..rows {
                out.extend_from_slice(b.data());
            }
            matmul_acc(&cols, w.data(), &mut out, rows, geom.patch(), geom.co);
            (Tensor::new(&[geom.n, ho, wo, geom.co], out), cols, geom)
        };
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        let saved = ConvSaved { input: self.id, weight: weight.id, bias: bias.id, cols, geom };
        self.tape.push(out, Op::Conv2d(Box::new(saved)), rg)
    }

    /// 2x2, stride 2 spatial max-pool over `[N, H, W, C]`.
    pub fn max_pool2d(&self) -> Value<'t> {
        let (out, argmax) = {
            let x = self.value();
            let s = x.shape();
            assert_eq!(s.len(), 4, "max_pool2d expects NHWC");
            let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
            let (ho, wo) = (h / 2, w / 2);
            let mut out = Vec::with_capacity(n * ho * wo * c);
            let mut argmax = Vec::with_capacity(n * ho * wo * c);
            for b in 0..n {
                for i in 0..ho {
                    for j in 0..wo {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            let mut bi = 0;
                            for di in 0..2 {
                                for dj in 0..2 {
                                    let idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                                    if x.data()[idx] > best {
                                        best = x.data()[idx];
                                        bi = idx;
                                    }
                                }
                            }
                            out.push(best);
                            argmax.push(bi);
                        }
                    }
                }
            }
            (Tensor::new(&[n, ho, wo, c], out), argmax)
        };
        self.unary(out, Op::MaxPool2d { input: self.id, argmax })
    }

    /// Column-wise maximum of an `[R, C]` matrix, giving `[C]`.
    /// Ties resolve to the lowest row index.
    pub fn max_rows(&self) -> Value<'t> {
        let (out, argmax) = {
            let x = self.value();
            let s = x.shape();
            assert_eq!(s.len(), 2, "max_rows expects a matrix");
            let (r, c) = (s[0], s[1]);
            assert!(r >= 1, "max_rows over zero rows");
            let mut out = x.data()[..c].to_vec();
            let mut argmax = vec![0usize; c];
            for i in 1..r {
                for j in 0..c {
                    let v = x.data()[i * c + j];
                    if v > out[j] {
                        out[j] = v;
                        argmax[j] = i;
                    }
                }
            }
            (Tensor::new(&[c], out), argmax)
        };
        self.unary(out, Op::MaxRows { input: self.id, argmax })
    }

    /// Element-wise maximum; ties go to `self`.
    pub fn maximum(&self, other: Value<'t>) -> Value<'t> {
        let (out, take_a) = {
            let (a, b) = (self.value(), other.value());
            bin_check("maximum", &a, &b);
            let take_a: Vec<bool> = a.data().iter().zip(b.data()).map(|(x, y)| x >= y).collect();
            (a.zip_map(&b, f64::max), take_a)
        };
        self.binary(other, out, Op::Maximum { a: self.id, b: other.id, take_a })
    }

    pub fn relu(&self) -> Value<'t> {
        let out = self.value().map(|x| x.max(0.0));
        self.unary(out, Op::Relu(self.id))
    }

    pub fn tanh(&self) -> Value<'t> {
        let out = self.value().map(f64::tanh);
        self.unary(out, Op::Tanh(self.id))
    }

    pub fn log(&self) -> Value<'t> {
        let out = self.value().map(f64::ln);
        self.unary(out, Op::Log(self.id))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Value<'t> {
        let out = {
            let x = self.value();
            let c = *x.shape().last().expect("softmax of a scalar");
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(c) {
                softmax_in_place(row);
            }
            out
        };
        self.unary(out, Op::Softmax(self.id))
    }

    pub fn sum(&self) -> Value<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Value<'t> {
        let out = {
            let x = self.value();
            Tensor::scalar(x.sum() / x.numel() as f64)
        };
        self.unary(out, Op::Mean(self.id))
    }

    /// Global average pool `[N, H, W, C] -> [N, C]`.
    pub fn mean_spatial(&self) -> Value<'t> {
        let out = {
            let x = self.value();
            let s = x.shape();
            assert_eq!(s.len(), 4, "mean_spatial expects NHWC");
            let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
            let mut out = vec![0.0; n * c];
            for b in 0..n {
                let o = &mut out[b * c..(b + 1) * c];
                for p in 0..hw {
                    let px = &x.data()[(b * hw + p) * c..(b * hw + p + 1) * c];
                    for (a, v) in o.iter_mut().zip(px) {
                        *a += v;
                    }
                }
                for a in o.iter_mut() {
                    *a /= hw as f64;
                }
            }
            Tensor::new(&[n, c], out)
        };
        self.unary(out, Op::MeanSpatial(self.id))
    }

    /// Concatenates the flattened contents of `parts` into a vector.
    pub fn concat(parts: &[Value<'t>]) -> Value<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let out = {
            let mut data = Vec::new();
            for p in parts {
                data.extend_from_slice(p.value().data());
            }
            Tensor::vector(data)
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        tape.push(out, Op::Concat(parts.iter().map(|p| p.id).collect()), rg)
    }

    /// Flat slice `[start, start + len)` as a vector.
    pub fn slice(&self, start: usize, len: usize) -> Value<'t> {
        let out = Tensor::vector(self.value().data()[start..start + len].to_vec());
        self.unary(out, Op::Slice { input: self.id, start })
    }

    pub fn reshape(&self, shape: &[usize]) -> Value<'t> {
        let out = self.value().clone().reshaped(shape);
        self.unary(out, Op::Reshape(self.id))
    }

    /// Euclidean norm of all elements.
    pub fn l2_norm(&self) -> Value<'t> {
        let out = Tensor::scalar(self.value().sq_norm().sqrt());
        self.unary(out, Op::L2Norm(self.id))
    }

    /// `-log softmax(self)[label]` for a logit vector, computed with
    /// max-subtraction.
    pub fn cross_entropy(&self, label: usize) -> Result<Value<'t>> {
        let (loss, probs) = {
            let x = self.value();
            let k = x.numel();
            if label >= k {
                return Err(Error::InvalidArgument(format!("label {label} out of range for {k} classes")));
            }
            let mx = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + x.data().iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            let mut probs = x.data().to_vec();
            softmax_in_place(&mut probs);
            (lse - x.data()[label], probs)
        };
        Ok(self.unary(Tensor::scalar(loss), Op::CrossEntropy { logits: self.id, label, probs }))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[self.id].value.numel() != 1 {
            return Err(Error::InvalidArgument("backward requires scalar".into()));
        }
        if nodes[self.id].requires_grad {
            grads[self.id] = Some(Tensor::full(nodes[self.id].value.shape(), 1.0));
        }
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let contribs = local_backward(&nodes, node, &g);
            grads[id] = Some(g);
            for (input, cg) in contribs {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&cg),
                    slot @ None => *slot = Some(cg),
                }
            }
        }
        // Intermediate gradients are kept; only nodes flagged requires_grad hold any.
        Ok(Gradients { grads, shapes })
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.patch();
    let mut cols = vec![0.0; g.n * g.ho * g.wo * patch];
    for b in 0..g.n {
        for oi in 0..g.ho {
            for oj in 0..g.wo {
                let row = ((b * g.ho + oi) * g.wo + oj) * patch;
                for ki in 0..g.k {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    for kj in 0..g.k {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj < 0 || jj >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + ii as usize) * g.w + jj as usize) * g.ci;
                        let dst = row + (ki * g.k + kj) * g.ci;
                        cols[dst..dst + g.ci].copy_from_slice(&x[src..src + g.ci]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.patch();
    let mut x = vec![0.0; g.n * g.h * g.w * g.ci];
    for b in 0..g.n {
        for oi in 0..g.ho {
            for oj in 0..g.wo {
                let row = ((b * g.ho + oi) * g.wo + oj) * patch;
                for ki in 0..g.k {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    for kj in 0..g.k {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj < 0 || jj >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + ii as usize) * g.w + jj as usize) * g.ci;
                        let src = row + (ki * g.k + kj) * g.ci;
                        for c in 0..g.ci {
                            x[dst + c] += cols[src + c];
                        }
                    }
                }
            }
        }
    }
    x
}

fn local_backward(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
        Op::Mul(a, b) => {
            let mut out = vec![];
            if rg(*a) {
                out.push((*a, g.zip_map(val(*b), |x, y| x * y)));
            }
            if rg(*b) {
                out.push((*b, g.zip_map(val(*a), |x, y| x * y)));
            }
            out
        }
        Op::AddRow(a, b) => {
            let c = val(*b).numel();
            let mut gb = vec![0.0; c];
            for row in g.data().chunks(c) {
                for (o, v) in gb.iter_mut().zip(row) {
                    *o += v;
                }
            }
            vec![(*a, g.clone()), (*b, Tensor::new(val(*b).shape(), gb))]
        }
        Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
        Op::AddConst(a) => vec![(*a, g.clone())],
        Op::MulConst(a, c) => vec![(*a, g.zip_map(c, |x, y| x * y))],
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let mut out = vec![];
            if rg(*a) {
                let mut ga = vec![0.0; n * k];
                matmul_bt_acc(g.data(), tb.data(), &mut ga, n, k, m);
                out.push((*a, Tensor::new(&[n, k], ga)));
            }
            if rg(*b) {
                let mut gb = vec![0.0; k * m];
                matmul_at_acc(ta.data(), g.data(), &mut gb, n, k, m);
                out.push((*b, Tensor::new(&[k, m], gb)));
            }
            out
        }
        Op::Conv2d(s) => {
            let geo = &s.geom;
            let rows = geo.n * geo.ho * geo.wo;
            let patch = geo.patch();
            let mut out = vec![];
            if rg(s.weight) {
                let mut gw = vec![0.0; patch * geo.co];
                matmul_at_acc(&s.cols, g.data(), &mut gw, rows, patch, geo.co);
                out.push((s.weight, Tensor::new(val(s.weight).shape(), gw)));
            }
            if rg(s.bias) {
                let mut gb = vec![0.0; geo.co];
                for row in g.data().chunks(geo.co) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                out.push((s.bias, Tensor::vector(gb)));
            }
            if rg(s.input) {
                let mut gcols = vec![0.0; rows * patch];
                matmul_bt_acc(g.data(), val(s.weight).data(), &mut gcols, rows, patch, geo.co);
                let gx = col2im(&gcols, geo);
                out.push((s.input, Tensor::new(val(s.input).shape(), gx)));
            }
            out
        }
        Op::MaxPool2d { input, argmax } => {
            let mut gi = Tensor::zeros(val(*input).shape());
            for (&idx, &gv) in argmax.iter().zip(g.data()) {
                gi.data_mut()[idx] += gv;
            }
            vec![(*input, gi)]
        }
        Op::MaxRows { input, argmax } => {
            let cols = g.numel();
            let mut gi = Tensor::zeros(val(*input).shape());
            for (j, (&row, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                gi.data_mut()[row * cols + j] += gv;
            }
            vec![(*input, gi)]
        }
        Op::Maximum { a, b, take_a } => {
            let ga: Vec<f64> = g.data().iter().zip(take_a).map(|(&v, &t)| if t { v } else { 0.0 }).collect();
            let gb: Vec<f64> = g.data().iter().zip(take_a).map(|(&v, &t)| if t { 0.0 } else { v }).collect();
            vec![(*a, Tensor::new(g.shape(), ga)), (*b, Tensor::new(g.shape(), gb))]
        }
        Op::Relu(a) => vec![(*a, g.zip_map(&node.value, |gv, y| if y > 0.0 { gv } else { 0.0 }))],
        Op::Tanh(a) => vec![(*a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y)))],
        Op::Log(a) => vec![(*a, g.zip_map(val(*a), |gv, x| gv / x))],
        Op::Softmax(a) => {
            let c = *node.value.shape().last().unwrap();
            let mut gi = node.value.clone();
            for (yr, gr) in gi.data_mut().chunks_mut(c).zip(g.data().chunks(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                for (y, gv) in yr.iter_mut().zip(gr) {
                    *y *= gv - dot;
                }
            }
            vec![(*a, gi)]
        }
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
        }
        Op::MeanSpatial(a) => {
            let s = val(*a).shape();
            let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
            let mut gi = vec![0.0; n * hw * c];
            for b in 0..n {
                let gr = &g.data()[b * c..(b + 1) * c];
                for p in 0..hw {
                    for (o, gv) in gi[(b * hw + p) * c..(b * hw + p + 1) * c].iter_mut().zip(gr) {
                        *o = gv / hw as f64;
                    }
                }
            }
            vec![(*a, Tensor::new(s, gi))]
        }
        Op::Concat(parts) => {
            let mut off = 0;
            parts
                .iter()
                .map(|&p| {
                    let n = val(p).numel();
                    let t = Tensor::new(val(p).shape(), g.data()[off..off + n].to_vec());
                    off += n;
                    (p, t)
                })
                .collect()
        }
        Op::Slice { input, start } => {
            let mut gi = Tensor::zeros(val(*input).shape());
            gi.data_mut()[*start..*start + g.numel()].copy_from_slice(g.data());
            vec![(*input, gi)]
        }
        Op::Reshape(a) => vec![(*a, g.clone().reshaped(val(*a).shape()))],
        Op::L2Norm(a) => {
            let nrm = node.value.item();
            let s = if nrm > 0.0 { g.item() / nrm } else { 0.0 };
            vec![(*a, val(*a).map(|x| x * s))]
        }
        Op::CrossEntropy { logits, label, probs } => {
            let mut gi = probs.clone();
            gi[*label] -= 1.0;
            let gv = g.item();
            for v in gi.iter_mut() {
                *v *= gv;
            }
            vec![(*logits, Tensor::new(val(*logits).shape(), gi))]
        }
        Op::Custom { inputs, backward } => {
            let gs = backward(g);
            assert_eq!(gs.len(), inputs.len(), "custom op returned wrong gradient count");
            inputs.iter().zip(gs).filter_map(|(&i, gi)| gi.map(|t| (i, t))).collect()
        }
    }
}
