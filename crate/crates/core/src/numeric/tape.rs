//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its vector-Jacobian product. [`Tape::backward`] walks the
//! nodes in reverse creation order, which is a reverse topological order
//! because inputs always precede their consumers.

use std::cell::{Ref, RefCell};

use super::{NumericError, ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    height: usize,
    width: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    pad: usize,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    Slice {
        x: Var,
        start: usize,
        end: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    ScatterAddRows {
        x: Var,
        index: Vec<usize>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        cols: Vec<T>,
        geom: ConvGeom,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Recording context for one forward/backward pass.
///
/// A tape optionally borrows a [`ParamStore`]; parameters are copied onto the
/// tape lazily the first time [`Tape::param`] asks for them, so parameters a
/// forward pass never touches get no gradient entry.
pub struct Tape<'p, T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: RefCell<Vec<Option<Var>>>,
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> NumericError {
    NumericError::Shape(msg)
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: None,
            param_vars: RefCell::new(Vec::new()),
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: Some(params),
            param_vars: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient.
    pub fn variable(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter.
    pub fn param(&self, id: ParamId) -> Var {
        let store = self
            .params
            .expect("tape was created without a parameter store");
        if let Some(v) = self.param_vars.borrow()[id.index()] {
            return v;
        }
        let var = self.variable(store.get(id).clone());
        self.nodes.borrow_mut()[var.0].param = Some(id);
        self.param_vars.borrow_mut()[id.index()] = Some(var);
        var
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    // ---------------------------------------------------------------- ops

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(shape_err(format!("matmul {sa:?} x {sb:?}")));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut c = vec![T::zero(); m * n];
            T::gemm(
                m,
                k,
                n,
                T::one(),
                av.data(),
                (k, 1),
                bv.data(),
                (n, 1),
                T::zero(),
                &mut c,
                (n, 1),
            );
            Tensor::new(&[m, n], c)?
        };
        Ok(self.push(out, Op::MatMul { a, b }, self.needs(&[a, b])))
    }

    /// Adds a vector along the trailing axis of `x`.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var, NumericError> {
        let out = {
            let nodes = self.nodes.borrow();
            let (xv, bv) = (&nodes[x.0].value, &nodes[bias.0].value);
            let n = xv.last_dim();
            if bv.shape() != [n] {
                return Err(shape_err(format!(
                    "bias {:?} for input {:?}",
                    bv.shape(),
                    xv.shape()
                )));
            }
            let mut data = xv.data().to_vec();
            for row in data.chunks_mut(n) {
                for (o, &b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            Tensor::new(xv.shape(), data)?
        };
        Ok(self.push(out, Op::AddBias { x, bias }, self.needs(&[x, bias])))
    }

    /// `x · w + b` for `x: [m, n]`, `w: [n, k]`, `b: [k]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn zip_same(
        &self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, NumericError> {
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err(format!(
                "{name} {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }, self.needs(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }, self.needs(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, self.needs(&[a, b])))
    }

    pub fn scale(&self, x: Var, factor: f64) -> Var {
        let factor = T::from_f64(factor);
        let out = self.map(x, |v| v * factor);
        self.push(out, Op::Scale { x, factor }, self.needs(&[x]))
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.0].value;
        Tensor::new(xv.shape(), xv.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu { x }, self.needs(&[x]))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.map(x, |v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { x }, self.needs(&[x]))
    }

    pub fn tanh(&self, x: Var) -> Var {
        let out = self.map(x, |v| v.tanh());
        self.push(out, Op::Tanh { x }, self.needs(&[x]))
    }

    /// Concatenates along the trailing axis; all leading extents must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var, NumericError> {
        if parts.is_empty() {
            return Err(shape_err("concat of nothing".into()));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let lead = {
                let s = nodes[parts[0].0].value.shape();
                s[..s.len().saturating_sub(1)].to_vec()
            };
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let s = nodes[p.0].value.shape();
                if s.is_empty() || s[..s.len() - 1] != lead[..] {
                    return Err(shape_err(format!(
                        "concat leading extents {lead:?} vs {s:?}"
                    )));
                }
                widths.push(s[s.len() - 1]);
            }
            let total: usize = widths.iter().sum();
            let rows: usize = lead.iter().product();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&nodes[p.0].value.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead;
            shape.push(total);
            Tensor::new(&shape, data)?
        };
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            self.needs(parts),
        ))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var, NumericError> {
        let out = self.nodes.borrow()[x.0].value.clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }, self.needs(&[x])))
    }

    /// Columns `start..end` of the trailing axis.
    pub fn slice(&self, x: Var, start: usize, end: usize) -> Result<Var, NumericError> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let n = xv.last_dim();
            if start >= end || end > n || xv.shape().is_empty() {
                return Err(shape_err(format!(
                    "slice {start}..{end} of {:?}",
                    xv.shape()
                )));
            }
            let data = xv
                .data()
                .chunks(n)
                .flat_map(|row| row[start..end].iter().copied())
                .collect();
            let mut shape = xv.shape().to_vec();
            *shape.last_mut().unwrap() = end - start;
            Tensor::new(&shape, data)?
        };
        Ok(self.push(out, Op::Slice { x, start, end }, self.needs(&[x])))
    }

    /// Picks rows of a `[rows, n]` matrix; rows may repeat.
    pub fn gather_rows(&self, x: Var, index: &[usize]) -> Result<Var, NumericError> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            if xv.shape().len() != 2 {
                return Err(shape_err(format!("gather_rows on {:?}", xv.shape())));
            }
            let (rows, n) = (xv.shape()[0], xv.shape()[1]);
            let mut data = Vec::with_capacity(index.len() * n);
            for &r in index {
                if r >= rows {
                    return Err(shape_err(format!("gather row {r} of {rows}")));
                }
                data.extend_from_slice(&xv.data()[r * n..(r + 1) * n]);
            }
            Tensor::new(&[index.len(), n], data)?
        };
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            self.needs(&[x]),
        ))
    }

    /// Sums row `r` of `x` into output row `index[r]`, in ascending `r`
    /// order, accumulating in 64-bit.
    pub fn scatter_add_rows(
        &self,
        x: Var,
        index: &[usize],
        rows: usize,
    ) -> Result<Var, NumericError> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            if xv.shape().len() != 2 || xv.shape()[0] != index.len() {
                return Err(shape_err(format!(
                    "scatter_add_rows {:?} with {} indices",
                    xv.shape(),
                    index.len()
                )));
            }
            let n = xv.shape()[1];
            let mut acc = vec![0.0f64; rows * n];
            for (r, &dst) in index.iter().enumerate() {
                if dst >= rows {
                    return Err(shape_err(format!("scatter row {dst} of {rows}")));
                }
                for (a, &v) in acc[dst * n..(dst + 1) * n]
                    .iter_mut()
                    .zip(&xv.data()[r * n..(r + 1) * n])
                {
                    *a += v.as_f64();
                }
            }
            Tensor::new(&[rows, n], acc.into_iter().map(T::from_f64).collect())?
        };
        Ok(self.push(
            out,
            Op::ScatterAddRows {
                x,
                index: index.to_vec(),
            },
            self.needs(&[x]),
        ))
    }

    /// Size-preserving cross-correlation of `x: [B, H, W, Cin]` with
    /// `kernel: [k, k, Cin, Cout]`.
    ///
    /// Padding is `k / 2` before and `k - 1 - k / 2` after along each spatial
    /// axis, so even kernels pad one more on the top/left.
    pub fn conv2d(&self, x: Var, kernel: Var) -> Result<Var, NumericError> {
        let (out, cols, geom) = {
            let nodes = self.nodes.borrow();
            let (xv, kv) = (&nodes[x.0].value, &nodes[kernel.0].value);
            let (sx, sk) = (xv.shape(), kv.shape());
            if sx.len() != 4 || sk.len() != 4 || sk[0] != sk[1] || sk[2] != sx[3] {
                return Err(shape_err(format!("conv2d input {sx:?} kernel {sk:?}")));
            }
            let geom = ConvGeom {
                batch: sx[0],
                height: sx[1],
                width: sx[2],
                c_in: sx[3],
                c_out: sk[3],
                kernel: sk[0],
                pad: sk[0] / 2,
            };
            let cols = im2col(xv.data(), &geom);
            let rows = geom.batch * geom.height * geom.width;
            let inner = geom.kernel * geom.kernel * geom.c_in;
            let mut out = vec![T::zero(); rows * geom.c_out];
            T::gemm(
                rows,
                inner,
                geom.c_out,
                T::one(),
                &cols,
                (inner, 1),
                kv.data(),
                (geom.c_out, 1),
                T::zero(),
                &mut out,
                (geom.c_out, 1),
            );
            (
                Tensor::new(&[geom.batch, geom.height, geom.width, geom.c_out], out)?,
                cols,
                geom,
            )
        };
        let rg = self.needs(&[x, kernel]);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                kernel,
                cols,
                geom,
            },
            rg,
        ))
    }

    /// 2x2 max-pool with stride 2 on `[B, H, W, C]`; ties go to the lowest
    /// linear index.
    pub fn maxpool2(&self, x: Var) -> Result<Var, NumericError> {
        let (out, argmax) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let s = xv.shape();
            if s.len() != 4 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
                return Err(shape_err(format!(
                    "maxpool2 needs even [B,H,W,C], got {s:?}"
                )));
            }
            let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
            let (oh, ow) = (h / 2, w / 2);
            let src = xv.data();
            let mut out = Vec::with_capacity(b * oh * ow * c);
            let mut argmax = Vec::with_capacity(b * oh * ow * c);
            for bi in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let at = |y: usize, xx: usize| ((bi * h + y) * w + xx) * c + ch;
                            let cands = [
                                at(2 * oy, 2 * ox),
                                at(2 * oy, 2 * ox + 1),
                                at(2 * oy + 1, 2 * ox),
                                at(2 * oy + 1, 2 * ox + 1),
                            ];
                            let mut best = cands[0];
                            for &i in &cands[1..] {
                                if src[i] > src[best] {
                                    best = i;
                                }
                            }
                            out.push(src[best]);
                            argmax.push(best);
                        }
                    }
                }
            }
            (Tensor::new(&[b, oh, ow, c], out)?, argmax)
        };
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, self.needs(&[x])))
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(&self, x: Var) -> Var {
        let total = self.nodes.borrow()[x.0]
            .value
            .data()
            .iter()
            .map(|v| v.as_f64())
            .sum::<f64>();
        self.push(
            Tensor::scalar(T::from_f64(total)),
            Op::Sum { x },
            self.needs(&[x]),
        )
    }

    /// Mean of squared differences, as a 0-d tensor.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if av.shape() != bv.shape() || av.is_empty() {
                return Err(shape_err(format!(
                    "mse {:?} vs {:?}",
                    av.shape(),
                    bv.shape()
                )));
            }
            let s: f64 = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| {
                    let d = x.as_f64() - y.as_f64();
                    d * d
                })
                .sum();
            s / av.len() as f64
        };
        Ok(self.push(
            Tensor::scalar(T::from_f64(value)),
            Op::Mse { a, b },
            self.needs(&[a, b]),
        ))
    }

    // ----------------------------------------------------------- backward

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(shape_err(format!(
                "backward from non-scalar {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            backprop(&nodes, node, &dy, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }

        let mut params = Vec::new();
        if let Some(store) = self.params {
            params = vec![None; store.len()];
            for (i, slot) in self.param_vars.borrow().iter().enumerate() {
                if let Some(v) = slot {
                    if let Some(g) = &grads[v.0] {
                        params[i] = Some(Tensor::new(store.get(ParamId(i)).shape(), g.clone())?);
                    }
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            nodes: grads,
            shapes,
            params,
        })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, g: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backprop<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if wants(*a) {
                let mut da = vec![T::zero(); m * k];
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    dy,
                    (n, 1),
                    bv.data(),
                    (1, n),
                    T::zero(),
                    &mut da,
                    (k, 1),
                );
                accumulate(grads, nodes, *a, da);
            }
            if wants(*b) {
                let mut db = vec![T::zero(); k * n];
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    av.data(),
                    (1, k),
                    dy,
                    (n, 1),
                    T::zero(),
                    &mut db,
                    (n, 1),
                );
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::AddBias { x, bias } => {
            if wants(*bias) {
                let n = val(*bias).len();
                let mut db = vec![T::zero(); n];
                for row in dy.chunks(n) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                accumulate(grads, nodes, *bias, db);
            }
            accumulate(grads, nodes, *x, dy.to_vec());
        }
        Op::Add { a, b } => {
            accumulate(grads, nodes, *a, dy.to_vec());
            accumulate(grads, nodes, *b, dy.to_vec());
        }
        Op::Sub { a, b } => {
            accumulate(grads, nodes, *a, dy.to_vec());
            if wants(*b) {
                accumulate(grads, nodes, *b, dy.iter().map(|&g| -g).collect());
            }
        }
        Op::Mul { a, b } => {
            if wants(*a) {
                let g = dy
                    .iter()
                    .zip(val(*b).data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                accumulate(grads, nodes, *a, g);
            }
            if wants(*b) {
                let g = dy
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&g, &x)| g * x)
                    .collect();
                accumulate(grads, nodes, *b, g);
            }
        }
        Op::Scale { x, factor } => {
            accumulate(grads, nodes, *x, dy.iter().map(|&g| g * *factor).collect());
        }
        Op::Relu { x } => {
            let g = dy
                .iter()
                .zip(node.value.data())
                .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                .collect();
            accumulate(grads, nodes, *x, g);
        }
        Op::Sigmoid { x } => {
            let g = dy
                .iter()
                .zip(node.value.data())
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect();
            accumulate(grads, nodes, *x, g);
        }
        Op::Tanh { x } => {
            let g = dy
                .iter()
                .zip(node.value.data())
                .map(|(&g, &y)| g * (T::one() - y * y))
                .collect();
            accumulate(grads, nodes, *x, g);
        }
        Op::Concat { parts } => {
            let widths: Vec<usize> = parts.iter().map(|p| val(*p).last_dim()).collect();
            let total: usize = widths.iter().sum();
            let rows = dy.len() / total.max(1);
            let mut offset = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                if wants(*p) {
                    let mut g = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        g.extend_from_slice(&dy[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, nodes, *p, g);
                }
                offset += w;
            }
        }
        Op::Reshape { x } => accumulate(grads, nodes, *x, dy.to_vec()),
        Op::Slice { x, start, end } => {
            let n = val(*x).last_dim();
            let w = end - start;
            let mut g = vec![T::zero(); val(*x).len()];
            for (r, row) in dy.chunks(w).enumerate() {
                g[r * n + start..r * n + end].copy_from_slice(row);
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::GatherRows { x, index } => {
            let n = val(*x).last_dim();
            let mut g = vec![T::zero(); val(*x).len()];
            for (r, &src) in index.iter().enumerate() {
                for (a, &d) in g[src * n..(src + 1) * n]
                    .iter_mut()
                    .zip(&dy[r * n..(r + 1) * n])
                {
                    *a += d;
                }
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::ScatterAddRows { x, index } => {
            let n = val(*x).last_dim();
            let mut g = Vec::with_capacity(index.len() * n);
            for &dst in index {
                g.extend_from_slice(&dy[dst * n..(dst + 1) * n]);
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::Conv2d {
            x,
            kernel,
            cols,
            geom,
        } => {
            let rows = geom.batch * geom.height * geom.width;
            let inner = geom.kernel * geom.kernel * geom.c_in;
            if wants(*kernel) {
                let mut dk = vec![T::zero(); inner * geom.c_out];
                T::gemm(
                    inner,
                    rows,
                    geom.c_out,
                    T::one(),
                    cols,
                    (1, inner),
                    dy,
                    (geom.c_out, 1),
                    T::zero(),
                    &mut dk,
                    (geom.c_out, 1),
                );
                accumulate(grads, nodes, *kernel, dk);
            }
            if wants(*x) {
                let mut dcols = vec![T::zero(); rows * inner];
                T::gemm(
                    rows,
                    geom.c_out,
                    inner,
                    T::one(),
                    dy,
                    (geom.c_out, 1),
                    val(*kernel).data(),
                    (1, geom.c_out),
                    T::zero(),
                    &mut dcols,
                    (inner, 1),
                );
                accumulate(grads, nodes, *x, col2im(&dcols, geom));
            }
        }
        Op::MaxPool2 { x, argmax } => {
            let mut g = vec![T::zero(); val(*x).len()];
            for (&src, &d) in argmax.iter().zip(dy) {
                g[src] += d;
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::Sum { x } => {
            accumulate(grads, nodes, *x, vec![dy[0]; val(*x).len()]);
        }
        Op::Mse { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let scale = dy[0] * T::from_f64(2.0 / av.len() as f64);
            let diff: Vec<T> = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| (x - y) * scale)
                .collect();
            if wants(*b) {
                accumulate(grads, nodes, *b, diff.iter().map(|&d| -d).collect());
            }
            accumulate(grads, nodes, *a, diff);
        }
    }
}

fn im2col<T: Scalar>(src: &[T], g: &ConvGeom) -> Vec<T> {
    let (h, w, c, k) = (g.height, g.width, g.c_in, g.kernel);
    let inner = k * k * c;
    let mut cols = vec![T::zero(); g.batch * h * w * inner];
    for b in 0..g.batch {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * inner;
                for ky in 0..k {
                    let sy = y as isize + ky as isize - g.pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - g.pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let from = ((b * h + sy as usize) * w + sx as usize) * c;
                        let to = row + (ky * k + kx) * c;
                        cols[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (h, w, c, k) = (g.height, g.width, g.c_in, g.kernel);
    let inner = k * k * c;
    let mut out = vec![T::zero(); g.batch * h * w * c];
    for b in 0..g.batch {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * inner;
                for ky in 0..k {
                    let sy = y as isize + ky as isize - g.pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - g.pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let to = ((b * h + sy as usize) * w + sx as usize) * c;
                        let from = row + (ky * k + kx) * c;
                        for (o, &v) in out[to..to + c].iter_mut().zip(&cols[from..from + c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf node, if it received one. Interior gradients are
    /// released during the backward sweep.
    pub fn wrt(&self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    /// Per-parameter gradients in store order; `None` for parameters the
    /// forward pass never read.
    pub fn params(&self) -> &[Option<Tensor<T>>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }
}
