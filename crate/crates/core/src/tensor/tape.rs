use super::conv::ConvGeometry;
use super::params::ParamGrads;
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    Conv3d { input: Var, kernel: Var, geom: ConvGeometry },
    Relu(Var),
    ChannelAffine { x: Var, scale: Var, shift: Var },
    BiasAdd { x: Var, bias: Var },
    GlobalAvgPool(Var),
    Linear { x: Var, weight: Var, bias: Var },
    ConcatLast { a: Var, b: Var },
    TemporalStride { x: Var, stride: usize },
    L2Normalize { x: Var, norm: f64 },
    CosineDistance { a: Var, b: Var },
    TripletLoss { dap: Var, dan: Var, margin: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed operations.
///
/// Every op appends one node whose inputs precede it, so walking the node
/// list backwards is a valid reverse topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one [`Tape::backward`] pass.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the seeded output with respect to `var`, if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Collects gradients of every bound parameter, indexed by parameter
    /// position in its store. Parameters bound more than once are summed.
    pub fn param_grads(&self, n_params: usize) -> ParamGrads<T> {
        let mut out = ParamGrads::new(n_params);
        for &(node, param) in &self.params {
            if let Some(g) = &self.grads[node] {
                out.add_into(param, g);
            }
        }
        out
    }
}

fn scalar_of<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<T> {
    if t.numel() != 1 {
        return Err(TensorError::Dimension {
            op,
            axis: "numel",
            expected: 1,
            got: t.numel(),
        });
    }
    Ok(t.data()[0])
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

/// Mutable gradient buffer for `v`, allocated on first touch; `None` when
/// `v` does not need a gradient.
fn grad_slot<'g, T: Scalar>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    let len = node.value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.with_requires_grad(needs_grad),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a constant or input tensor. It receives a gradient only when
    /// `requires_grad` is set on it.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad();
        let mut tensor = tensor;
        tensor.clear_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    /// Records a trainable parameter identified by its store index.
    pub fn param(&mut self, index: usize, tensor: &Tensor<T>) -> Var {
        let mut value = tensor.clone();
        value.clear_grad();
        self.push(value, Op::Param(index), true)
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
        let geom = ConvGeometry::resolve(self.value(input).shape(), self.value(kernel).shape(), stride, pad)?;
        let out = geom.forward(self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(geom.output_shape(), out)?;
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(value, Op::Conv3d { input, kernel, geom }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    /// `y[..., c] = scale[c]·x[..., c] + shift[c]`
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let c = last_dim(self.value(x).shape());
        for v in [scale, shift] {
            let got = self.value(v).numel();
            if got != c {
                return Err(TensorError::Dimension {
                    op: "channel_affine",
                    axis: "C",
                    expected: c,
                    got,
                });
            }
        }
        let (s, b) = (self.value(scale).data(), self.value(shift).data());
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| s[i % c] * v + b[i % c])
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        Ok(self.push(value, Op::ChannelAffine { x, scale, shift }, needs))
    }

    /// Adds a per-channel bias along the last axis.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = last_dim(self.value(x).shape());
        let got = self.value(bias).numel();
        if got != c {
            return Err(TensorError::Dimension {
                op: "bias_add",
                axis: "C",
                expected: c,
                got,
            });
        }
        let b = self.value(bias).data();
        let src = self.value(x);
        let data = src.data().iter().enumerate().map(|(i, &v)| v + b[i % c]).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::BiasAdd { x, bias }, needs))
    }

    /// Mean over every axis but the last: `[T,H,W,C] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.rank() < 2 {
            return Err(TensorError::Rank {
                op: "global_avg_pool",
                expected: 4,
                got: src.rank(),
            });
        }
        let c = last_dim(src.shape());
        let count = src.numel() / c.max(1);
        if count == 0 {
            return Err(TensorError::Usage("global_avg_pool over an empty extent".into()));
        }
        let mut acc = vec![0.0f64; c];
        for (i, v) in src.data().iter().enumerate() {
            acc[i % c] += v.as_f64();
        }
        let data = acc.into_iter().map(|s| T::from_f64(s / count as f64)).collect();
        let value = Tensor::new(vec![c], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), needs))
    }

    /// `y = x·W + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(weight).shape());
        if ws.len() != 2 {
            return Err(TensorError::Rank {
                op: "linear",
                expected: 2,
                got: ws.len(),
            });
        }
        let (din, dout) = (ws[0], ws[1]);
        let got = last_dim(xs);
        if got != din || xs.is_empty() {
            return Err(TensorError::Dimension {
                op: "linear",
                axis: "Din",
                expected: din,
                got,
            });
        }
        let got = self.value(bias).numel();
        if got != dout {
            return Err(TensorError::Dimension {
                op: "linear",
                axis: "Dout",
                expected: dout,
                got,
            });
        }
        let rows = self.value(x).numel() / din;
        let mut out = Vec::with_capacity(rows * dout);
        let b = self.value(bias).data();
        for _ in 0..rows {
            out.extend_from_slice(b);
        }
        T::gemm(
            rows,
            din,
            dout,
            self.value(x).data(),
            (din, 1),
            self.value(weight).data(),
            (dout, 1),
            &mut out,
            true,
        );
        let mut shape = xs.to_vec();
        *shape.last_mut().expect("nonempty") = dout;
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(x) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, Op::Linear { x, weight, bias }, needs))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != sb.len() || sa.is_empty() {
            return Err(TensorError::Rank {
                op: "concat_last",
                expected: sa.len(),
                got: sb.len(),
            });
        }
        const LEADING: [&str; 4] = ["T", "H", "W", "leading"];
        for (i, (x, y)) in sa.iter().zip(sb).take(sa.len() - 1).enumerate() {
            if x != y {
                return Err(TensorError::Dimension {
                    op: "concat_last",
                    axis: LEADING[i.min(3)],
                    expected: *x,
                    got: *y,
                });
            }
        }
        let (ca, cb) = (last_dim(sa), last_dim(sb));
        let rows = self.value(a).numel() / ca.max(1);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().expect("nonempty") = ca + cb;
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatLast { a, b }, needs))
    }

    /// Keeps frames `0, s, 2s, …` of a `[T, ...]` tensor.
    pub fn temporal_stride(&mut self, x: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(TensorError::Usage("temporal stride must be >= 1".into()));
        }
        let src = self.value(x);
        if src.rank() == 0 {
            return Err(TensorError::Rank {
                op: "temporal_stride",
                expected: 4,
                got: 0,
            });
        }
        let t = src.shape()[0];
        let frame = src.numel() / t.max(1);
        let kept = t.div_ceil(stride);
        let mut out = Vec::with_capacity(kept * frame);
        for k in 0..kept {
            let s = k * stride * frame;
            out.extend_from_slice(&src.data()[s..s + frame]);
        }
        let mut shape = src.shape().to_vec();
        shape[0] = kept;
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::TemporalStride { x, stride }, needs))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let norm = dot(src.data(), src.data()).sqrt();
        if !norm.is_finite() {
            return Err(TensorError::NonFinite("l2_normalize"));
        }
        if norm == 0.0 {
            return Err(TensorError::Usage("l2_normalize of a zero vector".into()));
        }
        let data = src.data().iter().map(|&v| T::from_f64(v.as_f64() / norm)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::L2Normalize { x, norm }, needs))
    }

    /// `1 − a·b / (|a||b|)` as a scalar.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.numel() != vb.numel() {
            return Err(TensorError::Dimension {
                op: "cosine_distance",
                axis: "D",
                expected: va.numel(),
                got: vb.numel(),
            });
        }
        let (na, nb) = (dot(va.data(), va.data()).sqrt(), dot(vb.data(), vb.data()).sqrt());
        if na == 0.0 || nb == 0.0 {
            return Err(TensorError::Usage("cosine distance with a zero vector".into()));
        }
        let d = 1.0 - dot(va.data(), vb.data()) / (na * nb);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(T::from_f64(d)), Op::CosineDistance { a, b }, needs))
    }

    /// `max(dap − dan + margin, 0)`.
    pub fn triplet_loss(&mut self, dap: Var, dan: Var, margin: f64) -> Result<Var> {
        let p = scalar_of(self.value(dap), "triplet_loss")?.as_f64();
        let n = scalar_of(self.value(dan), "triplet_loss")?.as_f64();
        let l = (p - n + margin).max(0.0);
        let needs = self.needs(dap) || self.needs(dan);
        Ok(self.push(Tensor::scalar(T::from_f64(l)), Op::TripletLoss { dap, dan, margin }, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a).numel(), self.value(b).numel());
        if x != y {
            return Err(TensorError::Dimension {
                op,
                axis: "numel",
                expected: x,
                got: y,
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let src = self.value(x);
        let f = T::from_f64(factor);
        let data = src.data().iter().map(|&v| v * f).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, factor), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::Usage("mean of an empty tensor".into()));
        }
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(T::from_f64(s / n as f64)), Op::Mean(x), needs))
    }

    /// Stacks scalar vars into a rank-1 vector (used to gather batch losses).
    pub fn stack_scalars(&mut self, vars: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = vars.split_first() else {
            return Err(TensorError::Usage("stack of zero scalars".into()));
        };
        let mut acc = first;
        let mut acc_shape_fixed = false;
        for &v in rest {
            if !acc_shape_fixed {
                acc = self.as_vector(acc)?;
                acc_shape_fixed = true;
            }
            let v = self.as_vector(v)?;
            acc = self.concat_last(acc, v)?;
        }
        if !acc_shape_fixed {
            acc = self.as_vector(acc)?;
        }
        Ok(acc)
    }

    fn as_vector(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v);
        if t.rank() == 1 {
            return Ok(v);
        }
        scalar_of(t, "stack_scalars")?;
        // A scale by one is a cheap differentiable reshape to [1].
        let s = self.scale(v, 1.0);
        let node = &mut self.nodes[s.0];
        node.value = node.value.clone().reshape(vec![1])?;
        Ok(s)
    }

    /// Runs reverse-mode accumulation from `output` seeded with `seed`.
    pub fn backward(&self, output: Var, seed: &Tensor<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(TensorError::Usage("backward on an empty tape".into()));
        }
        if output.0 >= self.nodes.len() {
            return Err(TensorError::Usage("output var does not belong to this tape".into()));
        }
        let out_val = self.value(output);
        if out_val.numel() != seed.numel() {
            return Err(TensorError::Dimension {
                op: "backward",
                axis: "seed",
                expected: out_val.numel(),
                got: seed.numel(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].needs_grad {
            grads[output.0] = Some(seed.data().to_vec());
        }
        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            self.backward_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((i, p)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, idx: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        macro_rules! with_slot {
            ($v:expr, |$g:ident| $body:expr) => {
                if let Some($g) = grad_slot(nodes, grads, $v) {
                    $body;
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();
        let y = nodes[idx].value.data();
        match nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv3d { input, kernel, geom } => {
                with_slot!(kernel, |g| geom.backward(val(input), val(kernel), dy, Some(g), None));
                with_slot!(input, |g| geom.backward(val(input), val(kernel), dy, None, Some(g)));
            }
            Op::Relu(x) => with_slot!(x, |g| {
                for ((g, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                    if o > T::zero() {
                        *g += d;
                    }
                }
            }),
            Op::ChannelAffine { x, scale, shift } => {
                let c = val(scale).len();
                with_slot!(x, |g| {
                    let s = val(scale);
                    for (i, (g, &d)) in g.iter_mut().zip(dy).enumerate() {
                        *g += d * s[i % c];
                    }
                });
                with_slot!(scale, |g| {
                    for (i, (&d, &xv)) in dy.iter().zip(val(x)).enumerate() {
                        g[i % c] += d * xv;
                    }
                });
                with_slot!(shift, |g| {
                    for (i, &d) in dy.iter().enumerate() {
                        g[i % c] += d;
                    }
                });
            }
            Op::BiasAdd { x, bias } => {
                let c = val(bias).len();
                with_slot!(x, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
                with_slot!(bias, |g| {
                    for (i, &d) in dy.iter().enumerate() {
                        g[i % c] += d;
                    }
                });
            }
            Op::GlobalAvgPool(x) => with_slot!(x, |g| {
                let c = dy.len();
                let inv = T::from_f64(c as f64 / g.len() as f64);
                for (i, g) in g.iter_mut().enumerate() {
                    *g += dy[i % c] * inv;
                }
            }),
            Op::Linear { x, weight, bias } => {
                let ws = nodes[weight.0].value.shape();
                let (din, dout) = (ws[0], ws[1]);
                let rows = dy.len() / dout;
                with_slot!(x, |g| T::gemm(rows, dout, din, dy, (dout, 1), val(weight), (1, dout), g, true));
                with_slot!(weight, |g| T::gemm(din, rows, dout, val(x), (1, din), dy, (dout, 1), g, true));
                with_slot!(bias, |g| {
                    for (i, &d) in dy.iter().enumerate() {
                        g[i % dout] += d;
                    }
                });
            }
            Op::ConcatLast { a, b } => {
                let ca = last_dim(nodes[a.0].value.shape());
                let cb = last_dim(nodes[b.0].value.shape());
                let rows = dy.len() / (ca + cb).max(1);
                with_slot!(a, |g| {
                    for r in 0..rows {
                        let src = &dy[r * (ca + cb)..r * (ca + cb) + ca];
                        g[r * ca..(r + 1) * ca].iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                    }
                });
                with_slot!(b, |g| {
                    for r in 0..rows {
                        let src = &dy[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                        g[r * cb..(r + 1) * cb].iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                    }
                });
            }
            Op::TemporalStride { x, stride } => with_slot!(x, |g| {
                let t = nodes[x.0].value.shape()[0];
                let frame = g.len() / t.max(1);
                for (k, chunk) in dy.chunks(frame.max(1)).enumerate() {
                    let s = k * stride * frame;
                    g[s..s + frame].iter_mut().zip(chunk).for_each(|(g, &d)| *g += d);
                }
            }),
            Op::L2Normalize { x, norm } => with_slot!(x, |g| {
                let proj = dot(y, dy);
                for ((g, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                    *g += T::from_f64((d.as_f64() - o.as_f64() * proj) / norm);
                }
            }),
            Op::CosineDistance { a, b } => {
                let (va, vb) = (val(a), val(b));
                let (na, nb) = (dot(va, va).sqrt(), dot(vb, vb).sqrt());
                let sim = dot(va, vb) / (na * nb);
                let d = dy[0].as_f64();
                // d(1 − sim)/da = −(b/(|a||b|) − sim·a/|a|²)
                with_slot!(a, |g| {
                    for ((g, &x), &o) in g.iter_mut().zip(va).zip(vb) {
                        *g += T::from_f64(-d * (o.as_f64() / (na * nb) - sim * x.as_f64() / (na * na)));
                    }
                });
                with_slot!(b, |g| {
                    for ((g, &x), &o) in g.iter_mut().zip(vb).zip(va) {
                        *g += T::from_f64(-d * (o.as_f64() / (na * nb) - sim * x.as_f64() / (nb * nb)));
                    }
                });
            }
            Op::TripletLoss { dap, dan, margin } => {
                let z = val(dap)[0].as_f64() - val(dan)[0].as_f64() + margin;
                if z > 0.0 {
                    with_slot!(dap, |g| g[0] += dy[0]);
                    with_slot!(dan, |g| g[0] -= dy[0]);
                }
            }
            Op::Add(a, b) => {
                with_slot!(a, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
                with_slot!(b, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
            }
            Op::Sub(a, b) => {
                with_slot!(a, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
                with_slot!(b, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g -= d));
            }
            Op::Mul(a, b) => {
                with_slot!(a, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(val(b)) {
                        *g += d * o;
                    }
                });
                with_slot!(b, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(val(a)) {
                        *g += d * o;
                    }
                });
            }
            Op::Scale(x, f) => with_slot!(x, |g| {
                let f = T::from_f64(f);
                g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d * f);
            }),
            Op::Sum(x) => with_slot!(x, |g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Mean(x) => with_slot!(x, |g| {
                let d = dy[0] / T::from_f64(g.len() as f64);
                g.iter_mut().for_each(|g| *g += d);
            }),
        }
    }
}
