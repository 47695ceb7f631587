use super::array::numel;
use super::real::{gemm, MatView};
use super::{Real, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        av: MatView,
        bv: MatView,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary(Binary, Var, Var),
    Scale(Var, F),
    Unary(Unary, Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    SumAll(Var),
    MeanAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Stack(Vec<Var>),
    Select {
        x: Var,
        offset: usize,
    },
    GruCell {
        gi: Var,
        gh: Var,
        h: Var,
        hidden: usize,
        /// r, z, n per row, packed as `[rows × 3H]`.
        saved: Vec<F>,
    },
    Nll {
        probs: Var,
        targets: Vec<Option<usize>>,
        classes: usize,
        valid: usize,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Probabilities below this are clipped before taking logs in [`Tape::nll`].
pub const LOG_CLIP: f64 = 1e-12;

/// Append-only record of tensor operations.
///
/// One tape is driven by a single thread; independent tapes may be evaluated
/// concurrently.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Output shape for a trailing-dimension broadcast, if legal.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.len() > short.len() && long.ends_with(short) {
        Ok(long.to_vec())
    } else {
        Err(shape_err(op, a, b))
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Walks `data` (laid out by `shape`) in the order given by `axes`.
fn permute_data<F: Real>(data: &[F], shape: &[usize], axes: &[usize]) -> Vec<F> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    if rank == 0 {
        out.push(data[0]);
        return out;
    }
    let last = rank - 1;
    let inner_len = out_shape[last];
    let inner_stride = strides[last];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner_len]);
        } else {
            let mut p = base;
            for _ in 0..inner_len {
                out.push(data[p]);
                p += inner_stride;
            }
        }
        // advance the odometer over all but the last axis
        let mut d = last;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: &[usize], data: Vec<F>, grad: bool, op: Op<F>) -> Var {
        let value = Tensor::new(shape, data)
            .expect("derived node shape")
            .with_requires_grad(grad);
        let op = if grad { op } else { Op::Leaf };
        self.push(value, op)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, mut tensor: Tensor<F>) -> Var {
        tensor.zero_grad();
        self.push(tensor, Op::Leaf)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// A leaf that accumulates gradients on [`Tape::backward`].
    pub fn param(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Replaces the data of a leaf in place; gradients are cleared.
    pub fn set_leaf(&mut self, v: Var, data: &[F]) -> Result<(), TensorError> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) || node.value.len() != data.len() {
            return Err(TensorError::Contract(format!(
                "set_leaf: node {} is not a leaf of length {}",
                v.0,
                data.len()
            )));
        }
        node.value.data_mut().copy_from_slice(data);
        node.value.zero_grad();
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product reading either operand transposed.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let av = MatView::new(sa[0], sa[1], ta);
        let bv = MatView::new(sb[0], sb[1], tb);
        let (m, k) = av.logical();
        let (k2, n) = bv.logical();
        if k != k2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(
            self.value(a).data(),
            av,
            self.value(b).data(),
            bv,
            &mut out,
            F::zero(),
        );
        let grad = self.needs(a) || self.needs(b);
        Ok(self.derived(&[m, n], out, grad, Op::MatMul { a, b, av, bv }))
    }

    /// Batched product `[B×m×k]·[B×k×n] → [B×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", &sa, &sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); batch * m * n];
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            for i in 0..batch {
                gemm(
                    &ad[i * m * k..(i + 1) * m * k],
                    MatView::new(m, k, false),
                    &bd[i * k * n..(i + 1) * k * n],
                    MatView::new(k, n, false),
                    &mut out[i * m * n..(i + 1) * m * n],
                    F::zero(),
                );
            }
        }
        let grad = self.needs(a) || self.needs(b);
        Ok(self.derived(
            &[batch, m, n],
            out,
            grad,
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            },
        ))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let total = numel(&shape);
        let f = |x: F, y: F| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out: Vec<F> = if ad.len() == bd.len() {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else if bd.len() < ad.len() {
            let mut out = Vec::with_capacity(total);
            for chunk in ad.chunks(bd.len().max(1)) {
                out.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
            }
            out
        } else {
            let mut out = Vec::with_capacity(total);
            for chunk in bd.chunks(ad.len().max(1)) {
                out.extend(chunk.iter().zip(ad).map(|(&y, &x)| f(x, y)));
            }
            out
        };
        let grad = self.needs(a) || self.needs(b);
        Ok(self.derived(&shape, out, grad, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().map(|&v| v * c).collect();
        let grad = self.needs(x);
        self.derived(&shape, out, grad, Op::Scale(x, c))
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let xd = self.value(x).data();
        let out: Vec<F> = match kind {
            Unary::Tanh => xd.iter().map(|v| v.tanh()).collect(),
            Unary::Sigmoid => xd.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Exp => xd.iter().map(|v| v.exp()).collect(),
            Unary::Log => {
                if let Some(bad) = xd.iter().find(|v| **v <= F::zero() || v.is_nan()) {
                    return Err(TensorError::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                xd.iter().map(|v| v.ln()).collect()
            }
        };
        let grad = self.needs(x);
        Ok(self.derived(&shape, out, grad, Op::Unary(kind, x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Log, x)
    }

    // ---- reductions -----------------------------------------------------

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![F::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = F::neg_infinity();
                for j in 0..len {
                    max = max.max(xd[base + j * inner]);
                }
                let mut sum = F::zero();
                for j in 0..len {
                    let e = (xd[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum = sum + e;
                }
                for j in 0..len {
                    out[base + j * inner] = out[base + j * inner] / sum;
                }
            }
        }
        let grad = self.needs(x);
        Ok(self.derived(
            &shape,
            out,
            grad,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let grad = self.needs(x);
        self.derived(&[], vec![s], grad, Op::SumAll(x))
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "mean_axis",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        if len == 0 {
            return Err(TensorError::Contract("mean_axis over an empty axis".into()));
        }
        let xd = self.value(x).data();
        let inv = F::one() / F::of(len as f64);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..len {
                let src = &xd[(o * len + j) * inner..(o * len + j + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
            }
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let grad = self.needs(x);
        Ok(self.derived(
            &out_shape,
            out,
            grad,
            Op::MeanAxis {
                x,
                outer,
                len,
                inner,
            },
        ))
    }

    // ---- layout ---------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if numel(shape) != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let data = self.value(x).data().to_vec();
        let grad = self.needs(x);
        Ok(self.derived(shape, data, grad, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() {
            return Err(shape_err("permute", &shape, axes));
        }
        for &a in axes {
            if a >= shape.len() || seen[a] {
                return Err(shape_err("permute", &shape, axes));
            }
            seen[a] = true;
        }
        let out = permute_data(self.value(x).data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let grad = self.needs(x);
        Ok(self.derived(
            &out_shape,
            out,
            grad,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut axis_len = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(shape_err("concat", &base, s));
            }
            axis_len += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let chunks: Vec<usize> = inputs
            .iter()
            .map(|&v| self.shape(v)[axis] * inner)
            .collect();
        let mut out = Vec::with_capacity(outer * axis_len * inner);
        for o in 0..outer {
            for (&v, &c) in inputs.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(v).data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_len;
        let grad = inputs.iter().any(|&v| self.needs(v));
        Ok(self.derived(
            &shape,
            out,
            grad,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Contract("stack of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        let mut out = Vec::with_capacity(numel(&base) * inputs.len());
        for &v in inputs {
            if self.shape(v) != base.as_slice() {
                return Err(shape_err("stack", &base, self.shape(v)));
            }
            out.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![inputs.len()];
        shape.extend_from_slice(&base);
        let grad = inputs.iter().any(|&v| self.needs(v));
        Ok(self.derived(&shape, out, grad, Op::Stack(inputs.to_vec())))
    }

    /// Index `index` of the leading axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || index >= shape[0] {
            return Err(TensorError::Contract(format!(
                "select: index {index} out of range for shape {shape:?}"
            )));
        }
        let chunk = numel(&shape[1..]);
        let offset = index * chunk;
        let data = self.value(x).data()[offset..offset + chunk].to_vec();
        let grad = self.needs(x);
        Ok(self.derived(&shape[1..], data, grad, Op::Select { x, offset }))
    }

    // ---- fused ops ------------------------------------------------------

    /// One GRU step. `gi`, `gh` are `[rows × 3H]` pre-activations from the
    /// input and the previous state (gate order r, z, n); `h` is `[rows × H]`.
    ///
    /// r = σ(gi_r + gh_r), z = σ(gi_z + gh_z), n = tanh(gi_n + r∘gh_n),
    /// h' = (1 − z)∘n + z∘h.
    pub fn gru_cell(&mut self, gi: Var, gh: Var, h: Var) -> Result<Var, TensorError> {
        let sh = self.shape(h).to_vec();
        let sgi = self.shape(gi).to_vec();
        if sh.len() != 2 || sgi.len() != 2 || sgi[0] != sh[0] || sgi[1] != 3 * sh[1] {
            return Err(shape_err("gru_cell", &sgi, &sh));
        }
        if self.shape(gh) != sgi.as_slice() {
            return Err(shape_err("gru_cell", &sgi, self.shape(gh)));
        }
        let (rows, hidden) = (sh[0], sh[1]);
        let gid = self.value(gi).data();
        let ghd = self.value(gh).data();
        let hd = self.value(h).data();
        let mut saved = vec![F::zero(); rows * 3 * hidden];
        let mut out = vec![F::zero(); rows * hidden];
        for row in 0..rows {
            let g = row * 3 * hidden;
            for j in 0..hidden {
                let r = sigmoid(gid[g + j] + ghd[g + j]);
                let z = sigmoid(gid[g + hidden + j] + ghd[g + hidden + j]);
                let n = (gid[g + 2 * hidden + j] + r * ghd[g + 2 * hidden + j]).tanh();
                let hp = hd[row * hidden + j];
                out[row * hidden + j] = n + z * (hp - n);
                saved[g + j] = r;
                saved[g + hidden + j] = z;
                saved[g + 2 * hidden + j] = n;
            }
        }
        let grad = self.needs(gi) || self.needs(gh) || self.needs(h);
        Ok(self.derived(
            &sh,
            out,
            grad,
            Op::GruCell {
                gi,
                gh,
                h,
                hidden,
                saved,
            },
        ))
    }

    /// Mean negative log-probability of the target class over rows with a
    /// target. `probs` is `[rows × classes]`; probabilities are clipped at
    /// [`LOG_CLIP`].
    pub fn nll(&mut self, probs: Var, targets: &[Option<usize>]) -> Result<Var, TensorError> {
        let shape = self.shape(probs).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(shape_err("nll", &shape, &[targets.len()]));
        }
        let classes = shape[1];
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= classes) {
            return Err(TensorError::Contract(format!(
                "nll: target {bad} out of range for {classes} classes"
            )));
        }
        let valid = targets.iter().filter(|t| t.is_some()).count();
        if valid == 0 {
            return Err(TensorError::Contract(
                "nll: every position is masked".into(),
            ));
        }
        let pd = self.value(probs).data();
        let clip = F::of(LOG_CLIP);
        let mut total = F::zero();
        for (row, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                total = total - pd[row * classes + t].max(clip).ln();
            }
        }
        let loss = total / F::of(valid as f64);
        let grad = self.needs(probs);
        Ok(self.derived(
            &[],
            vec![loss],
            grad,
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                classes,
                valid,
            },
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Propagates d`loss`/d(leaf) into every leaf that requires a gradient.
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&dy)?;
                continue;
            }
            self.propagate(i, &dy, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, dy: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        macro_rules! with_slot {
            ($v:expr, |$g:ident| $body:expr) => {{
                let v: Var = $v;
                if nodes[v.0].value.requires_grad() {
                    let len = nodes[v.0].value.len();
                    let $g: &mut Vec<F> = grads[v.0].get_or_insert_with(|| vec![F::zero(); len]);
                    $body;
                }
            }};
        }
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, av, bv } => {
                let (m, _) = av.logical();
                let (_, n) = bv.logical();
                let dyv = MatView::new(m, n, false);
                with_slot!(*a, |g| {
                    // dA_logical = dY · B_logicalᵀ
                    let bt = MatView::new(bv.rows, bv.cols, !bv.transposed);
                    if av.transposed {
                        // storage = dA_logicalᵀ = B_logical · dYᵀ
                        gemm(val(*b), *bv, dy, MatView::new(m, n, true), g, F::one());
                    } else {
                        gemm(dy, dyv, val(*b), bt, g, F::one());
                    }
                });
                with_slot!(*b, |g| {
                    let at = MatView::new(av.rows, av.cols, !av.transposed);
                    if bv.transposed {
                        // storage = dB_logicalᵀ = dYᵀ · A_logical
                        gemm(dy, MatView::new(m, n, true), val(*a), *av, g, F::one());
                    } else {
                        gemm(val(*a), at, dy, dyv, g, F::one());
                    }
                });
            }
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                with_slot!(*a, |g| {
                    let bd = val(*b);
                    for t in 0..*batch {
                        gemm(
                            &dy[t * m * n..(t + 1) * m * n],
                            MatView::new(m, n, false),
                            &bd[t * k * n..(t + 1) * k * n],
                            MatView::new(k, n, true),
                            &mut g[t * m * k..(t + 1) * m * k],
                            F::one(),
                        );
                    }
                });
                with_slot!(*b, |g| {
                    let ad = val(*a);
                    for t in 0..*batch {
                        gemm(
                            &ad[t * m * k..(t + 1) * m * k],
                            MatView::new(m, k, true),
                            &dy[t * m * n..(t + 1) * m * n],
                            MatView::new(m, n, false),
                            &mut g[t * k * n..(t + 1) * k * n],
                            F::one(),
                        );
                    }
                });
            }
            Op::Binary(kind, a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let (la, lb) = (ad.len(), bd.len());
                with_slot!(*a, |g| match kind {
                    Binary::Add | Binary::Sub => {
                        for (i, &d) in dy.iter().enumerate() {
                            g[i % la] = g[i % la] + d;
                        }
                    }
                    Binary::Mul => {
                        for (i, &d) in dy.iter().enumerate() {
                            g[i % la] = g[i % la] + d * bd[i % lb];
                        }
                    }
                });
                with_slot!(*b, |g| match kind {
                    Binary::Add => {
                        for (i, &d) in dy.iter().enumerate() {
                            g[i % lb] = g[i % lb] + d;
                        }
                    }
                    Binary::Sub => {
                        for (i, &d) in dy.iter().enumerate() {
                            g[i % lb] = g[i % lb] - d;
                        }
                    }
                    Binary::Mul => {
                        for (i, &d) in dy.iter().enumerate() {
                            g[i % lb] = g[i % lb] + d * ad[i % la];
                        }
                    }
                });
            }
            Op::Scale(x, c) => with_slot!(*x, |g| {
                g.iter_mut().zip(dy).for_each(|(g, &d)| *g = *g + d * *c);
            }),
            Op::Unary(kind, x) => {
                let y = node.value.data();
                let xd = val(*x);
                with_slot!(*x, |g| {
                    for i in 0..dy.len() {
                        let local = match kind {
                            Unary::Tanh => F::one() - y[i] * y[i],
                            Unary::Sigmoid => y[i] * (F::one() - y[i]),
                            Unary::Exp => y[i],
                            Unary::Log => F::one() / xd[i],
                        };
                        g[i] = g[i] + dy[i] * local;
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                with_slot!(*x, |g| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let base = o * len * inner + i;
                            let mut dot = F::zero();
                            for j in 0..*len {
                                dot = dot + dy[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..*len {
                                let p = base + j * inner;
                                g[p] = g[p] + y[p] * (dy[p] - dot);
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => with_slot!(*x, |g| {
                g.iter_mut().for_each(|g| *g = *g + dy[0]);
            }),
            Op::MeanAxis {
                x,
                outer,
                len,
                inner,
            } => {
                let inv = F::one() / F::of(*len as f64);
                with_slot!(*x, |g| {
                    for o in 0..*outer {
                        let src = &dy[o * inner..(o + 1) * inner];
                        for j in 0..*len {
                            let dst = &mut g[(o * len + j) * inner..(o * len + j + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s * inv);
                        }
                    }
                });
            }
            Op::Reshape(x) => with_slot!(*x, |g| {
                g.iter_mut().zip(dy).for_each(|(g, &d)| *g = *g + d);
            }),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let back = permute_data(dy, node.value.shape(), &inverse);
                with_slot!(*x, |g| {
                    g.iter_mut().zip(&back).for_each(|(g, &d)| *g = *g + d);
                });
            }
            Op::Concat {
                inputs,
                outer,
                chunks,
            } => {
                let row: usize = chunks.iter().sum();
                let mut start = 0;
                for (&v, &c) in inputs.iter().zip(chunks) {
                    with_slot!(v, |g| {
                        for o in 0..*outer {
                            let src = &dy[o * row + start..o * row + start + c];
                            let dst = &mut g[o * c..(o + 1) * c];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                        }
                    });
                    start += c;
                }
            }
            Op::Stack(inputs) => {
                let chunk = dy.len() / inputs.len();
                for (t, &v) in inputs.iter().enumerate() {
                    with_slot!(v, |g| {
                        let src = &dy[t * chunk..(t + 1) * chunk];
                        g.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                    });
                }
            }
            Op::Select { x, offset } => with_slot!(*x, |g| {
                let dst = &mut g[*offset..*offset + dy.len()];
                dst.iter_mut().zip(dy).for_each(|(d, &s)| *d = *d + s);
            }),
            Op::GruCell {
                gi,
                gh,
                h,
                hidden,
                saved,
            } => {
                let hidden = *hidden;
                let rows = dy.len() / hidden;
                let ghd = val(*gh);
                let hd = val(*h);
                // pre-activation gradients for the input and recurrent paths
                let mut dgi = vec![F::zero(); rows * 3 * hidden];
                let mut dgh = vec![F::zero(); rows * 3 * hidden];
                let mut dh = vec![F::zero(); rows * hidden];
                for row in 0..rows {
                    let g = row * 3 * hidden;
                    for j in 0..hidden {
                        let r = saved[g + j];
                        let z = saved[g + hidden + j];
                        let n = saved[g + 2 * hidden + j];
                        let d = dy[row * hidden + j];
                        let hp = hd[row * hidden + j];
                        let dn = d * (F::one() - z);
                        let dz = d * (hp - n);
                        dh[row * hidden + j] = d * z;
                        let dn_pre = dn * (F::one() - n * n);
                        let dr = dn_pre * ghd[g + 2 * hidden + j];
                        let dr_pre = dr * r * (F::one() - r);
                        let dz_pre = dz * z * (F::one() - z);
                        dgi[g + j] = dr_pre;
                        dgi[g + hidden + j] = dz_pre;
                        dgi[g + 2 * hidden + j] = dn_pre;
                        dgh[g + j] = dr_pre;
                        dgh[g + hidden + j] = dz_pre;
                        dgh[g + 2 * hidden + j] = dn_pre * r;
                    }
                }
                with_slot!(*gi, |g| {
                    g.iter_mut().zip(&dgi).for_each(|(g, &d)| *g = *g + d);
                });
                with_slot!(*gh, |g| {
                    g.iter_mut().zip(&dgh).for_each(|(g, &d)| *g = *g + d);
                });
                with_slot!(*h, |g| {
                    g.iter_mut().zip(&dh).for_each(|(g, &d)| *g = *g + d);
                });
            }
            Op::Nll {
                probs,
                targets,
                classes,
                valid,
            } => {
                let pd = val(*probs);
                let clip = F::of(LOG_CLIP);
                let scale = dy[0] / F::of(*valid as f64);
                with_slot!(*probs, |g| {
                    for (row, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let p = pd[row * classes + t];
                            if p > clip {
                                g[row * classes + t] = g[row * classes + t] - scale / p;
                            }
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let y = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);
        let p = tape.constant(t(&[2, 2], &[1., 0., 0., 0.]));
        let q = tape.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let y = tape.matmul(p, q).unwrap();
        assert_eq!(tape.value(y).data(), &[5., 6., 0., 0.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_basics() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[1], &[0.]));
        let th = tape.tanh(z).unwrap();
        let sg = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(th).data(), &[0.0]);
        assert_eq!(tape.value(sg).data(), &[0.5]);
        let a = tape.constant(t(&[2], &[1., 2.]));
        let b = tape.constant(t(&[2], &[3., 4.]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4., 6.]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1., 0.]));
        assert!(matches!(tape.log(a), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn broadcasting_is_trailing_only() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0.; 6]));
        let b = tape.constant(t(&[3], &[1., 2., 3.]));
        let c = tape.constant(t(&[2], &[1., 2.]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[1., 2., 3., 1., 2., 3.]);
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[3], &[0., 0., 0.]));
        let s = tape.softmax(a, 0).unwrap();
        for &v in tape.value(s).data() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let b = tape.constant(t(&[2], &[0., 2f64.ln()]));
        let s = tape.softmax(b, 0).unwrap();
        assert_abs_diff_eq!(tape.value(s).data()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tape.value(s).data()[1], 2.0 / 3.0, epsilon = 1e-12);
        let c = tape.constant(t(&[2], &[1000., 1000.]));
        let s = tape.softmax(c, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_sum_and_square() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.; 4]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2., 4.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2., 2.]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn permute_roundtrip_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let p = tape.permute(x, &[1, 0, 2]).unwrap();
        assert_eq!(tape.shape(p), &[3, 2, 4]);
        // element (i=1, j=2, k=3) lands at (2, 1, 3)
        assert_eq!(tape.value(p).data()[2 * 8 + 4 + 3], (12 + 8 + 3) as f64);
        let q = tape.permute(p, &[1, 0, 2]).unwrap();
        assert_eq!(tape.value(q).data(), tape.value(x).data());
    }

    #[test]
    fn nll_all_masked_is_error() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[1, 2], &[0.5, 0.5]));
        assert!(tape.nll(p, &[None]).is_err());
    }
}
