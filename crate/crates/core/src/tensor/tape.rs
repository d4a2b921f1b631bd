use super::{matmul_raw, transpose_raw, Gradients, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `b` either matches `a` or broadcasts over the leading dimension.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    RowSoftmax(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    MeanAll(Var),
    Square(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a forward computation. Nodes are stored in
/// creation order, which is a topological order of the graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_2d(op: &'static str, a: &Tensor) -> Result<(), TensorError> {
    if a.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok(())
}

/// Whether `b` can be combined elementwise with `a`: same shape, or equal
/// to `a`'s shape without its leading dimension.
fn broadcasts(a: &Tensor, b: &Tensor) -> Option<bool> {
    if a.shape() == b.shape() {
        Some(false)
    } else if a.shape().len() > 1 && &a.shape()[1..] == b.shape() {
        Some(true)
    } else {
        None
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let inner = b.numel();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, b.data()[i % inner]))
        .collect();
    Tensor {
        shape: a.shape().to_vec(),
        data,
    }
}

/// Sums a full-shape gradient down to a broadcast operand's shape.
fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(shape);
    let inner = out.numel();
    for (i, g) in grad.data().iter().enumerate() {
        out.data[i % inner] += g;
    }
    out
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFiniteValue { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a parameter; its gradient is reported by `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_2d("matmul", ta)?;
        require_2d("matmul", tb)?;
        if ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = matmul_raw(ta, tb);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        broadcasts(ta, tb).ok_or_else(|| mismatch("add", ta, tb))?;
        let out = zip_broadcast(ta, tb, |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        broadcasts(ta, tb).ok_or_else(|| mismatch("sub", ta, tb))?;
        let out = zip_broadcast(ta, tb, |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        broadcasts(ta, tb).ok_or_else(|| mismatch("mul", ta, tb))?;
        let out = zip_broadcast(ta, tb, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| c * x);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        require_2d("transpose", self.value(a))?;
        let out = transpose_raw(self.value(a));
        self.push("transpose", out, Op::Transpose(a))
    }

    /// Softmax along the last dimension, shifted by the row maximum.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push("row_softmax", out, Op::RowSoftmax(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a))
    }

    /// Concatenates 2-D tensors with equal row counts along the last dimension.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(*parts.first().ok_or(TensorError::ShapeMismatch {
            op: "concat_lastdim",
            lhs: vec![],
            rhs: vec![],
        })?);
        let rows = first.rows();
        for &p in parts {
            let t = self.value(p);
            require_2d("concat_lastdim", t)?;
            if t.rows() != rows {
                return Err(mismatch("concat_lastdim", first, t));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor {
            shape: vec![rows, total],
            data,
        };
        self.push("concat_lastdim", out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        require_2d("slice", ta)?;
        if start >= end || end > ta.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let out = Tensor {
            shape: vec![ta.rows(), end - start],
            data,
        };
        self.push("slice", out, Op::Slice { x: a, start })
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let out = Tensor::scalar(ta.data().iter().sum::<f64>() / ta.numel() as f64);
        self.push("mean_all", out, Op::MeanAll(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x * x);
        self.push("square", out, Op::Square(a))
    }

    /// `x W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Reverse pass from a scalar `loss`. Returns parameter gradients only;
    /// the tape itself is left untouched, so repeated calls agree.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NotScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let mut send = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    send(*a, matmul_raw(&g, &transpose_raw(tb)));
                    send(*b, matmul_raw(&transpose_raw(ta), &g));
                }
                Op::Add(a, b) => {
                    let shape_b = self.value(*b).shape().to_vec();
                    send(*b, reduce_to(&g, &shape_b));
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    let shape_b = self.value(*b).shape().to_vec();
                    send(*b, reduce_to(&g.map(|x| -x), &shape_b));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = zip_broadcast(&g, tb, |gv, bv| gv * bv);
                    let gb_full = Tensor {
                        shape: g.shape().to_vec(),
                        data: g.data().iter().zip(ta.data()).map(|(gv, av)| gv * av).collect(),
                    };
                    send(*b, reduce_to(&gb_full, tb.shape()));
                    send(*a, ga);
                }
                Op::Scale(a, c) => send(*a, g.map(|x| c * x)),
                Op::Transpose(a) => send(*a, transpose_raw(&g)),
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut data = vec![0.0; y.numel()];
                    for ((out_row, y_row), g_row) in data
                        .chunks_mut(cols)
                        .zip(y.data().chunks(cols))
                        .zip(g.data().chunks(cols))
                    {
                        let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in out_row.iter_mut().zip(y_row).zip(g_row) {
                            *o = yv * (gv - dot);
                        }
                    }
                    send(
                        *a,
                        Tensor {
                            shape: y.shape().to_vec(),
                            data,
                        },
                    );
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                    send(
                        *a,
                        Tensor {
                            shape: y.shape().to_vec(),
                            data,
                        },
                    );
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    send(
                        *a,
                        Tensor {
                            shape: x.shape().to_vec(),
                            data,
                        },
                    );
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        send(
                            p,
                            Tensor {
                                shape: vec![rows, cols],
                                data,
                            },
                        );
                    }
                }
                Op::Slice { x, start } => {
                    let tx = self.value(*x);
                    let mut full = Tensor::zeros(tx.shape());
                    let (cols, width) = (tx.cols(), g.cols());
                    for r in 0..g.rows() {
                        full.data[r * cols + start..r * cols + start + width].copy_from_slice(g.row(r));
                    }
                    send(*x, full);
                }
                Op::MeanAll(a) => {
                    let ta = self.value(*a);
                    let share = g.item() / ta.numel() as f64;
                    send(*a, Tensor::filled(ta.shape(), share));
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    let data = g.data().iter().zip(x.data()).map(|(gv, xv)| 2.0 * xv * gv).collect();
                    send(
                        *a,
                        Tensor {
                            shape: x.shape().to_vec(),
                            data,
                        },
                    );
                }
            }
        }
        Ok(out)
    }
}
