//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Tape`] is a Wengert-style record: leaves enter via [`Tape::leaf`],
//! every primitive application appends one step, and [`Tape::backward`]
//! replays the steps in exact reverse order accumulating vector-Jacobian
//! products. All intermediate tensors stay in the arena, so nothing is
//! recomputed on the way back.
//!
//! The primitive set is fixed and closed: all shape adaptation in the
//! crate is spelled out through these ops, which keeps every backward
//! rule auditable against its forward definition.

use crate::kernels;
use crate::tensor::Tensor;
use std::fmt;

/// Index of a tensor in the tape arena.
pub type ValueId = usize;

/// Primitive operation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Elementwise a + b.
    Add,
    /// Elementwise a - b.
    Sub,
    /// Elementwise a * b.
    Mul,
    /// Broadcast multiply of input 1 by the [1]-shaped scalar input 0.
    ScalarMul,
    /// [m,n] @ [n] -> [m].
    MatVec,
    /// [m,k] @ [k,n] -> [m,n].
    MatMul,
    Exp,
    Tanh,
    Sigmoid,
    Relu,
    Abs,
    Square,
    Log,
    /// Sum of all entries -> [1].
    SumReduce,
    /// Mean of all entries -> [1].
    MeanReduce,
    /// Concatenate along `axis` (0: rows, 1: columns; rank-1 inputs on
    /// axis 1 are treated as single columns).
    Concat {
        axis: usize,
    },
    /// Rows (rank 2) or elements (rank 1) `start .. start + len`.
    Slice {
        start: usize,
        len: usize,
    },
    /// x: [n] -> d[i][j] = x[i] - x[j], [n,n].
    OuterDiff,
    /// Elementwise multiply of input 0 by a mask drawn outside the record;
    /// the backward pass sends no gradient to the mask.
    DropoutApply,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "elementwise-multiply",
            OpKind::ScalarMul => "scalar-multiply",
            OpKind::MatVec => "matrix-vector",
            OpKind::MatMul => "matrix-matrix",
            OpKind::Exp => "exp",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Abs => "absolute-value",
            OpKind::Square => "square",
            OpKind::Log => "log",
            OpKind::SumReduce => "sum-reduce",
            OpKind::MeanReduce => "mean-reduce",
            OpKind::Concat { .. } => "concatenate-along-axis",
            OpKind::Slice { .. } => "slice",
            OpKind::OuterDiff => "broadcast-outer-difference",
            OpKind::DropoutApply => "dropout-mask-apply",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TapeError {
    /// Input dims incompatible with the op.
    ShapeMismatch {
        op: &'static str,
        dims: Vec<Vec<usize>>,
    },
    /// Referenced a value id that was never recorded.
    UnknownValue { id: ValueId },
    /// An op produced a NaN or infinity.
    NonFinite { op: &'static str, step: usize },
    /// backward() on a tape with no recorded steps.
    EmptyRecord,
    /// Seed gradient dims do not match the seeded value.
    SeedShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapeError::ShapeMismatch { op, dims } => {
                write!(f, "{op}: incompatible input dims {dims:?}")
            }
            TapeError::UnknownValue { id } => write!(f, "value id {id} was never recorded"),
            TapeError::NonFinite { op, step } => {
                write!(f, "{op} produced a non-finite value at step {step}")
            }
            TapeError::EmptyRecord => write!(f, "backward on an empty record"),
            TapeError::SeedShape { expected, got } => {
                write!(
                    f,
                    "seed gradient dims {got:?} do not match output dims {expected:?}"
                )
            }
        }
    }
}

impl std::error::Error for TapeError {}

#[derive(Debug, Clone)]
struct Step {
    op: OpKind,
    inputs: Vec<ValueId>,
    output: ValueId,
}

/// Recorded forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    vals: Vec<Tensor>,
    steps: Vec<Step>,
    /// vals[i] is a leaf iff produced_by[i] is None.
    produced_by: Vec<Option<usize>>,
}

/// Gradients keyed by value id, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, or None if no gradient flowed to it.
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, a zero tensor of `dims` if none flowed.
    pub fn get_or_zeros(&self, id: ValueId, dims: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(dims.to_vec()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Register an input tensor. Leaves receive gradients from backward().
    pub fn leaf(&mut self, t: Tensor) -> ValueId {
        let id = self.vals.len();
        self.vals.push(t);
        self.produced_by.push(None);
        id
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.vals[id]
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_values(&self) -> usize {
        self.vals.len()
    }

    fn check_ids(&self, op: &'static str, inputs: &[ValueId]) -> Result<(), TapeError> {
        let _ = op;
        for &id in inputs {
            if id >= self.vals.len() {
                return Err(TapeError::UnknownValue { id });
            }
        }
        Ok(())
    }

    fn dims_of(&self, inputs: &[ValueId]) -> Vec<Vec<usize>> {
        inputs
            .iter()
            .map(|&i| self.vals[i].dims().to_vec())
            .collect()
    }

    /// Apply a primitive to recorded values, append the step, return the
    /// output id. Shape errors name the op and the offending dims.
    pub fn forward(&mut self, op: OpKind, inputs: &[ValueId]) -> Result<ValueId, TapeError> {
        self.check_ids(op.name(), inputs)?;
        let out = self.compute(op, inputs)?;
        if !out.is_finite() {
            return Err(TapeError::NonFinite {
                op: op.name(),
                step: self.steps.len(),
            });
        }
        let out_id = self.vals.len();
        self.vals.push(out);
        self.produced_by.push(Some(self.steps.len()));
        self.steps.push(Step {
            op,
            inputs: inputs.to_vec(),
            output: out_id,
        });
        Ok(out_id)
    }

    fn shape_err(&self, op: OpKind, inputs: &[ValueId]) -> TapeError {
        TapeError::ShapeMismatch {
            op: op.name(),
            dims: self.dims_of(inputs),
        }
    }

    fn compute(&self, op: OpKind, inputs: &[ValueId]) -> Result<Tensor, TapeError> {
        let err = || self.shape_err(op, inputs);
        let arity = |n: usize| -> Result<(), TapeError> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(err())
            }
        };
        match op {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::DropoutApply => {
                arity(2)?;
                let (a, b) = (&self.vals[inputs[0]], &self.vals[inputs[1]]);
                if a.dims() != b.dims() {
                    return Err(err());
                }
                Ok(match op {
                    OpKind::Add => a.zip(b, |x, y| x + y),
                    OpKind::Sub => a.zip(b, |x, y| x - y),
                    _ => a.zip(b, |x, y| x * y),
                })
            }
            OpKind::ScalarMul => {
                arity(2)?;
                let (s, x) = (&self.vals[inputs[0]], &self.vals[inputs[1]]);
                if s.numel() != 1 {
                    return Err(err());
                }
                let c = s.data()[0];
                Ok(x.map(|v| c * v))
            }
            OpKind::MatVec => {
                arity(2)?;
                let (a, x) = (&self.vals[inputs[0]], &self.vals[inputs[1]]);
                if a.rank() != 2 || x.rank() != 1 || a.cols() != x.numel() {
                    return Err(err());
                }
                let (m, n) = (a.rows(), a.cols());
                Ok(Tensor::vector(kernels::matvec(a.data(), x.data(), m, n)))
            }
            OpKind::MatMul => {
                arity(2)?;
                let (a, b) = (&self.vals[inputs[0]], &self.vals[inputs[1]]);
                if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
                    return Err(err());
                }
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                Ok(Tensor::matrix(
                    m,
                    n,
                    kernels::matmul(a.data(), b.data(), m, k, n),
                ))
            }
            OpKind::Exp => {
                arity(1)?;
                Ok(self.vals[inputs[0]].map(f64::exp))
            }
            OpKind::Tanh => {
                arity(1)?;
                Ok(self.vals[inputs[0]].map(f64::tanh))
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(self.vals[inputs[0]].map(|v| 1.0 / (1.0 + (-v).exp())))
            }
            OpKind::Relu => {
                arity(1)?;
                Ok(self.vals[inputs[0]].map(|v| if v > 0.0 { v } else { 0.0 }))
            }
            OpKind::Abs => {
                arity(1)?;
                Ok(self.vals[inputs[0]].map(f64::abs))
            }
            OpKind::Square => {
                arity(1)?;
                Ok(self.vals[inputs[0]].map(|v| v * v))
            }
            OpKind::Log => {
                arity(1)?;
                Ok(self.vals[inputs[0]].map(f64::ln))
            }
            OpKind::SumReduce => {
                arity(1)?;
                let mut acc = 0.0;
                for &v in self.vals[inputs[0]].data() {
                    acc += v;
                }
                Ok(Tensor::scalar(acc))
            }
            OpKind::MeanReduce => {
                arity(1)?;
                let x = &self.vals[inputs[0]];
                if x.numel() == 0 {
                    return Err(err());
                }
                let mut acc = 0.0;
                for &v in x.data() {
                    acc += v;
                }
                Ok(Tensor::scalar(acc / x.numel() as f64))
            }
            OpKind::Concat { axis } => self.compute_concat(axis, inputs).ok_or_else(err),
            OpKind::Slice { start, len } => {
                arity(1)?;
                let x = &self.vals[inputs[0]];
                match x.rank() {
                    1 => {
                        if start + len > x.numel() || len == 0 {
                            return Err(err());
                        }
                        Ok(Tensor::vector(x.data()[start..start + len].to_vec()))
                    }
                    2 => {
                        let c = x.cols();
                        if start + len > x.rows() || len == 0 {
                            return Err(err());
                        }
                        Ok(Tensor::matrix(
                            len,
                            c,
                            x.data()[start * c..(start + len) * c].to_vec(),
                        ))
                    }
                    _ => Err(err()),
                }
            }
            OpKind::OuterDiff => {
                arity(1)?;
                let x = &self.vals[inputs[0]];
                if x.rank() != 1 {
                    return Err(err());
                }
                let n = x.numel();
                Ok(Tensor::matrix(n, n, kernels::outer_diff(x.data())))
            }
        }
    }

    fn compute_concat(&self, axis: usize, inputs: &[ValueId]) -> Option<Tensor> {
        if inputs.is_empty() {
            return None;
        }
        let ts: Vec<&Tensor> = inputs.iter().map(|&i| &self.vals[i]).collect();
        match axis {
            0 => {
                if ts.iter().all(|t| t.rank() == 1) {
                    let mut data = Vec::new();
                    for t in &ts {
                        data.extend_from_slice(t.data());
                    }
                    Some(Tensor::vector(data))
                } else if ts.iter().all(|t| t.rank() == 2) {
                    let c = ts[0].cols();
                    if ts.iter().any(|t| t.cols() != c) {
                        return None;
                    }
                    let rows = ts.iter().map(|t| t.rows()).sum();
                    let mut data = Vec::with_capacity(rows * c);
                    for t in &ts {
                        data.extend_from_slice(t.data());
                    }
                    Some(Tensor::matrix(rows, c, data))
                } else {
                    None
                }
            }
            1 => {
                // Rank-1 inputs are single columns.
                let rows = ts[0].dims()[0];
                let mut widths = Vec::with_capacity(ts.len());
                for t in &ts {
                    match t.rank() {
                        1 if t.numel() == rows => widths.push(1),
                        2 if t.rows() == rows => widths.push(t.cols()),
                        _ => return None,
                    }
                }
                let total: usize = widths.iter().sum();
                let mut data = vec![0.0; rows * total];
                let mut offset = 0;
                for (t, &w) in ts.iter().zip(widths.iter()) {
                    for r in 0..rows {
                        for c in 0..w {
                            data[r * total + offset + c] = t.data()[r * w + c];
                        }
                    }
                    offset += w;
                }
                Some(Tensor::matrix(rows, total, data))
            }
            _ => None,
        }
    }

    /// Recompute every recorded step from the leaves, returning the arena
    /// the replay produces. Used to assert replay determinism.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.vals.len());
        for (i, produced) in self.produced_by.iter().enumerate() {
            match produced {
                None => vals.push(self.vals[i].clone()),
                Some(step_idx) => {
                    let step = &self.steps[*step_idx];
                    // Recompute against the replayed prefix.
                    let tmp = Tape {
                        vals: vals.clone(),
                        steps: Vec::new(),
                        produced_by: Vec::new(),
                    };
                    let out = tmp
                        .compute(step.op, &step.inputs)
                        .expect("replay of a recorded step cannot fail");
                    vals.push(out);
                }
            }
        }
        vals
    }

    /// Reverse sweep from `seed_id` with gradient `seed`. Returns the
    /// gradient of the seeded objective w.r.t. every value on the tape.
    pub fn backward(&self, seed_id: ValueId, seed: Tensor) -> Result<Gradients, TapeError> {
        if self.steps.is_empty() {
            return Err(TapeError::EmptyRecord);
        }
        if seed_id >= self.vals.len() {
            return Err(TapeError::UnknownValue { id: seed_id });
        }
        if seed.dims() != self.vals[seed_id].dims() {
            return Err(TapeError::SeedShape {
                expected: self.vals[seed_id].dims().to_vec(),
                got: seed.dims().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.vals.len()];
        grads[seed_id] = Some(seed);

        for step in self.steps.iter().rev() {
            let g_out = match &grads[step.output] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backward_step(step, &g_out, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backward_step(&self, step: &Step, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], id: ValueId, delta: Tensor| match &mut grads[id] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let ins = &step.inputs;
        let out = &self.vals[step.output];
        match step.op {
            OpKind::Add => {
                acc(grads, ins[0], g.clone());
                acc(grads, ins[1], g.clone());
            }
            OpKind::Sub => {
                acc(grads, ins[0], g.clone());
                acc(grads, ins[1], g.map(|v| -v));
            }
            OpKind::Mul => {
                let (a, b) = (&self.vals[ins[0]], &self.vals[ins[1]]);
                acc(grads, ins[0], g.zip(b, |gv, bv| gv * bv));
                acc(grads, ins[1], g.zip(a, |gv, av| gv * av));
            }
            OpKind::ScalarMul => {
                let (s, x) = (&self.vals[ins[0]], &self.vals[ins[1]]);
                let c = s.data()[0];
                let mut ds = 0.0;
                for (gv, xv) in g.data().iter().zip(x.data().iter()) {
                    ds += gv * xv;
                }
                acc(grads, ins[0], Tensor::scalar(ds));
                acc(grads, ins[1], g.map(|v| c * v));
            }
            OpKind::MatVec => {
                let (a, x) = (&self.vals[ins[0]], &self.vals[ins[1]]);
                let (m, n) = (a.rows(), a.cols());
                acc(
                    grads,
                    ins[0],
                    Tensor::matrix(m, n, kernels::outer(g.data(), x.data())),
                );
                acc(
                    grads,
                    ins[1],
                    Tensor::vector(kernels::matvec_t(a.data(), g.data(), m, n)),
                );
            }
            OpKind::MatMul => {
                let (a, b) = (&self.vals[ins[0]], &self.vals[ins[1]]);
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                // dA = g @ B^T ; dB = A^T @ g
                acc(
                    grads,
                    ins[0],
                    Tensor::matrix(m, k, kernels::matmul_nt(g.data(), b.data(), m, n, k)),
                );
                acc(
                    grads,
                    ins[1],
                    Tensor::matrix(k, n, kernels::matmul_tn(a.data(), g.data(), m, k, n)),
                );
            }
            OpKind::Exp => acc(grads, ins[0], g.zip(out, |gv, ov| gv * ov)),
            OpKind::Tanh => acc(grads, ins[0], g.zip(out, |gv, ov| gv * (1.0 - ov * ov))),
            OpKind::Sigmoid => acc(grads, ins[0], g.zip(out, |gv, ov| gv * ov * (1.0 - ov))),
            OpKind::Relu => {
                let x = &self.vals[ins[0]];
                acc(
                    grads,
                    ins[0],
                    g.zip(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                );
            }
            OpKind::Abs => {
                let x = &self.vals[ins[0]];
                acc(
                    grads,
                    ins[0],
                    g.zip(x, |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            OpKind::Square => {
                let x = &self.vals[ins[0]];
                acc(grads, ins[0], g.zip(x, |gv, xv| gv * 2.0 * xv));
            }
            OpKind::Log => {
                let x = &self.vals[ins[0]];
                acc(grads, ins[0], g.zip(x, |gv, xv| gv / xv));
            }
            OpKind::SumReduce => {
                let x = &self.vals[ins[0]];
                let gv = g.data()[0];
                acc(grads, ins[0], x.map(|_| gv));
            }
            OpKind::MeanReduce => {
                let x = &self.vals[ins[0]];
                let gv = g.data()[0] / x.numel() as f64;
                acc(grads, ins[0], x.map(|_| gv));
            }
            OpKind::Concat { axis } => match axis {
                0 => {
                    let mut row = 0;
                    for &i in ins {
                        let t = &self.vals[i];
                        if t.rank() == 1 {
                            let n = t.numel();
                            acc(grads, i, Tensor::vector(g.data()[row..row + n].to_vec()));
                            row += n;
                        } else {
                            let (r, c) = (t.rows(), t.cols());
                            acc(
                                grads,
                                i,
                                Tensor::matrix(r, c, g.data()[row * c..(row + r) * c].to_vec()),
                            );
                            row += r;
                        }
                    }
                }
                _ => {
                    let rows = self.vals[ins[0]].dims()[0];
                    let total = out.cols();
                    let mut offset = 0;
                    for &i in ins {
                        let t = &self.vals[i];
                        let w = if t.rank() == 1 { 1 } else { t.cols() };
                        let mut d = vec![0.0; rows * w];
                        for r in 0..rows {
                            for c in 0..w {
                                d[r * w + c] = g.data()[r * total + offset + c];
                            }
                        }
                        let delta = if t.rank() == 1 {
                            Tensor::vector(d)
                        } else {
                            Tensor::matrix(rows, w, d)
                        };
                        acc(grads, i, delta);
                        offset += w;
                    }
                }
            },
            OpKind::Slice { start, len } => {
                let x = &self.vals[ins[0]];
                let mut d = Tensor::zeros(x.dims().to_vec());
                match x.rank() {
                    1 => {
                        d.data_mut()[start..start + len].copy_from_slice(g.data());
                    }
                    _ => {
                        let c = x.cols();
                        d.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                    }
                }
                acc(grads, ins[0], d);
            }
            OpKind::OuterDiff => {
                let n = self.vals[ins[0]].numel();
                let rs = kernels::row_sums(g.data(), n, n);
                let cs = kernels::col_sums(g.data(), n, n);
                let d: Vec<f64> = rs.iter().zip(cs.iter()).map(|(r, c)| r - c).collect();
                acc(grads, ins[0], Tensor::vector(d));
            }
            OpKind::DropoutApply => {
                let mask = &self.vals[ins[1]];
                acc(grads, ins[0], g.zip(mask, |gv, mv| gv * mv));
            }
        }
    }

    // Convenience wrappers around forward().

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Mul, &[a, b])
    }
    /// Multiply `x` by the [1]-shaped value `s`.
    pub fn scalar_mul(&mut self, s: ValueId, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::ScalarMul, &[s, x])
    }
    /// Multiply `x` by a constant (recorded as a fresh leaf).
    pub fn scale_const(&mut self, c: f64, x: ValueId) -> Result<ValueId, TapeError> {
        let s = self.leaf(Tensor::scalar(c));
        self.scalar_mul(s, x)
    }
    pub fn matvec(&mut self, a: ValueId, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::MatVec, &[a, x])
    }
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::MatMul, &[a, b])
    }
    pub fn exp(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Exp, &[x])
    }
    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Tanh, &[x])
    }
    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Sigmoid, &[x])
    }
    pub fn relu(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Relu, &[x])
    }
    pub fn abs(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Abs, &[x])
    }
    pub fn square(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Square, &[x])
    }
    pub fn log(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Log, &[x])
    }
    pub fn sum(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::SumReduce, &[x])
    }
    pub fn mean(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::MeanReduce, &[x])
    }
    pub fn concat(&mut self, axis: usize, inputs: &[ValueId]) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Concat { axis }, inputs)
    }
    pub fn slice(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId, TapeError> {
        self.forward(OpKind::Slice { start, len }, &[x])
    }
    pub fn outer_diff(&mut self, x: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::OuterDiff, &[x])
    }
    pub fn dropout_apply(&mut self, x: ValueId, mask: ValueId) -> Result<ValueId, TapeError> {
        self.forward(OpKind::DropoutApply, &[x, mask])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn grad_of(tape: &Tape, loss: ValueId, wrt: ValueId) -> Tensor {
        let g = tape.backward(loss, Tensor::scalar(1.0)).unwrap();
        g.get_or_zeros(wrt, tape.value(wrt).dims())
    }

    #[test]
    fn matvec_hand_example() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let x = t.leaf(Tensor::vector(vec![1.0, 1.0]));
        let y = t.matvec(a, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn outer_diff_hand_example() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![100.0, 150.0]));
        let d = t.outer_diff(x).unwrap();
        assert_eq!(t.value(d).data(), &[0.0, -50.0, 50.0, 0.0]);
    }

    #[test]
    fn exp_identity_case() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0]));
        let y = t.exp(x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0]);
    }

    #[test]
    fn grad_sum_of_squares() {
        // f(x) = sum(x^2), x = [3] -> grad [6]
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.0]));
        let sq = t.square(x).unwrap();
        let f = t.sum(sq).unwrap();
        assert_eq!(grad_of(&t, f, x).data(), &[6.0]);
    }

    #[test]
    fn grad_sum_of_exp() {
        // f(x) = sum(exp(x)), x = [0,0] -> grad [1,1]
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        let e = t.exp(x).unwrap();
        let f = t.sum(e).unwrap();
        assert_eq!(grad_of(&t, f, x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = t.leaf(Tensor::vector(vec![5.0]));
        let f = t.sum(x).unwrap();
        let g = t.backward(f, Tensor::scalar(1.0)).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused, &[1]).data(), &[0.0]);
    }

    #[test]
    fn seed_on_unknown_value_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0]));
        let f = t.sum(x).unwrap();
        let _ = f;
        assert!(matches!(
            t.backward(99, Tensor::scalar(1.0)),
            Err(TapeError::UnknownValue { id: 99 })
        ));
    }

    #[test]
    fn backward_on_empty_record_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        assert!(matches!(
            t.backward(x, Tensor::scalar(1.0)),
            Err(TapeError::EmptyRecord)
        ));
    }

    #[test]
    fn shape_mismatch_names_op_and_dims() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let x = t.leaf(Tensor::vector(vec![0.0; 2]));
        match t.matvec(a, x) {
            Err(TapeError::ShapeMismatch { op, dims }) => {
                assert_eq!(op, "matrix-vector");
                assert_eq!(dims, vec![vec![2, 3], vec![2]]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn log_of_negative_is_nonfinite_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0]));
        assert!(matches!(t.log(x), Err(TapeError::NonFinite { .. })));
    }

    #[test]
    fn concat_axis1_treats_rank1_as_columns() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let c = t.concat(1, &[a, b]).unwrap();
        assert_eq!(t.value(c).dims(), &[2, 3]);
        assert_eq!(t.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        // Gradient splits back to the rank-1 column.
        let s = t.sum(c).unwrap();
        let g = t.backward(s, Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(a).unwrap().dims(), &[2]);
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn replay_reproduces_recorded_values_bitwise() {
        let mut rng = Rng::from_seed(8);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(
            (0..16).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        ));
        let a = t.leaf(Tensor::matrix(
            16,
            16,
            (0..256).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        ));
        let h = t.matvec(a, x).unwrap();
        let h2 = t.tanh(h).unwrap();
        let d = t.outer_diff(h2).unwrap();
        let sq = t.square(d).unwrap();
        let _f = t.mean(sq).unwrap();
        let replayed = t.replay();
        assert_eq!(replayed.len(), t.num_values());
        for (i, r) in replayed.iter().enumerate() {
            assert_eq!(r, t.value(i), "mismatch at value {i}");
        }
    }

    #[test]
    fn gradient_linearity_of_sum_of_objectives() {
        // grad(f + g) == grad(f) + grad(g) up to f64 association order.
        let mut rng = Rng::from_seed(21);
        let data: Vec<f64> = (0..8).map(|_| rng.uniform(-2.0, 2.0)).collect();

        let build = |which: u8| -> (Tape, ValueId, ValueId) {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::vector(data.clone()));
            let sq = t.square(x).unwrap();
            let f1 = t.sum(sq).unwrap();
            let e = t.exp(x).unwrap();
            let f2 = t.mean(e).unwrap();
            let loss = match which {
                0 => f1,
                1 => f2,
                _ => t.add(f1, f2).unwrap(),
            };
            (t, loss, x)
        };

        let (t0, l0, x0) = build(0);
        let (t1, l1, x1) = build(1);
        let (ts, ls, xs) = build(2);
        let g0 = grad_of(&t0, l0, x0);
        let g1 = grad_of(&t1, l1, x1);
        let gs = grad_of(&ts, ls, xs);
        for i in 0..8 {
            let sum = g0.data()[i] + g1.data()[i];
            assert!((sum - gs.data()[i]).abs() <= 1e-12);
        }
    }

    /// Central-difference check of every primitive's VJP on random inputs.
    #[test]
    fn all_primitives_match_finite_differences() {
        let mut rng = Rng::from_seed(77);
        let eps = 1e-5;
        let tol = 1e-6;

        // Each case builds a scalar objective from fresh leaf data and
        // returns (tape, loss id, leaf ids). Perturbations re-run the build.
        type Build = Box<dyn Fn(&[Vec<f64>]) -> (Tape, ValueId, Vec<ValueId>)>;
        let cases: Vec<(&str, Vec<Vec<f64>>, Build)> = vec![
            (
                "add",
                vec![rand_vec(&mut rng, 6), rand_vec(&mut rng, 6)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let a = t.leaf(Tensor::vector(d[0].clone()));
                    let b = t.leaf(Tensor::vector(d[1].clone()));
                    let y = t.add(a, b).unwrap();
                    let sq = t.square(y).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![a, b])
                }),
            ),
            (
                "sub",
                vec![rand_vec(&mut rng, 6), rand_vec(&mut rng, 6)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let a = t.leaf(Tensor::vector(d[0].clone()));
                    let b = t.leaf(Tensor::vector(d[1].clone()));
                    let y = t.sub(a, b).unwrap();
                    let sq = t.square(y).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![a, b])
                }),
            ),
            (
                "mul",
                vec![rand_vec(&mut rng, 6), rand_vec(&mut rng, 6)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let a = t.leaf(Tensor::vector(d[0].clone()));
                    let b = t.leaf(Tensor::vector(d[1].clone()));
                    let y = t.mul(a, b).unwrap();
                    let l = t.sum(y).unwrap();
                    (t, l, vec![a, b])
                }),
            ),
            (
                "scalar-multiply",
                vec![vec![1.3], rand_vec(&mut rng, 5)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let s = t.leaf(Tensor::scalar(d[0][0]));
                    let x = t.leaf(Tensor::vector(d[1].clone()));
                    let y = t.scalar_mul(s, x).unwrap();
                    let sq = t.square(y).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![s, x])
                }),
            ),
            (
                "matvec",
                vec![rand_vec(&mut rng, 12), rand_vec(&mut rng, 4)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let a = t.leaf(Tensor::matrix(3, 4, d[0].clone()));
                    let x = t.leaf(Tensor::vector(d[1].clone()));
                    let y = t.matvec(a, x).unwrap();
                    let sq = t.square(y).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![a, x])
                }),
            ),
            (
                "matmul",
                vec![rand_vec(&mut rng, 6), rand_vec(&mut rng, 8)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let a = t.leaf(Tensor::matrix(3, 2, d[0].clone()));
                    let b = t.leaf(Tensor::matrix(2, 4, d[1].clone()));
                    let y = t.matmul(a, b).unwrap();
                    let sq = t.square(y).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![a, b])
                }),
            ),
            (
                "exp",
                vec![rand_vec(&mut rng, 6)],
                Box::new(|d| unary(d, |t, x| t.exp(x).unwrap())),
            ),
            (
                "tanh",
                vec![rand_vec(&mut rng, 6)],
                Box::new(|d| unary(d, |t, x| t.tanh(x).unwrap())),
            ),
            (
                "sigmoid",
                vec![rand_vec(&mut rng, 6)],
                Box::new(|d| unary(d, |t, x| t.sigmoid(x).unwrap())),
            ),
            (
                // Kink at 0: keep inputs away from it.
                "relu",
                vec![rand_vec(&mut rng, 6)
                    .into_iter()
                    .map(|v| if v.abs() < 0.2 { v + 0.5 } else { v })
                    .collect()],
                Box::new(|d| unary(d, |t, x| t.relu(x).unwrap())),
            ),
            (
                "absolute-value",
                vec![rand_vec(&mut rng, 6)
                    .into_iter()
                    .map(|v| if v.abs() < 0.2 { v + 0.5 } else { v })
                    .collect()],
                Box::new(|d| unary(d, |t, x| t.abs(x).unwrap())),
            ),
            (
                "square",
                vec![rand_vec(&mut rng, 6)],
                Box::new(|d| unary(d, |t, x| t.square(x).unwrap())),
            ),
            (
                // Positive domain.
                "log",
                vec![rand_vec(&mut rng, 6)
                    .into_iter()
                    .map(|v| v.abs() + 0.5)
                    .collect()],
                Box::new(|d| unary(d, |t, x| t.log(x).unwrap())),
            ),
            (
                "mean-reduce",
                vec![rand_vec(&mut rng, 6)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let x = t.leaf(Tensor::vector(d[0].clone()));
                    let sq = t.square(x).unwrap();
                    let l = t.mean(sq).unwrap();
                    (t, l, vec![x])
                }),
            ),
            (
                "concatenate-along-axis",
                vec![rand_vec(&mut rng, 4), rand_vec(&mut rng, 8)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let a = t.leaf(Tensor::vector(d[0].clone()));
                    let b = t.leaf(Tensor::matrix(4, 2, d[1].clone()));
                    let c = t.concat(1, &[a, b]).unwrap();
                    let sq = t.square(c).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![a, b])
                }),
            ),
            (
                "slice",
                vec![rand_vec(&mut rng, 8)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let x = t.leaf(Tensor::vector(d[0].clone()));
                    let s = t.slice(x, 2, 4).unwrap();
                    let sq = t.square(s).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![x])
                }),
            ),
            (
                "broadcast-outer-difference",
                vec![rand_vec(&mut rng, 5)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let x = t.leaf(Tensor::vector(d[0].clone()));
                    let dd = t.outer_diff(x).unwrap();
                    let sq = t.square(dd).unwrap();
                    let e = t.exp(sq).unwrap();
                    let l = t.mean(e).unwrap();
                    (t, l, vec![x])
                }),
            ),
            (
                "dropout-mask-apply",
                vec![rand_vec(&mut rng, 6)],
                Box::new(|d| {
                    let mut t = Tape::new();
                    let x = t.leaf(Tensor::vector(d[0].clone()));
                    let mask = t.leaf(Tensor::vector(vec![1.25, 0.0, 1.25, 1.25, 0.0, 1.25]));
                    let y = t.dropout_apply(x, mask).unwrap();
                    let sq = t.square(y).unwrap();
                    let l = t.sum(sq).unwrap();
                    (t, l, vec![x])
                }),
            ),
        ];

        fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
            (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect()
        }
        fn unary(
            d: &[Vec<f64>],
            op: impl Fn(&mut Tape, ValueId) -> ValueId,
        ) -> (Tape, ValueId, Vec<ValueId>) {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::vector(d[0].clone()));
            let y = op(&mut t, x);
            let l = t.sum(y).unwrap();
            (t, l, vec![x])
        }

        for (name, data, build) in &cases {
            let (tape, loss, leaves) = build(data);
            let grads = tape.backward(loss, Tensor::scalar(1.0)).unwrap();
            for (li, &leaf) in leaves.iter().enumerate() {
                let analytic = grads.get_or_zeros(leaf, tape.value(leaf).dims());
                for k in 0..data[li].len() {
                    let mut plus = data.to_vec();
                    plus[li][k] += eps;
                    let (tp, lp, _) = build(&plus);
                    let mut minus = data.to_vec();
                    minus[li][k] -= eps;
                    let (tm, lm, _) = build(&minus);
                    let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * eps);
                    let a = analytic.data()[k];
                    let denom = a.abs().max(numeric.abs()).max(1e-8);
                    let rel = (a - numeric).abs() / denom;
                    assert!(
                        rel <= tol,
                        "{name}: leaf {li} entry {k}: analytic {a} vs numeric {numeric} (rel {rel})"
                    );
                }
            }
        }
    }

    /// Random 3-layer composition on T=8 against central differences.
    #[test]
    fn random_composition_matches_finite_differences() {
        let mut rng = Rng::from_seed(123);
        let t_len = 8usize;
        let w1: Vec<f64> = (0..t_len * t_len).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let w2: Vec<f64> = (0..t_len * t_len).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let x0: Vec<f64> = (0..t_len).map(|_| rng.uniform(-2.0, 2.0)).collect();

        let build = |x: &[f64]| -> (Tape, ValueId, ValueId) {
            let mut t = Tape::new();
            let xv = t.leaf(Tensor::vector(x.to_vec()));
            let m1 = t.leaf(Tensor::matrix(t_len, t_len, w1.clone()));
            let m2 = t.leaf(Tensor::matrix(t_len, t_len, w2.clone()));
            let h1 = t.matvec(m1, xv).unwrap();
            let a1 = t.tanh(h1).unwrap();
            let h2 = t.matvec(m2, a1).unwrap();
            let a2 = t.sigmoid(h2).unwrap();
            let sq = t.square(a2).unwrap();
            let l = t.sum(sq).unwrap();
            (t, l, xv)
        };

        let (tape, loss, xv) = build(&x0);
        let g = tape.backward(loss, Tensor::scalar(1.0)).unwrap();
        let analytic = g.get(xv).unwrap();
        let eps = 1e-5;
        for k in 0..t_len {
            let mut p = x0.clone();
            p[k] += eps;
            let (tp, lp, _) = build(&p);
            let mut m = x0.clone();
            m[k] -= eps;
            let (tm, lm, _) = build(&m);
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * eps);
            let a = analytic.data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom <= 1e-6,
                "entry {k}: {a} vs {numeric}"
            );
        }
    }
}
