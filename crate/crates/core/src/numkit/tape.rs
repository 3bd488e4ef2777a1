use std::str::FromStr;

use super::kernels as k;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable operations a tape can record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Neg,
    Scale,
    AddScalar,
    Powf,
    Exp,
    Log,
    Silu,
    Sigmoid,
    Softplus,
    /// `(e^z - 1) / z`, the ZOH input gain.
    ZohGain,
    MatMul,
    AddRow,
    MulRow,
    MulCol,
    RowMean,
    Sum,
    Mean,
    Softmax,
    LogSoftmax,
    PickRows,
    Select,
    CausalConv1d,
    FlipRows,
    Reshape,
    OuterTime,
    OuterRows,
    ContractState,
    LinearRecurrence,
}

const PRIMITIVES: &[(&str, Primitive)] = &[
    ("add", Primitive::Add),
    ("sub", Primitive::Sub),
    ("mul", Primitive::Mul),
    ("neg", Primitive::Neg),
    ("scale", Primitive::Scale),
    ("add_scalar", Primitive::AddScalar),
    ("powf", Primitive::Powf),
    ("exp", Primitive::Exp),
    ("log", Primitive::Log),
    ("silu", Primitive::Silu),
    ("sigmoid", Primitive::Sigmoid),
    ("softplus", Primitive::Softplus),
    ("zoh_gain", Primitive::ZohGain),
    ("matmul", Primitive::MatMul),
    ("add_row", Primitive::AddRow),
    ("mul_row", Primitive::MulRow),
    ("mul_col", Primitive::MulCol),
    ("row_mean", Primitive::RowMean),
    ("sum", Primitive::Sum),
    ("mean", Primitive::Mean),
    ("softmax", Primitive::Softmax),
    ("log_softmax", Primitive::LogSoftmax),
    ("pick_rows", Primitive::PickRows),
    ("select", Primitive::Select),
    ("causal_conv1d", Primitive::CausalConv1d),
    ("flip_rows", Primitive::FlipRows),
    ("reshape", Primitive::Reshape),
    ("outer_time", Primitive::OuterTime),
    ("outer_rows", Primitive::OuterRows),
    ("contract_state", Primitive::ContractState),
    ("linear_recurrence", Primitive::LinearRecurrence),
];

impl Primitive {
    pub fn name(self) -> &'static str {
        PRIMITIVES.iter().find(|(_, p)| *p == self).map(|(n, _)| *n).unwrap()
    }

    pub fn all() -> impl Iterator<Item = Primitive> {
        PRIMITIVES.iter().map(|(_, p)| *p)
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PRIMITIVES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::UnknownPrimitive(s.to_string()))
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Primitive, Var),
    Binary(Primitive, Var, Var),
    Const(Primitive, Var, f64),
    Select(Vec<bool>, Var, Var),
    PickRows(Var, Vec<usize>),
    Reshape(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    trainable: bool,
}

/// Record of evaluated primitives in topological (insertion) order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Reverse-accumulated gradients, one slot per tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not reach the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::raw(self.shapes[v.0].clone(), g.clone()),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => Tensor::raw(self.shapes[v.0].clone(), g),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
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

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    pub fn params(&self) -> impl Iterator<Item = Var> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable)
            .map(|(i, _)| Var(i))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Replaces the value of a leaf; call [`Tape::reevaluate`] afterwards.
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Contract(format!("node {} is not a leaf", v.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "leaf {} has shape {:?}, got {:?}",
                v.0,
                node.value.shape(),
                value.shape()
            )));
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every non-leaf node in recording order.
    pub fn reevaluate(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.eval(&self.nodes[i].op)?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn push(&mut self, op: Op, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node { op, value, trainable });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        Ok(self.push(op, value, false))
    }

    /// Applies an attribute-free primitive by name-resolved kind.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        use Primitive::*;
        match (prim, inputs) {
            (Neg | Exp | Log | Silu | Sigmoid | Softplus | ZohGain | RowMean | Sum | Mean
            | Softmax | LogSoftmax | FlipRows, &[x]) => self.record(Op::Unary(prim, x)),
            (Add | Sub | Mul | MatMul | AddRow | MulRow | MulCol | CausalConv1d | OuterTime
            | OuterRows | ContractState | LinearRecurrence, &[a, b]) => {
                self.record(Op::Binary(prim, a, b))
            }
            (Scale | AddScalar | Powf | PickRows | Select | Reshape, _) => Err(Error::Contract(
                format!("primitive `{}` needs attributes; use its dedicated method", prim.name()),
            )),
            _ => Err(Error::Contract(format!(
                "primitive `{}` called with {} inputs",
                prim.name(),
                inputs.len()
            ))),
        }
    }

    /// Applies a primitive looked up by its registered name.
    pub fn apply_named(&mut self, name: &str, inputs: &[Var]) -> Result<Var> {
        let prim: Primitive = name.parse()?;
        self.apply(prim, inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::Add, a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::Sub, a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::Mul, a, b))
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::MatMul, a, b))
    }
    /// `x[r, :] + bias` for every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::AddRow, x, bias))
    }
    /// `x[r, :] * scale` for every row.
    pub fn mul_row(&mut self, x: Var, scale: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::MulRow, x, scale))
    }
    /// `x[r, :] * c[r]`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::MulCol, x, c))
    }
    /// Depthwise causal convolution of `x: [T, C]` with taps `w: [C, W]`.
    pub fn causal_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::CausalConv1d, x, w))
    }
    /// `delta[t] * a[..]`, giving shape `[T, ..a.shape]`.
    pub fn outer_time(&mut self, delta: Var, a: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::OuterTime, delta, a))
    }
    /// `x[t, e] * b[t, n]`, giving `[T, E, N]`.
    pub fn outer_rows(&mut self, x: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::OuterRows, x, b))
    }
    /// `sum_n h[t, e, n] * c[t, n]`, giving `[T, E]`.
    pub fn contract_state(&mut self, h: Var, c: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::ContractState, h, c))
    }
    /// `h_t = a_t * h_{t-1} + b_t` along the leading axis, `h_0 = 0`.
    pub fn linear_recurrence(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Primitive::LinearRecurrence, a, b))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Neg, x))
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Exp, x))
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Log, x))
    }
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Silu, x))
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Sigmoid, x))
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Softplus, x))
    }
    pub fn zoh_gain(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::ZohGain, x))
    }
    pub fn row_mean(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::RowMean, x))
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Sum, x))
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Mean, x))
    }
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::Softmax, x))
    }
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::LogSoftmax, x))
    }
    pub fn flip_rows(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unary(Primitive::FlipRows, x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::Const(Primitive::Scale, x, c))
    }
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::Const(Primitive::AddScalar, x, c))
    }
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.record(Op::Const(Primitive::Powf, x, p))
    }

    /// Elementwise `if mask { on_true } else { on_false }`.
    pub fn select(&mut self, mask: Vec<bool>, on_true: Var, on_false: Var) -> Result<Var> {
        self.record(Op::Select(mask, on_true, on_false))
    }

    /// `x[t, index[t]]` for a `[T, P]` input.
    pub fn pick_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        self.record(Op::PickRows(x, index))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.value(x).shape()
            )));
        }
        let value = Tensor::raw(shape.to_vec(), self.value(x).data().to_vec());
        Ok(self.push(Op::Reshape(x, shape.to_vec()), value, false))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let v = |x: &Var| &self.nodes[x.0].value;
        match op {
            Op::Leaf => unreachable!("leaves are never re-evaluated"),
            Op::Unary(p, x) => k::unary(*p, v(x)),
            Op::Binary(p, a, b) => k::binary(*p, v(a), v(b)),
            Op::Const(p, x, c) => Ok(k::with_const(*p, v(x), *c)),
            Op::Select(mask, a, b) => k::select(mask, v(a), v(b)),
            Op::PickRows(x, idx) => k::pick_rows(v(x), idx),
            Op::Reshape(x, shape) => Tensor::from_parts(shape.clone(), v(x).data().to_vec()),
        }
    }

    /// Reverse accumulation from `output`, seeded with `seed`.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out_shape = self.nodes[output.0].value.shape();
        if out_shape != seed.shape() {
            return Err(Error::shape(format!(
                "seed shape {:?} does not match output shape {out_shape:?}",
                seed.shape()
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.data().to_vec());

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |x: &Var| &self.nodes[x.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Unary(p, x) => {
                    let gx = k::unary_vjp(*p, val(x), &node.value, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Binary(p, a, b) => {
                    let (ga, gb) = k::binary_vjp(*p, val(a), val(b), &node.value, &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Const(p, x, c) => {
                    let gx = k::const_vjp(*p, val(x), *c, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Select(mask, a, b) => {
                    let ga = g.iter().zip(mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
                    let gb = g.iter().zip(mask).map(|(&g, &m)| if m { 0.0 } else { g }).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::PickRows(x, idx) => {
                    let xv = val(x);
                    let cols = xv.row_len();
                    let mut gx = vec![0.0; xv.len()];
                    for (t, (&j, &gt)) in idx.iter().zip(&g).enumerate() {
                        gx[t * cols + j] += gt;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(x, _) => accumulate(&mut grads, *x, g),
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
