//! Diagonal state-space mathematics: zero-order-hold discretization, the
//! recurrent and convolutional views of a time-invariant system, and the
//! selective (input-dependent) scan.
//!
//! Each channel runs its own diagonal SSM; the per-timestep `B_t`/`C_t`
//! projections are shared by all channels.

pub mod scan;

pub use scan::{parallel_scan, parallel_scan_rows, sequential_scan_rows};

use crate::error::{Error, Result};
use crate::numkit::{zoh_gain, Tape, Tensor, Var};

/// Continuous-time diagonal system `h' = A h + B x`, `y = C h`, with step `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    /// Diagonal of the state matrix.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: f64,
}

impl SsmParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> Result<Self> {
        let p = Self { a, b, c, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn state_size(&self) -> usize {
        self.a.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(Error::domain("state size must be at least 1"));
        }
        if self.b.len() != n || self.c.len() != n {
            return Err(Error::shape(format!(
                "A has {n} entries but B has {} and C has {}",
                self.b.len(),
                self.c.len()
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::domain(format!("step size must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// `A_n = -(n + 1)`: one decay rate per state, spread over `1..=N`.
pub fn init_state_diagonal(n: usize) -> Vec<f64> {
    (0..n).map(|i| -((i + 1) as f64)).collect()
}

/// Discretized multipliers `A_bar` and input gains `B_bar`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
}

/// Zero-order hold: `A_bar = exp(A delta)`, `B_bar = (A delta)^-1 (exp(A delta) - 1) B delta`,
/// falling back to `B delta` when `|A delta| < 1e-8`.
pub fn discretize_zoh(params: &SsmParams) -> Result<DiscreteSsm> {
    params.validate()?;
    let d = params.delta;
    let a_bar = params.a.iter().map(|&a| (a * d).exp()).collect();
    let b_bar = params
        .a
        .iter()
        .zip(&params.b)
        .map(|(&a, &b)| zoh_gain(a * d) * b * d)
        .collect();
    Ok(DiscreteSsm { a_bar, b_bar })
}

/// Left-to-right evaluation of `h_t = A_bar h_{t-1} + B_bar x_t`, `y_t = C h_t`.
pub fn recurrent_scan(sys: &DiscreteSsm, c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let n = sys.a_bar.len();
    if sys.b_bar.len() != n || c.len() != n {
        return Err(Error::shape("recurrent_scan: A_bar, B_bar and C lengths differ"));
    }
    let mut h = vec![0.0; n];
    Ok(x
        .iter()
        .map(|&xt| {
            let mut y = 0.0;
            for i in 0..n {
                h[i] = sys.a_bar[i] * h[i] + sys.b_bar[i] * xt;
                y += c[i] * h[i];
            }
            y
        })
        .collect())
}

/// Impulse response `K_bar[t] = C A_bar^t B_bar` of a time-invariant system.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub k_bar: Vec<f64>,
}

pub fn build_kernel(params: &SsmParams, t: usize) -> Result<Kernel> {
    if t < 1 {
        return Err(Error::domain("kernel length must be at least 1"));
    }
    let sys = discretize_zoh(params)?;
    let mut power: Vec<f64> = sys.b_bar.clone();
    let mut k_bar = Vec::with_capacity(t);
    for _ in 0..t {
        k_bar.push(params.c.iter().zip(&power).map(|(c, p)| c * p).sum());
        power.iter_mut().zip(&sys.a_bar).for_each(|(p, a)| *p *= a);
    }
    Ok(Kernel { k_bar })
}

/// Causal convolution `y_t = sum_{tau <= t} K_bar[tau] x_{t - tau}`.
pub fn conv_apply(kernel: &Kernel, x: &[f64]) -> Result<Vec<f64>> {
    if kernel.k_bar.len() != x.len() {
        return Err(Error::shape(format!(
            "kernel has {} taps for an input of length {}",
            kernel.k_bar.len(),
            x.len()
        )));
    }
    Ok((0..x.len())
        .map(|t| (0..=t).map(|tau| kernel.k_bar[tau] * x[t - tau]).sum())
        .collect())
}

/// Per-timestep step sizes and projections of a selective SSM.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveSequence {
    /// `[T]`, strictly positive.
    pub delta: Vec<f64>,
    /// `[T, N]`
    pub b: Tensor,
    /// `[T, N]`
    pub c: Tensor,
}

impl SelectiveSequence {
    pub fn new(delta: Vec<f64>, b: Tensor, c: Tensor) -> Result<Self> {
        let s = Self { delta, b, c };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn state_size(&self) -> usize {
        self.b.row_len()
    }

    fn validate(&self) -> Result<()> {
        let t = self.delta.len();
        if t == 0 {
            return Err(Error::domain("selective sequence must have at least one step"));
        }
        if self.b.rank() != 2 || self.c.shape() != self.b.shape() || self.b.rows() != t {
            return Err(Error::shape(format!(
                "B {:?} and C {:?} must both be [{t}, N]",
                self.b.shape(),
                self.c.shape()
            )));
        }
        check_deltas(&self.delta)
    }
}

fn check_deltas(delta: &[f64]) -> Result<()> {
    if let Some((t, d)) = delta.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(Error::domain(format!("step size at t={t} is {d}, must be positive")));
    }
    Ok(())
}

fn check_selective_shapes(a: &Tensor, seq: &SelectiveSequence, x: &Tensor) -> Result<(usize, usize, usize)> {
    seq.validate()?;
    let (t, n) = (seq.len(), seq.state_size());
    if a.rank() != 2 || a.shape()[1] != n {
        return Err(Error::shape(format!("A must be [E, {n}], got {:?}", a.shape())));
    }
    let e = a.shape()[0];
    if x.shape() != [t, e] {
        return Err(Error::shape(format!("x must be [{t}, {e}], got {:?}", x.shape())));
    }
    Ok((t, e, n))
}

/// Discretized `(A_bar, B_bar x)` laid out as `[T, E*N]`.
fn selective_terms(a: &Tensor, seq: &SelectiveSequence, x: &Tensor, e: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let t = seq.len();
    let mut mult = Vec::with_capacity(t * e * n);
    let mut add = Vec::with_capacity(t * e * n);
    for s in 0..t {
        let d = seq.delta[s];
        let b = seq.b.row(s);
        for ch in 0..e {
            let xv = x.data()[s * e + ch];
            for q in 0..n {
                let z = a.data()[ch * n + q] * d;
                mult.push(z.exp());
                add.push(zoh_gain(z) * d * b[q] * xv);
            }
        }
    }
    (mult, add)
}

fn read_out(h: &[f64], seq: &SelectiveSequence, t: usize, e: usize, n: usize) -> Tensor {
    let mut y = vec![0.0; t * e];
    for s in 0..t {
        let c = seq.c.row(s);
        for ch in 0..e {
            let base = (s * e + ch) * n;
            y[s * e + ch] = h[base..base + n].iter().zip(c).map(|(h, c)| h * c).sum();
        }
    }
    Tensor::raw(vec![t, e], y)
}

/// Selective scan over `x: [T, E]` with per-channel diagonal `a: [E, N]`,
/// evaluated with the tree scan.
pub fn selective_scan(a: &Tensor, seq: &SelectiveSequence, x: &Tensor) -> Result<Tensor> {
    let (t, e, n) = check_selective_shapes(a, seq, x)?;
    let (mult, add) = selective_terms(a, seq, x, e, n);
    let h = parallel_scan_rows(&mult, &add, t, e * n);
    Ok(read_out(&h, seq, t, e, n))
}

/// Same contract as [`selective_scan`], evaluated strictly left to right.
pub fn selective_scan_sequential(a: &Tensor, seq: &SelectiveSequence, x: &Tensor) -> Result<Tensor> {
    let (t, e, n) = check_selective_shapes(a, seq, x)?;
    let (mult, add) = selective_terms(a, seq, x, e, n);
    let h = sequential_scan_rows(&mult, &add, t, e * n);
    Ok(read_out(&h, seq, t, e, n))
}

/// Differentiable selective scan recorded on `tape`.
///
/// Shapes: `a: [E, N]`, `delta: [T]`, `b, c: [T, N]`, `x: [T, E]`; returns `[T, E]`.
pub fn selective_scan_traced(tape: &mut Tape, a: Var, delta: Var, b: Var, c: Var, x: Var) -> Result<Var> {
    check_deltas(tape.value(delta).data())?;
    let (t, e, n) = {
        let (av, xv) = (tape.value(a), tape.value(x));
        if av.rank() != 2 || xv.rank() != 2 {
            return Err(Error::shape("selective_scan_traced: A and x must be matrices"));
        }
        (xv.rows(), av.shape()[0], av.shape()[1])
    };
    let z = tape.outer_time(delta, a)?;
    let a_bar = tape.exp(z)?;
    let gain = tape.zoh_gain(z)?;
    let gain = tape.reshape(gain, &[t, e * n])?;
    let gain = tape.mul_col(gain, delta)?;
    let gain = tape.reshape(gain, &[t, e, n])?;
    let bx = tape.outer_rows(x, b)?;
    let u = tape.mul(gain, bx)?;
    let h = tape.linear_recurrence(a_bar, u)?;
    tape.contract_state(h, c)
}
