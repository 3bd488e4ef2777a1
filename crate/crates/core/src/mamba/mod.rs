//! One bidirectional Mamba decoder layer: RMS normalization, input/gate
//! projections, a causal-conv + selective-scan path per direction, SiLU gate,
//! output projection and a residual connection with drop path.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};
use crate::ssm::selective_scan_traced;

/// Epsilon inside the RMS normalization.
pub const RMS_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub d_model: usize,
    /// Inner width E.
    pub d_inner: usize,
    pub n_state: usize,
    pub conv_width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Parameters of one scan direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionParams {
    /// `[E, W]` depthwise causal taps.
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    /// `[E, 1]`
    pub delta_weight: Tensor,
    /// `[1]`
    pub delta_bias: Tensor,
    /// `[E, N]`
    pub b_proj: Tensor,
    /// `[E, N]`
    pub c_proj: Tensor,
    /// `[E, N]`, state matrix is `-exp(a_log)`.
    pub a_log: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MambaLayerParams {
    pub norm_scale: Tensor,
    /// `[D, E]` main path.
    pub in_proj_x: Tensor,
    /// `[D, E]` gate path.
    pub in_proj_z: Tensor,
    pub forward: DirectionParams,
    /// Absent for a forward-only layer.
    pub backward: Option<DirectionParams>,
    /// `[E, D]`
    pub out_proj: Tensor,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::raw(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// Inverse of softplus, so that `softplus(inv_softplus(y)) == y`.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl DirectionParams {
    pub fn init(shape: LayerShape, rng: &mut impl Rng) -> Self {
        let LayerShape { d_inner: e, n_state: n, conv_width: w, .. } = shape;
        let conv_bound = 1.0 / (w as f64).sqrt();
        let proj_bound = 1.0 / (e as f64).sqrt();
        // initial step sizes log-uniform in [1e-3, 1e-1]
        let dt = (rng.gen_range(1e-3f64.ln()..1e-1f64.ln())).exp();
        let a_log = (0..e * n).map(|i| (((i % n) + 1) as f64).ln()).collect();
        Self {
            conv_weight: uniform(rng, &[e, w], conv_bound),
            conv_bias: uniform(rng, &[e], conv_bound),
            delta_weight: uniform(rng, &[e, 1], proj_bound),
            delta_bias: Tensor::vector(vec![inv_softplus(dt)]),
            b_proj: uniform(rng, &[e, n], proj_bound),
            c_proj: uniform(rng, &[e, n], proj_bound),
            a_log: Tensor::raw(vec![e, n], a_log),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, t) in [
            ("conv_weight", &self.conv_weight),
            ("conv_bias", &self.conv_bias),
            ("delta_weight", &self.delta_weight),
            ("delta_bias", &self.delta_bias),
            ("b_proj", &self.b_proj),
            ("c_proj", &self.c_proj),
            ("a_log", &self.a_log),
        ] {
            out.push((format!("{prefix}.{name}"), t));
        }
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.conv_weight,
            &mut self.conv_bias,
            &mut self.delta_weight,
            &mut self.delta_bias,
            &mut self.b_proj,
            &mut self.c_proj,
            &mut self.a_log,
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> DirectionVars {
        DirectionVars {
            conv_weight: tape.param(self.conv_weight.clone()),
            conv_bias: tape.param(self.conv_bias.clone()),
            delta_weight: tape.param(self.delta_weight.clone()),
            delta_bias: tape.param(self.delta_bias.clone()),
            b_proj: tape.param(self.b_proj.clone()),
            c_proj: tape.param(self.c_proj.clone()),
            a_log: tape.param(self.a_log.clone()),
        }
    }
}

impl MambaLayerParams {
    pub fn init(shape: LayerShape, bidirectional: bool, rng: &mut impl Rng) -> Self {
        let LayerShape { d_model: d, d_inner: e, .. } = shape;
        let in_bound = 1.0 / (d as f64).sqrt();
        let out_bound = 1.0 / (e as f64).sqrt();
        let in_proj_x = uniform(rng, &[d, e], in_bound);
        let in_proj_z = uniform(rng, &[d, e], in_bound);
        let forward = DirectionParams::init(shape, rng);
        let backward = bidirectional.then(|| DirectionParams::init(shape, rng));
        Self {
            norm_scale: Tensor::full(&[d], 1.0),
            in_proj_x,
            in_proj_z,
            forward,
            backward,
            out_proj: uniform(rng, &[e, d], out_bound),
        }
    }

    pub fn shape(&self) -> LayerShape {
        LayerShape {
            d_model: self.in_proj_x.shape()[0],
            d_inner: self.in_proj_x.shape()[1],
            n_state: self.forward.a_log.shape()[1],
            conv_width: self.forward.conv_weight.shape()[1],
        }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.backward.is_some()
    }

    /// Parameters in declaration order, prefixed with `prefix`.
    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.norm_scale"), &self.norm_scale));
        out.push((format!("{prefix}.in_proj_x"), &self.in_proj_x));
        out.push((format!("{prefix}.in_proj_z"), &self.in_proj_z));
        self.forward.named(&format!("{prefix}.fwd"), out);
        if let Some(b) = &self.backward {
            b.named(&format!("{prefix}.bwd"), out);
        }
        out.push((format!("{prefix}.out_proj"), &self.out_proj));
    }

    /// Mutable references in the same order as [`MambaLayerParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.norm_scale, &mut self.in_proj_x, &mut self.in_proj_z];
        v.extend(self.forward.tensors_mut());
        if let Some(b) = &mut self.backward {
            v.extend(b.tensors_mut());
        }
        v.push(&mut self.out_proj);
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            norm_scale: tape.param(self.norm_scale.clone()),
            in_proj_x: tape.param(self.in_proj_x.clone()),
            in_proj_z: tape.param(self.in_proj_z.clone()),
            forward: self.forward.bind(tape),
            backward: self.backward.as_ref().map(|b| b.bind(tape)),
            out_proj: tape.param(self.out_proj.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DirectionVars {
    pub conv_weight: Var,
    pub conv_bias: Var,
    pub delta_weight: Var,
    pub delta_bias: Var,
    pub b_proj: Var,
    pub c_proj: Var,
    pub a_log: Var,
}

impl DirectionVars {
    fn all(&self) -> [Var; 7] {
        [
            self.conv_weight,
            self.conv_bias,
            self.delta_weight,
            self.delta_bias,
            self.b_proj,
            self.c_proj,
            self.a_log,
        ]
    }
}

/// Tape handles of a bound [`MambaLayerParams`].
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub norm_scale: Var,
    pub in_proj_x: Var,
    pub in_proj_z: Var,
    pub forward: DirectionVars,
    pub backward: Option<DirectionVars>,
    pub out_proj: Var,
}

impl LayerVars {
    /// Handles in declaration order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.norm_scale, self.in_proj_x, self.in_proj_z];
        v.extend(self.forward.all());
        if let Some(b) = &self.backward {
            v.extend(b.all());
        }
        v.push(self.out_proj);
        v
    }
}

/// What drop path does to the residual branch on one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DropPath {
    Identity,
    /// Branch kept and rescaled by `1 / (1 - p)`.
    Keep(f64),
    Drop,
}

impl DropPath {
    /// Per-sequence Bernoulli draw; identity at inference or for `p == 0`.
    pub fn sample(rate: f64, training: bool, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain(format!("drop path rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(DropPath::Identity);
        }
        Ok(if rng.gen::<f64>() < rate { DropPath::Drop } else { DropPath::Keep(1.0 / (1.0 - rate)) })
    }
}

/// `x_t / sqrt(mean(x_t^2) + eps) * scale`, row by row.
pub fn normalize_traced(tape: &mut Tape, x: Var, scale: Var) -> Result<Var> {
    let sq = tape.mul(x, x)?;
    let ms = tape.row_mean(sq)?;
    let ms = tape.add_scalar(ms, RMS_EPS)?;
    let inv = tape.powf(ms, -0.5)?;
    let xn = tape.mul_col(x, inv)?;
    tape.mul_row(xn, scale)
}

/// One directional path over `x: [T, E]`. The backward direction runs the same
/// computation on the time-reversed sequence and reverses the result.
pub fn direction_pass_traced(tape: &mut Tape, x: Var, direction: Direction, p: &DirectionVars) -> Result<Var> {
    let t = tape.value(x).rows();
    if t < 1 || tape.value(x).rank() != 2 {
        return Err(Error::domain("direction pass needs a [T, E] input with T >= 1"));
    }
    let x = match direction {
        Direction::Forward => x,
        Direction::Backward => tape.flip_rows(x)?,
    };
    let xc = tape.causal_conv1d(x, p.conv_weight)?;
    let xc = tape.add_row(xc, p.conv_bias)?;
    let xs = tape.silu(xc)?;
    let dl = tape.matmul(xs, p.delta_weight)?;
    let dl = tape.add_row(dl, p.delta_bias)?;
    let dl = tape.softplus(dl)?;
    let dl = tape.reshape(dl, &[t])?;
    let b = tape.matmul(xs, p.b_proj)?;
    let c = tape.matmul(xs, p.c_proj)?;
    let a = tape.exp(p.a_log)?;
    let a = tape.neg(a)?;
    let y = selective_scan_traced(tape, a, dl, b, c, xs)?;
    match direction {
        Direction::Forward => Ok(y),
        Direction::Backward => tape.flip_rows(y),
    }
}

fn layer_traced(tape: &mut Tape, x: Var, p: &LayerVars, drop: DropPath, bidirectional: bool) -> Result<Var> {
    if drop == DropPath::Drop {
        return Ok(x);
    }
    let u = normalize_traced(tape, x, p.norm_scale)?;
    let m = tape.matmul(u, p.in_proj_x)?;
    let z = tape.matmul(u, p.in_proj_z)?;
    let mut y = direction_pass_traced(tape, m, Direction::Forward, &p.forward)?;
    if bidirectional {
        let bwd = p
            .backward
            .as_ref()
            .ok_or_else(|| Error::shape("bidirectional layer without backward parameters"))?;
        let yb = direction_pass_traced(tape, m, Direction::Backward, bwd)?;
        y = tape.add(y, yb)?;
    }
    let gate = tape.silu(z)?;
    let y = tape.mul(y, gate)?;
    let mut o = tape.matmul(y, p.out_proj)?;
    if let DropPath::Keep(s) = drop {
        o = tape.scale(o, s)?;
    }
    tape.add(x, o)
}

/// Bidirectional layer: `x + drop_path(out_proj((fwd(m) + bwd(m)) * silu(z)))`.
pub fn layer_forward_traced(tape: &mut Tape, x: Var, p: &LayerVars, drop: DropPath) -> Result<Var> {
    layer_traced(tape, x, p, drop, true)
}

/// Forward-only layer: `x + drop_path(out_proj(fwd(m) * silu(z)))`.
pub fn vanilla_layer_forward_traced(tape: &mut Tape, x: Var, p: &LayerVars, drop: DropPath) -> Result<Var> {
    layer_traced(tape, x, p, drop, false)
}

fn check_input(x: &Tensor, d: usize) -> Result<()> {
    if x.rank() != 2 || x.shape()[1] != d || x.rows() == 0 {
        return Err(Error::shape(format!("expected [T, {d}] input with T >= 1, got {:?}", x.shape())));
    }
    Ok(())
}

pub fn normalize(x: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xv, sv) = (tape.leaf(x.clone()), tape.leaf(scale.clone()));
    let y = normalize_traced(&mut tape, xv, sv)?;
    Ok(tape.value(y).clone())
}

pub fn direction_pass(x: &Tensor, direction: Direction, params: &MambaLayerParams) -> Result<Tensor> {
    let dir = match direction {
        Direction::Forward => &params.forward,
        Direction::Backward => params
            .backward
            .as_ref()
            .ok_or_else(|| Error::shape("layer has no backward parameters"))?,
    };
    check_input(x, params.shape().d_inner)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let vars = dir.bind(&mut tape);
    let y = direction_pass_traced(&mut tape, xv, direction, &vars)?;
    Ok(tape.value(y).clone())
}

fn run_layer(
    x: &Tensor,
    params: &MambaLayerParams,
    drop_path_rate: f64,
    training: bool,
    rng: &mut impl Rng,
    bidirectional: bool,
) -> Result<Tensor> {
    check_input(x, params.shape().d_model)?;
    let drop = DropPath::sample(drop_path_rate, training, rng)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let vars = params.bind(&mut tape);
    let y = layer_traced(&mut tape, xv, &vars, drop, bidirectional)?;
    Ok(tape.value(y).clone())
}

pub fn layer_forward(
    x: &Tensor,
    params: &MambaLayerParams,
    drop_path_rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    run_layer(x, params, drop_path_rate, training, rng, true)
}

pub fn vanilla_layer_forward(
    x: &Tensor,
    params: &MambaLayerParams,
    drop_path_rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    run_layer(x, params, drop_path_rate, training, rng, false)
}

#[cfg(test)]
mod tests;
