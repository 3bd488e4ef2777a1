//! Forward values and vector-Jacobian products of the tape primitives.

use super::tape::Primitive;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::ssm::scan;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Below this magnitude the ZOH gain uses its limit value 1.
pub const ZOH_LIMIT: f64 = 1e-8;

/// `(e^z - 1) / z`, continuous at 0.
pub fn zoh_gain(z: f64) -> f64 {
    if z.abs() < ZOH_LIMIT {
        1.0
    } else {
        z.exp_m1() / z
    }
}

fn zoh_gain_deriv(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

fn same_shape(p: Primitive, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{}: shapes {:?} and {:?} differ",
            p.name(),
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn mismatch(p: Primitive, a: &Tensor, b: &Tensor) -> Error {
    Error::shape(format!(
        "{}: incompatible shapes {:?} and {:?}",
        p.name(),
        a.shape(),
        b.shape()
    ))
}

pub(crate) fn unary(p: Primitive, x: &Tensor) -> Result<Tensor> {
    use Primitive::*;
    Ok(match p {
        Neg => x.map(|v| -v),
        Exp => x.map(f64::exp),
        Log => x.map(f64::ln),
        Silu => x.map(|v| v * sigmoid(v)),
        Sigmoid => x.map(sigmoid),
        Softplus => x.map(softplus),
        ZohGain => x.map(zoh_gain),
        RowMean => {
            let (r, c) = (x.rows(), x.row_len());
            if c == 0 {
                return Err(Error::shape("row_mean over empty rows"));
            }
            let data = (0..r).map(|i| x.row(i).iter().sum::<f64>() / c as f64).collect();
            Tensor::raw(vec![r], data)
        }
        Sum => Tensor::scalar(x.data().iter().sum()),
        Mean => {
            if x.is_empty() {
                return Err(Error::shape("mean of empty tensor"));
            }
            Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
        }
        Softmax | LogSoftmax => {
            if x.rank() != 2 {
                return Err(Error::shape(format!("{} expects [T, P], got {:?}", p.name(), x.shape())));
            }
            let c = x.row_len();
            let mut out = Vec::with_capacity(x.len());
            for i in 0..x.rows() {
                let row = x.row(i);
                let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                let lz = z.ln();
                for &v in row.iter().take(c) {
                    out.push(if p == Softmax { (v - m).exp() / z } else { v - m - lz });
                }
            }
            Tensor::raw(x.shape().to_vec(), out)
        }
        FlipRows => {
            let (r, c) = (x.rows(), x.row_len());
            let mut out = Vec::with_capacity(x.len());
            for i in (0..r).rev() {
                out.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
            }
            Tensor::raw(x.shape().to_vec(), out)
        }
        _ => return Err(Error::Contract(format!("{} is not unary", p.name()))),
    })
}

pub(crate) fn unary_vjp(p: Primitive, x: &Tensor, y: &Tensor, g: &[f64]) -> Vec<f64> {
    use Primitive::*;
    let xs = x.data();
    let ys = y.data();
    match p {
        Neg => g.iter().map(|v| -v).collect(),
        Exp => g.iter().zip(ys).map(|(g, y)| g * y).collect(),
        Log => g.iter().zip(xs).map(|(g, x)| g / x).collect(),
        Silu => g
            .iter()
            .zip(xs)
            .map(|(g, &x)| {
                let s = sigmoid(x);
                g * s * (1.0 + x * (1.0 - s))
            })
            .collect(),
        Sigmoid => g.iter().zip(ys).map(|(g, y)| g * y * (1.0 - y)).collect(),
        Softplus => g.iter().zip(xs).map(|(g, &x)| g * sigmoid(x)).collect(),
        ZohGain => g.iter().zip(xs).map(|(g, &x)| g * zoh_gain_deriv(x)).collect(),
        RowMean => {
            let c = x.row_len();
            let mut gx = Vec::with_capacity(x.len());
            for gr in g {
                gx.extend(std::iter::repeat_n(gr / c as f64, c));
            }
            gx
        }
        Sum => vec![g[0]; x.len()],
        Mean => vec![g[0] / x.len() as f64; x.len()],
        Softmax => {
            let c = x.row_len();
            let mut gx = vec![0.0; x.len()];
            for i in 0..x.rows() {
                let (yr, gr) = (&ys[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for j in 0..c {
                    gx[i * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            gx
        }
        LogSoftmax => {
            let c = x.row_len();
            let mut gx = vec![0.0; x.len()];
            for i in 0..x.rows() {
                let (yr, gr) = (&ys[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                let total: f64 = gr.iter().sum();
                for j in 0..c {
                    gx[i * c + j] = gr[j] - yr[j].exp() * total;
                }
            }
            gx
        }
        FlipRows => {
            let (r, c) = (x.rows(), x.row_len());
            let mut gx = Vec::with_capacity(x.len());
            for i in (0..r).rev() {
                gx.extend_from_slice(&g[i * c..(i + 1) * c]);
            }
            gx
        }
        _ => unreachable!("{} is not unary", p.name()),
    }
}

pub(crate) fn with_const(p: Primitive, x: &Tensor, c: f64) -> Tensor {
    match p {
        Primitive::Scale => x.map(|v| v * c),
        Primitive::AddScalar => x.map(|v| v + c),
        Primitive::Powf => x.map(|v| v.powf(c)),
        _ => unreachable!("{} takes no constant", p.name()),
    }
}

pub(crate) fn const_vjp(p: Primitive, x: &Tensor, c: f64, g: &[f64]) -> Vec<f64> {
    match p {
        Primitive::Scale => g.iter().map(|g| g * c).collect(),
        Primitive::AddScalar => g.to_vec(),
        Primitive::Powf => g
            .iter()
            .zip(x.data())
            .map(|(g, &x)| g * c * x.powf(c - 1.0))
            .collect(),
        _ => unreachable!(),
    }
}

pub(crate) fn select(mask: &[bool], a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(Primitive::Select, a, b)?;
    if mask.len() != a.len() {
        return Err(Error::shape(format!(
            "select: mask of {} for tensor of {}",
            mask.len(),
            a.len()
        )));
    }
    let data = mask
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&m, (&x, &y))| if m { x } else { y })
        .collect();
    Ok(Tensor::raw(a.shape().to_vec(), data))
}

pub(crate) fn pick_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    if x.rank() != 2 || idx.len() != x.rows() {
        return Err(Error::shape(format!(
            "pick_rows: {} indices for tensor {:?}",
            idx.len(),
            x.shape()
        )));
    }
    let c = x.row_len();
    let mut out = Vec::with_capacity(idx.len());
    for (t, &j) in idx.iter().enumerate() {
        if j >= c {
            return Err(Error::domain(format!("pick_rows: index {j} out of range 0..{c}")));
        }
        out.push(x.data()[t * c + j]);
    }
    Ok(Tensor::raw(vec![idx.len()], out))
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

pub(crate) fn binary(p: Primitive, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    use Primitive::*;
    let (ad, bd) = (a.data(), b.data());
    Ok(match p {
        Add | Sub | Mul => {
            same_shape(p, a, b)?;
            let f: fn(f64, f64) -> f64 = match p {
                Add => |x, y| x + y,
                Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            Tensor::raw(a.shape().to_vec(), ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect())
        }
        MatMul => {
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(p, a, b));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::raw(vec![m, n], matmul_raw(ad, bd, m, k, n))
        }
        AddRow | MulRow => {
            let c = a.row_len();
            if a.rank() < 2 || b.len() != c {
                return Err(mismatch(p, a, b));
            }
            let mut out = ad.to_vec();
            for row in out.chunks_mut(c) {
                for (o, &v) in row.iter_mut().zip(bd) {
                    if p == AddRow {
                        *o += v
                    } else {
                        *o *= v
                    }
                }
            }
            Tensor::raw(a.shape().to_vec(), out)
        }
        MulCol => {
            if b.rank() != 1 || b.len() != a.rows() || a.rank() < 2 {
                return Err(mismatch(p, a, b));
            }
            let c = a.row_len();
            let mut out = ad.to_vec();
            for (row, &s) in out.chunks_mut(c).zip(bd) {
                row.iter_mut().for_each(|o| *o *= s);
            }
            Tensor::raw(a.shape().to_vec(), out)
        }
        CausalConv1d => {
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(p, a, b));
            }
            let (t, c, w) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; t * c];
            for s in 0..t {
                for j in 0..w {
                    let Some(src) = (s + j + 1).checked_sub(w) else { continue };
                    for ch in 0..c {
                        out[s * c + ch] += bd[ch * w + j] * ad[src * c + ch];
                    }
                }
            }
            Tensor::raw(vec![t, c], out)
        }
        OuterTime => {
            if a.rank() != 1 {
                return Err(mismatch(p, a, b));
            }
            let mut shape = vec![a.len()];
            shape.extend_from_slice(b.shape());
            let mut out = Vec::with_capacity(a.len() * b.len());
            for &d in ad {
                out.extend(bd.iter().map(|&v| d * v));
            }
            Tensor::raw(shape, out)
        }
        OuterRows => {
            if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
                return Err(mismatch(p, a, b));
            }
            let (t, e, n) = (a.rows(), a.shape()[1], b.shape()[1]);
            let mut out = Vec::with_capacity(t * e * n);
            for s in 0..t {
                let br = b.row(s);
                for &x in a.row(s) {
                    out.extend(br.iter().map(|&v| x * v));
                }
            }
            Tensor::raw(vec![t, e, n], out)
        }
        ContractState => {
            if a.rank() != 3 || b.rank() != 2 || a.rows() != b.rows() || a.shape()[2] != b.shape()[1]
            {
                return Err(mismatch(p, a, b));
            }
            let (t, e, n) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let mut out = vec![0.0; t * e];
            for s in 0..t {
                let cr = b.row(s);
                for ch in 0..e {
                    let h = &ad[(s * e + ch) * n..(s * e + ch + 1) * n];
                    out[s * e + ch] = h.iter().zip(cr).map(|(h, c)| h * c).sum();
                }
            }
            Tensor::raw(vec![t, e], out)
        }
        LinearRecurrence => {
            same_shape(p, a, b)?;
            if a.is_empty() {
                return Err(Error::domain("linear_recurrence on an empty sequence"));
            }
            let (t, k) = (a.rows(), a.row_len());
            Tensor::raw(a.shape().to_vec(), scan::parallel_scan_rows(ad, bd, t, k))
        }
        _ => return Err(Error::Contract(format!("{} is not binary", p.name()))),
    })
}

pub(crate) fn binary_vjp(
    p: Primitive,
    a: &Tensor,
    b: &Tensor,
    y: &Tensor,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    use Primitive::*;
    let (ad, bd) = (a.data(), b.data());
    match p {
        Add => (g.to_vec(), g.to_vec()),
        Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
        Mul => (
            g.iter().zip(bd).map(|(g, b)| g * b).collect(),
            g.iter().zip(ad).map(|(g, a)| g * a).collect(),
        ),
        MatMul => {
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = matmul_raw(g, &transpose(bd, k, n), m, n, k);
            let gb = matmul_raw(&transpose(ad, m, k), g, k, m, n);
            (ga, gb)
        }
        AddRow => {
            let c = a.row_len();
            let mut gb = vec![0.0; c];
            for row in g.chunks(c) {
                gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            (g.to_vec(), gb)
        }
        MulRow => {
            let c = a.row_len();
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; c];
            for (i, row) in g.chunks(c).enumerate() {
                for j in 0..c {
                    ga[i * c + j] = row[j] * bd[j];
                    gb[j] += row[j] * ad[i * c + j];
                }
            }
            (ga, gb)
        }
        MulCol => {
            let c = a.row_len();
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            for (i, row) in g.chunks(c).enumerate() {
                for j in 0..c {
                    ga[i * c + j] = row[j] * bd[i];
                    gb[i] += row[j] * ad[i * c + j];
                }
            }
            (ga, gb)
        }
        CausalConv1d => {
            let (t, c, w) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            for s in 0..t {
                for j in 0..w {
                    let Some(src) = (s + j + 1).checked_sub(w) else { continue };
                    for ch in 0..c {
                        let gv = g[s * c + ch];
                        ga[src * c + ch] += gv * bd[ch * w + j];
                        gb[ch * w + j] += gv * ad[src * c + ch];
                    }
                }
            }
            (ga, gb)
        }
        OuterTime => {
            let n = b.len();
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; n];
            for (s, &d) in ad.iter().enumerate() {
                let gr = &g[s * n..(s + 1) * n];
                ga[s] = gr.iter().zip(bd).map(|(g, v)| g * v).sum();
                gb.iter_mut().zip(gr).for_each(|(o, g)| *o += g * d);
            }
            (ga, gb)
        }
        OuterRows => {
            let (t, e, n) = (a.rows(), a.shape()[1], b.shape()[1]);
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            for s in 0..t {
                for ch in 0..e {
                    let gr = &g[(s * e + ch) * n..(s * e + ch + 1) * n];
                    let br = &bd[s * n..(s + 1) * n];
                    ga[s * e + ch] = gr.iter().zip(br).map(|(g, b)| g * b).sum();
                    let x = ad[s * e + ch];
                    gb[s * n..(s + 1) * n]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(o, g)| *o += g * x);
                }
            }
            (ga, gb)
        }
        ContractState => {
            let (t, e, n) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            for s in 0..t {
                for ch in 0..e {
                    let gv = g[s * e + ch];
                    let base = (s * e + ch) * n;
                    for q in 0..n {
                        ga[base + q] = gv * bd[s * n + q];
                        gb[s * n + q] += gv * ad[base + q];
                    }
                }
            }
            (ga, gb)
        }
        LinearRecurrence => {
            let (t, k) = (a.rows(), a.row_len());
            let adj = scan::reverse_scan_rows(ad, g, t, k);
            let h = y.data();
            let mut ga = vec![0.0; a.len()];
            for s in 1..t {
                for j in 0..k {
                    ga[s * k + j] = adj[s * k + j] * h[(s - 1) * k + j];
                }
            }
            (ga, adj)
        }
        _ => unreachable!("{} is not binary", p.name()),
    }
}
