//! First-order linear recurrences `h_t = a_t * h_{t-1} + b_t` (with `h_0 = 0`)
//! evaluated by a work-efficient up-sweep/down-sweep scan.
//!
//! Elements are affine maps `h -> a*h + b`; composing an earlier map `(a1, b1)`
//! with a later map `(a2, b2)` gives `(a2*a1, a2*b1 + b2)`. The tree shape only
//! depends on the sequence length, so results are bit-identical for any thread
//! count.

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many scalar element updates per tree level the level runs inline.
#[cfg(feature = "parallel")]
const PAR_LEVEL_WORK: usize = 1 << 14;

/// Scan a single channel. `a` and `b` must have the same non-zero length.
pub fn parallel_scan(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::domain("parallel_scan on an empty sequence"));
    }
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "parallel_scan: {} multipliers vs {} addends",
            a.len(),
            b.len()
        )));
    }
    Ok(parallel_scan_rows(a, b, a.len(), 1))
}

/// Scan `k` independent channels stored row-major as `[t, k]`.
pub fn parallel_scan_rows(a: &[f64], b: &[f64], t: usize, k: usize) -> Vec<f64> {
    assert_eq!(a.len(), t * k);
    assert_eq!(b.len(), t * k);
    if t == 0 || k == 0 {
        return Vec::new();
    }
    let p = t.next_power_of_two();
    let mut pa = vec![1.0; p * k];
    let mut pb = vec![0.0; p * k];
    pa[..t * k].copy_from_slice(a);
    pb[..t * k].copy_from_slice(b);

    // up-sweep: the last row of each 2s-block accumulates the whole block
    let mut s = 1;
    while s < p {
        for_each_block(&mut pa, &mut pb, 2 * s * k, |ca, cb| {
            let (la, ra) = ca.split_at_mut(s * k);
            let (lb, rb) = cb.split_at_mut(s * k);
            let l = (s - 1) * k;
            let r = (s - 1) * k;
            for j in 0..k {
                let a2 = ra[r + j];
                rb[r + j] += a2 * lb[l + j];
                ra[r + j] = a2 * la[l + j];
            }
        });
        s *= 2;
    }

    // down-sweep to exclusive prefixes
    pa[(p - 1) * k..].fill(1.0);
    pb[(p - 1) * k..].fill(0.0);
    let mut s = p / 2;
    while s >= 1 {
        for_each_block(&mut pa, &mut pb, 2 * s * k, |ca, cb| {
            let (la, ra) = ca.split_at_mut(s * k);
            let (lb, rb) = cb.split_at_mut(s * k);
            let l = (s - 1) * k;
            let r = (s - 1) * k;
            for j in 0..k {
                let (ta, tb) = (la[l + j], lb[l + j]);
                let (pa_, pb_) = (ra[r + j], rb[r + j]);
                la[l + j] = pa_;
                lb[l + j] = pb_;
                ra[r + j] = ta * pa_;
                rb[r + j] = ta * pb_ + tb;
            }
        });
        s /= 2;
    }

    let mut h = vec![0.0; t * k];
    for i in 0..t * k {
        h[i] = a[i] * pb[i] + b[i];
    }
    h
}

fn for_each_block<F>(pa: &mut [f64], pb: &mut [f64], block: usize, f: F)
where
    F: Fn(&mut [f64], &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let blocks = pa.len() / block;
        if blocks > 1 && pa.len() / 2 >= PAR_LEVEL_WORK && rayon::current_num_threads() > 1 {
            pa.par_chunks_mut(block)
                .zip(pb.par_chunks_mut(block))
                .for_each(|(ca, cb)| f(ca, cb));
            return;
        }
    }
    for (ca, cb) in pa.chunks_mut(block).zip(pb.chunks_mut(block)) {
        f(ca, cb);
    }
}

/// Left-to-right loop over `[t, k]` channels; the reference the tree scan is
/// checked against.
pub fn sequential_scan_rows(a: &[f64], b: &[f64], t: usize, k: usize) -> Vec<f64> {
    assert_eq!(a.len(), t * k);
    assert_eq!(b.len(), t * k);
    let mut h = vec![0.0; t * k];
    let mut prev = vec![0.0; k];
    for s in 0..t {
        for j in 0..k {
            let v = a[s * k + j] * prev[j] + b[s * k + j];
            h[s * k + j] = v;
            prev[j] = v;
        }
    }
    h
}

/// Adjoint of the recurrence: `g_t = up_t + a_{t+1} * g_{t+1}`, run right to left.
pub(crate) fn reverse_scan_rows(a: &[f64], upstream: &[f64], t: usize, k: usize) -> Vec<f64> {
    let mut ra = vec![0.0; t * k];
    let mut rb = vec![0.0; t * k];
    for r in 0..t {
        let src = t - 1 - r;
        rb[r * k..(r + 1) * k].copy_from_slice(&upstream[src * k..(src + 1) * k]);
        if r > 0 {
            ra[r * k..(r + 1) * k].copy_from_slice(&a[(src + 1) * k..(src + 2) * k]);
        }
    }
    let rg = parallel_scan_rows(&ra, &rb, t, k);
    let mut g = vec![0.0; t * k];
    for r in 0..t {
        let dst = t - 1 - r;
        g[dst * k..(dst + 1) * k].copy_from_slice(&rg[r * k..(r + 1) * k]);
    }
    g
}
