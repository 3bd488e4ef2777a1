use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_a: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_r: 0.5, lambda_a: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0 && self.lambda_a >= 0.0) {
            return Err(Error::domain("loss weights must be non-negative"));
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], t: usize, p: usize) -> Result<()> {
    if labels.len() != t {
        return Err(Error::shape(format!("{} labels for {t} frames", labels.len())));
    }
    match labels.iter().find(|&&l| l >= p) {
        Some(l) => Err(Error::domain(format!("label {l} outside [0, {p})"))),
        None => Ok(()),
    }
}

/// Frame-mean cross-entropy of `logits: [T, P]` against `labels`.
pub fn loss_recognition(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(logits.clone());
    let l = recognition_loss_traced(&mut tape, x, labels)?;
    tape.value(l).item()
}

/// Frame-mean SmoothL1 between prediction and target.
pub fn loss_anticipation(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(pred.clone());
    let t = tape.leaf(target.clone());
    let l = anticipation_loss_traced(&mut tape, p, t)?;
    tape.value(l).item()
}

pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

pub fn combined_loss(loss_r: f64, loss_a: f64, w: &LossWeights, anticipation_enabled: bool) -> f64 {
    if anticipation_enabled {
        w.lambda_r * loss_r + w.lambda_a * loss_a
    } else {
        w.lambda_r * loss_r
    }
}

pub fn recognition_loss_traced(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape(format!("logits must be [T, P], got {shape:?}")));
    }
    check_labels(labels, shape[0], shape[1])?;
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick_rows(lp, labels.to_vec())?;
    let m = tape.mean(picked)?;
    tape.neg(m)
}

pub fn anticipation_loss_traced(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let (ps, ts) = (tape.value(pred).shape().to_vec(), tape.value(target).shape().to_vec());
    if ps != ts {
        return Err(Error::shape(format!("prediction {ps:?} vs target {ts:?}")));
    }
    let d = tape.sub(pred, target)?;
    let dv = tape.value(d).data().to_vec();
    let neg = tape.neg(d)?;
    let abs = tape.select(dv.iter().map(|&x| x >= 0.0).collect(), d, neg)?;
    let sq = tape.mul(d, d)?;
    let quad = tape.scale(sq, 0.5)?;
    let lin = tape.add_scalar(abs, -0.5)?;
    let per = tape.select(dv.iter().map(|&x| x.abs() < 1.0).collect(), quad, lin)?;
    tape.mean(per)
}

/// Returns `(loss_r, loss_a, total)` handles.
pub fn combined_loss_traced(
    tape: &mut Tape,
    logits: Var,
    anticipation: Var,
    labels: &[usize],
    targets: &Tensor,
    weights: &LossWeights,
    anticipation_enabled: bool,
) -> Result<(Var, Var, Var)> {
    let lr = recognition_loss_traced(tape, logits, labels)?;
    let tv = tape.leaf(targets.clone());
    let la = anticipation_loss_traced(tape, anticipation, tv)?;
    let wr = tape.scale(lr, weights.lambda_r)?;
    let total = if anticipation_enabled {
        let wa = tape.scale(la, weights.lambda_a)?;
        tape.add(wr, wa)?
    } else {
        wr
    };
    Ok((lr, la, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::grad_check;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_log_p() {
        for p in [2usize, 7, 19] {
            let logits = Tensor::zeros(&[5, p]);
            let l = loss_recognition(&logits, &[0, 1, 0, 1, 1]).unwrap();
            assert!((l - (p as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logit_goes_to_zero() {
        let logits = Tensor::matrix(1, 3, vec![0.0, 60.0, 0.0]).unwrap();
        assert!(loss_recognition(&logits, &[1]).unwrap() < 1e-20);
    }

    #[test]
    fn frame_mean() {
        let a = Tensor::matrix(1, 2, vec![0.3, -1.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![2.0, 0.5]).unwrap();
        let both = Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let (l1, l2) = (loss_recognition(&a, &[0]).unwrap(), loss_recognition(&b, &[1]).unwrap());
        let l = loss_recognition(&both, &[0, 1]).unwrap();
        assert!((l - (l1 + l2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(matches!(loss_recognition(&logits, &[0, 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn smooth_l1_branches() {
        let z = Tensor::vector(vec![0.0; 4]);
        assert_eq!(loss_anticipation(&z, &z).unwrap(), 0.0);
        let one = |d: f64| loss_anticipation(&Tensor::vector(vec![d]), &Tensor::vector(vec![0.0])).unwrap();
        assert_eq!(one(0.5), 0.125);
        assert_eq!(one(2.0), 1.5);
        assert_eq!(one(-2.0), 1.5);
        assert!(loss_anticipation(&Tensor::vector(vec![0.0; 2]), &Tensor::vector(vec![0.0; 3])).is_err());
    }

    #[test]
    fn combination() {
        let w = LossWeights::default();
        assert_eq!(combined_loss(2.0, 1.0, &w, true), 2.0);
        assert_eq!(combined_loss(2.0, 1.0, &LossWeights { lambda_a: 0.0, ..w }, true), 1.0);
        assert_eq!(combined_loss(2.0, 1.0, &w, false), 1.0);
        assert_eq!(combined_loss(0.0, 0.0, &w, true), 0.0);
    }

    #[test]
    fn combined_gradient_matches_differences() {
        let logits = Tensor::matrix(3, 4, vec![0.2, -0.5, 1.0, 0.1, 0.0, 0.3, -0.2, 0.9, 1.1, -1.0, 0.4, 0.0]).unwrap();
        let pred = Tensor::vector(vec![0.4, 2.1, -0.3]);
        let target = Tensor::vector(vec![0.5, 0.0, 0.0]);
        let report = grad_check(
            |tape, v| {
                let (_, _, total) = combined_loss_traced(
                    tape, v[0], v[1], &[2, 3, 0], &target, &LossWeights::default(), true,
                )?;
                Ok(total)
            },
            &[logits, pred],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    proptest! {
        #[test]
        fn losses_non_negative(
            vals in proptest::collection::vec(-20.0f64..20.0, 12),
            labels in proptest::collection::vec(0usize..4, 3),
        ) {
            let logits = Tensor::matrix(3, 4, vals.clone()).unwrap();
            prop_assert!(loss_recognition(&logits, &labels).unwrap() >= 0.0);
            let p = Tensor::vector(vals[..6].to_vec());
            let t = Tensor::vector(vals[6..].to_vec());
            prop_assert!(loss_anticipation(&p, &t).unwrap() >= 0.0);
        }
    }
}
