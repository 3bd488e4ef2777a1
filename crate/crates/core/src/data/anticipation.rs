use super::annotations::segments;
use crate::error::{Error, Result};

/// Normalized remaining time in the current phase.
#[derive(Clone, Debug, PartialEq)]
pub struct AnticipationTargets {
    pub values: Vec<f64>,
    pub horizon: usize,
}

/// a_t = min(e - t, h) / h where e is the last frame of t's segment.
pub fn make_anticipation_targets(labels: &[usize], horizon: usize) -> Result<AnticipationTargets> {
    if horizon == 0 {
        return Err(Error::domain("anticipation horizon must be at least 1"));
    }
    let h = horizon as f64;
    let mut values = Vec::with_capacity(labels.len());
    for seg in segments(labels) {
        for t in seg.start..=seg.end {
            values.push((seg.end - t).min(horizon) as f64 / h);
        }
    }
    Ok(AnticipationTargets { values, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_phase() {
        let a = make_anticipation_targets(&[4; 5], 3).unwrap();
        let want = [1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (x, y) in a.values.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn two_segments() {
        // Frame 1 is one step from its segment end, so it sits below 1.
        let a = make_anticipation_targets(&[0, 0, 0, 1, 1], 2).unwrap();
        assert_eq!(a.values, vec![1.0, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn zero_horizon_rejected() {
        assert!(make_anticipation_targets(&[0], 0).is_err());
    }

    proptest! {
        #[test]
        fn zero_and_one_characterization(
            labels in proptest::collection::vec(0usize..3, 1..200),
            h in 1usize..40,
        ) {
            let a = make_anticipation_targets(&labels, h).unwrap();
            for seg in segments(&labels) {
                for t in seg.start..=seg.end {
                    let v = a.values[t];
                    prop_assert!((0.0..=1.0).contains(&v));
                    prop_assert_eq!(v == 0.0, t == seg.end);
                    prop_assert_eq!(v == 1.0, seg.end - t >= h);
                    if t > seg.start {
                        prop_assert!(v <= a.values[t - 1]);
                    }
                }
            }
        }
    }
}
