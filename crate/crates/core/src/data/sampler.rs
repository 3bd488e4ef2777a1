use rand::Rng;

use super::annotations::{segments, Segment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledSequence {
    pub indices: Vec<usize>,
}

impl SampledSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of retained frames falling in each segment.
    pub fn segment_counts(&self, segs: &[Segment]) -> Vec<usize> {
        segs.iter()
            .map(|s| self.indices.iter().filter(|&&i| i >= s.start && i <= s.end).count())
            .collect()
    }
}

/// Every transition frame s and its predecessor s - 1, sorted.
pub fn keyframes(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for s in 1..labels.len() {
        if labels[s] != labels[s - 1] {
            if out.last() != Some(&(s - 1)) {
                out.push(s - 1);
            }
            out.push(s);
        }
    }
    out
}

/// Smallest budget that the sampler accepts for these labels.
pub fn required_budget(labels: &[usize]) -> usize {
    keyframes(labels).len().max(1)
}

/// How the free budget is split across segments.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub segments: Vec<Segment>,
    pub keyframes: Vec<usize>,
    /// Frames per segment not already claimed by keyframes.
    pub capacity: Vec<usize>,
    /// Proportional share in the final allocation round (equal to the
    /// capacity for saturated segments).
    pub shares: Vec<f64>,
    pub saturated: Vec<bool>,
    /// Extra frames drawn from each segment.
    pub extra: Vec<usize>,
}

pub fn plan_sampling(labels: &[usize], n_max: usize) -> Result<SamplePlan> {
    let segs = segments(labels);
    let keys = keyframes(labels);
    let required = keys.len().max(1);
    if labels.len() > n_max && n_max < required {
        return Err(Error::Budget { budget: n_max, required });
    }
    let mut capacity: Vec<usize> = segs.iter().map(|s| s.len()).collect();
    for &k in &keys {
        let j = segs.partition_point(|s| s.end < k);
        capacity[j] -= 1;
    }
    let budget = n_max.min(labels.len()) - keys.len();
    let lens: Vec<usize> = segs.iter().map(|s| s.len()).collect();
    let (extra, shares, saturated) = allocate(budget, &lens, &capacity);
    Ok(SamplePlan { segments: segs, keyframes: keys, capacity, shares, saturated, extra })
}

/// Proportional split of `budget` by `weights` with largest-remainder
/// rounding; segments whose share reaches their capacity are filled and the
/// rest is re-split among the others.
fn allocate(budget: usize, weights: &[usize], capacity: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<bool>) {
    let n = weights.len();
    let mut extra = vec![0usize; n];
    let mut shares = vec![0.0; n];
    let mut saturated = vec![false; n];
    let mut active: Vec<usize> = (0..n).filter(|&j| capacity[j] > 0).collect();
    for j in 0..n {
        if capacity[j] == 0 {
            saturated[j] = true;
        }
    }
    let mut remaining = budget;
    while remaining > 0 && !active.is_empty() {
        let total: usize = active.iter().map(|&j| weights[j]).sum();
        let share = |j: usize| remaining as f64 * weights[j] as f64 / total as f64;
        let full: Vec<usize> =
            active.iter().copied().filter(|&j| share(j) >= capacity[j] as f64).collect();
        if full.is_empty() {
            let mut floors = 0;
            let mut rema: Vec<(f64, usize)> = Vec::with_capacity(active.len());
            for &j in &active {
                let s = share(j);
                shares[j] = s;
                extra[j] = s.floor() as usize;
                floors += extra[j];
                rema.push((s - s.floor(), j));
            }
            rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, j) in rema.iter().take(remaining - floors) {
                extra[j] += 1;
            }
            remaining = 0;
        } else {
            for &j in &full {
                extra[j] = capacity[j];
                shares[j] = capacity[j] as f64;
                saturated[j] = true;
                remaining -= capacity[j];
            }
            active.retain(|j| !full.contains(j));
        }
    }
    (extra, shares, saturated)
}

/// Deterministic keyframe-preserving subsample of at most `n_max` frames.
pub fn sample_sequence(labels: &[usize], n_max: usize) -> Result<SampledSequence> {
    sample_with(labels, n_max, || 0.5)
}

/// Like [`sample_sequence`] but with a random phase for the evenly spaced
/// picks, so each call draws a different subset.
pub fn sample_sequence_jittered<R: Rng + ?Sized>(
    labels: &[usize],
    n_max: usize,
    rng: &mut R,
) -> Result<SampledSequence> {
    sample_with(labels, n_max, || rng.gen::<f64>())
}

fn sample_with(
    labels: &[usize],
    n_max: usize,
    mut offset: impl FnMut() -> f64,
) -> Result<SampledSequence> {
    if labels.is_empty() {
        return Err(Error::domain("cannot sample an empty sequence"));
    }
    if labels.len() <= n_max {
        return Ok(SampledSequence { indices: (0..labels.len()).collect() });
    }
    let plan = plan_sampling(labels, n_max)?;
    let mut indices = plan.keyframes.clone();
    for (seg, &f) in plan.segments.iter().zip(&plan.extra) {
        if f == 0 {
            continue;
        }
        let free: Vec<usize> =
            (seg.start..=seg.end).filter(|i| plan.keyframes.binary_search(i).is_err()).collect();
        let o = offset();
        for i in 0..f {
            let pos = ((i as f64 + o) * free.len() as f64 / f as f64).floor() as usize;
            indices.push(free[pos.min(free.len() - 1)]);
        }
    }
    indices.sort_unstable();
    debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
    Ok(SampledSequence { indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn runs(runs_of: &[(usize, usize)]) -> Vec<usize> {
        runs_of.iter().flat_map(|&(p, n)| std::iter::repeat_n(p, n)).collect()
    }

    #[test]
    fn identity_when_short() {
        let s = sample_sequence(&vec![0; 100], 2048).unwrap();
        assert_eq!(s.indices, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn two_equal_segments() {
        let labels = runs(&[(0, 1000), (1, 1000)]);
        let s = sample_sequence(&labels, 200).unwrap();
        assert_eq!(s.len(), 200);
        assert!(s.indices.contains(&999) && s.indices.contains(&1000));
        for c in s.segment_counts(&segments(&labels)) {
            assert!((99..=101).contains(&c), "{c}");
        }
    }

    #[test]
    fn exact_keyframe_budget() {
        let labels = runs(&(0..10).map(|p| (p, 50 + p)).collect::<Vec<_>>());
        let keys = keyframes(&labels);
        assert_eq!(keys.len(), 18);
        let s = sample_sequence(&labels, keys.len()).unwrap();
        assert_eq!(s.indices, keys);
    }

    #[test]
    fn budget_error_reports_minimum() {
        let labels = runs(&[(0, 10), (1, 10), (2, 10)]);
        match sample_sequence(&labels, 3) {
            Err(Error::Budget { budget: 3, required: 4 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_frame_segments_share_keyframes() {
        let labels = vec![0, 1, 0, 1, 1, 1, 1, 1];
        assert_eq!(keyframes(&labels), vec![0, 1, 2, 3]);
        let s = sample_sequence(&labels, 5).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.indices.starts_with(&[0, 1, 2, 3]));
    }

    #[test]
    fn saturation_redistributes() {
        // The short middle segment is all keyframes; its share goes elsewhere.
        let labels = runs(&[(0, 40), (1, 2), (2, 40)]);
        let plan = plan_sampling(&labels, 30).unwrap();
        assert_eq!(plan.capacity[1], 0);
        assert_eq!(plan.extra.iter().sum::<usize>(), 30 - 4);
        assert_eq!(plan.extra[0], 13);
        assert_eq!(plan.extra[2], 13);
    }

    #[test]
    fn jitter_varies_but_keeps_invariants() {
        let labels = runs(&[(0, 300), (1, 500), (2, 200)]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = sample_sequence_jittered(&labels, 100, &mut rng).unwrap();
        let b = sample_sequence_jittered(&labels, 100, &mut rng).unwrap();
        assert_ne!(a, b);
        let plain = sample_sequence(&labels, 100).unwrap();
        let segs = segments(&labels);
        assert_eq!(a.segment_counts(&segs), plain.segment_counts(&segs));
        for s in [&a, &b] {
            assert_eq!(s.len(), 100);
            assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
            for k in keyframes(&labels) {
                assert!(s.indices.contains(&k));
            }
        }
    }

    fn label_strategy() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec((0usize..4, 1usize..60), 1..12).prop_map(|runs| {
            let mut labels = Vec::new();
            let mut last = usize::MAX;
            for (mut p, n) in runs {
                if p == last {
                    p = (p + 1) % 4;
                }
                labels.extend(std::iter::repeat_n(p, n));
                last = p;
            }
            labels
        })
    }

    proptest! {
        #[test]
        fn invariants(labels in label_strategy(), slack in 0usize..300) {
            let n_max = required_budget(&labels) + slack;
            let s = sample_sequence(&labels, n_max).unwrap();
            prop_assert_eq!(s.len(), labels.len().min(n_max));
            prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
            for k in keyframes(&labels) {
                prop_assert!(s.indices.binary_search(&k).is_ok());
            }
            if labels.len() > n_max {
                let plan = plan_sampling(&labels, n_max).unwrap();
                for j in 0..plan.segments.len() {
                    prop_assert!(plan.extra[j] <= plan.capacity[j]);
                    prop_assert!((plan.extra[j] as f64 - plan.shares[j]).abs() < 1.0);
                }
            }
        }
    }
}
