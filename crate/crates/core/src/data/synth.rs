//! Synthetic phase sequences with Gaussian per-phase features.
//!
//! Randomness comes from ChaCha8 (a counter-based stream cipher generator),
//! seeded with `seed`: stream 0 draws the phase prototypes and stream `i + 1`
//! draws video `i`, so the output is portable and independent of the order in
//! which videos are generated.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::annotations::PhaseSequence;
use super::features::FeatureSequence;
use crate::error::{Error, Result};
use crate::numkit::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_phases: usize,
    pub n_videos: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Emit the ambiguous pair (P-2, P-1) told apart only by a late marker.
    pub future_marker: bool,
    /// Frames between the start of an ambiguous segment and its marker.
    pub marker_lag: usize,
    pub marker_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_phases: 7,
            n_videos: 10,
            t_min: 400,
            t_max: 600,
            feature_dim: 16,
            noise_sigma: 0.5,
            future_marker: false,
            marker_lag: 10,
            marker_amplitude: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_phases < 2 {
            return Err(Error::domain("synthetic data needs at least 2 phases"));
        }
        if self.t_min > self.t_max || self.t_min < self.n_phases {
            return Err(Error::domain(format!(
                "length range [{}, {}] must be ordered and at least the phase count",
                self.t_min, self.t_max
            )));
        }
        if self.feature_dim < 2 {
            return Err(Error::domain("feature_dim must be at least 2"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::domain("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }

    /// Index of the marker channel; prototypes are zero there.
    pub fn marker_channel(&self) -> usize {
        self.feature_dim - 1
    }
}

pub type SynthVideo = (FeatureSequence, PhaseSequence);

pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Vec<SynthVideo>> {
    config.validate()?;
    let mut proto_rng = stream(seed, 0);
    let prototypes = draw_prototypes(config, &mut proto_rng);
    (0..config.n_videos)
        .map(|i| {
            let mut rng = stream(seed, i as u64 + 1);
            generate_video(config, &prototypes, &format!("video_{i:03}"), &mut rng)
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw_prototypes(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = config.feature_dim;
    let mut protos: Vec<Vec<f64>> = (0..config.n_phases)
        .map(|_| {
            let mut p: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            p[d - 1] = 0.0;
            p
        })
        .collect();
    if config.future_marker {
        let p = config.n_phases;
        protos[p - 1] = protos[p - 2].clone();
    }
    protos
}

/// One labelled run plus its marker sign (0 for none).
struct Run {
    phase: usize,
    len: usize,
    marker: f64,
}

fn generate_video(
    config: &SynthConfig,
    prototypes: &[Vec<f64>],
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<SynthVideo> {
    let t = rng.gen_range(config.t_min..=config.t_max);
    let runs = if config.future_marker {
        marker_runs(config, t, rng)
    } else {
        chain_runs(config.n_phases, t, rng)
    };
    let d = config.feature_dim;
    let k = config.marker_lag;
    let mut labels = Vec::with_capacity(t);
    let mut data = Vec::with_capacity(t * d);
    for run in &runs {
        for offset in 0..run.len {
            labels.push(run.phase);
            for (c, &mu) in prototypes[run.phase].iter().enumerate() {
                let mut v = mu;
                if c == d - 1 && run.marker != 0.0 && offset >= k {
                    v = run.marker * config.marker_amplitude;
                }
                if config.noise_sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    v += config.noise_sigma * z;
                }
                data.push(v);
            }
        }
    }
    debug_assert_eq!(labels.len(), t);
    let features = FeatureSequence::new(id, Tensor::matrix(t, d, data)?)?;
    let phases = PhaseSequence::new(id, labels)?;
    Ok((features, phases))
}

/// Every phase once, in order, with random durations summing to `t`.
fn chain_runs(p: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<Run> {
    let weights: Vec<f64> = (0..p).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let spare = t - p;
    let mut lens: Vec<usize> =
        weights.iter().map(|w| 1 + (spare as f64 * w / total).floor() as usize).collect();
    let used: usize = lens.iter().sum();
    lens[p - 1] += t - used;
    lens.into_iter().enumerate().map(|(phase, len)| Run { phase, len, marker: 0.0 }).collect()
}

/// Regular phases 0..P-2 in order, each followed by an interlude of short
/// ambiguous runs whose class is a fair coin and whose marker appears only
/// `marker_lag` frames in.
fn marker_runs(config: &SynthConfig, t: usize, rng: &mut ChaCha8Rng) -> Vec<Run> {
    let p = config.n_phases;
    let k = config.marker_lag;
    let (lo, hi) = (k + 3, k + 8);
    let stages = (p - 2).max(1);
    let mut runs = Vec::new();
    let mut start = 0;
    for s in 0..stages {
        let end = if s + 1 == stages { t } else { (s + 1) * t / stages };
        let budget = end - start;
        start = end;
        let mut reg = if p > 2 {
            ((budget as f64 * rng.gen_range(0.2..0.3)).round() as usize).clamp(1, budget)
        } else {
            0
        };
        let mut rest = budget - reg;
        let mut interlude = Vec::new();
        while rest >= lo {
            let mut len = rng.gen_range(lo..=hi).min(rest);
            if rest - len < lo {
                len = rest;
            }
            rest -= len;
            let (phase, marker) = if rng.gen::<bool>() { (p - 2, 1.0) } else { (p - 1, -1.0) };
            interlude.push(Run { phase, len, marker });
        }
        if p > 2 {
            reg += rest;
        } else if rest > 0 {
            // Too short for a full ambiguous run; still label it.
            let (phase, marker) = if rng.gen::<bool>() { (p - 2, 1.0) } else { (p - 1, -1.0) };
            interlude.push(Run { phase, len: rest, marker });
        }
        if reg > 0 {
            runs.push(Run { phase: s, len: reg, marker: 0.0 });
        }
        runs.extend(interlude);
    }
    runs
}
