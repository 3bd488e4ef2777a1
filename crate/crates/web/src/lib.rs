//! wasm-bindgen exports for the static page in `www/`.
//!
//! Every export takes plain strings and numbers and returns a JSON string;
//! the work happens in the `*_view` functions so it can be tested natively.

use serde::Serialize;
use srmamba_core::data::{keyframes, sample_sequence, segments};
use srmamba_core::metrics::{video_metrics, VideoMetrics};
use srmamba_core::ssm::{build_kernel, conv_apply, discretize_zoh, SsmParams};
use wasm_bindgen::prelude::*;

/// Longest kernel or label sequence the page may request.
pub const MAX_LEN: usize = 100_000;

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: `{t}`")))
        .collect()
}

/// Labels as space or comma separated tokens, each `phase` or
/// `phase*count` (so `0*120 1*40 2*300` is three runs).
pub fn parse_labels(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for tok in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let (phase, count) = match tok.split_once('*') {
            Some((p, n)) => (p, n.parse::<usize>().map_err(|_| format!("bad run length in `{tok}`"))?),
            None => (tok, 1),
        };
        let phase: usize = phase.parse().map_err(|_| format!("bad phase id in `{tok}`"))?;
        if out.len() + count > MAX_LEN {
            return Err(format!("sequence longer than {MAX_LEN} frames"));
        }
        out.extend(std::iter::repeat_n(phase, count));
    }
    if out.is_empty() {
        return Err("no labels given".into());
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct KernelView {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub kernel: Vec<f64>,
    /// Response to a unit step, by convolution with the kernel.
    pub step: Vec<f64>,
}

pub fn kernel_view(a: &str, b: &str, c: &str, delta: f64, len: usize) -> Result<KernelView, String> {
    if len == 0 || len > MAX_LEN {
        return Err(format!("length must be in 1..={MAX_LEN}"));
    }
    let p = SsmParams::new(parse_numbers(a)?, parse_numbers(b)?, parse_numbers(c)?, delta).map_err(|e| e.to_string())?;
    let sys = discretize_zoh(&p).map_err(|e| e.to_string())?;
    let kernel = build_kernel(&p, len).map_err(|e| e.to_string())?;
    let step = conv_apply(&kernel, &vec![1.0; len]).map_err(|e| e.to_string())?;
    Ok(KernelView { a_bar: sys.a_bar, b_bar: sys.b_bar, kernel: kernel.k_bar, step })
}

#[derive(Debug, Serialize)]
pub struct SegmentView {
    pub phase: usize,
    pub start: usize,
    pub end: usize,
    pub sampled: usize,
}

#[derive(Debug, Serialize)]
pub struct SampleView {
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    pub keyframes: Vec<usize>,
    pub segments: Vec<SegmentView>,
    pub keyframes_retained: bool,
}

pub fn sample_view(labels: &str, n_max: usize) -> Result<SampleView, String> {
    let labels = parse_labels(labels)?;
    let s = sample_sequence(&labels, n_max).map_err(|e| e.to_string())?;
    let segs = segments(&labels);
    let counts = s.segment_counts(&segs);
    let keys = keyframes(&labels);
    let keyframes_retained = keys.iter().all(|k| s.indices.binary_search(k).is_ok());
    let segments = segs
        .iter()
        .zip(counts)
        .map(|(g, sampled)| SegmentView { phase: g.phase, start: g.start, end: g.end, sampled })
        .collect();
    Ok(SampleView { labels, indices: s.indices, keyframes: keys, segments, keyframes_retained })
}

pub fn metrics_view(pred: &str, truth: &str) -> Result<VideoMetrics, String> {
    let (pred, truth) = (parse_labels(pred)?, parse_labels(truth)?);
    let p = pred.iter().chain(&truth).max().map_or(1, |m| m + 1);
    video_metrics(&pred, &truth, p).map_err(|e| e.to_string())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Discretized system, impulse kernel and step response as JSON.
#[wasm_bindgen]
pub fn zoh_kernel(a: &str, b: &str, c: &str, delta: f64, len: usize) -> Result<String, JsError> {
    to_js(kernel_view(a, b, c, delta, len))
}

#[wasm_bindgen]
pub fn sample_preview(labels: &str, n_max: usize) -> Result<String, JsError> {
    to_js(sample_view(labels, n_max))
}

#[wasm_bindgen]
pub fn score(pred: &str, truth: &str) -> Result<String, JsError> {
    to_js(metrics_view(pred, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_length_labels() {
        assert_eq!(parse_labels("0*2 1, 2*3").unwrap(), vec![0, 0, 1, 2, 2, 2]);
        assert!(parse_labels("").is_err());
        assert!(parse_labels("a").is_err());
        assert!(parse_labels("1*x").is_err());
    }

    #[test]
    fn scalar_kernel_halves() {
        let v = kernel_view("-1", "1", "1", std::f64::consts::LN_2, 4).unwrap();
        assert!((v.a_bar[0] - 0.5).abs() < 1e-12);
        let want = [0.5, 0.25, 0.125, 0.0625];
        for (k, w) in v.kernel.iter().zip(want) {
            assert!((k - w).abs() < 1e-12);
        }
        assert!((v.step[3] - 0.9375).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(kernel_view("-1, -2", "1", "1", 0.1, 8).is_err());
        assert!(kernel_view("-1", "1", "1", 0.1, 0).is_err());
        assert!(kernel_view("-1", "1", "1", -0.1, 8).is_err());
    }

    #[test]
    fn sampler_preview_counts() {
        let v = sample_view("0*1000 1*1000", 200).unwrap();
        assert_eq!(v.indices.len(), 200);
        assert!(v.keyframes_retained);
        assert!(v.segments.iter().all(|s| s.sampled.abs_diff(100) <= 1));
        assert!(sample_view("0*2 1*2 2*2", 3).is_err());
    }

    #[test]
    fn hand_worked_metrics() {
        let m = metrics_view("0 1 1 1", "0 0 1 1").unwrap();
        assert_eq!(m.accuracy, 75.0);
        assert!((m.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!(serde_json::to_string(&m).unwrap().contains("\"jaccard\""));
    }
}
