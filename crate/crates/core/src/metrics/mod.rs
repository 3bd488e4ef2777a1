//! Frame-wise recognition metrics, aggregation and ribbon export.

mod ribbon;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ribbon::{default_palette, read_ribbon_csv, ribbon_export, ribbon_ppm, RIBBON_ROW_HEIGHT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub phase: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Percentages; `None` where the denominator is zero.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub jaccard: Option<f64>,
}

impl PhaseMetrics {
    /// F1 in [0, 1]; 0 when precision and recall are both zero or undefined.
    pub fn f1(&self) -> f64 {
        let pr = self.precision.unwrap_or(0.0) / 100.0;
        let re = self.recall.unwrap_or(0.0) / 100.0;
        if pr + re == 0.0 {
            0.0
        } else {
            2.0 * pr * re / (pr + re)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub jaccard: f64,
    /// Macro F1 over the phases present in the truth, in [0, 1].
    pub f1: f64,
    /// Phases present in truth or prediction, ascending.
    pub per_phase: Vec<PhaseMetrics>,
}

fn check(pred: &[usize], truth: &[usize], p: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} frames", pred.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::domain("cannot score an empty video"));
    }
    if let Some(l) = pred.iter().chain(truth).find(|&&l| l >= p) {
        return Err(Error::domain(format!("phase {l} outside [0, {p})")));
    }
    Ok(())
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Accuracy, precision, recall and Jaccard (percent) for one video.
///
/// Recall, Jaccard and F1 are averaged over the phases present in the truth.
/// Precision is averaged over phases present in truth or prediction, where a
/// phase that is never predicted counts as 0.
pub fn video_metrics(pred: &[usize], truth: &[usize], p: usize) -> Result<VideoMetrics> {
    check(pred, truth, p)?;
    let (mut tp, mut fp, mut fn_) = (vec![0usize; p], vec![0usize; p], vec![0usize; p]);
    let mut correct = 0;
    for (&y, &t) in pred.iter().zip(truth) {
        if y == t {
            tp[t] += 1;
            correct += 1;
        } else {
            fp[y] += 1;
            fn_[t] += 1;
        }
    }
    let per_phase: Vec<PhaseMetrics> = (0..p)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| PhaseMetrics {
            phase: c,
            tp: tp[c],
            fp: fp[c],
            fn_: fn_[c],
            precision: pct(tp[c], tp[c] + fp[c]),
            recall: pct(tp[c], tp[c] + fn_[c]),
            jaccard: pct(tp[c], tp[c] + fp[c] + fn_[c]),
        })
        .collect();
    let in_truth = |m: &&PhaseMetrics| m.tp + m.fn_ > 0;
    Ok(VideoMetrics {
        accuracy: 100.0 * correct as f64 / truth.len() as f64,
        precision: mean(per_phase.iter().map(|m| m.precision.unwrap_or(0.0))),
        recall: mean(per_phase.iter().filter(in_truth).map(|m| m.recall.unwrap_or(0.0))),
        jaccard: mean(per_phase.iter().filter(in_truth).map(|m| m.jaccard.unwrap_or(0.0))),
        f1: mean(per_phase.iter().filter(in_truth).map(PhaseMetrics::f1)),
        per_phase,
    })
}

/// Macro F1 for one video, over the classes present in the truth.
pub fn macro_f1(pred: &[usize], truth: &[usize], p: usize) -> Result<f64> {
    Ok(video_metrics(pred, truth, p)?.f1)
}

/// Per-video macro F1 averaged across videos.
pub fn macro_f1_videos(videos: &[(Vec<usize>, Vec<usize>)], p: usize) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::domain("no videos to score"));
    }
    let mut s = 0.0;
    for (pred, truth) in videos {
        s += macro_f1(pred, truth, p)?;
    }
    Ok(s / videos.len() as f64)
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::domain("mean of an empty list"));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(MeanStd { mean, std: var.sqrt() })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub videos: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub jaccard: MeanStd,
    pub macro_f1: f64,
}

pub fn aggregate(videos: &[VideoMetrics]) -> Result<AggregateReport> {
    if videos.is_empty() {
        return Err(Error::domain("cannot aggregate zero videos"));
    }
    let col = |f: fn(&VideoMetrics) -> f64| MeanStd::of(&videos.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        videos: videos.len(),
        accuracy: col(|v| v.accuracy)?,
        precision: col(|v| v.precision)?,
        recall: col(|v| v.recall)?,
        jaccard: col(|v| v.jaccard)?,
        macro_f1: col(|v| v.f1)?.mean,
    })
}

impl AggregateReport {
    /// Rows in the `mean ± std` style of a results table.
    pub fn table(&self) -> String {
        format!(
            "AC  {}\nPR  {}\nRE  {}\nJA  {}\nF1  {:.4}\n",
            self.accuracy, self.precision, self.recall, self.jaccard, self.macro_f1
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub id: String,
    #[serde(flatten)]
    pub metrics: VideoMetrics,
}

/// Contents of the evaluation report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: Vec<VideoReport>,
    pub aggregate: AggregateReport,
}

impl EvalReport {
    pub fn build(videos: Vec<VideoReport>) -> Result<Self> {
        let metrics: Vec<VideoMetrics> = videos.iter().map(|v| v.metrics.clone()).collect();
        Ok(EvalReport { aggregate: aggregate(&metrics)?, videos })
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
