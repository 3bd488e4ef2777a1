use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Pixel height of each of the two ribbon rows.
pub const RIBBON_ROW_HEIGHT: usize = 16;

const BASE_PALETTE: [[u8; 3]; 20] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
    [197, 176, 213],
    [196, 156, 148],
    [247, 182, 210],
    [199, 199, 199],
    [219, 219, 141],
    [158, 218, 229],
];

/// `n` colors; cycles the base set if more than 20 are asked for.
pub fn default_palette(n: usize) -> Vec<[u8; 3]> {
    (0..n).map(|i| BASE_PALETTE[i % BASE_PALETTE.len()]).collect()
}

/// Binary PPM: truth in the top row, prediction below, one column per frame.
pub fn ribbon_ppm(pred: &[usize], truth: &[usize], palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(format!(
            "ribbon needs equal non-empty sequences, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(l) = pred.iter().chain(truth).find(|&&l| l >= palette.len()) {
        return Err(Error::domain(format!("phase {l} has no palette color ({} colors)", palette.len())));
    }
    let w = truth.len();
    let h = 2 * RIBBON_ROW_HEIGHT;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for labels in [truth, pred] {
        for _ in 0..RIBBON_ROW_HEIGHT {
            for &l in labels {
                out.extend_from_slice(&palette[l]);
            }
        }
    }
    Ok(out)
}

/// Writes `path` (PPM) and a `frame,truth,pred` CSV next to it; returns the
/// CSV path.
pub fn ribbon_export(
    pred: &[usize],
    truth: &[usize],
    palette: &[[u8; 3]],
    path: impl AsRef<Path>,
) -> Result<PathBuf> {
    let path = path.as_ref();
    let ppm = ribbon_ppm(pred, truth, palette)?;
    std::fs::write(path, ppm).map_err(|e| Error::io(path, e))?;
    let csv_path = path.with_extension("csv");
    let mut csv = String::from("frame,truth,pred\n");
    for (t, (a, b)) in truth.iter().zip(pred).enumerate() {
        csv.push_str(&format!("{t},{a},{b}\n"));
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

/// Reads a ribbon CSV back as `(truth, pred)`.
pub fn read_ribbon_csv(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<usize>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::format(i + 1, format!("bad field `{s}`")));
        if cols.len() != 3 || parse(cols[0])? != truth.len() {
            return Err(Error::format(i + 1, "expected `frame,truth,pred` with consecutive frames"));
        }
        truth.push(parse(cols[1])?);
        pred.push(parse(cols[2])?);
    }
    Ok((truth, pred))
}
