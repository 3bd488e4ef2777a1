use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"SRFT";
pub const FEATURE_VERSION: u32 = 1;

/// Per-frame feature rows for one video, `[T, d_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub features: Tensor,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.rows() == 0 {
            return Err(Error::shape(format!(
                "features must be a non-empty [T, D] matrix, got {:?}",
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(FeatureSequence { video_id: video_id.into(), features })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }
}

pub fn features_to_bytes(features: &Tensor) -> Result<Vec<u8>> {
    if features.rank() != 2 {
        return Err(Error::shape("features must be rank 2"));
    }
    let (t, d) = (features.shape()[0], features.shape()[1]);
    let mut out = Vec::with_capacity(16 + 8 * t * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn features_from_bytes(video_id: &str, bytes: &[u8]) -> Result<FeatureSequence> {
    let bad = |m: String| Error::BinaryFormat(m);
    if bytes.len() < 16 {
        return Err(bad(format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("bad magic, expected SRFT".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let payload = &bytes[16..];
    let want = t.checked_mul(d).and_then(|n| n.checked_mul(8));
    if want != Some(payload.len()) {
        return Err(bad(format!(
            "payload is {} bytes, header declares {t}x{d} float64",
            payload.len()
        )));
    }
    if t == 0 || d == 0 {
        return Err(bad("empty feature matrix".into()));
    }
    let mut data = Vec::with_capacity(t * d);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(bad(format!("non-finite value at row {}, column {}", i / d, i % d)));
        }
        data.push(v);
    }
    FeatureSequence::new(video_id, Tensor::from_parts(vec![t, d], data)?)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("video");
    features_from_bytes(id, &bytes)
}

pub fn write_features(path: impl AsRef<Path>, features: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, features_to_bytes(features)?).map_err(|e| Error::io(path, e))
}
