use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use srmamba_core::data::Dataset;
use srmamba_core::model::ModelConfig;
use srmamba_core::train::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Manifest file or directory containing `manifest.json`.
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

/// Everything a training run needs, as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataPaths,
    #[serde(default)]
    pub seed: u64,
}

fn keys_of<T: Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn unknown_in(obj: &Map<String, Value>, known: &[String], prefix: &str, out: &mut Vec<String>) {
    for k in obj.keys() {
        if !known.contains(k) {
            out.push(format!("{prefix}{k}"));
        }
    }
}

/// Every key in `doc` that the config does not define, with its path.
pub fn unknown_keys(doc: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Value::Object(top) = doc else { return out };
    let top_known: Vec<String> = ["model", "train", "data", "seed"].map(String::from).to_vec();
    unknown_in(top, &top_known, "", &mut out);
    let sections: [(&str, Vec<String>); 3] = [
        ("model", keys_of(&ModelConfig::default())),
        ("train", keys_of(&TrainConfig::default())),
        ("data", ["train", "test"].map(String::from).to_vec()),
    ];
    for (name, known) in sections {
        if let Some(Value::Object(m)) = top.get(name) {
            unknown_in(m, &known, &format!("{name}."), &mut out);
            if name == "train" {
                if let Some(Value::Object(w)) = m.get("loss_weights") {
                    let lw = keys_of(&srmamba_core::train::LossWeights::default());
                    unknown_in(w, &lw, "train.loss_weights.", &mut out);
                }
            }
        }
    }
    out
}

impl RunConfig {
    /// Parses and validates `text`; relative data paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<(RunConfig, Value), CliError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
        let unknown = unknown_keys(&doc);
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc.clone()).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        let explicit_train_seed = doc.pointer("/train/seed").and_then(Value::as_u64);
        if let Some(s) = explicit_train_seed {
            if doc.get("seed").is_some() && s != cfg.seed {
                return Err(CliError::Usage(format!(
                    "seed ({}) and train.seed ({s}) disagree; set only one",
                    cfg.seed
                )));
            }
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.data.train = base.join(&cfg.data.train);
        cfg.data.test = cfg.data.test.map(|p| base.join(p));
        cfg.train.validate().map_err(|e| CliError::Usage(format!("train: {e}")))?;
        for p in std::iter::once(&cfg.data.train).chain(cfg.data.test.iter()) {
            if !p.exists() {
                return Err(CliError::Usage(format!("data path {} does not exist", p.display())));
            }
        }
        Ok((cfg, doc))
    }

    pub fn load(path: &Path) -> Result<(RunConfig, Value), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Fills `d_in` and `n_phases` from the dataset when the JSON left them
    /// out, and rejects explicit values that disagree with it.
    pub fn reconcile(&mut self, doc: &Value, data: &Dataset) -> Result<(), CliError> {
        let fields = [("d_in", data.feature_dim), ("n_phases", data.n_phases)];
        for (key, actual) in fields {
            let slot = match key {
                "d_in" => &mut self.model.d_in,
                _ => &mut self.model.n_phases,
            };
            if doc.pointer(&format!("/model/{key}")).is_some() {
                if *slot != actual {
                    return Err(CliError::Usage(format!("model.{key} = {slot} but the dataset has {actual}")));
                }
            } else {
                *slot = actual;
            }
        }
        self.model.validate().map_err(|e| CliError::Usage(format!("model: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_every_unknown_key() {
        let doc: Value = serde_json::from_str(
            r#"{"model": {"d_model": 8, "width": 3}, "train": {"lr": 1, "loss_weights": {"l3": 0}},
                "data": {"train": "x"}, "extra": true}"#,
        )
        .unwrap();
        let mut keys = unknown_keys(&doc);
        keys.sort();
        assert_eq!(keys, vec!["extra", "model.width", "train.loss_weights.l3", "train.lr"]);
    }

    #[test]
    fn defaults_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("d")).unwrap();
        let (cfg, _) = RunConfig::parse(r#"{"data": {"train": "d"}, "seed": 4}"#, dir.path()).unwrap();
        assert_eq!(cfg.train.seed, 4);
        assert_eq!(cfg.train.lr0, 2e-4);
        assert_eq!(cfg.data.train, dir.path().join("d"));
        assert!(matches!(
            RunConfig::parse(r#"{"data": {"train": "missing"}}"#, dir.path()),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            RunConfig::parse(r#"{"data": {"train": "d"}, "seed": 1, "train": {"seed": 2}}"#, dir.path()),
            Err(CliError::Usage(_))
        ));
    }
}
