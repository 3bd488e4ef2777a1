//! The full recognition network: a trainable affine+SiLU frame encoder, a
//! stack of Mamba layers, a final RMS normalization and two heads reading the
//! same hidden sequence (phase logits and a sigmoid remaining-time value).

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mamba::{
    layer_forward_traced, normalize_traced, vanilla_layer_forward_traced, DirectionVars, DropPath, LayerShape,
    LayerVars, MambaLayerParams,
};
use crate::numkit::{Tape, Tensor, Var};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub n_state: usize,
    pub n_layers: usize,
    pub n_phases: usize,
    pub expansion: usize,
    pub conv_width: usize,
    pub drop_path_rate: f64,
    /// `false` gives the forward-only ("vanilla") decoder.
    pub bidirectional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 512,
            d_model: 512,
            n_state: 16,
            n_layers: 2,
            n_phases: 7,
            expansion: 2,
            conv_width: 4,
            drop_path_rate: 0.1,
            bidirectional: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d_in", self.d_in),
            ("d_model", self.d_model),
            ("n_state", self.n_state),
            ("n_layers", self.n_layers),
            ("expansion", self.expansion),
            ("conv_width", self.conv_width),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::domain(format!("model config `{name}` must be positive")));
        }
        if self.n_phases < 2 {
            return Err(Error::domain("model config `n_phases` must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::domain("model config `drop_path_rate` must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn layer_shape(&self) -> LayerShape {
        LayerShape {
            d_model: self.d_model,
            d_inner: self.expansion * self.d_model,
            n_state: self.n_state,
            conv_width: self.conv_width,
        }
    }
}

/// Per-frame recognition logits `[T, P]` and anticipation values `[T]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    pub recognition_logits: Tensor,
    pub anticipation: Tensor,
}

impl PredictionOutput {
    pub fn len(&self) -> usize {
        self.anticipation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anticipation.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `[d_in, D]`
    pub encoder_weight: Tensor,
    pub encoder_bias: Tensor,
    pub layers: Vec<MambaLayerParams>,
    pub final_norm: Tensor,
    /// `[D, P]`
    pub head_r_weight: Tensor,
    pub head_r_bias: Tensor,
    /// `[D, 1]`
    pub head_a_weight: Tensor,
    pub head_a_bias: Tensor,
}

/// Tape handles of a bound [`Model`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder_weight: Var,
    pub encoder_bias: Var,
    pub layers: Vec<LayerVars>,
    pub final_norm: Var,
    pub head_r_weight: Var,
    pub head_r_bias: Var,
    pub head_a_weight: Var,
    pub head_a_bias: Var,
}

impl ModelVars {
    /// Handles in declaration order (matches [`Model::named`]).
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.encoder_weight, self.encoder_bias];
        for l in &self.layers {
            v.extend(l.all());
        }
        v.extend([self.final_norm, self.head_r_weight, self.head_r_bias, self.head_a_weight, self.head_a_bias]);
        v
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap()
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d_in, d, p) = (config.d_in, config.d_model, config.n_phases);
        let enc_bound = 1.0 / (d_in as f64).sqrt();
        let head_bound = 1.0 / (d as f64).sqrt();
        let encoder_weight = uniform(rng, &[d_in, d], enc_bound);
        let encoder_bias = uniform(rng, &[d], enc_bound);
        let layers = (0..config.n_layers)
            .map(|_| MambaLayerParams::init(config.layer_shape(), config.bidirectional, rng))
            .collect();
        Ok(Self {
            encoder_weight,
            encoder_bias,
            layers,
            final_norm: Tensor::full(&[d], 1.0),
            head_r_weight: uniform(rng, &[d, p], head_bound),
            head_r_bias: Tensor::zeros(&[p]),
            head_a_weight: uniform(rng, &[d, 1], head_bound),
            head_a_bias: Tensor::zeros(&[1]),
            config,
        })
    }

    /// Parameters with their checkpoint names, in declaration order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("encoder.weight".to_string(), &self.encoder_weight),
            ("encoder.bias".to_string(), &self.encoder_bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            l.named(&format!("layers.{i}"), &mut out);
        }
        out.push(("final_norm.scale".into(), &self.final_norm));
        out.push(("head_r.weight".into(), &self.head_r_weight));
        out.push(("head_r.bias".into(), &self.head_r_bias));
        out.push(("head_a.weight".into(), &self.head_a_weight));
        out.push(("head_a.bias".into(), &self.head_a_bias));
        out
    }

    /// Mutable parameters in declaration order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.encoder_weight, &mut self.encoder_bias];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend([
            &mut self.final_norm,
            &mut self.head_r_weight,
            &mut self.head_r_bias,
            &mut self.head_a_weight,
            &mut self.head_a_bias,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder_weight: tape.param(self.encoder_weight.clone()),
            encoder_bias: tape.param(self.encoder_bias.clone()),
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            final_norm: tape.param(self.final_norm.clone()),
            head_r_weight: tape.param(self.head_r_weight.clone()),
            head_r_bias: tape.param(self.head_r_bias.clone()),
            head_a_weight: tape.param(self.head_a_weight.clone()),
            head_a_bias: tape.param(self.head_a_bias.clone()),
        }
    }

    /// Rebuilds [`ModelVars`] from handles given in declaration order, e.g. the
    /// inputs of a [`crate::numkit::forward_eval`] graph.
    pub fn vars_from(&self, handles: &[Var]) -> Result<ModelVars> {
        let want = self.named().len();
        if handles.len() != want {
            return Err(Error::shape(format!("{} handles for {want} parameters", handles.len())));
        }
        let mut it = handles.iter().copied();
        let mut next = move || it.next().unwrap();
        let dir = |next: &mut dyn FnMut() -> Var| DirectionVars {
            conv_weight: next(),
            conv_bias: next(),
            delta_weight: next(),
            delta_bias: next(),
            b_proj: next(),
            c_proj: next(),
            a_log: next(),
        };
        let encoder_weight = next();
        let encoder_bias = next();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let norm_scale = next();
            let in_proj_x = next();
            let in_proj_z = next();
            let forward = dir(&mut next);
            let backward = l.backward.as_ref().map(|_| dir(&mut next));
            layers.push(LayerVars { norm_scale, in_proj_x, in_proj_z, forward, backward, out_proj: next() });
        }
        Ok(ModelVars {
            encoder_weight,
            encoder_bias,
            layers,
            final_norm: next(),
            head_r_weight: next(),
            head_r_bias: next(),
            head_a_weight: next(),
            head_a_bias: next(),
        })
    }

    /// Draws one drop-path decision per layer.
    pub fn sample_drop_paths(&self, training: bool, rng: &mut impl Rng) -> Result<Vec<DropPath>> {
        (0..self.layers.len())
            .map(|_| DropPath::sample(self.config.drop_path_rate, training, rng))
            .collect()
    }

    fn check_raw(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.config.d_in || x.rows() == 0 {
            return Err(Error::shape(format!(
                "expected [T, {}] frame features with T >= 1, got {:?}",
                self.config.d_in,
                x.shape()
            )));
        }
        Ok(())
    }

    fn check_embedded(&self, f: &Tensor) -> Result<()> {
        if f.rank() != 2 || f.shape()[1] != self.config.d_model || f.rows() == 0 {
            return Err(Error::shape(format!(
                "expected [T, {}] embeddings with T >= 1, got {:?}",
                self.config.d_model,
                f.shape()
            )));
        }
        Ok(())
    }
}

/// `silu(x W + b)` per frame.
pub fn encode_traced(tape: &mut Tape, vars: &ModelVars, x_raw: Var) -> Result<Var> {
    let f = tape.matmul(x_raw, vars.encoder_weight)?;
    let f = tape.add_row(f, vars.encoder_bias)?;
    tape.silu(f)
}

/// Decoder and heads over embeddings `f: [T, D]`; returns `(logits [T, P], anticipation [T])`.
pub fn decode_traced(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    f: Var,
    drops: &[DropPath],
) -> Result<(Var, Var)> {
    if drops.len() != vars.layers.len() {
        return Err(Error::shape(format!(
            "{} drop-path decisions for {} layers",
            drops.len(),
            vars.layers.len()
        )));
    }
    let mut h = f;
    for (lv, &drop) in vars.layers.iter().zip(drops) {
        h = if config.bidirectional {
            layer_forward_traced(tape, h, lv, drop)?
        } else {
            vanilla_layer_forward_traced(tape, h, lv, drop)?
        };
    }
    let h = normalize_traced(tape, h, vars.final_norm)?;
    let logits = tape.matmul(h, vars.head_r_weight)?;
    let logits = tape.add_row(logits, vars.head_r_bias)?;
    let a = tape.matmul(h, vars.head_a_weight)?;
    let a = tape.add_row(a, vars.head_a_bias)?;
    let a = tape.sigmoid(a)?;
    let t = tape.value(a).rows();
    let a = tape.reshape(a, &[t])?;
    Ok((logits, a))
}

/// Encoder followed by decoder, as used in joint training.
pub fn predict_traced(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    x_raw: Var,
    drops: &[DropPath],
) -> Result<(Var, Var)> {
    let f = encode_traced(tape, vars, x_raw)?;
    decode_traced(tape, config, vars, f, drops)
}

impl Model {
    /// Frame embeddings `F = silu(x W + b)`.
    pub fn encode(&self, x_raw: &Tensor) -> Result<Tensor> {
        self.check_raw(x_raw)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.leaf(x_raw.clone());
        let f = encode_traced(&mut tape, &vars, x)?;
        Ok(tape.value(f).clone())
    }

    /// Inference-mode decoder over embeddings.
    pub fn forward(&self, f: &Tensor) -> Result<PredictionOutput> {
        self.check_embedded(f)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let fv = tape.leaf(f.clone());
        let drops = vec![DropPath::Identity; self.layers.len()];
        let (l, a) = decode_traced(&mut tape, &self.config, &vars, fv, &drops)?;
        Ok(PredictionOutput { recognition_logits: tape.value(l).clone(), anticipation: tape.value(a).clone() })
    }

    /// Inference from raw frame features.
    pub fn predict(&self, x_raw: &Tensor) -> Result<PredictionOutput> {
        self.check_raw(x_raw)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.leaf(x_raw.clone());
        let drops = vec![DropPath::Identity; self.layers.len()];
        let (l, a) = predict_traced(&mut tape, &self.config, &vars, x, &drops)?;
        Ok(PredictionOutput { recognition_logits: tape.value(l).clone(), anticipation: tape.value(a).clone() })
    }
}

/// Per-frame argmax; ties go to the lower phase id.
pub fn predict_phases(output: &PredictionOutput) -> Vec<usize> {
    let logits = &output.recognition_logits;
    (0..logits.rows())
        .map(|t| {
            let row = logits.row(t);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
