//! Subcommands of the `srmamba` binary.

pub mod run_config;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use srmamba_core::checks::{run_suite, Suite};
use srmamba_core::data::{
    keyframes, load_annotations, load_dataset, sample_sequence, segments, write_synth_dataset, SynthConfig,
};
use srmamba_core::metrics::{default_palette, ribbon_export, video_metrics, EvalReport, VideoReport};
use srmamba_core::model::{predict_phases, Model};
use srmamba_core::train::{evaluate, init_model, train_run, RunDir, Trainer};

pub use run_config::RunConfig;

/// Exit status 2 for usage problems, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<srmamba_core::Error> for CliError {
    fn from(e: srmamba_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "srmamba", version, about = "Selective state-space phase recognition toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the randomized oracle suites.
    Check(CheckArgs),
    /// Write a synthetic dataset (features, annotations, manifest).
    Synth(SynthArgs),
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Preview keyframe-preserving subsampling of an annotation file.
    Sample(SampleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Zoh,
    Scan,
    Kernel,
    Grad,
    All,
}

impl SuiteArg {
    fn suites(self) -> Vec<Suite> {
        match self {
            SuiteArg::Zoh => vec![Suite::Zoh],
            SuiteArg::Scan => vec![Suite::Scan],
            SuiteArg::Kernel => vec![Suite::Kernel],
            SuiteArg::Grad => vec![Suite::Grad],
            SuiteArg::All => Suite::ALL.to_vec(),
        }
    }
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trials per suite (defaults differ per suite).
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub videos: usize,
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u32).range(2..))]
    pub phases: u32,
    #[arg(long)]
    pub future_marker: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 400)]
    pub t_min: usize,
    #[arg(long, default_value_t = 600)]
    pub t_max: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub marker_lag: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Manifest file or dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub ribbon_dir: Option<PathBuf>,
    /// Score the ground truth against itself instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub nmax: usize,
}

/// Caps the worker pool from `SRMB_THREADS` when set.
pub fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var("SRMB_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SRMB_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Check(a) => cmd_check(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Sample(a) => cmd_sample(&a, out),
    }
}

pub fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> CliResult {
    let mut all_pass = true;
    for s in a.suite.suites() {
        let r = run_suite(s, a.seed, a.trials.unwrap_or(s.default_trials()))?;
        all_pass &= r.pass();
        write!(out, "{r}")?;
    }
    writeln!(out, "overall: {}", if all_pass { "PASS" } else { "FAIL" })?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Runtime("one or more suites failed".into()))
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    let cfg = SynthConfig {
        n_phases: a.phases as usize,
        n_videos: a.videos,
        t_min: a.t_min,
        t_max: a.t_max,
        feature_dim: a.feature_dim,
        noise_sigma: a.noise,
        future_marker: a.future_marker,
        marker_lag: a.marker_lag,
        ..SynthConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let m = write_synth_dataset(&a.out, &cfg, a.seed)?;
    writeln!(out, "wrote {} videos ({} phases) to {}", m.videos.len(), m.n_phases, a.out.display())?;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let (mut cfg, doc) = RunConfig::load(&a.config)?;
    let train_data = load_dataset(&cfg.data.train)?;
    let test_data = cfg.data.test.as_ref().map(load_dataset).transpose()?;
    cfg.reconcile(&doc, &train_data)?;
    if let Some(t) = &test_data {
        if t.feature_dim != train_data.feature_dim || t.n_phases != train_data.n_phases {
            return Err(CliError::Usage("train and test datasets disagree on feature_dim or n_phases".into()));
        }
    }
    let model = init_model(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let run = RunDir::create(&a.out, &cfg)?;
    writeln!(
        out,
        "training {} parameters on {} videos for {} epochs",
        trainer.model.parameter_count(),
        train_data.len(),
        cfg.train.epochs
    )?;
    let mut io_err = None;
    let reports = train_run(&mut trainer, &train_data, &run, |r| {
        if let Err(e) = writeln!(
            out,
            "epoch {:>4}  loss {:.6}  loss_r {:.6}  loss_a {:.6}  lr {:.3e}  grad_norm {:.4}",
            r.epoch, r.loss, r.loss_r, r.loss_a, r.lr, r.grad_norm
        ) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(last) = reports.last() {
        writeln!(out, "final: {}", serde_json::to_string(last).map_err(|e| CliError::Runtime(e.to_string()))?)?;
    }
    if let Some(t) = &test_data {
        let s = evaluate(&trainer.model, t, cfg.train.horizon)?;
        writeln!(out, "test accuracy {:.2}%  anticipation smooth-l1 {:.5}", s.accuracy, s.anticipation_loss)?;
    }
    writeln!(out, "run directory: {}", run.path().display())?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let data = load_dataset(&a.data)?;
    let model = match (&a.checkpoint, a.oracle) {
        (_, true) => None,
        (Some(p), false) => Some(Model::load(p)?),
        (None, false) => return Err(CliError::Usage("--checkpoint is required".into())),
    };
    if let Some(m) = &model {
        if m.config.d_in != data.feature_dim {
            return Err(srmamba_core::Error::Load {
                tensor: "encoder.weight".into(),
                msg: format!("checkpoint expects {} input features, data has {}", m.config.d_in, data.feature_dim),
            }
            .into());
        }
        if m.config.n_phases != data.n_phases {
            return Err(srmamba_core::Error::Load {
                tensor: "head_r.weight".into(),
                msg: format!("checkpoint predicts {} phases, data has {}", m.config.n_phases, data.n_phases),
            }
            .into());
        }
    }
    if let Some(dir) = &a.ribbon_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    let palette = default_palette(data.n_phases);
    let mut videos = Vec::with_capacity(data.len());
    for v in &data.videos {
        let pred = match &model {
            Some(m) => predict_phases(&m.predict(&v.features)?),
            None => v.labels.clone(),
        };
        let metrics = video_metrics(&pred, &v.labels, data.n_phases)?;
        if let Some(dir) = &a.ribbon_dir {
            ribbon_export(&pred, &v.labels, &palette, dir.join(format!("{}.ppm", v.id)))?;
        }
        videos.push(VideoReport { id: v.id.clone(), metrics });
    }
    let report = EvalReport::build(videos)?;
    report.write(&a.report)?;
    writeln!(out, "{} videos", report.aggregate.videos)?;
    write!(out, "{}", report.aggregate.table())?;
    Ok(())
}

pub fn cmd_sample(a: &SampleArgs, out: &mut dyn Write) -> CliResult {
    let seq = load_annotations(&a.annotations)?;
    let s = sample_sequence(&seq.labels, a.nmax)?;
    let idx: Vec<String> = s.indices.iter().map(|i| i.to_string()).collect();
    writeln!(out, "indices ({}): {}", s.len(), idx.join(" "))?;
    let segs = segments(&seq.labels);
    for (k, (seg, c)) in segs.iter().zip(s.segment_counts(&segs)).enumerate() {
        writeln!(
            out,
            "segment {k}: phase {} frames {}..={} length {} sampled {c}",
            seg.phase,
            seg.start,
            seg.end,
            seg.len()
        )?;
    }
    let kept = keyframes(&seq.labels).iter().all(|k| s.indices.binary_search(k).is_ok());
    writeln!(out, "keyframes retained: {}", if kept { "yes" } else { "no" })?;
    if kept {
        Ok(())
    } else {
        Err(CliError::Runtime("sampler dropped a keyframe".into()))
    }
}
