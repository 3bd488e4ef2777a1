use srmamba_core::data::{load_dataset, write_synth_dataset, SynthConfig};
use srmamba_core::metrics::{aggregate, video_metrics};
use srmamba_core::model::{predict_phases, Model, ModelConfig};
use srmamba_core::train::{evaluate, init_model, RunDir, TrainConfig, Trainer, CHECKPOINT_FILE};

#[test]
fn synth_train_checkpoint_score() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_phases: 4, n_videos: 3, t_min: 50, t_max: 70, feature_dim: 6, ..SynthConfig::default() };
    write_synth_dataset(dir.path().join("data"), &synth, 9).unwrap();
    let data = load_dataset(dir.path().join("data")).unwrap();
    assert_eq!((data.len(), data.n_phases, data.feature_dim), (3, 4, 6));

    let model = ModelConfig {
        d_in: 6,
        d_model: 8,
        n_state: 4,
        n_layers: 2,
        n_phases: 4,
        drop_path_rate: 0.1,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig { lr0: 5e-3, epochs: 3, horizon: 16, seed: 1, ..TrainConfig::default() };
    let mut trainer = Trainer::new(init_model(model, 1).unwrap(), cfg.clone()).unwrap();
    let run = RunDir::create(dir.path().join("run"), &cfg).unwrap();
    for _ in 0..cfg.epochs {
        let r = trainer.train_epoch(&data).unwrap();
        assert!(r.loss.is_finite());
        run.log_epoch(&r).unwrap();
    }
    run.save_checkpoint(&trainer.model).unwrap();

    let back = Model::load(run.path().join(CHECKPOINT_FILE)).unwrap();
    let mut per_video = Vec::new();
    for v in &data.videos {
        let a = trainer.model.predict(&v.features).unwrap();
        let b = back.predict(&v.features).unwrap();
        assert_eq!(a, b);
        per_video.push(video_metrics(&predict_phases(&b), &v.labels, data.n_phases).unwrap());
    }
    let report = aggregate(&per_video).unwrap();
    let summary = evaluate(&back, &data, 16).unwrap();
    let frames: usize = data.videos.iter().map(|v| v.labels.len()).sum();
    let correct: f64 = per_video.iter().zip(&data.videos).map(|(m, v)| m.accuracy * v.labels.len() as f64).sum();
    assert!((summary.accuracy - correct / frames as f64).abs() < 1e-9);
    assert!((0.0..=100.0).contains(&report.accuracy.mean));
}
