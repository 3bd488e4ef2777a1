use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{synth_dataset, SynthConfig};

fn tiny_model(d_in: usize, p: usize, drop: f64) -> ModelConfig {
    ModelConfig {
        d_in,
        d_model: 8,
        n_state: 4,
        n_layers: 1,
        n_phases: p,
        expansion: 2,
        conv_width: 4,
        drop_path_rate: drop,
        bidirectional: true,
    }
}

fn tiny_data(seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n_phases: 4,
        n_videos: 4,
        t_min: 40,
        t_max: 60,
        feature_dim: 6,
        noise_sigma: 0.3,
        ..SynthConfig::default()
    };
    synth_dataset(&cfg, seed).unwrap()
}

fn fast_config() -> TrainConfig {
    TrainConfig { lr0: 5e-3, horizon: 20, seed: 3, ..TrainConfig::default() }
}

#[test]
fn schedule_constants() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 2e-4);
    assert_eq!(lr_at(49, &cfg), 2e-4);
    assert_eq!(lr_at(50, &cfg), 1e-4);
    assert_eq!(lr_at(100, &cfg), 5e-5);
    assert_eq!(lr_at(149, &cfg), 5e-5);
}

#[test]
fn schedule_is_piecewise_constant() {
    let cfg = TrainConfig { lr0: 0.3, halve_every: 7, ..TrainConfig::default() };
    for e in 1..100 {
        let (prev, cur) = (lr_at(e - 1, &cfg), lr_at(e, &cfg));
        if e % 7 == 0 {
            assert_eq!(cur, prev / 2.0);
        } else {
            assert_eq!(cur, prev);
        }
    }
}

#[test]
fn zero_lr_leaves_parameters() {
    let data = tiny_data(1);
    let model = init_model(tiny_model(6, 4, 0.1), 2).unwrap();
    let before = model.clone();
    let mut t = Trainer::new(model, TrainConfig { lr0: 0.0, ..fast_config() }).unwrap();
    let r = t.train_epoch(&data).unwrap();
    assert_eq!(r.lr, 0.0);
    assert_eq!(t.model.named(), before.named());
}

#[test]
fn fixed_seed_reproduces_reports() {
    let data = tiny_data(1);
    let run = || {
        let model = init_model(tiny_model(6, 4, 0.2), 2).unwrap();
        let mut t = Trainer::new(model, fast_config()).unwrap();
        let reports: Vec<EpochReport> = (0..2).map(|_| t.train_epoch(&data).unwrap()).collect();
        (reports, t.model)
    };
    let (ra, ma) = run();
    let (rb, mb) = run();
    assert_eq!(ra, rb);
    assert_eq!(ma.named(), mb.named());
}

#[test]
fn loss_decreases_on_separable_data() {
    let data = tiny_data(4);
    let model = init_model(tiny_model(6, 4, 0.0), 9).unwrap();
    let mut t = Trainer::new(model, fast_config()).unwrap();
    let losses: Vec<f64> = (0..5).map(|_| t.train_epoch(&data).unwrap().loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn long_videos_are_subsampled() {
    let data = tiny_data(2);
    let model = init_model(tiny_model(6, 4, 0.0), 1).unwrap();
    for resample in [true, false] {
        let cfg = TrainConfig { n_max: 16, resample_each_epoch: resample, ..fast_config() };
        let mut t = Trainer::new(model.clone(), cfg).unwrap();
        let (x, labels, targets) = t.prepare(&data.videos[0]).unwrap();
        assert_eq!(x.rows(), 16);
        assert_eq!(labels.len(), 16);
        assert_eq!(targets.len(), 16);
        // Segment-final frames are keyframes, so zero targets survive.
        assert!(targets.data().contains(&0.0));
        assert!(t.train_epoch(&data).unwrap().loss.is_finite());
    }
}

#[test]
fn combined_gradient_check_on_toy_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut model = init_model(tiny_model(5, 3, 0.0), 17).unwrap();
    for t in model.tensors_mut() {
        let n = t.len();
        *t = Tensor::from_parts(t.shape().to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
    }
    let x = Tensor::from_parts(vec![10, 5], (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let labels = vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2];
    let targets = Tensor::vector(make_anticipation_targets(&labels, 4).unwrap().values);
    let r = combined_loss_grad_check(&model, &x, &labels, &targets, &fast_config(), 1e-5, 1e-4, crate::numkit::Stencil::Central)
        .unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn anticipation_flag_drops_term() {
    let data = tiny_data(3);
    let v = &data.videos[0];
    let model = init_model(tiny_model(6, 4, 0.0), 4).unwrap();
    let targets = Tensor::vector(make_anticipation_targets(&v.labels, 20).unwrap().values);
    let drops = vec![crate::mamba::DropPath::Identity];
    let on = sequence_gradients(&model, &v.features, &v.labels, &targets, &fast_config(), &drops).unwrap();
    let cfg = TrainConfig { anticipation_enabled: false, ..fast_config() };
    let off = sequence_gradients(&model, &v.features, &v.labels, &targets, &cfg, &drops).unwrap();
    assert!((on.loss - (0.5 * on.loss_r + on.loss_a)).abs() < 1e-12);
    assert!((off.loss - 0.5 * off.loss_r).abs() < 1e-15);
    // The anticipation head receives no gradient without its loss.
    let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
    let head = names.iter().position(|n| n == "head_a.weight").unwrap();
    assert_eq!(off.grads[head].max_abs(), 0.0);
    assert!(on.grads[head].max_abs() > 0.0);
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(5);
    let model = init_model(tiny_model(6, 4, 0.1), 0).unwrap();
    let cfg = TrainConfig { epochs: 3, ..fast_config() };
    let mut t = Trainer::new(model, cfg.clone()).unwrap();
    let run = RunDir::create(dir.path().join("run"), &cfg).unwrap();
    let mut seen = 0;
    let reports = train_run(&mut t, &data, &run, |_| seen += 1).unwrap();
    assert_eq!((reports.len(), seen), (3, 3));
    let csv = std::fs::read_to_string(run.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss_r,loss_a,loss,lr");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("2,"));
    let snap: TrainConfig =
        serde_json::from_str(&std::fs::read_to_string(run.path().join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(snap, cfg);
    let back = Model::load(run.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(back.named(), t.model.named());
}

#[test]
fn evaluation_summary() {
    let data = tiny_data(6);
    let model = init_model(tiny_model(6, 4, 0.0), 0).unwrap();
    let s = evaluate(&model, &data, 20).unwrap();
    assert!((0.0..=100.0).contains(&s.accuracy));
    assert!(s.anticipation_loss >= 0.0);
    assert_eq!(s.predictions.len(), data.len());
}

#[test]
fn empty_dataset_rejected() {
    let data = Dataset { n_phases: 4, feature_dim: 6, videos: vec![] };
    let model = init_model(tiny_model(6, 4, 0.0), 0).unwrap();
    let mut t = Trainer::new(model, fast_config()).unwrap();
    assert!(t.train_epoch(&data).is_err());
}
