use xmodal_core::projection::{init_projection, write_params, ProjectionConfig};
use xmodal_core::store::{generate_synthetic, EmbeddingDataset, SynthConfig};
use xmodal_core::training::{adam_step, train_projection, AdamState, TrainingConfig};

#[test]
fn adam_two_step_trace() {
    let mut p = [1.0f32, -2.0];
    let steps = [[0.5, -1.0], [0.1, 0.3]];
    let mut state = AdamState::new(&[2]);
    let lr = 0.01;
    for g in &steps {
        adam_step(&mut [&mut p[..]], &[&g[..]], &mut state, lr);
    }

    // Written out by hand from the update rule.
    let expected = |g1: f64, g2: f64, p0: f64| {
        let p1 = (p0 - lr * g1.signum() / (1.0 + 1e-8 / g1.abs())) as f32 as f64;
        let m2 = 0.9 * 0.1 * g1 + 0.1 * g2;
        let v2 = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64 * 0.999);
        (p1 - lr * m_hat / (v_hat.sqrt() + 1e-8)) as f32
    };
    assert_eq!(state.t, 2);
    assert!((p[0] - expected(0.5, 0.1, 1.0)).abs() < 1e-7, "{}", p[0]);
    assert!((p[1] - expected(-1.0, 0.3, -2.0)).abs() < 1e-7, "{}", p[1]);
    assert!((p[0] - 0.981_969_6).abs() < 1e-6);
    assert!((p[1] + 1.985_721_5).abs() < 1e-6);
}

fn small_dataset(seed: u64) -> EmbeddingDataset {
    generate_synthetic(&SynthConfig {
        n_segments: 240,
        audio_dim: 16,
        patches: 0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        epochs: 3,
        batch_size: 32,
        hidden: 32,
        lr: 1e-3,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic() {
    let ds = small_dataset(1);
    let (p1, l1) = train_projection(&ds, &small_config()).unwrap();
    let (p2, l2) = train_projection(&ds, &small_config()).unwrap();
    assert_eq!(write_params(&p1), write_params(&p2));
    assert_eq!(l1.to_jsonl(), l2.to_jsonl());

    let other = TrainingConfig {
        seed: 6,
        ..small_config()
    };
    let (p3, _) = train_projection(&ds, &other).unwrap();
    assert_ne!(write_params(&p1), write_params(&p3));
}

#[test]
fn training_lowers_validation_loss() {
    let ds = small_dataset(2);
    let cfg = TrainingConfig {
        epochs: 8,
        ..small_config()
    };
    let (_, log) = train_projection(&ds, &cfg).unwrap();
    let last = log.epochs.last().unwrap().val_loss;
    assert!(
        last < log.initial_val_loss,
        "{last} vs {}",
        log.initial_val_loss
    );
    assert_eq!(log.train_size + log.val_size, 216);
    assert_eq!(log.val_size, 22);
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let ds = small_dataset(3);
    let cfg = TrainingConfig {
        epochs: 0,
        ..small_config()
    };
    let (p, log) = train_projection(&ds, &cfg).unwrap();
    let init = init_projection(
        ProjectionConfig {
            audio_dim: 16,
            hidden: 32,
            dropout: 0.1,
        },
        cfg.seed,
    )
    .unwrap();
    assert_eq!(p, init);
    assert!(log.epochs.is_empty());
    assert_eq!(log.to_jsonl().lines().count(), 2);
}

#[test]
fn zero_learning_rate_freezes_parameters_and_stays_zero() {
    let ds = small_dataset(4);
    let cfg = TrainingConfig {
        lr: 0.0,
        epochs: 5,
        plateau_patience: 1,
        ..small_config()
    };
    let (p, log) = train_projection(&ds, &cfg).unwrap();
    let (init, _) = train_projection(
        &ds,
        &TrainingConfig {
            epochs: 0,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(p, init);
    assert!(log.epochs.iter().all(|e| e.lr == 0.0));
    assert!(log
        .epochs
        .iter()
        .all(|e| e.val_loss == log.initial_val_loss));
}

#[test]
fn plateau_schedule_cuts_the_rate_and_respects_the_floor() {
    let ds = small_dataset(5);
    // A vanishing rate cannot move the validation loss by the improvement
    // threshold, so every epoch counts as stale.
    let cfg = TrainingConfig {
        lr: 1e-12,
        epochs: 6,
        plateau_patience: 2,
        min_lr: 1e-13,
        ..small_config()
    };
    let (_, log) = train_projection(&ds, &cfg).unwrap();
    let lrs: Vec<f64> = log.epochs.iter().map(|e| e.lr).collect();
    assert_eq!(lrs[..2], [1e-12, 1e-12]);
    assert!((lrs[2] - 1e-13).abs() < 1e-25 && (lrs[3] - 1e-13).abs() < 1e-25);
    assert_eq!(lrs[4], 1e-13);
    assert_eq!(lrs[5], 1e-13);
}

#[test]
fn config_files_fill_defaults_and_reject_a_seed() {
    let cfg: TrainingConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!(cfg.epochs, 3);
    assert_eq!(cfg.tau, 0.07);
    assert_eq!(cfg.seed, 0);
    assert!(serde_json::from_str::<TrainingConfig>(r#"{"seed": 9}"#).is_err());
    assert!(serde_json::from_str::<TrainingConfig>(r#"{"epoch": 9}"#).is_err());
}
