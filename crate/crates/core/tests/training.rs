mod common;

use common::*;
use remote_arousal::preprocess::TargetKind;
use remote_arousal::training::*;
use remote_arousal::Error;

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seeds: vec![0],
        target_kind: TargetKind::Raw,
        ..TrainConfig::default()
    }
}

#[test]
fn validation_loss_improves_on_synthetic_data() {
    let data = synthetic_data(3, &short_synth(60.0), &data_config(16, 32, TargetKind::Raw));
    let folds = loso_splits(&data.ids()).unwrap();
    let monitor = LeakageMonitor::new();
    let out = train_fold(&data, &folds[0], &tiny_model(32, 16), &config(4), 0, &monitor).unwrap();
    let h = &out.history;
    assert_eq!(h.val_loss.len(), 5);
    assert_eq!(h.train_loss.len(), 4);
    assert!(h.best_val_loss() < h.val_loss[0], "{h:?}");
    assert!(monitor.checks() > 0);
    assert_eq!(monitor.violations(), 0);
}

#[test]
fn fixed_seed_runs_are_identical() {
    let data = synthetic_data(3, &short_synth(40.0), &data_config(16, 32, TargetKind::Raw));
    let fold = &loso_splits(&data.ids()).unwrap()[1];
    let run = || {
        train_fold(&data, fold, &tiny_model(32, 16), &config(2), 7, &LeakageMonitor::new())
            .unwrap()
            .history
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_epochs_rejected() {
    assert!(matches!(config(0).validate(), Err(Error::Config(_))));
    let mut c = config(1);
    c.seeds.clear();
    assert!(c.validate().is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let mut data_parts: Vec<ParticipantData> = synthetic_data(3, &short_synth(40.0), &data_config(16, 32, TargetKind::Raw))
        .participants()
        .to_vec();
    for p in &mut data_parts {
        for w in &mut p.windows {
            w.labels[0] = f64::NAN;
        }
    }
    let data = ExperimentData::new(data_parts).unwrap();
    let fold = &loso_splits(&data.ids()).unwrap()[0];
    let Err(err) = train_fold(&data, fold, &tiny_model(32, 16), &config(1), 0, &LeakageMonitor::new()) else {
        panic!("NaN labels trained without error");
    };
    match err {
        Error::NonFiniteLoss { lr, epoch, batch } => assert_eq!((lr, epoch, batch), (1e-3, 1, 0)),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn wrong_target_labels_rejected() {
    let data = synthetic_data(3, &short_synth(40.0), &data_config(16, 32, TargetKind::Raw));
    let fold = &loso_splits(&data.ids()).unwrap()[0];
    let c = TrainConfig {
        target_kind: TargetKind::Tonic,
        ..config(1)
    };
    assert!(matches!(
        train_fold(&data, fold, &tiny_model(32, 16), &c, 0, &LeakageMonitor::new()),
        Err(Error::Config(_))
    ));
}

#[test]
fn experiment_fills_every_cell_and_is_reproducible() {
    let data = synthetic_data(3, &short_synth(40.0), &data_config(16, 32, TargetKind::Raw));
    let c = TrainConfig {
        seeds: vec![1, 2],
        ..config(1)
    };
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        workers: 2,
        output_dir: Some(dir.path().to_path_buf()),
    };
    let a = run_experiment(&data, &tiny_model(32, 16), &c, &opts).unwrap();
    assert_eq!(a.rows.len(), 6);
    let mut cells: Vec<(String, u64)> = a.rows.iter().map(|r| (r.participant.clone(), r.seed)).collect();
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), 6);
    assert_eq!(a.leakage_violations, 0);
    for r in &a.rows {
        assert_eq!(r.status, RowStatus::Ok, "{r:?}");
        assert!((-1.0..=1.0).contains(&r.rho_tonic.unwrap()));
        let d = fold_dir(dir.path(), 32, &c, r.seed);
        assert!(d.join(format!("{}.ckpt", r.participant)).is_file());
        assert!(d.join(format!("{}.svg", r.participant)).is_file());
        assert!(d.join(format!("{}.trend.csv", r.participant)).is_file());
    }
    let b = run_experiment(&data, &tiny_model(32, 16), &c, &RunOptions::default()).unwrap();
    assert_eq!(a.rows, b.rows);
    let s = a.summary().unwrap();
    assert_eq!((s.n_seeds, s.n_participants), (2, 3));
}

#[test]
fn mismatched_window_length_rejected() {
    let data = synthetic_data(3, &short_synth(40.0), &data_config(16, 32, TargetKind::Raw));
    let err = run_experiment(&data, &tiny_model(64, 16), &config(1), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
