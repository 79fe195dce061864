use remote_arousal::dataset::{generate_with_truth, SynthConfig};
use remote_arousal::stress::*;

fn session_config() -> SynthConfig {
    SynthConfig {
        frame_size: 8,
        ..SynthConfig::fast()
    }
}

#[test]
fn canonical_session_windows() {
    let s = generate_with_truth(&session_config(), 2).unwrap().session;
    let w = window_session(&s).unwrap();
    assert_eq!(w.len(), 19);
    let stress: Vec<f64> = w.iter().filter(|w| w.label.is_stress()).map(|w| w.start_s / 60.0).collect();
    assert_eq!(stress, vec![2.0, 4.5, 7.0]);
    assert!(w.iter().all(|w| w.eda.len() == 30 * 50 && w.ppg.len() == 30 * 50));
}

#[test]
fn eda_features_match_direct_recomputation() {
    let s = generate_with_truth(&session_config(), 5).unwrap().session;
    let f = session_features(&s).unwrap();
    let fs = s.eda.fs();
    for k in [0usize, 4, 11] {
        let x = &s.eda.values()[(30.0 * k as f64 * fs) as usize..(30.0 * (k + 1) as f64 * fs) as usize];
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let sigma = (x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
        let min = x.iter().cloned().fold(f64::MAX, f64::min);
        let max = x.iter().cloned().fold(f64::MIN, f64::max);
        let change = (x[x.len() - 1] - x[0]) / (n - 1.0);
        let e = f[k].eda.unwrap();
        for (got, want) in [(e.mu, mu), (e.sigma, sigma), (e.min, min), (e.max, max), (e.mu_change, change)] {
            assert!((got - want).abs() < 1e-9, "window {k}: {got} vs {want}");
        }
    }
}

#[test]
fn heart_rate_follows_generator_truth() {
    let syn = generate_with_truth(&session_config(), 1).unwrap();
    let f = session_features(&syn.session).unwrap();
    let fs = syn.session.ppg.fs();
    for (k, row) in f.iter().enumerate() {
        let hr = row.hr.expect("clean contact pulse has peaks");
        let truth = &syn.truth.heart_rate_hz[(30.0 * k as f64 * fs) as usize..(30.0 * (k + 1) as f64 * fs) as usize];
        let bpm = 60.0 * truth.iter().sum::<f64>() / truth.len() as f64;
        assert!((hr.mu_hr - bpm).abs() < 2.0, "window {k}: {} vs {bpm}", hr.mu_hr);
        assert!(hr.min_hr <= hr.mu_hr && hr.mu_hr <= hr.max_hr && hr.sdnn >= 0.0);
    }
}

#[test]
fn classification_is_deterministic_and_leave_one_out() {
    let cfg = SynthConfig {
        pinch_step_us: 2.0,
        tonic_walk_us: 0.5,
        ..session_config()
    };
    let feats: Vec<_> = (0..4)
        .flat_map(|p| session_features(&generate_with_truth(&cfg, p).unwrap().session).unwrap())
        .collect();
    let gb = GbdtConfig {
        rounds: 30,
        ..GbdtConfig::default()
    };
    let a = classify_stress(&feats, FeatureSet::EdaOnly, &gb).unwrap();
    let b = classify_stress(&feats, FeatureSet::EdaOnly, &gb).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predictions.len(), 76);
    for fold in &a.folds {
        assert_eq!((fold.n_train, fold.n_test), (57, 19));
    }
    assert!((0.0..=1.0).contains(&a.bacc));
}
