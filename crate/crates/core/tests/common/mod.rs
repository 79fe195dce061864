#![allow(dead_code)]

use remote_arousal::dataset::{generate_synthetic_session, SynthConfig};
use remote_arousal::model::ModelConfig;
use remote_arousal::preprocess::{CropConfig, PrepareConfig, SkinCascadeDetector, TargetKind};
use remote_arousal::training::{DataConfig, ExperimentData, ParticipantData};

/// Short, small-frame synthetic sessions rendered directly at 10 Hz.
pub fn short_synth(duration_s: f64) -> SynthConfig {
    SynthConfig {
        duration_s,
        frame_size: 24,
        pinch_intervals: vec![],
        ..SynthConfig::fast()
    }
}

pub fn data_config(size: usize, t: usize, target: TargetKind) -> DataConfig {
    DataConfig {
        prepare: PrepareConfig {
            crop: CropConfig {
                output_size: size,
                ..CropConfig::default()
            },
            fs_model: 10.0,
        },
        t,
        target_kind: target,
        with_flow: false,
    }
}

pub fn synthetic_data(n: u64, synth: &SynthConfig, cfg: &DataConfig) -> ExperimentData {
    let parts = (0..n)
        .map(|seed| {
            let s = generate_synthetic_session(synth, seed).unwrap();
            ParticipantData::prepare(&s, &SkinCascadeDetector::default(), cfg, None).unwrap()
        })
        .collect();
    ExperimentData::new(parts).unwrap()
}

pub fn tiny_model(t: usize, size: usize) -> ModelConfig {
    ModelConfig {
        t,
        reduction: 4,
        widths: [2, 3, 4],
        input_size: size,
        init_seed: 0,
    }
}
