#![allow(dead_code)]

use pda_core::adaptation::AdaptConfig;
use pda_core::datasets::{generate_synthetic, Dataset, SyntheticSpec};
use pda_core::harness::{init_model, ModelConfig};
use pda_core::model::{Encoder, PrototypeMatrix};
use pda_core::source_trainer::{train_source, SourcePhaseConfig};

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        k_s: 6,
        k_t: 3,
        d_x: 5,
        source_per_class: 20,
        target_per_class: 15,
        cluster_std: 0.6,
        rotation_angle: 0.4,
        translation: vec![0.2; 5],
        seed,
    }
}

pub fn small_model() -> ModelConfig {
    ModelConfig {
        hidden: vec![12],
        d_z: 6,
        ..Default::default()
    }
}

pub fn small_adapt(seed: u64) -> AdaptConfig {
    AdaptConfig {
        n_a: 3,
        n_e: 2,
        n_cl: 2,
        epochs: 8,
        warmup_epochs: 2,
        switch_epoch: 4,
        batch_size: 16,
        seed,
        ..Default::default()
    }
}

/// A source-trained encoder, frozen prototypes and the target set.
pub fn trained(seed: u64) -> (Encoder, PrototypeMatrix, Dataset, Dataset) {
    let (source, target) = generate_synthetic(&small_spec(seed)).unwrap();
    let (enc, protos) =
        init_model(&small_model(), source.dim(), source.num_classes(), seed).unwrap();
    let cfg = SourcePhaseConfig {
        epochs: 10,
        seed,
        ..Default::default()
    };
    let out = train_source(enc, protos, &source, &cfg).unwrap();
    (out.encoder, out.prototypes, source, target)
}
