mod common;

use common::*;
use sundae_core::codec::{LatentDataset, TokenGrid};
use sundae_core::model::checkpoint::Container;
use sundae_core::model::HourglassModel;
use sundae_core::rng::{stream, Purpose};
use sundae_core::train::{
    corrupt, corrupt_with_thresholds, cross_entropy, sample_rows, unrolled_loss, AdamSettings, TrainConfig, Trainer,
};

fn random_dataset(count: usize, seed: u64) -> LatentDataset {
    use rand::Rng;
    let mut rng = stream(seed, Purpose::Synthetic, &[]);
    let grids =
        (0..count).map(|_| TokenGrid::new(4, 4, (0..16).map(|_| rng.gen_range(0..5)).collect()).unwrap()).collect();
    LatentDataset::new(5, grids, None).unwrap()
}

#[test]
fn corruption_rate_matches_threshold() {
    let z = tiny_inputs().1;
    let batch = vec![z.clone(); 2000];
    let mut rng = stream(1, Purpose::Corruption, &[]);
    let c = corrupt_with_thresholds(&batch, 5, &vec![0.5; batch.len()], &mut rng);
    let cells = (batch.len() * 16) as f64;
    let hit = c.masks.iter().map(|m| m.count()).sum::<usize>() as f64 / cells;
    let changed = c.z0.iter().map(|g| g.tokens().iter().zip(z.tokens()).filter(|(a, b)| a != b).count()).sum::<usize>()
        as f64
        / cells;
    // Binomial standard error is about 0.0028 for 32000 cells.
    assert!((hit - 0.5).abs() < 0.015, "hit rate {hit}");
    assert!((changed - 0.5 * 0.8).abs() < 0.015, "change rate {changed}");
}

#[test]
fn corruption_thresholds_are_uniform() {
    let batch = vec![tiny_inputs().1; 4000];
    let mut rng = stream(2, Purpose::Corruption, &[]);
    let c = corrupt(&batch, 5, &mut rng);
    let mean = c.thresholds.iter().sum::<f64>() / c.thresholds.len() as f64;
    let below = c.thresholds.iter().filter(|t| **t < 0.25).count() as f64 / c.thresholds.len() as f64;
    assert!((mean - 0.5).abs() < 0.015);
    assert!((below - 0.25).abs() < 0.02);
}

#[test]
fn single_step_unroll_is_cross_entropy() {
    let model = spread(&HourglassModel::<f64>::new(tiny_config(None), 1).unwrap(), 2.0);
    let (z0, z) = tiny_inputs();
    let mut rng = stream(3, Purpose::Unroll, &[]);
    let out = unrolled_loss(&model, &z, &z0, 1, None, &mut rng, None, None).unwrap();
    let ce = cross_entropy(&model.forward(&z0, None).unwrap(), &z).0;
    assert_eq!(out.loss, ce);
}

#[test]
fn uniform_model_costs_ln_v() {
    let mut model = HourglassModel::<f64>::new(tiny_config(None), 2).unwrap();
    model.params_mut().head.w.fill(0.0);
    model.params_mut().head.b.fill(0.0);
    let (z0, z) = tiny_inputs();
    let mut rng = stream(4, Purpose::Unroll, &[]);
    let out = unrolled_loss(&model, &z, &z0, 3, None, &mut rng, None, None).unwrap();
    assert!((out.loss - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn two_step_unroll_matches_hand_chain() {
    let model = spread(&HourglassModel::<f64>::new(tiny_config(None), 5).unwrap(), 2.0);
    let (z0, z) = tiny_inputs();
    let mut rng = stream(6, Purpose::Unroll, &[]);
    let mut replay = rng.clone();
    let out = unrolled_loss(&model, &z, &z0, 2, None, &mut rng, None, None).unwrap();

    let first = model.forward(&z0, None).unwrap();
    let z1 = TokenGrid::new(4, 4, sample_rows(&first, 1.0, &mut replay)).unwrap();
    let l1 = cross_entropy(&first, &z).0;
    let l2 = cross_entropy(&model.forward(&z1, None).unwrap(), &z).0;
    assert_eq!(out.chain, vec![z0, z1]);
    assert!((out.loss - (l1 + l2) / 2.0).abs() < 1e-15);
    assert_eq!(out.step_losses, vec![l1, l2]);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = random_dataset(16, 1);
    let model = HourglassModel::<f32>::new(tiny_config(None), 3).unwrap();
    let before = model.params().clone();
    let cfg = TrainConfig {
        batch_size: 4,
        total_steps: 3,
        adam: AdamSettings { learning_rate: 0.0, ..Default::default() },
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    trainer.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(trainer.model().params(), &before);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let data = random_dataset(24, 2);
    let cfg = TrainConfig { batch_size: 3, total_steps: 8, seed: 7, ..Default::default() };
    let fresh = || Trainer::new(HourglassModel::<f32>::new(tiny_config(None), 4).unwrap(), cfg.clone()).unwrap();
    let mut full = fresh();
    let history = full.run(&data, |_, _| Ok(())).unwrap();
    let mut again = fresh();
    assert_eq!(again.run(&data, |_, _| Ok(())).unwrap(), history);

    let mut first = fresh();
    first.set_total_steps(3);
    first.run(&data, |_, _| Ok(())).unwrap();
    let bytes = first.to_container().to_bytes().unwrap();
    let mut resumed = Trainer::<f32>::from_container(&Container::from_bytes(&bytes).unwrap(), cfg.clone()).unwrap();
    assert_eq!(resumed.steps_done(), 3);
    resumed.set_total_steps(8);
    let tail = resumed.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(tail, history[3..]);
    assert_eq!(resumed.model().params(), full.model().params());
}

#[test]
fn memorizes_a_single_grid() {
    let z = tiny_inputs().1;
    let data = LatentDataset::new(5, vec![z], None).unwrap();
    let model = HourglassModel::<f32>::new(tiny_config(None), 5).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        total_steps: 200,
        seed: 8,
        adam: AdamSettings { learning_rate: 1e-2, ..Default::default() },
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    let history = trainer.run(&data, |_, _| Ok(())).unwrap();
    let tail = history[190..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    assert!(tail < 0.1 * 5f64.ln(), "final loss {tail}");
}

#[test]
fn dataset_vocab_must_match_model() {
    let data = LatentDataset::new(7, vec![TokenGrid::zeros(4, 4)], None).unwrap();
    let trainer =
        Trainer::new(HourglassModel::<f32>::new(tiny_config(None), 1).unwrap(), TrainConfig::default()).unwrap();
    assert!(trainer.check_dataset(&data).is_err());
}
