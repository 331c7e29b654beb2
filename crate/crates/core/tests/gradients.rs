mod common;

use common::*;
use sundae_core::model::{HourglassConfig, HourglassModel, HourglassParams};
use sundae_core::oracle::{finite_diff, FlatParams, Stencil};
use sundae_core::rng::{stream, Purpose};
use sundae_core::train::{cross_entropy, replay_unrolled_loss, unrolled_loss};

#[test]
fn f64_gradients_match_richardson_differences() {
    let model = spread(&HourglassModel::<f64>::new(tiny_config(Some(3)), 4).unwrap(), 3.0);
    let (input, target) = tiny_inputs();
    let a = analytic_grad(&model, &input, &target, Some(2));
    let n = numeric_grad(&model, &input, &target, Some(2), 1e-4, Stencil::Richardson);
    let (err, at) = max_rel_error(&a, &n, GRAD_FLOOR);
    assert!(err <= 1e-6, "rel error {err:e} at {}", model.params().name(at));
}

#[test]
fn f64_gradients_match_plain_central_differences() {
    let model = spread(&HourglassModel::<f64>::new(tiny_config(None), 8).unwrap(), 3.0);
    let (input, target) = tiny_inputs();
    let a = analytic_grad(&model, &input, &target, None);
    let n = numeric_grad(&model, &input, &target, None, 1e-5, Stencil::Central);
    let (err, at) = max_rel_error(&a, &n, GRAD_FLOOR);
    assert!(err <= 1e-4, "rel error {err:e} at {}", model.params().name(at));
}

#[test]
fn f32_gradients_match_f64_differences() {
    let model64 = spread(&HourglassModel::<f64>::new(tiny_config(Some(3)), 5).unwrap(), 3.0);
    let model32: HourglassModel<f32> = model64.cast();
    // Difference the f32-rounded parameters so both sides see the same point.
    let model64: HourglassModel<f64> = model32.cast();
    let (input, target) = tiny_inputs();
    let a = analytic_grad(&model32, &input, &target, Some(0));
    let n = numeric_grad(&model64, &input, &target, Some(0), 1e-4, Stencil::Richardson);
    let (err, at) = max_rel_error(&a, &n, F32_GRAD_FLOOR);
    assert!(err <= 1e-4, "rel error {err:e} at {}", model64.params().name(at));
}

#[test]
fn dropout_gradients_with_pinned_stream() {
    let cfg = HourglassConfig { dropout: 0.2, ..tiny_config(None) };
    let model = spread(&HourglassModel::<f64>::new(cfg.clone(), 2).unwrap(), 3.0);
    let (input, target) = tiny_inputs();
    let loss_grad = |m: &HourglassModel<f64>, grads: Option<&mut HourglassParams<f64>>| {
        let mut rng = stream(99, Purpose::Unroll, &[]);
        let (logits, cache) = m.forward_train(&input, None, Some(&mut rng)).unwrap();
        let (l, d) = cross_entropy(&logits, &target);
        if let Some(g) = grads {
            m.backward(&cache, &d, g).unwrap();
        }
        l
    };
    let mut grads = model.params().zeros_like();
    loss_grad(&model, Some(&mut grads));
    let a: Vec<f64> = (0..grads.len()).map(|i| grads.get(i)).collect();
    let mut params = model.params().clone();
    let n = finite_diff(
        |p: &HourglassParams<f64>| loss_grad(&HourglassModel::from_params(cfg.clone(), p.clone()).unwrap(), None),
        &mut params,
        1e-4,
        Stencil::Richardson,
    )
    .unwrap();
    let (err, at) = max_rel_error(&a, &n, GRAD_FLOOR);
    assert!(err <= 1e-6, "rel error {err:e} at {}", model.params().name(at));
    // Dropout actually changes the output.
    assert_ne!(loss_grad(&model, None), cross_entropy(&model.forward(&input, None).unwrap(), &target).0);
}

#[test]
fn unrolled_gradient_treats_samples_as_constants() {
    let model = spread(&HourglassModel::<f64>::new(tiny_config(None), 3).unwrap(), 3.0);
    let (z0, z) = tiny_inputs();
    let mut rng = stream(5, Purpose::Unroll, &[]);
    let mut g1 = model.params().zeros_like();
    let out = unrolled_loss(&model, &z, &z0, 3, None, &mut rng, None, Some(&mut g1)).unwrap();
    assert_eq!(out.chain.len(), 3);
    assert_eq!(out.chain[0], z0);
    let mut g2 = model.params().zeros_like();
    let replayed = replay_unrolled_loss(&model, &z, &out.chain, None, Some(&mut g2)).unwrap();
    assert_eq!(replayed, out.loss);
    assert_eq!(g1, g2);

    // And the replayed loss is what finite differences see.
    let a: Vec<f64> = (0..g2.len()).map(|i| g2.get(i)).collect();
    let cfg = model.config().clone();
    let mut params = model.params().clone();
    let n = finite_diff(
        |p: &HourglassParams<f64>| {
            let m = HourglassModel::from_params(cfg.clone(), p.clone()).unwrap();
            replay_unrolled_loss(&m, &z, &out.chain, None, None).unwrap()
        },
        &mut params,
        1e-4,
        Stencil::Richardson,
    )
    .unwrap();
    let (err, _) = max_rel_error(&a, &n, GRAD_FLOOR);
    assert!(err <= 1e-6, "rel error {err:e}");
}
