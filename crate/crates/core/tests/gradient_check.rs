mod common;

use common::{finite_difference, random_images, random_partition, random_unit_rows, relative_error, seeded};
use rand::Rng;
use semco::losses::{
    cosine_loss_grad, onehot_sup_loss_grad, semantic_sup_loss_grad, LossWeights, PseudoLabelConfig,
    SemcoObjective, UnlabeledOutcome,
};
use semco::matrix::Matrix;
use semco::model::{Activation, BackboneKind, ModelConfig, ModelState};

fn tiny_model(seed: u64, backbone: BackboneKind, activation: Activation) -> ModelState {
    let mut cfg = ModelConfig::new(4, 4, 2, 5, 4);
    cfg.backbone = backbone;
    cfg.conv_channels = [3, 4];
    cfg.hidden = 6;
    cfg.activation = activation;
    ModelState::new(cfg, seed).unwrap()
}

#[test]
fn full_objective_matches_finite_differences() {
    for (seed, backbone, act) in [
        (1, BackboneKind::Conv, Activation::Tanh),
        (2, BackboneKind::Mlp, Activation::Tanh),
        (3, BackboneKind::Conv, Activation::Relu),
    ] {
        let mut rng = seeded(seed);
        let model = tiny_model(seed, backbone, act);
        let m = random_unit_rows(&mut rng, 4, 5);
        let grouping = random_partition(&mut rng, 4);
        let labeled = random_images(&mut rng, 3, 4, 4, 2);
        let weak = random_images(&mut rng, 6, 4, 4, 2);
        let strong = random_images(&mut rng, 6, 4, 4, 2);
        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
        let (qw, lw) = model.forward(&weak, false).unwrap();
        let cfg = PseudoLabelConfig {
            temp: 0.5,
            tau_e: 0.3,
            tau_o: 0.3,
        };
        let outcomes: Vec<UnlabeledOutcome> = (0..6)
            .map(|j| UnlabeledOutcome::new(qw.row(j), lw.row(j), &m, &grouping, &cfg).unwrap())
            .collect();
        let objective = SemcoObjective {
            m: &m,
            labels: &labels,
            outcomes: &outcomes,
            weights: LossWeights::default(),
        };
        let batch: Vec<_> = labeled.iter().chain(&strong).cloned().collect();
        let (_, analytic) = model
            .gradients(&batch, |e, l| {
                let v = objective.evaluate(e, l)?;
                Ok((v.breakdown.total, v.d_emb, v.d_logits))
            })
            .unwrap();
        let numeric = finite_difference(&model, 1e-4, |probe| {
            let (e, l) = probe.forward(&batch, false).unwrap();
            objective.evaluate(&e, &l).unwrap().breakdown.total
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn cosine_gradient_vanishes_along_target() {
    let mut rng = seeded(11);
    let model = tiny_model(5, BackboneKind::Mlp, Activation::Tanh);
    let img = random_images(&mut rng, 1, 4, 4, 2);
    let (emb, _) = model.forward(&img, false).unwrap();
    // target is a positive multiple of the current prediction
    let target: Vec<f64> = emb.row(0).iter().map(|v| 2.5 * v).collect();
    let (loss, g) = cosine_loss_grad(&target, emb.row(0)).unwrap();
    assert!(loss.abs() < 1e-12);
    assert!(g.iter().all(|v| v.abs() < 1e-12));
    let (_, grads) = model
        .gradients(&img, |e, l| {
            let (v, g) = cosine_loss_grad(&target, e.row(0))?;
            Ok((v, Matrix::from_vec(1, e.cols(), g)?, Matrix::zeros(l.rows(), l.cols())))
        })
        .unwrap();
    let head = model.backbone_params().len()..model.backbone_params().len() + model.sc_head_params().len();
    assert!(grads[head].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn supervised_terms_on_eight_samples() {
    let mut rng = seeded(21);
    let model = tiny_model(9, BackboneKind::Conv, Activation::Tanh);
    let m = random_unit_rows(&mut rng, 4, 5);
    let imgs = random_images(&mut rng, 8, 4, 4, 2);
    let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..4)).collect();
    let (_, analytic) = model
        .gradients(&imgs, |e, l| {
            let sc = semantic_sup_loss_grad(&m, &labels, e)?;
            let oh = onehot_sup_loss_grad(&labels, l)?;
            Ok((sc.value + oh.value, sc.grad, oh.grad))
        })
        .unwrap();
    let numeric = finite_difference(&model, 1e-4, |probe| {
        let (e, l) = probe.forward(&imgs, false).unwrap();
        semantic_sup_loss_grad(&m, &labels, &e).unwrap().value + onehot_sup_loss_grad(&labels, &l).unwrap().value
    });
    assert!(relative_error(&analytic, &numeric) < 1e-4);
}
