use super::*;
use crate::synthdata::{generate, DatasetSpec};

fn small_data(seed: u64) -> SynthData {
    generate(&DatasetSpec {
        n1: 24,
        m1: 48,
        test_per_class: 4,
        ..DatasetSpec::reference(seed)
    })
    .unwrap()
}

fn small(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        total_iterations: 40,
        eval_every: 10,
        balance: crate::balance::BalanceConfig {
            warmup_epochs: 1,
            ..cfg.balance
        },
        ..cfg
    }
}

#[test]
fn warmup_is_counted_in_unlabeled_epochs() {
    let cfg = TrainConfig::new(10, 0);
    assert_eq!(warmup_iterations(&cfg, 2045), 160);
    assert_eq!(warmup_iterations(&cfg, 0), 0);
}

#[test]
fn fixmatch_configuration_matches_the_reference_loop_bitwise() {
    let data = small_data(1);
    let cfg = small(TrainConfig::fixmatch(10, 5));
    let reference = fixmatch_reference_totals(&cfg, &data, 20).unwrap();
    let mut trainer = Trainer::new(cfg, &data).unwrap();
    for (t, want) in reference.iter().enumerate() {
        let got = trainer.step().unwrap().loss;
        assert_eq!(
            got.total.to_bits(),
            want.to_bits(),
            "step {t}: {got:?} vs {want}"
        );
        assert_eq!(
            (got.l_u_h, got.l_us_h, got.l_us_l, got.lambda),
            (0.0, 0.0, 0.0, 1.0)
        );
    }
}

#[test]
fn runs_are_deterministic_and_satisfy_the_composite_identity() {
    let data = small_data(2);
    let cfg = small(TrainConfig::new(10, 9));
    let a = Trainer::new(cfg.clone(), &data)
        .unwrap()
        .run(|_, _| {})
        .unwrap();
    let b = Trainer::new(cfg, &data).unwrap().run(|_, _| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 4);
    assert_eq!(a.rows.last().unwrap().iteration, 40);
    for s in &a.steps {
        assert_eq!(s.loss.total, s.loss.recomputed_total());
    }
    // warm-up mixes labeled sources only; afterwards unlabeled ones appear
    let warm = 48usize.div_ceil(16);
    assert!(a.steps[..warm]
        .iter()
        .all(|s| s.unlabeled_sources == 0 && s.low_entropy_fraction == 0.0));
    assert!(a.steps[warm..].iter().any(|s| s.low_entropy_fraction > 0.0));
}

#[test]
fn resumed_run_continues_identically() {
    let data = small_data(3);
    let cfg = small(TrainConfig::new(10, 4));
    let mut full = Trainer::new(cfg.clone(), &data).unwrap();
    let all: Vec<StepRecord> = (0..8).map(|_| full.step().unwrap()).collect();
    let mut first = Trainer::new(cfg.clone(), &data).unwrap();
    for _ in 0..5 {
        first.step().unwrap();
    }
    let mut second = Trainer::resume(cfg, &data, first.into_state()).unwrap();
    let rest: Vec<StepRecord> = (0..3).map(|_| second.step().unwrap()).collect();
    assert_eq!(rest, all[5..]);
    assert_eq!(second.state(), full.state());
}

#[test]
fn in_batch_mixers_and_ablations_train() {
    let data = small_data(4);
    let base = small(TrainConfig::new(10, 1));
    let variants = [
        TrainConfig {
            mixer: Mixer::MixUp,
            bem: false,
            ..base.clone()
        },
        TrainConfig {
            mixer: Mixer::CutMix,
            bem: false,
            ..base.clone()
        },
        TrainConfig {
            mixer: Mixer::CutMix,
            ..base.clone()
        },
        TrainConfig {
            sampling: BankSampling::Random,
            ..base.clone()
        },
        TrainConfig {
            esm: false,
            ..base.clone()
        },
        TrainConfig {
            ecb: false,
            la: true,
            ..base.clone()
        },
    ];
    for cfg in variants {
        let mut trainer = Trainer::new(cfg.clone(), &data).unwrap();
        for _ in 0..6 {
            let s = trainer.step().unwrap();
            assert!(s.loss.total.is_finite());
            assert_eq!(s.loss.total, s.loss.recomputed_total());
            if !cfg.bem {
                assert!(s.loss.lambda <= 1.0 && s.labeled_sources == 0);
            }
            if cfg.bem && !cfg.esm {
                assert_eq!(s.labeled_sources, 0);
            }
        }
    }
}

#[test]
fn confident_zero_entropy_batch_takes_the_low_entropy_path() {
    let data = small_data(5);
    let mut cfg = small(TrainConfig::new(10, 2));
    cfg.balance.warmup_epochs = 0;
    let mut state = TrainState::init(&cfg, &data).unwrap();
    // every prediction is a one-hot on class 0
    state
        .params
        .classifier
        .weights
        .iter_mut()
        .for_each(|w| *w = 0.0);
    state
        .params
        .classifier
        .bias
        .iter_mut()
        .enumerate()
        .for_each(|(k, b)| *b = if k == 0 { 200.0 } else { 0.0 });
    let mut trainer = Trainer::resume(cfg.clone(), &data, state).unwrap();
    let s = trainer.step().unwrap();
    assert_eq!(s.mean_entropy, 0.0);
    assert_eq!(s.mask_rate, 1.0);
    assert_eq!(s.low_entropy_fraction, 1.0);
    assert_eq!(s.unlabeled_sources, cfg.batch_size);
    assert_eq!(s.labeled_sources, 0);
}

#[test]
fn repeated_frozen_batch_loss_decreases() {
    let data = small_data(6);
    let c = 10;
    let config = BackboneConfig::reference(c);
    let mut params = BackboneParams::init(config, &mut rng_from(8));
    let mut opt = OptimizerState::new(&params, 0.03, 0.9, 50).unwrap();
    let draws: Vec<Draw> = (0..16)
        .map(|i| Draw {
            epoch: 0,
            index: i * 3,
        })
        .collect();
    let (xw, labels) = labeled_views(&data.labeled, &draws, 1);
    let xw = stack(&xw).unwrap();
    let (_, us) = unlabeled_views(&data.unlabeled, &draws, 1);
    let us = stack(&us).unwrap();
    let pseudo = PseudoLabels {
        classes: labels.clone(),
        confidence: vec![1.0; 16],
        mask: vec![true; 16],
    };
    let mut totals = Vec::new();
    for _ in 0..50 {
        let out_l = tinynn::forward(&params, &xw).unwrap();
        let out_u = tinynn::forward(&params, &us).unwrap();
        let loss = bem_losses(&LossInputs {
            classes: c,
            labeled_logits: &out_l.logits,
            labels: &labels,
            mixed_logits: &out_u.logits,
            pseudo: &pseudo,
            high: &[true; 16],
            low: &[false; 16],
            pasted: &[None; 16],
            class_weights: &[1.0; 10],
            lambda: 0.8,
            tau: 0.95,
        })
        .unwrap();
        totals.push(loss.breakdown.total);
        let mut g = tinynn::backward(&params, &out_l, &loss.labeled_grads).unwrap();
        g.add_assign(&tinynn::backward(&params, &out_u, &loss.mixed_grads).unwrap());
        tinynn::sgd_step(&mut params, &g, &mut opt).unwrap();
    }
    assert!(
        totals[49] < totals[0] * 0.8,
        "{:?}",
        (totals[0], totals[49])
    );
}
