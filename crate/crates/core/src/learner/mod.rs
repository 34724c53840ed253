//! The training loop: FixMatch pseudo-labeling, balance-state updates, mix
//! bank maintenance, entropy-based source selection, bank mixing, the
//! five-term loss and the optimizer step. With `bem = false` it is plain
//! FixMatch, optionally with in-batch MixUp or CutMix.

mod config;
mod data;
mod losses;
mod mixing;
mod reference;

use alloc::vec;
use alloc::vec::Vec;

pub use config::{BankSampling, EcbScale, Mixer, TrainConfig};
pub use data::{
    labeled_views, stack, unlabeled_views, Draw, EpochSampler, SPLIT_LABELED, SPLIT_UNLABELED,
};
pub use losses::{
    bem_losses, logit_adjust, pseudo_label, LossInputs, LossOutput, PastedTarget, PseudoLabels,
};
pub use mixing::{cutmix_batch, cutmix_with, mixup_batch, mixup_with, InBatchMix};
pub use reference::fixmatch_reference_totals;

use crate::balance::{
    batch_class_entropy, entropy_masks, sample_entropy, ClassBalanceState, Scope,
};
use crate::cammix::{cammix_batch, MixOutcome, MixSource, PasteMode};
use crate::error::{contract, Error, Result};
use crate::evalkit::{self, LossBreakdown, MetricsRow};
use crate::mixbank::{BankEntry, MixBank};
use crate::rng::{derive, rng_from, Streams};
use crate::synthdata::SynthData;
use crate::tensor::Tensor4;
use crate::tinynn::{self, BackboneConfig, BackboneParams, ForwardCache, OptimizerState};
use crate::Origin;

/// Statistics accumulated between two evaluations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Window {
    pub steps: usize,
    /// Unlabeled samples seen.
    pub samples: usize,
    pub entropy_sum: f64,
    /// Samples whose entropy mask put them on the low-entropy path.
    pub low_entropy: usize,
    /// Samples above the confidence threshold.
    pub confident: usize,
    pub lambda_sum: f64,
    /// Confident pseudo labels per class.
    pub pseudo_counts: Vec<usize>,
    /// Loss and learning rate of the latest step.
    pub last_loss: LossBreakdown,
    pub last_lr: f32,
}

/// Everything that evolves during training; together with the config and
/// the data it determines the rest of the run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: BackboneParams,
    pub opt: OptimizerState,
    pub balance: ClassBalanceState,
    pub bank: MixBank,
    pub labeled_order: EpochSampler,
    pub unlabeled_order: EpochSampler,
    /// Completed steps.
    pub iteration: usize,
    pub window: Window,
}

impl TrainState {
    /// Fresh state for `cfg` on `data`, with all randomness derived from
    /// `cfg.seed`.
    pub fn init(cfg: &TrainConfig, data: &SynthData) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.num_classes();
        contract!(
            data.labeled.num_classes == c,
            "dataset has {} classes, config {c}",
            data.labeled.num_classes
        );
        contract!(!data.labeled.is_empty(), "empty labeled split");
        let streams = Streams::new(cfg.seed);
        let size = data.labeled.images[0].height;
        let config = BackboneConfig::reference(c).with_image_size(size);
        let params = BackboneParams::init(config, &mut rng_from(streams.init));
        let opt = OptimizerState::new(
            &params,
            cfg.learning_rate,
            cfg.momentum,
            cfg.total_iterations,
        )?;
        Ok(TrainState {
            opt,
            params,
            balance: ClassBalanceState::new(data.labeled.class_counts(), data.unlabeled.len()),
            bank: MixBank::new(c, cfg.bank_capacity),
            labeled_order: EpochSampler::new(
                data.labeled.len(),
                order_seed(&streams, SPLIT_LABELED),
            ),
            unlabeled_order: EpochSampler::new(
                data.unlabeled.len(),
                order_seed(&streams, SPLIT_UNLABELED),
            ),
            iteration: 0,
            window: Window {
                pseudo_counts: vec![0; c],
                ..Window::default()
            },
        })
    }
}

pub(crate) fn order_seed(streams: &Streams, split: u64) -> u64 {
    derive(streams.order, &[split])
}

/// Iterations spent before the unlabeled estimators start:
/// `ceil(warmup_epochs * M / B)`.
pub fn warmup_iterations(cfg: &TrainConfig, unlabeled_len: usize) -> usize {
    (cfg.balance.warmup_epochs * unlabeled_len).div_ceil(cfg.batch_size)
}

/// `g += wd * p` for every parameter.
pub fn apply_weight_decay(grads: &mut BackboneParams, params: &BackboneParams, wd: f32) {
    if wd == 0.0 {
        return;
    }
    for ((_, g), (_, p)) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi += wd * pi;
        }
    }
}

/// Per-step log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Completed steps including this one.
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub learning_rate: f32,
    pub warmed_up: bool,
    /// Fraction of the unlabeled batch with entropy mask `M_l = 1` (0 before
    /// the entropy threshold exists).
    pub low_entropy_fraction: f64,
    /// Fraction of the unlabeled batch above the confidence threshold.
    pub mask_rate: f64,
    pub mean_entropy: f64,
    pub labeled_sources: usize,
    pub unlabeled_sources: usize,
    pub cam_fallbacks: usize,
}

/// The images of one mixing step, for debug dumps.
#[derive(Clone, Debug)]
pub struct MixTrace {
    pub destinations: Tensor4,
    pub mixed: Tensor4,
    pub sources: Vec<Option<MixSource>>,
    pub outcomes: Vec<Option<MixOutcome>>,
}

/// Output of a complete run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub steps: Vec<StepRecord>,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a SynthData,
    streams: Streams,
    warmup: usize,
    labeled_prior: Vec<f64>,
    state: TrainState,
    spare: [Option<ForwardCache>; 2],
}

struct MixPlan {
    images: Tensor4,
    lambda: f32,
    pasted: Vec<Option<PastedTarget>>,
    high: Vec<bool>,
    low: Vec<bool>,
    class_weights: Vec<f32>,
    cam_fallbacks: usize,
    trace: Option<MixTrace>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a SynthData) -> Result<Self> {
        let state = TrainState::init(&cfg, data)?;
        Self::resume(cfg, data, state)
    }

    /// Continues from a saved state.
    pub fn resume(cfg: TrainConfig, data: &'a SynthData, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        let counts = data.labeled.class_counts();
        let total: usize = counts.iter().sum();
        let labeled_prior = counts.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Trainer {
            streams: Streams::new(cfg.seed),
            warmup: warmup_iterations(&cfg, data.unlabeled.len()),
            labeled_prior,
            cfg,
            data,
            state,
            spare: [None, None],
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn warmup_iterations(&self) -> usize {
        self.warmup
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.cfg.total_iterations
    }

    /// Whether an evaluation is due after the latest step.
    pub fn evaluation_due(&self) -> bool {
        let t = self.state.iteration;
        t > 0 && (t % self.cfg.eval_every == 0 || t == self.cfg.total_iterations)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        Ok(self.step_traced(false)?.0)
    }

    /// One training step, optionally returning the mixing images.
    pub fn step_traced(&mut self, trace: bool) -> Result<(StepRecord, Option<MixTrace>)> {
        let cfg = &self.cfg;
        let st = &mut self.state;
        let c = cfg.num_classes();
        let b = cfg.batch_size;
        let t = st.iteration;
        contract!(
            t < cfg.total_iterations,
            "run already finished at {t} iterations"
        );
        let warmed = t >= self.warmup;

        // weak and strong views
        let ldraws = st.labeled_order.next_batch(b);
        let udraws = st.unlabeled_order.next_batch(b);
        contract!(udraws.len() == b, "empty unlabeled split");
        let (xw_images, labels) = labeled_views(&self.data.labeled, &ldraws, self.streams.augment);
        let (uw_images, us_images) =
            unlabeled_views(&self.data.unlabeled, &udraws, self.streams.augment);
        let xw = stack(&xw_images)?;
        let uw = stack(&uw_images)?;
        let us = stack(&us_images)?;

        // pseudo labels and sample entropies from the weak views
        let out_l =
            tinynn::forward_recycling(&st.params, &xw, self.spare[0].take().unwrap_or_default())?;
        let out_uw = tinynn::forward_inference(&st.params, &uw)?;
        let pseudo = pseudo_label(&out_uw.probs, c, cfg.tau);
        let entropies: Vec<f64> = out_uw.probs.chunks_exact(c).map(sample_entropy).collect();

        // training status
        if cfg.bem {
            for (image, &y) in xw_images.iter().zip(&labels) {
                let entry = BankEntry {
                    image: image.clone(),
                    class: y,
                    confidence: 1.0,
                };
                st.bank.push(entry, Origin::Labeled)?;
            }
        }
        if warmed {
            if cfg.bem {
                for (m, image) in uw_images.iter().enumerate() {
                    if cfg.bank_requires_confidence && !pseudo.mask[m] {
                        continue;
                    }
                    let entry = BankEntry {
                        image: image.clone(),
                        class: pseudo.classes[m],
                        confidence: pseudo.confidence[m],
                    };
                    st.bank.push(entry, Origin::Unlabeled)?;
                }
            }
            let bal = &cfg.balance;
            st.balance
                .update_unlabeled_dist(&pseudo.classes, bal.lambda_d);
            let (means_x, _) = batch_class_entropy(&out_l.probs, c, &labels);
            st.balance
                .update_entropy_ema(&means_x, Origin::Labeled, bal.lambda_e);
            let (means_u, _) = batch_class_entropy(&out_uw.probs, c, &pseudo.classes);
            st.balance
                .update_entropy_ema(&means_u, Origin::Unlabeled, bal.lambda_e);
            st.balance.update_tau_e(&entropies, bal.lambda_tau);
        }
        // before the threshold exists every sample counts as high-entropy
        let entropy_low: Vec<bool> = if st.balance.tau_initialized {
            entropies
                .iter()
                .map(|&e| entropy_masks(e, st.balance.tau_e).1)
                .collect()
        } else {
            vec![false; b]
        };

        let mut mix_rng = rng_from(derive(self.streams.mixer, &[t as u64]));
        let plan = if cfg.bem {
            let probs = st.balance.sampling_probs(&cfg.balance)?;
            let (high, low): (Vec<bool>, Vec<bool>) = if cfg.esm {
                entropy_low.iter().map(|&l| (!l, l)).unzip()
            } else {
                (vec![false; b], vec![true; b])
            };
            let class_probs = match cfg.sampling {
                BankSampling::Balanced => probs.s_hat.clone(),
                BankSampling::Random => st.balance.data_frequencies(),
            };
            let mut bank_rng = rng_from(derive(self.streams.bank, &[t as u64]));
            let sources: Vec<Option<MixSource>> = high
                .iter()
                .map(|&h| {
                    let origin = if h {
                        Origin::Labeled
                    } else {
                        Origin::Unlabeled
                    };
                    st.bank
                        .draw(&class_probs, origin, &mut bank_rng)
                        .map(|e| MixSource {
                            image: e.image.clone(),
                            class: e.class,
                            confidence: e.confidence,
                            origin,
                        })
                })
                .collect();
            let mode = match cfg.mixer {
                Mixer::CamMix => PasteMode::Cam,
                Mixer::CutMix => PasteMode::RandomBox,
                Mixer::MixUp => PasteMode::Blend,
                Mixer::None => return Err(Error::Config("mixer: BEM needs a bank mixer".into())),
            };
            let mixed = cammix_batch(&us, &sources, &st.params, cfg.cammix, mode, &mut mix_rng)?;
            let pasted = mixed
                .outcomes
                .iter()
                .map(|o| {
                    o.as_ref().map(|o| PastedTarget {
                        class: o.source_class,
                        origin: o.source_origin,
                        confidence: o.source_confidence,
                    })
                })
                .collect();
            let class_weights = if cfg.ecb {
                let scale = match cfg.ecb_scale {
                    EcbScale::Raw => 1.0,
                    EcbScale::TimesC => c as f64,
                };
                probs.s_hat_u.iter().map(|&w| (w * scale) as f32).collect()
            } else {
                vec![1.0; c]
            };
            let cam_fallbacks = mixed
                .outcomes
                .iter()
                .flatten()
                .filter(|o| o.used_fallback)
                .count();
            let trace = trace.then(|| MixTrace {
                destinations: us.clone(),
                mixed: mixed.images.clone(),
                sources,
                outcomes: mixed.outcomes.clone(),
            });
            MixPlan {
                images: mixed.images,
                lambda: mixed.lambda,
                pasted,
                high,
                low,
                class_weights,
                cam_fallbacks,
                trace,
            }
        } else {
            // without BEM every sample takes the unlabeled-source path
            let in_batch = match cfg.mixer {
                Mixer::None => None,
                Mixer::MixUp => Some(mixup_batch(&us, &mut mix_rng)?),
                Mixer::CutMix => Some(cutmix_batch(&us, &mut mix_rng)?),
                Mixer::CamMix => return Err(Error::Config("mixer: cammix needs bem=true".into())),
            };
            let (images, lambda, pasted) = match in_batch {
                None => (us, 1.0, vec![None; b]),
                Some(mix) => {
                    let pasted = mix
                        .partner
                        .iter()
                        .map(|&p| {
                            Some(PastedTarget {
                                class: pseudo.classes[p],
                                origin: Origin::Unlabeled,
                                confidence: pseudo.confidence[p],
                            })
                        })
                        .collect();
                    (mix.images, mix.lambda, pasted)
                }
            };
            MixPlan {
                images,
                lambda,
                pasted,
                high: vec![false; b],
                low: vec![true; b],
                class_weights: vec![1.0; c],
                cam_fallbacks: 0,
                trace: None,
            }
        };

        // losses and update
        let out_u = tinynn::forward_recycling(
            &st.params,
            &plan.images,
            self.spare[1].take().unwrap_or_default(),
        )?;
        let adjusted;
        let labeled_logits = if cfg.la {
            adjusted = logit_adjust(&out_l.logits, &self.labeled_prior, cfg.tau_la)?;
            &adjusted
        } else {
            &out_l.logits
        };
        let loss = bem_losses(&LossInputs {
            classes: c,
            labeled_logits,
            labels: &labels,
            mixed_logits: &out_u.logits,
            pseudo: &pseudo,
            high: &plan.high,
            low: &plan.low,
            pasted: &plan.pasted,
            class_weights: &plan.class_weights,
            lambda: plan.lambda,
            tau: cfg.tau,
        })?;
        if !loss.breakdown.total.is_finite() {
            return Err(Error::NonFinite {
                layer: "loss".into(),
            });
        }
        let mut grads = tinynn::backward(&st.params, &out_l, &loss.labeled_grads)?;
        grads.add_assign(&tinynn::backward(&st.params, &out_u, &loss.mixed_grads)?);
        apply_weight_decay(&mut grads, &st.params, cfg.weight_decay);
        let lr = tinynn::sgd_step(&mut st.params, &grads, &mut st.opt)?;
        let (mut out_l, mut out_u) = (out_l, out_u);
        self.spare = [out_l.take_cache(), out_u.take_cache()];
        st.iteration += 1;

        // bookkeeping
        let low_count = entropy_low.iter().filter(|&&l| l).count();
        let confident = pseudo.mask.iter().filter(|&&m| m).count();
        let w = &mut st.window;
        w.steps += 1;
        w.samples += b;
        w.entropy_sum += entropies.iter().sum::<f64>();
        w.low_entropy += low_count;
        w.confident += confident;
        w.lambda_sum += plan.lambda as f64;
        for (&q, &m) in pseudo.classes.iter().zip(&pseudo.mask) {
            if m {
                w.pseudo_counts[q] += 1;
            }
        }
        w.last_loss = loss.breakdown;
        w.last_lr = lr;
        let count_origin = |o: Origin| {
            plan.pasted
                .iter()
                .filter(|p| p.is_some_and(|p| p.origin == o))
                .count()
        };
        let record = StepRecord {
            iteration: st.iteration,
            loss: loss.breakdown,
            learning_rate: lr,
            warmed_up: warmed,
            low_entropy_fraction: low_count as f64 / b as f64,
            mask_rate: confident as f64 / b as f64,
            mean_entropy: entropies.iter().sum::<f64>() / b as f64,
            labeled_sources: if cfg.bem {
                count_origin(Origin::Labeled)
            } else {
                0
            },
            unlabeled_sources: count_origin(Origin::Unlabeled),
            cam_fallbacks: plan.cam_fallbacks,
        };
        Ok((record, plan.trace))
    }

    /// Evaluates on the test split and closes the statistics window.
    pub fn evaluate(&mut self) -> Result<MetricsRow> {
        let st = &mut self.state;
        let c = self.cfg.num_classes();
        let ev = evalkit::evaluate(&st.params, &self.data.test)?;
        let groups =
            evalkit::group_accuracy(&ev.per_class_accuracy, &self.data.labeled.class_counts())?;
        let w = core::mem::replace(
            &mut st.window,
            Window {
                pseudo_counts: vec![0; c],
                ..Window::default()
            },
        );
        let per_sample = |v: f64| {
            if w.samples == 0 {
                0.0
            } else {
                v / w.samples as f64
            }
        };
        Ok(MetricsRow {
            iteration: st.iteration,
            test_accuracy: ev.accuracy,
            per_class_accuracy: ev.per_class_accuracy,
            groups,
            mean_pseudo_entropy: per_sample(w.entropy_sum),
            per_class_entropy: st.balance.class_entropies(Scope::UnlabeledOnly),
            per_class_pseudo_count: w.pseudo_counts,
            unlabeled_dist: if st.balance.d_initialized {
                st.balance.d_u.clone()
            } else {
                vec![0.0; c]
            },
            lambda: if w.steps == 0 {
                0.0
            } else {
                w.lambda_sum / w.steps as f64
            },
            low_entropy_fraction: per_sample(w.low_entropy as f64),
            mask_rate: per_sample(w.confident as f64),
            learning_rate: w.last_lr as f64,
            loss: w.last_loss,
        })
    }

    /// Trains to completion, evaluating on schedule. `observe` sees every
    /// step record and every metrics row as they are produced.
    pub fn run(
        &mut self,
        mut observe: impl FnMut(&StepRecord, Option<&MetricsRow>),
    ) -> Result<TrainOutcome> {
        let mut outcome = TrainOutcome {
            rows: Vec::new(),
            steps: Vec::new(),
        };
        while !self.is_finished() {
            let record = self.step()?;
            let row = if self.evaluation_due() {
                Some(self.evaluate()?)
            } else {
                None
            };
            observe(&record, row.as_ref());
            outcome.steps.push(record);
            outcome.rows.extend(row);
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests;
