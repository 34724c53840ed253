use alloc::format;
use alloc::string::String;

use crate::balance::BalanceConfig;
use crate::cammix::CamMixConfig;
use crate::error::{Error, Result};
use crate::mixbank::DEFAULT_CAPACITY;

/// How the strong unlabeled batch is mixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixer {
    None,
    MixUp,
    CutMix,
    CamMix,
}

impl Mixer {
    pub const ALL: [Mixer; 4] = [Mixer::None, Mixer::MixUp, Mixer::CutMix, Mixer::CamMix];

    pub fn name(self) -> &'static str {
        match self {
            Mixer::None => "none",
            Mixer::MixUp => "mixup",
            Mixer::CutMix => "cutmix",
            Mixer::CamMix => "cammix",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Scale of the per-class unsupervised loss weights `ŝ^u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EcbScale {
    /// Use `ŝ^u` as is (weights average `1/C`).
    Raw,
    /// Multiply by `C` (weights average 1, matching the unweighted loss).
    TimesC,
}

impl EcbScale {
    pub fn name(self) -> &'static str {
        match self {
            EcbScale::Raw => "raw",
            EcbScale::TimesC => "times_C",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [EcbScale::Raw, EcbScale::TimesC]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// Class distribution used to pick the bank bucket of a draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BankSampling {
    /// The fused class-balanced probabilities `ŝ`.
    Balanced,
    /// The observed (long-tailed) data frequencies.
    Random,
}

impl BankSampling {
    pub fn name(self) -> &'static str {
        match self {
            BankSampling::Balanced => "balanced",
            BankSampling::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [BankSampling::Balanced, BankSampling::Random]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Pseudo-label confidence threshold.
    pub tau: f32,
    pub total_iterations: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub eval_every: usize,
    pub mixer: Mixer,
    pub bem: bool,
    /// Logit adjustment of the supervised loss.
    pub la: bool,
    pub tau_la: f32,
    pub balance: BalanceConfig,
    pub bank_capacity: usize,
    pub cammix: CamMixConfig,
    pub ecb_scale: EcbScale,
    pub sampling: BankSampling,
    /// Entropy-based source selection; off sends every sample to an
    /// unlabeled source.
    pub esm: bool,
    /// Entropy-based class-balanced loss weights; off uses weight 1.
    pub ecb: bool,
    /// Only confident pseudo-labeled samples enter the bank.
    pub bank_requires_confidence: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults with BEM (CamMix) enabled.
    pub fn new(num_classes: usize, seed: u64) -> Self {
        TrainConfig {
            batch_size: 64,
            tau: 0.95,
            total_iterations: 5000,
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            eval_every: 250,
            mixer: Mixer::CamMix,
            bem: true,
            la: false,
            tau_la: 1.0,
            balance: BalanceConfig::new(num_classes),
            bank_capacity: DEFAULT_CAPACITY,
            cammix: CamMixConfig::default(),
            ecb_scale: EcbScale::TimesC,
            sampling: BankSampling::Balanced,
            esm: true,
            ecb: true,
            bank_requires_confidence: true,
            seed,
        }
    }

    /// Plain FixMatch: no BEM, no mixing.
    pub fn fixmatch(num_classes: usize, seed: u64) -> Self {
        TrainConfig {
            mixer: Mixer::None,
            bem: false,
            ..Self::new(num_classes, seed)
        }
    }

    pub fn num_classes(&self) -> usize {
        self.balance.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, msg: String| Err(Error::Config(format!("{name}: {msg}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau", format!("{} is outside (0, 1)", self.tau));
        }
        if self.total_iterations == 0 {
            return bad("total_iterations", "must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                format!("{} must be positive", self.learning_rate),
            );
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("{} is outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(
                "weight_decay",
                format!("{} must be non-negative", self.weight_decay),
            );
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be positive".into());
        }
        if !(self.tau_la >= 0.0 && self.tau_la.is_finite()) {
            return bad("tau_la", format!("{} must be non-negative", self.tau_la));
        }
        if !(self.cammix.tau_c >= 0.0 && self.cammix.tau_c <= 1.0) {
            return bad("tau_c", format!("{} is outside [0, 1]", self.cammix.tau_c));
        }
        if !(self.cammix.tau_a > 0.0 && self.cammix.tau_a <= 0.5) {
            return bad(
                "tau_a",
                format!("{} is outside (0, 0.5]", self.cammix.tau_a),
            );
        }
        if self.bem && self.bank_capacity == 0 {
            return bad(
                "bank_capacity",
                "must be positive when BEM is enabled".into(),
            );
        }
        if self.bem && self.mixer == Mixer::None {
            return bad(
                "mixer",
                "BEM needs a bank mixer (cammix, cutmix or mixup)".into(),
            );
        }
        if !self.bem && self.mixer == Mixer::CamMix {
            return bad(
                "mixer",
                "cammix draws from the mix bank and needs bem=true".into(),
            );
        }
        if !self.bem && self.mixer != Mixer::None && self.batch_size < 2 {
            return bad(
                "batch_size",
                "in-batch mixing needs at least 2 samples".into(),
            );
        }
        self.balance.validate()
    }
}
