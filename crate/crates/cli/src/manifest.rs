//! The run manifest and its flat `key=value` text format.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Unknown keys, malformed values and out-of-range values are
//! rejected with the key and line number. Flags are applied on top of the
//! file. [`RunManifest::to_text`] writes every key, and parsing that text
//! yields an equal manifest.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bem_core::learner::{BankSampling, EcbScale, Mixer, TrainConfig};
use bem_core::synthdata::DatasetSpec;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Compare,
    Ablate,
    Selfcheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Compare => "compare",
            Mode::Ablate => "ablate",
            Mode::Selfcheck => "selfcheck",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mode::Train, Mode::Compare, Mode::Ablate, Mode::Selfcheck]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// Everything that determines a run. The per-run seeds of `dataset` and
/// `train` are placeholders; each entry of `seeds` fills them in.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub dump_mixes: bool,
    pub dump_dataset: bool,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

/// Name of the manifest snapshot written into every output directory.
pub const SNAPSHOT_FILE: &str = "manifest.cfg";

impl Default for RunManifest {
    fn default() -> Self {
        let dataset = DatasetSpec::reference(0);
        RunManifest {
            mode: Mode::Train,
            seeds: vec![0],
            out: PathBuf::from("bem-out"),
            dump_mixes: false,
            dump_dataset: false,
            train: TrainConfig::new(dataset.num_classes, 0),
            dataset,
        }
    }
}

fn parse_value<T: FromStr>(value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{value}` is not a valid {what}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("`{value}` is not a boolean (true/false)")),
    }
}

fn checked<T: Copy + Display>(v: T, ok: bool, range: &str) -> Result<T, String> {
    if ok {
        Ok(v)
    } else {
        Err(format!("{v} is outside {range}"))
    }
}

fn real(value: &str) -> Result<f64, String> {
    let v: f64 = parse_value(value, "number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{value}` is not finite"))
    }
}

fn real32(value: &str) -> Result<f32, String> {
    let v: f32 = parse_value(value, "number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{value}` is not finite"))
    }
}

fn count(value: &str) -> Result<usize, String> {
    parse_value(value, "non-negative integer")
}

fn positive(value: &str) -> Result<usize, String> {
    let v = count(value)?;
    checked(v, v >= 1, "[1, inf)")
}

fn unit_open(value: &str) -> Result<f64, String> {
    let v = real(value)?;
    checked(v, v > 0.0 && v < 1.0, "(0, 1)")
}

/// Every key, in snapshot order.
pub const KEYS: [&str; 37] = [
    "mode",
    "seeds",
    "out",
    "dump_mixes",
    "dump_dataset",
    "num_classes",
    "n1",
    "m1",
    "gamma_l",
    "gamma_u",
    "image_size",
    "test_per_class",
    "batch_size",
    "tau",
    "total_iterations",
    "learning_rate",
    "momentum",
    "weight_decay",
    "eval_every",
    "mixer",
    "bem",
    "la",
    "tau_la",
    "bank_capacity",
    "tau_c",
    "tau_a",
    "ecb_scale",
    "sampling",
    "esm",
    "ecb",
    "bank_requires_confidence",
    "beta",
    "lambda_d",
    "lambda_e",
    "lambda_tau",
    "alpha",
    "warmup_epochs",
];

impl RunManifest {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let d = &mut self.dataset;
        let t = &mut self.train;
        match key {
            "mode" => {
                self.mode =
                    Mode::parse(value).ok_or("expected train, compare, ablate or selfcheck")?
            }
            "seeds" => {
                let seeds: Result<Vec<u64>, String> = value
                    .split(',')
                    .map(|s| parse_value(s.trim(), "seed (unsigned integer)"))
                    .collect();
                let seeds = seeds?;
                if seeds.is_empty() {
                    return Err("at least one seed is required".into());
                }
                self.seeds = seeds;
            }
            "out" => {
                if value.is_empty() {
                    return Err("output directory must not be empty".into());
                }
                self.out = PathBuf::from(value);
            }
            "dump_mixes" => self.dump_mixes = parse_bool(value)?,
            "dump_dataset" => self.dump_dataset = parse_bool(value)?,
            "num_classes" => {
                let v = count(value)?;
                let c = checked(v, (2..=10).contains(&v), "[2, 10]")?;
                d.num_classes = c;
                t.balance.num_classes = c;
            }
            "n1" => d.n1 = positive(value)?,
            "m1" => d.m1 = count(value)?,
            "gamma_l" => {
                let v = real(value)?;
                d.gamma_l = checked(v, v >= 1.0, "[1, inf)")?;
            }
            "gamma_u" => {
                let v = real(value)?;
                d.gamma_u = checked(v, v > 0.0, "(0, inf)")?;
            }
            "image_size" => {
                let v = count(value)?;
                d.image_size = checked(v, v >= 16 && v % 4 == 0, "multiples of 4 from 16")?;
            }
            "test_per_class" => d.test_per_class = positive(value)?,
            "batch_size" => t.batch_size = positive(value)?,
            "tau" => {
                let v = real32(value)?;
                t.tau = checked(v, v > 0.0 && v < 1.0, "(0, 1)")?;
            }
            "total_iterations" => t.total_iterations = positive(value)?,
            "learning_rate" => {
                let v = real32(value)?;
                t.learning_rate = checked(v, v > 0.0, "(0, inf)")?;
            }
            "momentum" => {
                let v = real32(value)?;
                t.momentum = checked(v, (0.0..1.0).contains(&v), "[0, 1)")?;
            }
            "weight_decay" => {
                let v = real32(value)?;
                t.weight_decay = checked(v, v >= 0.0, "[0, inf)")?;
            }
            "eval_every" => t.eval_every = positive(value)?,
            "mixer" => {
                t.mixer = Mixer::parse(value).ok_or("expected none, mixup, cutmix or cammix")?
            }
            "bem" => t.bem = parse_bool(value)?,
            "la" => t.la = parse_bool(value)?,
            "tau_la" => {
                let v = real32(value)?;
                t.tau_la = checked(v, v >= 0.0, "[0, inf)")?;
            }
            "bank_capacity" => t.bank_capacity = positive(value)?,
            "tau_c" => {
                let v = real32(value)?;
                t.cammix.tau_c = checked(v, (0.0..=1.0).contains(&v), "[0, 1]")?;
            }
            "tau_a" => {
                let v = real32(value)?;
                t.cammix.tau_a = checked(v, v > 0.0 && v <= 0.5, "(0, 0.5]")?;
            }
            "ecb_scale" => t.ecb_scale = EcbScale::parse(value).ok_or("expected raw or times_C")?,
            "sampling" => {
                t.sampling = BankSampling::parse(value).ok_or("expected balanced or random")?
            }
            "esm" => t.esm = parse_bool(value)?,
            "ecb" => t.ecb = parse_bool(value)?,
            "bank_requires_confidence" => t.bank_requires_confidence = parse_bool(value)?,
            "beta" => {
                let v = real(value)?;
                t.balance.beta = checked(v, (0.0..1.0).contains(&v), "[0, 1)")?;
            }
            "lambda_d" => t.balance.lambda_d = unit_open(value)?,
            "lambda_e" => t.balance.lambda_e = unit_open(value)?,
            "lambda_tau" => t.balance.lambda_tau = unit_open(value)?,
            "alpha" => {
                let v = real(value)?;
                t.balance.alpha = checked(v, (0.0..=1.0).contains(&v), "[0, 1]")?;
            }
            "warmup_epochs" => t.balance.warmup_epochs = count(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// The textual value of `key`.
    pub fn get(&self, key: &str) -> Option<String> {
        let d = &self.dataset;
        let t = &self.train;
        let b = &t.balance;
        Some(match key {
            "mode" => self.mode.name().into(),
            "seeds" => self
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "out" => self.out.display().to_string(),
            "dump_mixes" => self.dump_mixes.to_string(),
            "dump_dataset" => self.dump_dataset.to_string(),
            "num_classes" => d.num_classes.to_string(),
            "n1" => d.n1.to_string(),
            "m1" => d.m1.to_string(),
            "gamma_l" => d.gamma_l.to_string(),
            "gamma_u" => d.gamma_u.to_string(),
            "image_size" => d.image_size.to_string(),
            "test_per_class" => d.test_per_class.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "tau" => t.tau.to_string(),
            "total_iterations" => t.total_iterations.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "mixer" => t.mixer.name().into(),
            "bem" => t.bem.to_string(),
            "la" => t.la.to_string(),
            "tau_la" => t.tau_la.to_string(),
            "bank_capacity" => t.bank_capacity.to_string(),
            "tau_c" => t.cammix.tau_c.to_string(),
            "tau_a" => t.cammix.tau_a.to_string(),
            "ecb_scale" => t.ecb_scale.name().into(),
            "sampling" => t.sampling.name().into(),
            "esm" => t.esm.to_string(),
            "ecb" => t.ecb.to_string(),
            "bank_requires_confidence" => t.bank_requires_confidence.to_string(),
            "beta" => b.beta.to_string(),
            "lambda_d" => b.lambda_d.to_string(),
            "lambda_e" => b.lambda_e.to_string(),
            "lambda_tau" => b.lambda_tau.to_string(),
            "alpha" => b.alpha.to_string(),
            "warmup_epochs" => b.warmup_epochs.to_string(),
            _ => return None,
        })
    }

    /// Applies a config file's text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = Some(i + 1);
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config {
                    line: lineno,
                    key: None,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = key.trim();
            self.set(key, value.trim())
                .map_err(|m| CliError::config(lineno, key, m))?;
        }
        Ok(())
    }

    /// Applies a command-line override.
    pub fn apply_flag(&mut self, key: &str, value: &str) -> CliResult<()> {
        self.set(key, value)
            .map_err(|m| CliError::config(None, key, m))
    }

    /// Defaults overlaid with `text`, then validated.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut m = RunManifest::default();
        m.apply_text(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Cross-field validation through the core config checks.
    pub fn validate(&self) -> CliResult<()> {
        let core = |e: bem_core::Error| CliError::Config {
            line: None,
            key: None,
            message: match e {
                bem_core::Error::Config(m) => m,
                other => other.to_string(),
            },
        };
        self.dataset.validate().map_err(core)?;
        self.train.validate().map_err(core)
    }

    /// Every key as `key=value`, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            s.push_str(key);
            s.push('=');
            s.push_str(&self.get(key).expect("every listed key has a value"));
            s.push('\n');
        }
        s
    }

    /// Dataset spec of one seed of the run.
    pub fn dataset_for(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            seed: bem_core::rng::Streams::new(seed).dataset,
            ..self.dataset
        }
    }

    /// Training config of one seed of the run.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}
