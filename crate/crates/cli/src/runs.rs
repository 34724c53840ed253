//! Experiment drivers: single runs, baseline-vs-BEM comparisons and the
//! ablation sweep, each over the manifest's seed list.

use std::path::{Path, PathBuf};

use bem_core::evalkit::{mean, std_dev, MetricsRow};
use bem_core::learner::{BankSampling, Mixer, StepRecord, TrainConfig, Trainer};
use bem_core::synthdata::{generate, DatasetSpec, LabeledSet, SynthData};

use crate::error::{CliError, CliResult};
use crate::formats::{save_checkpoint, save_dataset};
use crate::manifest::{Mode, RunManifest, SNAPSHOT_FILE};
use crate::output::{
    create_dir, write_csv, write_metrics, write_mix_dump, write_steps, METRICS_FILE, STEPS_FILE,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bemc";
pub const COMPARE_FILE: &str = "compare.csv";
pub const ABLATE_FILE: &str = "ablate_summary.csv";
pub const RUNS_FILE: &str = "runs.csv";
/// Images per row in a mix dump.
pub const DUMP_COLUMNS: usize = 8;

/// A named transformation of the manifest's training config.
#[derive(Clone, Copy, Debug)]
pub struct Variant {
    pub name: &'static str,
    pub apply: fn(TrainConfig) -> TrainConfig,
}

fn full_bem(cfg: TrainConfig) -> TrainConfig {
    let mixer = if cfg.mixer == Mixer::None {
        Mixer::CamMix
    } else {
        cfg.mixer
    };
    TrainConfig {
        bem: true,
        mixer,
        ..cfg
    }
}

fn fixmatch(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        bem: false,
        mixer: Mixer::None,
        ..cfg
    }
}

pub const FULL: Variant = Variant {
    name: "full",
    apply: full_bem,
};

pub const FIXMATCH: Variant = Variant {
    name: "fixmatch",
    apply: fixmatch,
};

/// The `compare` pair: the plain baseline and the BEM-enabled learner.
pub const COMPARE_VARIANTS: [Variant; 2] = [
    FIXMATCH,
    Variant {
        name: "bem",
        apply: full_bem,
    },
];

/// The `ablate` preset, in summary-table order.
pub const ABLATION_VARIANTS: [Variant; 9] = [
    FULL,
    Variant {
        name: "cammix_to_cutmix",
        apply: |c| TrainConfig {
            mixer: Mixer::CutMix,
            ..full_bem(c)
        },
    },
    Variant {
        name: "cbmb_random",
        apply: |c| TrainConfig {
            sampling: BankSampling::Random,
            ..full_bem(c)
        },
    },
    Variant {
        name: "ess_off",
        apply: |c| {
            let mut c = full_bem(c);
            c.balance.alpha = 1.0;
            c
        },
    },
    Variant {
        name: "esm_off",
        apply: |c| TrainConfig {
            esm: false,
            ..full_bem(c)
        },
    },
    Variant {
        name: "ecb_off",
        apply: |c| TrainConfig {
            ecb: false,
            ..full_bem(c)
        },
    },
    FIXMATCH,
    Variant {
        name: "mixup",
        apply: |c| TrainConfig {
            mixer: Mixer::MixUp,
            ..fixmatch(c)
        },
    },
    Variant {
        name: "cutmix",
        apply: |c| TrainConfig {
            mixer: Mixer::CutMix,
            ..fixmatch(c)
        },
    },
];

/// Everything a finished run reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub warmup_iterations: usize,
    pub rows: Vec<MetricsRow>,
    pub steps: Vec<StepRecord>,
    /// Distribution of the hidden unlabeled labels.
    pub true_unlabeled_dist: Vec<f64>,
}

impl RunSummary {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows
            .last()
            .expect("a finished run has at least one evaluation")
    }

    /// Population standard deviation of the per-class EMA entropy at the
    /// final evaluation.
    pub fn final_entropy_std(&self) -> f64 {
        std_dev(&self.final_row().per_class_entropy)
    }

    /// L1 distance between the final EMA unlabeled distribution and the truth.
    pub fn final_dist_l1(&self) -> f64 {
        let d = &self.final_row().unlabeled_dist;
        d.iter()
            .zip(&self.true_unlabeled_dist)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Mean low-entropy fraction over consecutive windows of `window`
    /// post-warm-up steps (a trailing partial window is kept).
    pub fn low_entropy_windows(&self, window: usize) -> Vec<f64> {
        let post: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.iteration > self.warmup_iterations)
            .map(|s| s.low_entropy_fraction)
            .collect();
        post.chunks(window.max(1)).map(mean).collect()
    }
}

/// Output options of one run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for this run's files; nothing is written when `None`.
    pub dir: Option<PathBuf>,
    pub dump_mixes: bool,
    pub dump_dataset: bool,
}

/// Generates the dataset of one seed.
pub fn dataset(spec: &DatasetSpec) -> CliResult<SynthData> {
    Ok(generate(spec)?)
}

/// Trains one configuration to completion. `progress` receives a line per
/// evaluation.
pub fn run_one(
    variant: &str,
    cfg: TrainConfig,
    data: &SynthData,
    opts: &RunOptions,
    manifest_text: &str,
    progress: &mut dyn FnMut(&str),
) -> CliResult<RunSummary> {
    let seed = cfg.seed;
    let classes = cfg.num_classes();
    if let Some(dir) = &opts.dir {
        create_dir(dir)?;
        if opts.dump_dataset {
            save_dataset(&dir.join("labeled.bemd"), &data.labeled)?;
            let unlabeled = LabeledSet {
                num_classes: classes,
                images: data.unlabeled.images.clone(),
                labels: data.hidden.labels.clone(),
            };
            save_dataset(&dir.join("unlabeled.bemd"), &unlabeled)?;
            save_dataset(&dir.join("test.bemd"), &data.test)?;
        }
        if opts.dump_mixes {
            create_dir(&dir.join("mixes"))?;
        }
    }
    let mut trainer = Trainer::new(cfg, data)?;
    let warmup = trainer.warmup_iterations();
    let eval_every = trainer.config().eval_every;
    let mut rows = Vec::new();
    let mut steps = Vec::new();
    while !trainer.is_finished() {
        let t = trainer.state().iteration;
        // the first step, the first step after warm-up, and one per evaluation period
        let dump = opts.dump_mixes && opts.dir.is_some() && (t == warmup || t % eval_every == 0);
        let (record, trace) = trainer.step_traced(dump)?;
        if let (Some(trace), Some(dir)) = (trace, &opts.dir) {
            write_mix_dump(
                &dir.join("mixes").join(format!("iter_{t:06}.ppm")),
                &trace,
                DUMP_COLUMNS,
            )?;
        }
        steps.push(record);
        if trainer.evaluation_due() {
            let row = trainer.evaluate()?;
            progress(&format!(
                "{variant} seed {seed} iter {}: accuracy {:.4} (few {:.4})",
                row.iteration, row.test_accuracy, row.groups.few
            ));
            rows.push(row);
        }
    }
    if let Some(dir) = &opts.dir {
        write_metrics(&dir.join(METRICS_FILE), classes, &rows)?;
        write_steps(&dir.join(STEPS_FILE), &steps)?;
        save_checkpoint(&dir.join(CHECKPOINT_FILE), trainer.state(), manifest_text)?;
    }
    Ok(RunSummary {
        variant: variant.to_string(),
        seed,
        warmup_iterations: warmup,
        rows,
        steps,
        true_unlabeled_dist: data.hidden.distribution(classes),
    })
}

fn seed_dir(root: &Path, variant: Option<&str>, seed: u64) -> PathBuf {
    let base = match variant {
        Some(v) => root.join(v),
        None => root.to_path_buf(),
    };
    base.join(format!("seed_{seed}"))
}

fn write_snapshot(m: &RunManifest) -> CliResult<()> {
    create_dir(&m.out)?;
    let path = m.out.join(SNAPSHOT_FILE);
    std::fs::write(&path, m.to_text()).map_err(|e| CliError::io(path, e))
}

/// Runs `variants` over every seed of the manifest. Each seed's dataset is
/// generated once and shared by its variants.
pub fn run_variants(
    m: &RunManifest,
    variants: &[Variant],
    write: bool,
    progress: &mut dyn FnMut(&str),
) -> CliResult<Vec<RunSummary>> {
    m.validate()?;
    for v in variants {
        (v.apply)(m.train.clone())
            .validate()
            .map_err(CliError::from)?;
    }
    if write {
        write_snapshot(m)?;
    }
    let text = m.to_text();
    let mut out = Vec::new();
    for &seed in &m.seeds {
        let data = dataset(&m.dataset_for(seed))?;
        for v in variants {
            let opts = RunOptions {
                dir: write
                    .then(|| seed_dir(&m.out, (m.mode != Mode::Train).then_some(v.name), seed)),
                dump_mixes: m.dump_mixes,
                dump_dataset: m.dump_dataset,
            };
            out.push(run_one(
                v.name,
                (v.apply)(m.train_for(seed)),
                &data,
                &opts,
                &text,
                progress,
            )?);
        }
    }
    Ok(out)
}

/// Per-variant aggregate over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantStats {
    pub variant: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_few: f64,
    pub std_few: f64,
    pub mean_entropy_std: f64,
}

/// Aggregates runs by variant, in first-appearance order.
pub fn aggregate(runs: &[RunSummary]) -> Vec<VariantStats> {
    let mut names: Vec<&str> = Vec::new();
    for r in runs {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let of: Vec<&RunSummary> = runs.iter().filter(|r| r.variant == name).collect();
            let acc: Vec<f64> = of.iter().map(|r| r.final_row().test_accuracy).collect();
            let few: Vec<f64> = of.iter().map(|r| r.final_row().groups.few).collect();
            let ent: Vec<f64> = of.iter().map(|r| r.final_entropy_std()).collect();
            VariantStats {
                variant: name.to_string(),
                runs: of.len(),
                mean_accuracy: mean(&acc),
                std_accuracy: std_dev(&acc),
                mean_few: mean(&few),
                std_few: std_dev(&few),
                mean_entropy_std: mean(&ent),
            }
        })
        .collect()
}

fn real(v: f64) -> String {
    format!("{v:.9}")
}

pub fn write_summary(path: &Path, stats: &[VariantStats]) -> CliResult<()> {
    let header = [
        "variant",
        "runs",
        "mean_accuracy",
        "std_accuracy",
        "mean_few",
        "std_few",
        "mean_entropy_std",
    ]
    .map(String::from);
    write_csv(
        path,
        &header,
        stats.iter().map(|s| {
            vec![
                s.variant.clone(),
                s.runs.to_string(),
                real(s.mean_accuracy),
                real(s.std_accuracy),
                real(s.mean_few),
                real(s.std_few),
                real(s.mean_entropy_std),
            ]
        }),
    )
}

pub fn write_runs(path: &Path, runs: &[RunSummary]) -> CliResult<()> {
    let header = [
        "variant",
        "seed",
        "accuracy",
        "many",
        "medium",
        "few",
        "entropy_std",
        "dist_l1",
    ]
    .map(String::from);
    write_csv(
        path,
        &header,
        runs.iter().map(|r| {
            let f = r.final_row();
            vec![
                r.variant.clone(),
                r.seed.to_string(),
                real(f.test_accuracy),
                real(f.groups.many),
                real(f.groups.medium),
                real(f.groups.few),
                real(r.final_entropy_std()),
                real(r.final_dist_l1()),
            ]
        }),
    )
}

/// `train`: the manifest's configuration over its seeds.
pub fn run_train(m: &RunManifest, progress: &mut dyn FnMut(&str)) -> CliResult<Vec<RunSummary>> {
    let runs = run_variants(
        m,
        &[Variant {
            name: "train",
            apply: |c| c,
        }],
        true,
        progress,
    )?;
    write_runs(&m.out.join(RUNS_FILE), &runs)?;
    Ok(runs)
}

/// `compare`: FixMatch against BEM on identical data and seeds.
pub fn run_compare(m: &RunManifest, progress: &mut dyn FnMut(&str)) -> CliResult<Vec<RunSummary>> {
    let runs = run_variants(m, &COMPARE_VARIANTS, true, progress)?;
    write_runs(&m.out.join(RUNS_FILE), &runs)?;
    write_summary(&m.out.join(COMPARE_FILE), &aggregate(&runs))?;
    Ok(runs)
}

/// `ablate`: the nine-variant preset.
pub fn run_ablate(m: &RunManifest, progress: &mut dyn FnMut(&str)) -> CliResult<Vec<RunSummary>> {
    let runs = run_variants(m, &ABLATION_VARIANTS, true, progress)?;
    write_runs(&m.out.join(RUNS_FILE), &runs)?;
    write_summary(&m.out.join(ABLATE_FILE), &aggregate(&runs))?;
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_preset_changes_one_thing_each() {
        let base = TrainConfig::new(10, 0);
        let full = (FULL.apply)(base.clone());
        assert_eq!(full, base);
        let names: Vec<&str> = ABLATION_VARIANTS.iter().map(|v| v.name).collect();
        assert_eq!(names.len(), 9);
        for v in &ABLATION_VARIANTS[1..6] {
            let c = (v.apply)(base.clone());
            assert!(c.bem && c != full, "{}", v.name);
            c.validate().unwrap();
        }
        for v in &ABLATION_VARIANTS[6..] {
            let c = (v.apply)(base.clone());
            assert!(!c.bem, "{}", v.name);
            c.validate().unwrap();
        }
        assert_eq!((ABLATION_VARIANTS[3].apply)(base).balance.alpha, 1.0);
    }
}
