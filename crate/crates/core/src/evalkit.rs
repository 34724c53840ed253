//! Metrics: balanced test accuracy, per-class accuracy, many/medium/few
//! group accuracy, confusion matrices and the per-evaluation metrics row
//! with its flat column layout.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::synthdata::LabeledSet;
use crate::tensor::Tensor4;
use crate::tinynn::{self, BackboneParams};

/// Images per inference forward during evaluation.
pub const EVAL_BATCH: usize = 100;

/// Outcome of evaluating a classifier on a labeled set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Confusion counts of `predictions` against `labels`.
pub fn confusion_matrix(
    labels: &[usize],
    predictions: &[usize],
    classes: usize,
) -> Result<Vec<Vec<usize>>> {
    contract!(
        labels.len() == predictions.len(),
        "{} labels but {} predictions",
        labels.len(),
        predictions.len()
    );
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in labels.iter().zip(predictions) {
        contract!(
            t < classes && p < classes,
            "class pair ({t}, {p}) out of range {classes}"
        );
        confusion[t][p] += 1;
    }
    Ok(confusion)
}

/// Per-class recall from a confusion matrix; classes without test samples
/// score 0. The overall accuracy is the mean of the per-class values, which
/// equals the plain hit rate on a balanced set.
pub fn summarize(confusion: Vec<Vec<usize>>) -> Evaluation {
    let per_class_accuracy: Vec<f64> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect();
    let accuracy = mean(&per_class_accuracy);
    Evaluation {
        accuracy,
        per_class_accuracy,
        confusion,
    }
}

/// Argmax predictions of `params` on every image of `set`.
pub fn predict(params: &BackboneParams, set: &LabeledSet) -> Result<Vec<usize>> {
    let mut predictions = Vec::with_capacity(set.len());
    for chunk in set.images.chunks(EVAL_BATCH) {
        let batch = Tensor4::from_images(chunk)?;
        let out = tinynn::forward_inference(params, &batch)?;
        predictions.extend((0..out.batch).map(|b| out.argmax(b)));
    }
    Ok(predictions)
}

pub fn evaluate(params: &BackboneParams, set: &LabeledSet) -> Result<Evaluation> {
    let predictions = predict(params, set)?;
    Ok(summarize(confusion_matrix(
        &set.labels,
        &predictions,
        set.num_classes,
    )?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupAccuracy {
    pub many: f64,
    pub medium: f64,
    pub few: f64,
}

/// Sizes of the many/medium/few thirds of `classes` classes; the remainder
/// goes to the earlier groups.
pub fn group_sizes(classes: usize) -> [usize; 3] {
    let base = classes / 3;
    let extra = classes % 3;
    [
        base + (extra > 0) as usize,
        base + (extra > 1) as usize,
        base,
    ]
}

/// Class indices of each group: classes sorted by `counts` descending (ties
/// by index), cut into thirds.
pub fn groups(counts: &[usize]) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let [many, medium, _] = group_sizes(counts.len());
    let few = order.split_off(many + medium);
    let medium = order.split_off(many);
    [order, medium, few]
}

/// Mean per-class accuracy of each group.
pub fn group_accuracy(per_class_accuracy: &[f64], counts: &[usize]) -> Result<GroupAccuracy> {
    contract!(
        per_class_accuracy.len() == counts.len(),
        "{} accuracies for {} class counts",
        per_class_accuracy.len(),
        counts.len()
    );
    contract!(counts.len() >= 3, "group accuracy needs at least 3 classes");
    let [many, medium, few] =
        groups(counts).map(|g| mean(&g.iter().map(|&c| per_class_accuracy[c]).collect::<Vec<_>>()));
    Ok(GroupAccuracy { many, medium, few })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    libm::sqrt(mean(
        &values.iter().map(|v| (v - m) * (v - m)).collect::<Vec<_>>(),
    ))
}

/// The five loss terms (raw batch sums), the area weight and the total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_u_h: f64,
    pub l_u_l: f64,
    pub l_us_h: f64,
    pub l_us_l: f64,
    pub lambda: f64,
    /// Divisor applied to the composite sum (the labeled batch size).
    pub batch: usize,
    pub total: f64,
}

impl LossBreakdown {
    /// `(L_s + λ(L_u^h + L_u^l) + (1 − λ)(L_us^h + L_us^l)) / B`.
    pub fn composite(
        l_s: f64,
        l_u_h: f64,
        l_u_l: f64,
        l_us_h: f64,
        l_us_l: f64,
        lambda: f64,
        batch: usize,
    ) -> f64 {
        (l_s + lambda * (l_u_h + l_u_l) + (1.0 - lambda) * (l_us_h + l_us_l)) / batch as f64
    }

    pub fn new(
        l_s: f64,
        l_u_h: f64,
        l_u_l: f64,
        l_us_h: f64,
        l_us_l: f64,
        lambda: f64,
        batch: usize,
    ) -> Self {
        LossBreakdown {
            l_s,
            l_u_h,
            l_u_l,
            l_us_h,
            l_us_l,
            lambda,
            batch,
            total: Self::composite(l_s, l_u_h, l_u_l, l_us_h, l_us_l, lambda, batch),
        }
    }

    /// The total recomputed from the stored parts.
    pub fn recomputed_total(&self) -> f64 {
        Self::composite(
            self.l_s,
            self.l_u_h,
            self.l_u_l,
            self.l_us_h,
            self.l_us_l,
            self.lambda,
            self.batch,
        )
    }
}

/// One row per evaluation. Window statistics cover the training steps since
/// the previous evaluation; the loss is the one of the evaluated step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub groups: GroupAccuracy,
    /// Window mean of the weak-view prediction entropy of unlabeled samples.
    pub mean_pseudo_entropy: f64,
    /// EMA class-wise entropy of unlabeled data (`ln C` where unobserved).
    pub per_class_entropy: Vec<f64>,
    /// Window count of confident pseudo labels per class.
    pub per_class_pseudo_count: Vec<usize>,
    /// EMA estimate of the unlabeled class distribution (zeros before it
    /// is initialized).
    pub unlabeled_dist: Vec<f64>,
    /// Window mean of the batch area weight.
    pub lambda: f64,
    /// Window fraction of unlabeled samples on the low-entropy path.
    pub low_entropy_fraction: f64,
    /// Window fraction of unlabeled samples above the confidence threshold.
    pub mask_rate: f64,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
}

/// A CSV cell value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
}

impl Cell {
    /// Integers verbatim, reals with 9 digits after the decimal point.
    pub fn render(self) -> String {
        match self {
            Cell::Int(v) => format!("{v}"),
            Cell::Real(v) => format!("{v:.9}"),
        }
    }
}

fn expand(out: &mut Vec<String>, name: &str, classes: usize) {
    out.extend((0..classes).map(|c| format!("{name}_{c}")));
}

impl MetricsRow {
    /// Column names for `classes` classes, array columns expanded as
    /// `name_0 .. name_{C-1}`.
    pub fn header(classes: usize) -> Vec<String> {
        let mut h: Vec<String> = vec!["iteration".into(), "test_accuracy".into()];
        expand(&mut h, "per_class_accuracy", classes);
        for name in [
            "many_accuracy",
            "medium_accuracy",
            "few_accuracy",
            "mean_pseudo_entropy",
        ] {
            h.push(name.into());
        }
        expand(&mut h, "per_class_entropy", classes);
        expand(&mut h, "per_class_pseudo_count", classes);
        expand(&mut h, "unlabeled_dist", classes);
        for name in [
            "lambda",
            "low_entropy_fraction",
            "mask_rate",
            "learning_rate",
            "loss_s",
            "loss_u_h",
            "loss_u_l",
            "loss_us_h",
            "loss_us_l",
            "loss_lambda",
            "loss_total",
        ] {
            h.push(name.into());
        }
        h
    }

    /// Cells in [`MetricsRow::header`] order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut v = vec![
            Cell::Int(self.iteration as u64),
            Cell::Real(self.test_accuracy),
        ];
        v.extend(self.per_class_accuracy.iter().map(|&a| Cell::Real(a)));
        v.extend(
            [
                self.groups.many,
                self.groups.medium,
                self.groups.few,
                self.mean_pseudo_entropy,
            ]
            .map(Cell::Real),
        );
        v.extend(self.per_class_entropy.iter().map(|&a| Cell::Real(a)));
        v.extend(
            self.per_class_pseudo_count
                .iter()
                .map(|&n| Cell::Int(n as u64)),
        );
        v.extend(self.unlabeled_dist.iter().map(|&a| Cell::Real(a)));
        let l = &self.loss;
        v.extend(
            [
                self.lambda,
                self.low_entropy_fraction,
                self.mask_rate,
                self.learning_rate,
                l.l_s,
                l.l_u_h,
                l.l_u_l,
                l.l_us_h,
                l.l_us_l,
                l.lambda,
                l.total,
            ]
            .map(Cell::Real),
        );
        v
    }

    pub fn record(&self) -> Vec<String> {
        self.cells().into_iter().map(Cell::render).collect()
    }
}
