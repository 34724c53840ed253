//! Distribution and uncertainty estimation: effective numbers, the EMA class
//! distribution of the unlabeled data, class-wise and sample-wise entropy,
//! fused sampling probabilities, entropy masks and the entropy threshold.
//!
//! Estimators run in `f64`; they are tiny and their drift over thousands of
//! EMA steps should not depend on the network's working precision.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::Origin;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceConfig {
    /// Effective-number decay `beta`.
    pub beta: f64,
    /// EMA weight of the unlabeled class distribution.
    pub lambda_d: f64,
    /// EMA weight of the class-wise entropies.
    pub lambda_e: f64,
    /// EMA weight of the entropy threshold.
    pub lambda_tau: f64,
    /// Blend between quantity (`alpha = 1`) and entropy (`alpha = 0`).
    pub alpha: f64,
    /// Epochs over the unlabeled set before any estimator is updated.
    pub warmup_epochs: usize,
    pub num_classes: usize,
}

impl BalanceConfig {
    pub fn new(num_classes: usize) -> Self {
        BalanceConfig {
            beta: 0.999,
            lambda_d: 0.999,
            lambda_e: 0.999,
            lambda_tau: 0.999,
            alpha: 0.5,
            warmup_epochs: 5,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64, range: &str| {
            Err(Error::Config(alloc::format!(
                "{name} = {v} is outside {range}"
            )))
        };
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta", self.beta, "[0, 1)");
        }
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_e", self.lambda_e),
            ("lambda_tau", self.lambda_tau),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(name, v, "(0, 1)");
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", self.alpha, "[0, 1]");
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}

/// `(1 - beta^n) / (1 - beta)`, with value 0 at `n = 0`.
pub fn effective_number(n: f64, beta: f64) -> Result<f64> {
    contract!(
        (0.0..1.0).contains(&beta),
        "effective number needs beta in [0, 1), got {beta}"
    );
    contract!(n >= 0.0, "effective number needs n >= 0, got {n}");
    if n == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - libm::pow(beta, n)) / (1.0 - beta))
}

/// `sum -p ln p` with `0 ln 0 = 0`.
pub fn sample_entropy(row: &[f32]) -> f64 {
    row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let p = p as f64;
            -p * libm::log(p)
        })
        .sum()
}

/// `(M_h, M_l)` for a sample of entropy `e` under threshold `tau`. A tie
/// counts as low entropy, so exactly one mask is set.
pub fn entropy_masks(e: f64, tau: f64) -> (bool, bool) {
    let high = e > tau;
    (high, !high)
}

/// Per-class mean sample entropy of `probs` rows grouped by `assignments`,
/// and the per-class counts. Classes without members are `None`.
pub fn batch_class_entropy(
    probs: &[f32],
    classes: usize,
    assignments: &[usize],
) -> (Vec<Option<f64>>, Vec<usize>) {
    let mut sums = vec![0.0f64; classes];
    let mut counts = vec![0usize; classes];
    for (row, &c) in probs.chunks_exact(classes).zip(assignments) {
        sums[c] += sample_entropy(row);
        counts[c] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    (means, counts)
}

/// `max_i v_i`-shifted softmax in `f64`.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| libm::exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    v.iter().map(|x| x / sum).collect()
}

/// `s_c = (1/E_c) / sum_k (1/E_k)` for strictly positive effective numbers.
pub fn quantity_probs(effective: &[f64]) -> Result<Vec<f64>> {
    contract!(
        effective.iter().all(|&v| v > 0.0),
        "every class needs a positive effective number: {effective:?}"
    );
    Ok(normalize(
        &effective.iter().map(|v| 1.0 / v).collect::<Vec<_>>(),
    ))
}

/// `softmax(alpha * s + (1 - alpha) * s_prime)`.
pub fn fuse(s: &[f64], s_prime: &[f64], alpha: f64) -> Vec<f64> {
    let blend: Vec<f64> = s
        .iter()
        .zip(s_prime)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    softmax(&blend)
}

/// Which statistics feed the fused probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Labeled and unlabeled statistics: `ŝ`.
    All,
    /// Unlabeled statistics only: `ŝ^u`, the class weights of the
    /// unsupervised loss.
    UnlabeledOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingProbs {
    /// Quantity-based probabilities.
    pub s: Vec<f64>,
    /// Normalized class entropies.
    pub s_prime: Vec<f64>,
    /// Fused probabilities used to draw classes from the mix bank.
    pub s_hat: Vec<f64>,
    /// Fused probabilities from unlabeled statistics only.
    pub s_hat_u: Vec<f64>,
}

/// All estimator state. Single writer: the training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBalanceState {
    pub labeled_counts: Vec<usize>,
    /// Size `M` of the unlabeled set.
    pub unlabeled_total: usize,
    /// EMA class distribution of the unlabeled pseudo labels.
    pub d_u: Vec<f64>,
    pub d_initialized: bool,
    /// EMA class-wise entropies of labeled and unlabeled predictions.
    pub e_x: Vec<f64>,
    pub e_u: Vec<f64>,
    pub e_x_initialized: Vec<bool>,
    pub e_u_initialized: Vec<bool>,
    /// EMA batch-mean entropy, the high/low threshold.
    pub tau_e: f64,
    pub tau_initialized: bool,
}

impl ClassBalanceState {
    pub fn new(labeled_counts: Vec<usize>, unlabeled_total: usize) -> Self {
        let c = labeled_counts.len();
        ClassBalanceState {
            labeled_counts,
            unlabeled_total,
            d_u: vec![0.0; c],
            d_initialized: false,
            e_x: vec![0.0; c],
            e_u: vec![0.0; c],
            e_x_initialized: vec![false; c],
            e_u_initialized: vec![false; c],
            tau_e: 0.0,
            tau_initialized: false,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labeled_counts.len()
    }

    /// Folds the class frequencies of one batch of pseudo labels into `d_u`;
    /// the first batch is written directly. Empty batches are ignored.
    pub fn update_unlabeled_dist(&mut self, pseudo: &[usize], lambda_d: f64) {
        if pseudo.is_empty() {
            return;
        }
        let mut freq = vec![0.0f64; self.num_classes()];
        for &q in pseudo {
            freq[q] += 1.0;
        }
        let n = pseudo.len() as f64;
        if !self.d_initialized {
            self.d_u = freq.iter().map(|f| f / n).collect();
            self.d_initialized = true;
        } else {
            for (d, f) in self.d_u.iter_mut().zip(&freq) {
                *d = lambda_d * *d + (1.0 - lambda_d) * (f / n);
            }
        }
    }

    /// Folds per-class batch means into the class-wise entropy EMA of
    /// `origin`; classes without a value are left untouched.
    pub fn update_entropy_ema(&mut self, means: &[Option<f64>], origin: Origin, lambda_e: f64) {
        let (values, flags) = match origin {
            Origin::Labeled => (&mut self.e_x, &mut self.e_x_initialized),
            Origin::Unlabeled => (&mut self.e_u, &mut self.e_u_initialized),
        };
        for ((v, flag), m) in values.iter_mut().zip(flags.iter_mut()).zip(means) {
            if let Some(m) = *m {
                if *flag {
                    *v = lambda_e * *v + (1.0 - lambda_e) * m;
                } else {
                    *v = m;
                    *flag = true;
                }
            }
        }
    }

    /// Folds the mean of `entropies` into `tau_e`; the first batch is written
    /// directly. Empty batches are ignored.
    pub fn update_tau_e(&mut self, entropies: &[f64], lambda_tau: f64) {
        if entropies.is_empty() {
            return;
        }
        let mean = entropies.iter().sum::<f64>() / entropies.len() as f64;
        if self.tau_initialized {
            self.tau_e = lambda_tau * self.tau_e + (1.0 - lambda_tau) * mean;
        } else {
            self.tau_e = mean;
            self.tau_initialized = true;
        }
    }

    /// Expected unlabeled count `M * d_u[c]` (zero before initialization).
    pub fn unlabeled_counts(&self) -> Vec<f64> {
        let m = self.unlabeled_total as f64;
        if self.d_initialized {
            self.d_u.iter().map(|d| m * d).collect()
        } else {
            vec![0.0; self.num_classes()]
        }
    }

    /// Effective numbers `E_c` of `scope`. The unlabeled-only numbers are
    /// floored at 1 (one sample) so that classes absent from the pseudo
    /// labels get a finite, maximal weight rather than an infinite one.
    pub fn effective_numbers(&self, beta: f64, scope: Scope) -> Result<Vec<f64>> {
        let unlabeled = self.unlabeled_counts();
        self.labeled_counts
            .iter()
            .zip(&unlabeled)
            .map(|(&n, &m)| {
                let eu = effective_number(m, beta)?;
                Ok(match scope {
                    Scope::All => effective_number(n as f64, beta)? + eu,
                    Scope::UnlabeledOnly => eu.max(1.0),
                })
            })
            .collect()
    }

    /// Quantity-based probabilities `s_c = (1/E_c) / sum_k 1/E_k`. Before
    /// `d_u` is initialized both scopes use the labeled counts alone.
    pub fn quantity_sampling(&self, beta: f64, scope: Scope) -> Result<Vec<f64>> {
        let scope = if self.d_initialized {
            scope
        } else {
            Scope::All
        };
        quantity_probs(&self.effective_numbers(beta, scope)?)
    }

    /// Whether any class-wise entropy has been observed yet.
    pub fn entropy_initialized(&self) -> bool {
        self.e_x_initialized
            .iter()
            .chain(&self.e_u_initialized)
            .any(|&f| f)
    }

    /// Class entropies `e_c` of `scope`. Classes never observed count as
    /// maximally uncertain (`ln C`).
    pub fn class_entropies(&self, scope: Scope) -> Vec<f64> {
        let unknown = libm::log(self.num_classes() as f64);
        let pick = |v: &f64, f: &bool| if *f { *v } else { unknown };
        let eu = self
            .e_u
            .iter()
            .zip(&self.e_u_initialized)
            .map(|(v, f)| pick(v, f));
        match scope {
            Scope::UnlabeledOnly => eu.collect(),
            Scope::All => self
                .e_x
                .iter()
                .zip(&self.e_x_initialized)
                .map(|(v, f)| pick(v, f))
                .zip(eu)
                .map(|(x, u)| x + u)
                .collect(),
        }
    }

    /// `ŝ = softmax(alpha * s + (1 - alpha) * s')` for `scope`; before any
    /// entropy is observed this falls back to `s`.
    pub fn fused_sampling(&self, cfg: &BalanceConfig, scope: Scope) -> Result<Vec<f64>> {
        Ok(self.fused_parts(cfg, scope)?.2)
    }

    fn fused_parts(
        &self,
        cfg: &BalanceConfig,
        scope: Scope,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let s = self.quantity_sampling(cfg.beta, scope)?;
        let c = self.num_classes();
        let e = self.class_entropies(scope);
        let sum: f64 = e.iter().sum();
        let s_prime = if sum > 0.0 {
            normalize(&e)
        } else {
            vec![1.0 / c as f64; c]
        };
        if !self.entropy_initialized() {
            return Ok((s.clone(), s_prime, s));
        }
        let s_hat = fuse(&s, &s_prime, cfg.alpha);
        Ok((s, s_prime, s_hat))
    }

    pub fn sampling_probs(&self, cfg: &BalanceConfig) -> Result<SamplingProbs> {
        let (s, s_prime, s_hat) = self.fused_parts(cfg, Scope::All)?;
        let s_hat_u = self.fused_sampling(cfg, Scope::UnlabeledOnly)?;
        Ok(SamplingProbs {
            s,
            s_prime,
            s_hat,
            s_hat_u,
        })
    }

    /// Observed class frequencies `(N_c + M d_u[c]) / sum`, the natural
    /// long-tailed draw used when class-balanced sampling is switched off.
    pub fn data_frequencies(&self) -> Vec<f64> {
        let u = self.unlabeled_counts();
        let raw: Vec<f64> = self
            .labeled_counts
            .iter()
            .zip(&u)
            .map(|(&n, &m)| n as f64 + m)
            .collect();
        normalize(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn effective_number_examples() {
        assert_eq!(effective_number(1.0, 0.9).unwrap(), 1.0);
        assert_eq!(effective_number(1.0, 0.999).unwrap(), 1.0);
        assert_eq!(effective_number(7.0, 0.0).unwrap(), 1.0);
        assert_eq!(effective_number(0.0, 0.5).unwrap(), 0.0);
        assert!(close(
            effective_number(1000.0, 0.999).unwrap(),
            632.305,
            1e-3
        ));
        assert!(effective_number(3.0, 1.0).is_err());
        assert!(effective_number(-1.0, 0.5).is_err());
    }

    #[test]
    fn unlabeled_distribution_ema() {
        let mut st = ClassBalanceState::new(vec![1, 1], 10);
        st.update_unlabeled_dist(&[], 0.9);
        assert!(!st.d_initialized);
        st.update_unlabeled_dist(&[0, 0, 0], 0.9);
        assert_eq!(st.d_u, [1.0, 0.0]);
        let mut st = ClassBalanceState::new(vec![1, 1], 10);
        st.d_u = vec![0.5, 0.5];
        st.d_initialized = true;
        st.update_unlabeled_dist(&[0, 0], 0.9);
        assert!(close(st.d_u[0], 0.55, 1e-12) && close(st.d_u[1], 0.45, 1e-12));
        st.d_u = vec![0.5, 0.5];
        st.update_unlabeled_dist(&[0, 1], 0.9);
        assert_eq!(st.d_u, [0.5, 0.5]);
    }

    #[test]
    fn quantity_sampling_examples() {
        let st = ClassBalanceState::new(vec![5, 5], 0);
        assert_eq!(st.quantity_sampling(0.999, Scope::All).unwrap(), [0.5, 0.5]);
        let s = quantity_probs(&[2.0, 1.0]).unwrap();
        assert!(close(s[0], 1.0 / 3.0, 1e-15) && close(s[1], 2.0 / 3.0, 1e-15));
        assert!(quantity_probs(&[1.0, 0.0]).is_err());
        // once d_u is initialized the unlabeled counts enter E_c
        let mut st = ClassBalanceState::new(vec![10, 10], 100);
        st.update_unlabeled_dist(&[0, 0, 0, 1], 0.9);
        let e = st.effective_numbers(0.999, Scope::All).unwrap();
        let expected =
            effective_number(10.0, 0.999).unwrap() + effective_number(75.0, 0.999).unwrap();
        assert!(close(e[0], expected, 1e-12));
        let s = st.quantity_sampling(0.999, Scope::All).unwrap();
        assert!(s[0] < s[1]);
        // unlabeled-only numbers are floored at one sample
        st.update_unlabeled_dist(&[0; 4], 1e-12);
        let eu = st.effective_numbers(0.999, Scope::UnlabeledOnly).unwrap();
        assert_eq!(eu[1], 1.0);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(sample_entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!(close(sample_entropy(&[0.1; 10]), 10f64.ln(), 1e-6));
        assert!(close(sample_entropy(&[0.9, 0.1]), 0.325083, 1e-6));
        let (means, counts) = batch_class_entropy(&[0.9, 0.1, 0.5, 0.5], 2, &[0, 0]);
        assert_eq!(counts, [2, 0]);
        assert!(close(means[0].unwrap(), 0.509115, 1e-6));
        assert_eq!(means[1], None);
        let uniform = [0.1f32; 30];
        let (means, _) = batch_class_entropy(&uniform, 10, &[1, 4, 4]);
        assert!(close(means[4].unwrap(), 10f64.ln(), 1e-6));
    }

    #[test]
    fn entropy_ema_rules() {
        let mut st = ClassBalanceState::new(vec![1, 1, 1], 0);
        st.update_entropy_ema(&[Some(1.0), None, Some(0.5)], Origin::Unlabeled, 0.999);
        assert_eq!(st.e_u, [1.0, 0.0, 0.5]);
        assert_eq!(st.e_u_initialized, [true, false, true]);
        assert_eq!(st.e_x_initialized, [false; 3]);
        st.update_entropy_ema(&[Some(1.0), None, None], Origin::Unlabeled, 0.999);
        assert_eq!(st.e_u, [1.0, 0.0, 0.5]);
        for _ in 0..100 {
            st.update_entropy_ema(&[Some(0.0), None, None], Origin::Unlabeled, 0.999);
        }
        assert!(close(st.e_u[0], 0.904792, 1e-6));
    }

    #[test]
    fn tau_e_rules() {
        let mut st = ClassBalanceState::new(vec![1, 1], 0);
        st.update_tau_e(&[0.7], 0.999);
        assert_eq!(st.tau_e, 0.7);
        st.tau_e = 1.0;
        st.update_tau_e(&[0.0, 0.0], 0.999);
        assert!(close(st.tau_e, 0.999, 1e-15));
    }

    #[test]
    fn fused_sampling_examples() {
        let f = fuse(&[0.8, 0.2], &[0.3, 0.7], 1.0);
        assert!(close(f[0], 0.645656, 1e-6) && close(f[1], 0.354344, 1e-6));
        let u = fuse(&[0.25; 4], &[0.25; 4], 0.5);
        assert!(u.iter().all(|&p| close(p, 0.25, 1e-15)));
        // through the state: uniform quantity and entropy give a uniform result
        let mut st = ClassBalanceState::new(vec![3, 3, 3], 0);
        st.update_entropy_ema(&[Some(0.4); 3], Origin::Labeled, 0.9);
        st.update_entropy_ema(&[Some(0.1); 3], Origin::Unlabeled, 0.9);
        let fused = st
            .fused_sampling(&BalanceConfig::new(3), Scope::All)
            .unwrap();
        assert!(fused.iter().all(|&p| close(p, 1.0 / 3.0, 1e-15)));
        // all-zero entropies fall back to a uniform s'
        let mut st = ClassBalanceState::new(vec![3, 1], 0);
        st.update_entropy_ema(&[Some(0.0); 2], Origin::Labeled, 0.9);
        st.update_entropy_ema(&[Some(0.0); 2], Origin::Unlabeled, 0.9);
        let p = st.sampling_probs(&BalanceConfig::new(2)).unwrap();
        assert_eq!(p.s_prime, [0.5, 0.5]);
    }

    #[test]
    fn fused_sampling_falls_back_before_entropies_exist() {
        let st = ClassBalanceState::new(vec![10, 2], 0);
        let cfg = BalanceConfig::new(2);
        let probs = st.sampling_probs(&cfg).unwrap();
        assert_eq!(probs.s_hat, probs.s);
        assert_eq!(probs.s_hat_u, probs.s);
    }

    #[test]
    fn masks_examples() {
        assert_eq!(entropy_masks(2.0, 1.0), (true, false));
        assert_eq!(entropy_masks(0.5, 1.0), (false, true));
        assert_eq!(entropy_masks(1.0, 1.0), (false, true));
    }

    #[test]
    fn ema_contraction_is_exact_for_zero_target() {
        let mut st = ClassBalanceState::new(vec![1, 1], 0);
        st.update_tau_e(&[1.0], 0.999);
        let mut expected = 1.0f64;
        for _ in 0..1000 {
            st.update_tau_e(&[0.0], 0.999);
            expected *= 0.999;
            assert_eq!(st.tau_e, expected);
        }
    }

    fn state_strategy() -> impl Strategy<Value = ClassBalanceState> {
        (3usize..8)
            .prop_flat_map(|c| {
                (
                    proptest::collection::vec(1usize..500, c),
                    proptest::collection::vec(0usize..c, 1..40),
                    proptest::collection::vec(0.0f64..2.0, c),
                    proptest::collection::vec(0.0f64..2.0, c),
                    proptest::collection::vec(any::<bool>(), c),
                )
            })
            .prop_map(|(counts, pseudo, ex, eu, present)| {
                let c = counts.len();
                let mut st = ClassBalanceState::new(counts, 1000);
                st.update_unlabeled_dist(&pseudo, 0.999);
                let ex: Vec<_> = ex.into_iter().map(Some).collect();
                let eu: Vec<_> = eu
                    .into_iter()
                    .zip(present)
                    .map(|(v, p)| p.then_some(v))
                    .collect();
                st.update_entropy_ema(&ex, Origin::Labeled, 0.999);
                st.update_entropy_ema(&eu, Origin::Unlabeled, 0.999);
                assert_eq!(st.num_classes(), c);
                st
            })
    }

    proptest! {
        #[test]
        fn sampling_vectors_are_strictly_positive_distributions(st in state_strategy(), alpha in 0.0f64..=1.0) {
            let cfg = BalanceConfig { alpha, ..BalanceConfig::new(st.num_classes()) };
            let p = st.sampling_probs(&cfg).unwrap();
            for v in [&p.s, &p.s_prime, &p.s_hat, &p.s_hat_u] {
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(v.iter().all(|&x| x > 0.0));
            }
            prop_assert!((st.d_u.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn alpha_one_ignores_entropies(st in state_strategy(), shift in 0.0f64..1.0) {
            let cfg = BalanceConfig { alpha: 1.0, ..BalanceConfig::new(st.num_classes()) };
            let mut other = st.clone();
            other.e_u.iter_mut().for_each(|v| *v = (*v + shift) % 2.0);
            other.e_x.iter_mut().rev().for_each(|v| *v *= 0.5);
            prop_assert_eq!(st.fused_sampling(&cfg, Scope::All).unwrap(), other.fused_sampling(&cfg, Scope::All).unwrap());
        }

        #[test]
        fn fused_sampling_is_permutation_equivariant(st in state_strategy(), rot in 1usize..7) {
            let c = st.num_classes();
            let rot = rot % c;
            let perm = |v: &Vec<f64>| { let mut w = v.clone(); w.rotate_left(rot); w };
            let mut other = st.clone();
            other.labeled_counts.rotate_left(rot);
            other.d_u = perm(&st.d_u);
            other.e_x = perm(&st.e_x);
            other.e_u = perm(&st.e_u);
            other.e_x_initialized.rotate_left(rot);
            other.e_u_initialized.rotate_left(rot);
            let cfg = BalanceConfig::new(c);
            let a = perm(&st.fused_sampling(&cfg, Scope::All).unwrap());
            let b = other.fused_sampling(&cfg, Scope::All).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn masks_are_exhaustive(e in 0.0f64..3.0, tau in 0.0f64..3.0, tie in any::<bool>()) {
            let tau = if tie { e } else { tau };
            let (h, l) = entropy_masks(e, tau);
            prop_assert_eq!(h as u8 + l as u8, 1);
        }

        #[test]
        fn effective_number_increasing_and_bounded(a in 0.0f64..5000.0, b in 0.0f64..5000.0, beta in 0.01f64..0.9999) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (elo, ehi) = (effective_number(lo, beta).unwrap(), effective_number(hi, beta).unwrap());
            prop_assert!(elo <= ehi);
            prop_assert!(ehi <= 1.0 / (1.0 - beta) + 1e-9);
        }

        #[test]
        fn more_samples_lower_the_class_probability(counts in proptest::collection::vec(1usize..300, 2..8), extra in 1usize..100, which in 0usize..8) {
            let which = which % counts.len();
            let st = ClassBalanceState::new(counts.clone(), 0);
            let mut more = counts.clone();
            more[which] += extra;
            let st2 = ClassBalanceState::new(more, 0);
            let s = st.quantity_sampling(0.999, Scope::All).unwrap();
            let s2 = st2.quantity_sampling(0.999, Scope::All).unwrap();
            prop_assert!(s2[which] < s[which]);
        }
    }
}
