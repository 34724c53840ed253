//! The embedded oracle battery behind `bem selfcheck`.
//!
//! Every check compares a production routine against an independent
//! reference: closed forms against explicit sums, union-find labeling
//! against flood fill, analytic gradients against finite differences of an
//! `f64` reference network, and so on.

use std::fmt;

use bem_core::balance::{effective_number, entropy_masks, BalanceConfig, ClassBalanceState};
use bem_core::cammix::largest_component;
use bem_core::evalkit::LossBreakdown;
use bem_core::learner::{fixmatch_reference_totals, TrainConfig, Trainer};
use bem_core::oracle::{gradient_check, largest_component_flood};
use bem_core::rng::{categorical, rng_from};
use bem_core::synthdata::{generate, DatasetSpec};
use bem_core::tinynn::{BackboneConfig, BackboneParams};
use bem_core::{Origin, Tensor4};
use rand::Rng as _;

/// Deliberate corruptions used as negative controls for the battery.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Evaluate effective numbers with `-beta`.
    BetaSignFlip,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "beta-sign" => Some(Fault::BetaSignFlip),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub family: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {:<22} {}", self.family, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, family: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.family == family)
    }
}

fn result(family: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult {
            family,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            family,
            passed: false,
            detail,
        },
    }
}

/// `sum_{k<n} beta^k`, accumulated term by term in `f64`.
fn geometric_sum(n: u32, beta: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += term;
        term *= beta;
    }
    sum
}

/// Anchor value of `E(1000, 0.999)`.
pub const EFFECTIVE_NUMBER_ANCHOR: f64 = 632.304_575_229_035_7;

pub fn check_effective_number(fault: Option<Fault>) -> CheckResult {
    let outcome = (|| {
        let mut worst = 0.0f64;
        for n in [1u32, 10, 1000] {
            for beta in [0.9, 0.999] {
                let b = if fault == Some(Fault::BetaSignFlip) {
                    -beta
                } else {
                    beta
                };
                let got = effective_number(n as f64, b).map_err(|e| e.to_string())?;
                let want = geometric_sum(n, beta);
                let err = (got - want).abs();
                if err > 1e-9 {
                    return Err(format!("E({n}, {beta}) = {got}, geometric sum {want}"));
                }
                worst = worst.max(err);
            }
        }
        let anchor = effective_number(1000.0, if fault.is_some() { -0.999 } else { 0.999 })
            .map_err(|e| e.to_string())?;
        if (anchor - EFFECTIVE_NUMBER_ANCHOR).abs() > 1e-6 {
            return Err(format!("E(1000, 0.999) = {anchor}"));
        }
        Ok(format!(
            "6 cases, max |err| {worst:.1e}; E(1000, 0.999) = {anchor:.3}"
        ))
    })();
    result("effective_number", outcome)
}

pub fn check_flood_fill() -> CheckResult {
    let outcome = (|| {
        let mut rng = rng_from(0x5e1f_c4ec);
        for map in 0..200 {
            let density: f64 = rng.gen_range(0.1..0.7);
            let mask: Vec<bool> = (0..256).map(|_| rng.gen_bool(density)).collect();
            let got = largest_component(&mask, 16, 16);
            let (cells, bbox) = largest_component_flood(&mask, 16, 16);
            if got.cells != cells || got.bbox(16) != bbox {
                return Err(format!(
                    "map {map} (density {density:.2}) disagrees with flood fill"
                ));
            }
        }
        Ok("200 random 16x16 maps, components and boxes identical".into())
    })();
    result("flood_fill", outcome)
}

pub fn check_entropy_masks() -> CheckResult {
    let outcome = (|| {
        let mut rng = rng_from(0x3a5c);
        let mut cases: Vec<(f64, f64)> = (0..10_000)
            .map(|_| (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)))
            .collect();
        // forced ties, including exact zero and the uniform-10 entropy
        cases.extend([0.0, 1.0, 10f64.ln(), f64::MIN_POSITIVE].map(|v| (v, v)));
        for (e, tau) in cases {
            let (h, l) = entropy_masks(e, tau);
            if h == l || h != (e > tau) {
                return Err(format!("e={e}, tau={tau}: M_h={h}, M_l={l}"));
            }
        }
        if entropy_masks(1.0, 1.0) != (false, true) {
            return Err("a tie must be low entropy".into());
        }
        Ok("10004 cases, M_h + M_l = 1, ties low".into())
    })();
    result("entropy_masks", outcome)
}

pub fn check_ema_decay() -> CheckResult {
    let outcome = (|| {
        let lambda = 0.999;
        let mut st = ClassBalanceState::new(vec![1, 1], 0);
        st.update_tau_e(&[1.0], lambda);
        let mut expected = 1.0f64;
        for k in 1..=2000 {
            st.update_tau_e(&[0.0], lambda);
            expected *= lambda;
            if st.tau_e != expected {
                return Err(format!("step {k}: {} vs lambda^k = {expected}", st.tau_e));
            }
        }
        // a constant input is a fixed point
        let mut st = ClassBalanceState::new(vec![1, 1, 1], 0);
        st.update_unlabeled_dist(&[0, 1, 2, 2], lambda);
        let start = st.d_u.clone();
        for _ in 0..500 {
            st.update_unlabeled_dist(&[0, 1, 2, 2], lambda);
        }
        let drift: f64 = st.d_u.iter().zip(&start).map(|(a, b)| (a - b).abs()).sum();
        if drift > 1e-12 {
            return Err(format!("fixed point drifted by {drift}"));
        }
        Ok("2000 zero-input steps equal lambda^k exactly; fixed point held".into())
    })();
    result("ema_decay", outcome)
}

pub fn check_categorical() -> CheckResult {
    let outcome = (|| {
        // fused class probabilities of a long-tailed state with entropy EMAs
        let cfg = BalanceConfig::new(10);
        let mut st = ClassBalanceState::new(vec![100, 77, 59, 46, 35, 27, 21, 16, 12, 10], 2045);
        st.update_unlabeled_dist(&[0, 0, 0, 1, 1, 2, 3, 4, 5, 7], cfg.lambda_d);
        let means: Vec<Option<f64>> = (0..10).map(|k| Some(0.1 + 0.15 * k as f64)).collect();
        st.update_entropy_ema(&means, Origin::Labeled, cfg.lambda_e);
        st.update_entropy_ema(&means, Origin::Unlabeled, cfg.lambda_e);
        let probs = st.sampling_probs(&cfg).map_err(|e| e.to_string())?.s_hat;
        let draws = 100_000;
        let mut counts = [0usize; 10];
        let mut rng = rng_from(0xca7);
        for _ in 0..draws {
            let k = categorical(&probs, &mut rng).ok_or("no draw")?;
            counts[k] += 1;
        }
        let mut worst = 0.0f64;
        for (k, (&n, &p)) in counts.iter().zip(&probs).enumerate() {
            let dev = (n as f64 / draws as f64 - p).abs();
            if dev >= 0.01 || (p == 0.0 && n > 0) {
                return Err(format!(
                    "class {k}: frequency {} vs {p}",
                    n as f64 / draws as f64
                ));
            }
            worst = worst.max(dev);
        }
        Ok(format!(
            "1e5 draws from the fused probabilities, max deviation {worst:.4}"
        ))
    })();
    result("categorical_draws", outcome)
}

pub fn check_gradients() -> CheckResult {
    let outcome = (|| {
        let mut rng = rng_from(0x9ad);
        let params = BackboneParams::init(BackboneConfig::reference(10), &mut rng);
        let x = Tensor4::from_vec(
            [4, 3, 32, 32],
            (0..4 * 3 * 1024).map(|_| rng.gen::<f32>()).collect(),
        )
        .map_err(|e| e.to_string())?;
        let report = gradient_check(
            &params,
            &x,
            &[0, 3, 7, 9],
            &[1.0, 0.5, 2.0, 1.0],
            26,
            1e-3,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        let n = report.samples.len();
        let max = report.max_rel_error();
        if n < 200 || max >= 1e-3 {
            return Err(format!(
                "{n} parameters, max relative error {max:.2e}: {:?}",
                report.worst()
            ));
        }
        Ok(format!(
            "{n} parameters, max relative error {max:.2e} ({} across kinks)",
            report.kinks()
        ))
    })();
    result("gradient_check", outcome)
}

fn small_data() -> Result<bem_core::synthdata::SynthData, String> {
    generate(&DatasetSpec {
        n1: 24,
        m1: 48,
        test_per_class: 2,
        ..DatasetSpec::reference(0x5c)
    })
    .map_err(|e| e.to_string())
}

fn small_config(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        total_iterations: 100,
        eval_every: 100,
        ..cfg
    }
}

pub fn check_fixmatch_reduction() -> CheckResult {
    let outcome = (|| {
        let data = small_data()?;
        let cfg = small_config(TrainConfig::fixmatch(10, 3));
        let want = fixmatch_reference_totals(&cfg, &data, 100).map_err(|e| e.to_string())?;
        let mut trainer = Trainer::new(cfg, &data).map_err(|e| e.to_string())?;
        for (t, w) in want.iter().enumerate() {
            let got = trainer.step().map_err(|e| e.to_string())?.loss.total;
            if got.to_bits() != w.to_bits() {
                return Err(format!("step {t}: {got} vs reference {w}"));
            }
        }
        Ok("100 steps bitwise identical to plain FixMatch".into())
    })();
    result("fixmatch_reduction", outcome)
}

pub fn check_loss_identity() -> CheckResult {
    let outcome = (|| {
        if (LossBreakdown::composite(0.0, 0.1, 0.0, 1.0, 0.0, 0.6, 1) - 0.46).abs() > 1e-12 {
            return Err("worked example does not give 0.46".into());
        }
        let data = small_data()?;
        let mut cfg = small_config(TrainConfig::new(10, 4));
        cfg.total_iterations = 30;
        cfg.balance.warmup_epochs = 1;
        let mut trainer = Trainer::new(cfg, &data).map_err(|e| e.to_string())?;
        let mut mixed = 0;
        for t in 0..30 {
            let s = trainer.step().map_err(|e| e.to_string())?;
            if s.loss.total != s.loss.recomputed_total() {
                return Err(format!("step {t}: {:?}", s.loss));
            }
            mixed += (s.loss.lambda < 1.0) as usize;
        }
        Ok(format!(
            "30 BEM steps ({mixed} mixed) satisfy the composite identity exactly"
        ))
    })();
    result("loss_identity", outcome)
}

/// Runs the whole battery.
pub fn run_selfcheck(fault: Option<Fault>) -> SelfcheckReport {
    SelfcheckReport {
        checks: vec![
            check_effective_number(fault),
            check_flood_fill(),
            check_entropy_masks(),
            check_ema_decay(),
            check_categorical(),
            check_gradients(),
            check_fixmatch_reduction(),
            check_loss_identity(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_matches_the_closed_form() {
        let closed = (1.0 - 0.999f64.powi(1000)) / (1.0 - 0.999);
        assert!((closed - EFFECTIVE_NUMBER_ANCHOR).abs() < 1e-9);
        assert!((geometric_sum(1000, 0.999) - 632.305).abs() < 1e-3);
    }

    #[test]
    fn beta_sign_flip_is_caught() {
        assert!(check_effective_number(None).passed);
        assert!(!check_effective_number(Some(Fault::BetaSignFlip)).passed);
        assert_eq!(Fault::parse("beta-sign"), Some(Fault::BetaSignFlip));
    }

    #[test]
    fn cheap_families_pass() {
        for c in [
            check_flood_fill(),
            check_entropy_masks(),
            check_ema_decay(),
            check_categorical(),
        ] {
            assert!(c.passed, "{c}");
        }
    }
}
