//! Pseudo-labeling with class-balanced adaptive thresholds and the
//! semi-supervised loss terms.
//!
//! Per-class thresholds follow
//! `τ(c) = clamp(p(c) + τ_base − KL(p ‖ uniform), 0, τ_high)`, where `p` is
//! the share of class `c` among labeled plus accepted pseudo-labeled samples
//! of the last epoch. Minority classes therefore get a lower bar whenever the
//! class distribution is skewed.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config_err, Result};
use crate::numeric::{self, argmax, kl_divergence, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub num_classes: usize,
    pub tau_base: f64,
    pub tau_high: f64,
    /// Labeled samples per class.
    pub sigma_l: Vec<usize>,
    /// Accepted pseudo-labels per class in the last completed epoch.
    pub sigma_u: Vec<usize>,
    /// `sigma_l + sigma_u`.
    pub gamma: Vec<usize>,
    /// Class distribution `gamma / Σ gamma` (uniform when all counts are 0).
    pub p: Vec<f64>,
    /// `KL(p ‖ uniform)`.
    pub d_kl: f64,
    pub tau: Vec<f64>,
}

impl ThresholdState {
    /// Fresh state with every threshold at `tau_base` capped by `tau_high`.
    pub fn new(num_classes: usize, tau_base: f64, tau_high: f64) -> Self {
        let c = num_classes.max(1);
        Self {
            num_classes,
            tau_base,
            tau_high,
            sigma_l: vec![0; num_classes],
            sigma_u: vec![0; num_classes],
            gamma: vec![0; num_classes],
            p: vec![1.0 / c as f64; num_classes],
            d_kl: 0.0,
            tau: vec![tau_base.min(tau_high).max(0.0); num_classes],
        }
    }

    /// Recomputes `σ_u`, `γ` and `p` from one epoch of decisions and the
    /// labeled counts.
    pub fn update_class_stats(&mut self, decisions: &[PseudoLabelDecision], labeled_counts: &[usize]) -> Result<()> {
        if labeled_counts.len() != self.num_classes {
            return Err(config_err!(
                "labeled_counts has {} entries for {} classes",
                labeled_counts.len(),
                self.num_classes
            ));
        }
        let mut sigma_u = vec![0; self.num_classes];
        for d in decisions.iter().filter(|d| d.accepted) {
            sigma_u[d.class] += 1;
        }
        self.set_counts(labeled_counts, &sigma_u);
        Ok(())
    }

    fn set_counts(&mut self, labeled: &[usize], pseudo: &[usize]) {
        self.sigma_l = labeled.to_vec();
        self.sigma_u = pseudo.to_vec();
        self.gamma = labeled.iter().zip(pseudo).map(|(l, u)| l + u).collect();
        let total: usize = self.gamma.iter().sum();
        self.p = if total == 0 {
            vec![1.0 / self.num_classes as f64; self.num_classes]
        } else {
            self.gamma.iter().map(|&g| g as f64 / total as f64).collect()
        };
    }

    /// Sets `d_kl` and the clamped per-class thresholds from `p`.
    pub fn update_thresholds(&mut self) -> Result<()> {
        let uniform = vec![1.0 / self.num_classes as f64; self.num_classes];
        self.d_kl = kl_divergence(&self.p, &uniform)?;
        self.tau = self
            .p
            .iter()
            .map(|&pc| (pc + self.tau_base - self.d_kl).min(self.tau_high).max(0.0))
            .collect();
        Ok(())
    }

    /// Every class at the base threshold (the fixed-threshold baseline).
    pub fn use_fixed_thresholds(&mut self) {
        self.tau = vec![self.tau_base; self.num_classes];
    }
}

/// Outcome of thresholding one weak-view prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelDecision {
    pub id: usize,
    pub max_prob: f64,
    /// Argmax class (lowest index on ties).
    pub class: usize,
    pub accepted: bool,
}

/// Accepts the argmax class when its probability reaches that class's
/// threshold.
pub fn decide(id: usize, probs: &[f64], state: &ThresholdState) -> PseudoLabelDecision {
    let class = argmax(probs);
    let max_prob = probs[class];
    PseudoLabelDecision { id, max_prob, class, accepted: max_prob >= state.tau[class] }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Maximum negatives per anchor.
    pub negatives: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: 0.05, negatives: 8 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || self.negatives == 0 {
            return Err(config_err!("contrastive temperature must be > 0 and negatives >= 1"));
        }
        Ok(())
    }
}

/// Negatives of anchor `i` in a batch of `n`: the next `min(s, n − 1)`
/// samples in cyclic order.
pub fn negatives_for(i: usize, n: usize, s: usize) -> Vec<usize> {
    (1..=s.min(n.saturating_sub(1))).map(|k| (i + k) % n).collect()
}

/// `Σᵢ −ln p(yᵢ)` over a labeled batch.
pub fn loss_cls(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    probs.iter().zip(labels).map(|(p, &y)| -libm::log(p[y])).sum()
}

/// `Σ −ln p(ŷᵢ | strong view)` over accepted decisions; `strong_probs[i]`
/// belongs to `decisions[i]`.
pub fn loss_pl(decisions: &[PseudoLabelDecision], strong_probs: &[Vec<f64>]) -> f64 {
    decisions
        .iter()
        .zip(strong_probs)
        .filter(|(d, _)| d.accepted)
        .map(|(d, p)| -libm::log(p[d.class]))
        .sum()
}

/// Mean contrastive loss over the low-confidence rows.
///
/// Row `i` of `weak`/`strong` holds the fused weak and strong features of
/// sample `i`; the positive score is `exp(cos(weakᵢ, strongᵢ)/T)` and each
/// negative `k` scores `exp(cos(weak_k, strong_k)/T)`.
pub fn loss_con(weak: &Matrix, strong: &Matrix, cfg: &ContrastiveConfig, low_conf: &[bool]) -> Result<f64> {
    let n = weak.rows();
    if n < 2 || strong.shape() != weak.shape() || low_conf.len() != n {
        return Err(config_err!("contrastive loss needs a batch of at least 2 with matching views"));
    }
    let inv_t = 1.0 / cfg.temperature;
    let d: Vec<f64> = (0..n).map(|i| libm::exp(numeric::cosine(weak.row(i), strong.row(i)) * inv_t)).collect();
    let anchors: Vec<usize> = (0..n).filter(|&i| low_conf[i]).collect();
    if anchors.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = anchors
        .iter()
        .map(|&i| {
            let neg: f64 = negatives_for(i, n, cfg.negatives).iter().map(|&k| d[k]).sum();
            -libm::log(d[i] / (d[i] + neg))
        })
        .sum();
    Ok(total / anchors.len() as f64)
}

/// `L_cls + λ_p·L_pl + λ_c·L_con`.
pub fn loss_ssl(l_cls: f64, l_pl: f64, l_con: f64, lambda_p: f64, lambda_c: f64) -> f64 {
    l_cls + lambda_p * l_pl + lambda_c * l_con
}

fn one_hot(rows: usize, classes: usize, labels: impl Iterator<Item = (usize, usize)>) -> Matrix {
    let mut t = Matrix::zeros(rows, classes);
    for (i, y) in labels {
        t[(i, y)] = 1.0;
    }
    t
}

/// `weight · Σᵢ −ln softmax(logitsᵢ)[yᵢ]` on the tape.
pub fn cls_loss_node(tape: &mut Tape, logits: Var, labels: &[usize], weight: f64) -> Result<Var> {
    let (n, c) = tape.value(logits).shape();
    let targets = one_hot(n, c, labels.iter().copied().enumerate());
    tape.softmax_xent(logits, targets, vec![weight; n])
}

/// Pseudo-label cross-entropy on the accepted rows of `strong_logits`; the
/// targets are constants.
pub fn pl_loss_node(tape: &mut Tape, strong_logits: Var, decisions: &[PseudoLabelDecision], weight: f64) -> Result<Var> {
    let (n, c) = tape.value(strong_logits).shape();
    let targets = one_hot(n, c, decisions.iter().enumerate().filter(|(_, d)| d.accepted).map(|(i, d)| (i, d.class)));
    let weights = decisions.iter().map(|d| if d.accepted { weight } else { 0.0 }).collect();
    tape.softmax_xent(strong_logits, targets, weights)
}

/// Contrastive loss on the tape, scaled by `weight` (use `1/#anchors` for
/// the mean).
pub fn con_loss_node(
    tape: &mut Tape,
    weak: Var,
    strong: Var,
    low_conf: &[bool],
    cfg: &ContrastiveConfig,
    weight: f64,
) -> Result<Var> {
    let n = tape.value(weak).rows();
    if n < 2 {
        return Err(config_err!("contrastive loss needs a batch of at least 2"));
    }
    let sims = tape.row_cosine(weak, strong)?;
    let anchors: Vec<usize> = (0..n).filter(|&i| low_conf[i]).collect();
    let negatives = anchors.iter().map(|&i| negatives_for(i, n, cfg.negatives)).collect();
    tape.pair_contrast(sims, anchors, negatives, cfg.temperature, weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state_with(labeled: &[usize]) -> ThresholdState {
        let mut s = ThresholdState::new(labeled.len(), 0.95, 0.95);
        s.update_class_stats(&[], labeled).unwrap();
        s.update_thresholds().unwrap();
        s
    }

    fn accepted(id: usize, class: usize) -> PseudoLabelDecision {
        PseudoLabelDecision { id, max_prob: 0.99, class, accepted: true }
    }

    #[test]
    fn labeled_only_stats() {
        let s = state_with(&[9, 1]);
        assert_eq!(s.gamma, vec![9, 1]);
        assert_eq!(s.p, vec![0.9, 0.1]);
    }

    #[test]
    fn pseudo_labels_rebalance() {
        let mut s = ThresholdState::new(2, 0.95, 0.95);
        let mut d = vec![accepted(0, 0)];
        d.extend((1..10).map(|i| accepted(i, 1)));
        d.push(PseudoLabelDecision { id: 10, max_prob: 0.5, class: 0, accepted: false });
        s.update_class_stats(&d, &[9, 1]).unwrap();
        assert_eq!(s.sigma_u, vec![1, 9]);
        assert_eq!(s.gamma, vec![10, 10]);
        assert_eq!(s.p, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_counts_give_uniform() {
        let s = state_with(&[0, 0, 0]);
        assert!(s.p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(state_with(&[1, 2]).update_class_stats(&[], &[1]).is_err());
    }

    #[test]
    fn balanced_thresholds_equal_base() {
        let s = state_with(&[5, 5]);
        assert_eq!(s.d_kl, 0.0);
        assert_eq!(s.tau, vec![0.95, 0.95]);
    }

    #[test]
    fn imbalanced_thresholds() {
        let s = state_with(&[9, 1]);
        let kl = 0.9 * libm::log(1.8) + 0.1 * libm::log(0.2);
        assert!((s.d_kl - kl).abs() < 1e-15);
        assert!((s.d_kl - 0.3681).abs() < 1e-4);
        assert_eq!(s.tau[0], 0.95);
        assert!((s.tau[1] - (0.1 + 0.95 - kl)).abs() < 1e-15);
        assert!((s.tau[1] - 0.6819).abs() < 1e-3);
    }

    #[test]
    fn starved_classes_clamp_to_zero() {
        let mut counts = vec![0; 10];
        counts[3] = 7;
        let s = state_with(&counts);
        assert!((s.d_kl - libm::log(10.0)).abs() < 1e-12);
        // Raw values are 0.95 − ln 10 < 0 for empty classes and
        // 1.95 − ln 10 < 0 for the populated one.
        assert!(s.tau.iter().all(|&t| t == 0.0));
        let mut sparse = vec![1; 10];
        sparse[0] = 91;
        let s = state_with(&sparse);
        assert_eq!(s.tau[1], 0.0);
        assert!(s.tau[0] > 0.0);
    }

    #[test]
    fn decide_examples() {
        let balanced = state_with(&[5, 5]);
        let d = decide(0, &[0.97, 0.03], &balanced);
        assert!(d.accepted && d.class == 0);
        let skewed = state_with(&[9, 1]);
        let d = decide(1, &[0.3, 0.7], &skewed);
        assert!(d.accepted && d.class == 1);
        let d = decide(2, &[0.5, 0.5], &skewed);
        assert_eq!(d.class, 0);
        assert_eq!(d.accepted, 0.5 >= skewed.tau[0]);
    }

    #[test]
    fn cls_examples() {
        assert_eq!(loss_cls(&[vec![1.0, 0.0]], &[0]), 0.0);
        assert!((loss_cls(&[vec![0.5, 0.5]], &[1]) - libm::log(2.0)).abs() < 1e-15);
        let probs: Vec<Vec<f64>> = (0..8).map(|i| vec![0.1 + 0.1 * i as f64, 0.9 - 0.1 * i as f64]).collect();
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let single: f64 = (0..8).map(|i| loss_cls(&probs[i..=i], &labels[i..=i])).sum();
        assert!((loss_cls(&probs, &labels) - single).abs() < 1e-12);
    }

    #[test]
    fn pl_examples() {
        let rejected = PseudoLabelDecision { id: 0, max_prob: 0.6, class: 0, accepted: false };
        assert_eq!(loss_pl(&[rejected], &[vec![0.2, 0.8]]), 0.0);
        let acc = accepted(1, 1);
        assert!((loss_pl(&[rejected, acc], &[vec![0.2, 0.8], vec![0.5, 0.5]]) - libm::log(2.0)).abs() < 1e-15);
    }

    fn identical_batch(n: usize) -> Matrix {
        Matrix::from_rows(&(0..n).map(|i| vec![1.0 + i as f64, 2.0, -0.5]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn contrastive_all_identical_is_ln_nine() {
        let w = identical_batch(9);
        // Every pair is (x, x) so all similarities equal 1.
        let l = loss_con(&w, &w, &ContrastiveConfig::default(), &[true; 9]).unwrap();
        assert!((l - libm::log(9.0)).abs() < 1e-9);
        assert!((l - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn contrastive_orthogonal_negatives_vanish() {
        let n = 9;
        let mut weak = Matrix::zeros(n, 2);
        let mut strong = Matrix::zeros(n, 2);
        for i in 0..n {
            weak[(i, 0)] = 1.0;
            if i == 0 {
                strong[(i, 0)] = 2.0;
            } else {
                strong[(i, 1)] = 1.0;
            }
        }
        let mut low = vec![false; n];
        low[0] = true;
        let l = loss_con(&weak, &strong, &ContrastiveConfig::default(), &low).unwrap();
        let closed = libm::log(1.0 + 8.0 * libm::exp(-20.0));
        assert!((l - closed).abs() < 1e-12);
        assert!(l <= 1e-6);
    }

    #[test]
    fn contrastive_zero_norm_is_finite() {
        let z = Matrix::zeros(3, 4);
        let l = loss_con(&z, &z, &ContrastiveConfig::default(), &[true; 3]).unwrap();
        assert!(l.is_finite() && l > 0.0);
        assert!(loss_con(&Matrix::zeros(1, 2), &Matrix::zeros(1, 2), &ContrastiveConfig::default(), &[true]).is_err());
    }

    #[test]
    fn ssl_weighting() {
        assert_eq!(loss_ssl(1.0, 2.0, 3.0, 0.0, 0.0), 1.0);
        assert!((loss_ssl(1.0, 2.0, 3.0, 0.1, 0.1) - 1.5).abs() < 1e-15);
        assert_eq!(loss_ssl(0.0, 0.0, 0.0, 0.1, 0.1), 0.0);
    }

    #[test]
    fn node_losses_match_plain() {
        let logits = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.1], vec![-0.4, 0.4]]).unwrap();
        let probs: Vec<Vec<f64>> = (0..3).map(|i| numeric::softmax(logits.row(i)).unwrap()).collect();
        let mut t = Tape::new();
        let lv = t.param(logits.clone());
        let cls = cls_loss_node(&mut t, lv, &[0, 1, 1], 1.0).unwrap();
        assert!((t.scalar(cls) - loss_cls(&probs, &[0, 1, 1])).abs() < 1e-12);

        let decisions = [accepted(0, 1), PseudoLabelDecision { id: 1, max_prob: 0.3, class: 0, accepted: false }, accepted(2, 0)];
        let pl = pl_loss_node(&mut t, lv, &decisions, 1.0).unwrap();
        assert!((t.scalar(pl) - loss_pl(&decisions, &probs)).abs() < 1e-12);

        let weak = Matrix::from_rows(&[vec![1.0, 0.2, 0.0], vec![0.1, 1.0, 0.5], vec![0.3, -0.2, 0.8]]).unwrap();
        let strong = Matrix::from_rows(&[vec![0.9, 0.1, 0.3], vec![-0.2, 0.8, 0.6], vec![0.1, 0.4, 0.7]]).unwrap();
        let low = [true, false, true];
        let cfg = ContrastiveConfig::default();
        let wv = t.param(weak.clone());
        let sv = t.param(strong.clone());
        let con = con_loss_node(&mut t, wv, sv, &low, &cfg, 0.5).unwrap();
        assert!((t.scalar(con) - loss_con(&weak, &strong, &cfg, &low).unwrap()).abs() < 1e-10);
    }

    fn brute_force_accepted(probs: &[Vec<f64>], tau: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, p) in probs.iter().enumerate() {
            for c in 0..tau.len() {
                let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let is_arg = (0..c).all(|j| p[j] < p[c]) && p[c] == max;
                if (max >= tau[c]) && is_arg {
                    out.push(i);
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn acceptance_matches_double_indicator(
            logits in proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, 3), 1..16),
            counts in proptest::collection::vec(0usize..50, 3),
        ) {
            let s = state_with(&counts);
            let probs: Vec<Vec<f64>> = logits.iter().map(|z| numeric::softmax(z).unwrap()).collect();
            let got: Vec<usize> = probs.iter().enumerate().filter(|(i, p)| decide(*i, p, &s).accepted).map(|(i, _)| i).collect();
            prop_assert_eq!(got, brute_force_accepted(&probs, &s.tau));
        }

        #[test]
        fn thresholds_bounded_and_monotone(counts in proptest::collection::vec(0usize..100, 2..8)) {
            let s = state_with(&counts);
            for c in 0..counts.len() {
                prop_assert!(s.tau[c] >= 0.0 && s.tau[c] <= s.tau_high);
                for d in 0..counts.len() {
                    if s.p[c] <= s.p[d] {
                        prop_assert!(s.tau[c] <= s.tau[d]);
                    }
                }
            }
            prop_assert!((s.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn contrastive_scale_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 6), 2..10),
            scale in 0.01f64..100.0,
        ) {
            let n = rows.len();
            let weak = Matrix::from_rows(&rows.iter().map(|r| r[..3].to_vec()).collect::<Vec<_>>()).unwrap();
            let strong = Matrix::from_rows(&rows.iter().map(|r| r[3..].to_vec()).collect::<Vec<_>>()).unwrap();
            prop_assume!((0..n).all(|i| numeric::norm(weak.row(i)) > 1e-3 && numeric::norm(strong.row(i)) > 1e-3));
            let low = vec![true; n];
            let cfg = ContrastiveConfig { temperature: 0.5, negatives: 8 };
            let a = loss_con(&weak, &strong, &cfg, &low).unwrap();
            let b = loss_con(&weak.scale(scale), &strong.scale(scale), &cfg, &low).unwrap();
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
            prop_assert!(a > 0.0);
        }
    }
}
