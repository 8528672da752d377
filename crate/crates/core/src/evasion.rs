//! White-box evasion attacks against the GP latent mean.
//!
//! All attacks are untargeted: they try to flip the sign of the latent mean at
//! the attacked point. Results are plain data, so a set crafted against one
//! model can be replayed against another without recomputation.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, invalid, Error, Result};
use crate::gp::{Decision, RejectRule, TrainedGP};

/// Entries with magnitude above this count as changed features.
pub const L0_TOLERANCE: f64 = 1e-12;

const CW_RESTARTS: usize = 3;
const CW_JITTER_STD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l0: usize,
    pub l2: f64,
    pub linf: f64,
}

impl Norms {
    pub fn of(delta: &[f64]) -> Self {
        Norms {
            l0: delta.iter().filter(|d| d.abs() > L0_TOLERANCE).count(),
            l2: delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
            linf: delta.iter().fold(0.0, |m, d| m.max(d.abs())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub original: Vec<f64>,
    pub adversarial: Vec<f64>,
    pub delta: Vec<f64>,
    pub norms: Norms,
    pub success: bool,
    pub iterations_used: usize,
}

impl AdversarialResult {
    /// Builds a result from a candidate point inside `bounds`.
    ///
    /// `delta` is chosen so that `original + delta` reproduces the stored
    /// adversarial bit for bit, stays inside `bounds` and has no entry larger
    /// than `cap` in magnitude. Rounding is absorbed by ulp-sized nudges of
    /// `delta` towards zero.
    fn finish(
        gp: &TrainedGP,
        original: &[f64],
        candidate: &[f64],
        bounds: &[(f64, f64)],
        cap: f64,
        iterations: usize,
    ) -> Self {
        let mut delta = Vec::with_capacity(original.len());
        let mut adversarial = Vec::with_capacity(original.len());
        for ((&x, &c), &(lo, hi)) in original.iter().zip(candidate).zip(bounds) {
            let mut d = c - x;
            while d.abs() > cap {
                d = if d > 0.0 { d.next_down() } else { d.next_up() };
            }
            let mut a = x + d;
            while a > hi {
                d = d.next_down();
                a = x + d;
            }
            while a < lo {
                d = d.next_up();
                a = x + d;
            }
            delta.push(d);
            adversarial.push(a);
        }
        let success = flipped(gp, original, &adversarial);
        AdversarialResult { norms: Norms::of(&delta), original: original.to_vec(), adversarial, delta, success, iterations_used: iterations }
    }

    fn unchanged(original: &[f64]) -> Self {
        let delta = vec![0.0; original.len()];
        AdversarialResult {
            original: original.to_vec(),
            adversarial: original.to_vec(),
            norms: Norms::of(&delta),
            delta,
            success: false,
            iterations_used: 0,
        }
    }
}

fn current_label(m: f64) -> f64 {
    if m >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn flipped(gp: &TrainedGP, original: &[f64], adversarial: &[f64]) -> bool {
    Decision::from_sign(gp.latent_mean_unchecked(original)) != Decision::from_sign(gp.latent_mean_unchecked(adversarial))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-feature `[min, max]` observed in `data`.
pub fn default_box(data: &Dataset) -> Vec<(f64, f64)> {
    data.bounds()
}

fn validate_box(bounds: &[(f64, f64)], d: usize) -> Result<()> {
    check_dim(d, bounds.len())?;
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("box for feature {j} must be finite with min <= max, got [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// The box widened to contain `x`, so that a zero perturbation is always feasible.
pub fn box_around(bounds: &[(f64, f64)], x: &[f64]) -> Vec<(f64, f64)> {
    bounds.iter().zip(x).map(|(&(lo, hi), &v)| (lo.min(v), hi.max(v))).collect()
}

fn check_inputs(gp: &TrainedGP, x: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    check_dim(gp.dim(), x.len())?;
    validate_box(bounds, x.len())?;
    Ok(box_around(bounds, x))
}

/// Fast gradient sign step of size `epsilon` away from the current label.
pub fn gpfgs(gp: &TrainedGP, x: &[f64], epsilon: f64, bounds: &[(f64, f64)]) -> Result<AdversarialResult> {
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let bounds = check_inputs(gp, x, bounds)?;
    let c = current_label(gp.latent_mean_unchecked(x));
    let grad = gp.latent_gradient_unchecked(x);
    if epsilon == 0.0 || grad.iter().all(|&g| g == 0.0) {
        return Ok(AdversarialResult::unchanged(x));
    }
    let candidate: Vec<f64> = x
        .iter()
        .zip(&grad)
        .zip(&bounds)
        .map(|((&xj, &g), &(lo, hi))| (xj - epsilon * c * sign(g)).clamp(lo, hi))
        .collect();
    Ok(AdversarialResult::finish(gp, x, &candidate, &bounds, epsilon, 1))
}

/// Greedy saliency attack: moves one not-yet-modified feature per iteration,
/// always the one with the largest gradient magnitude (lowest index on ties),
/// until the label flips or `budget` features have been changed.
pub fn gpjm(gp: &TrainedGP, x: &[f64], budget: usize, step: f64, bounds: &[(f64, f64)]) -> Result<AdversarialResult> {
    if budget == 0 {
        return Err(invalid("budget must be at least 1"));
    }
    if !(step > 0.0) {
        return Err(invalid(format!("step must be positive, got {step}")));
    }
    let bounds = check_inputs(gp, x, bounds)?;
    let c = current_label(gp.latent_mean_unchecked(x));
    let mut cur = x.to_vec();
    let mut modified = vec![false; x.len()];
    let mut iterations = 0;
    while iterations < budget.min(x.len()) {
        let grad = gp.latent_gradient_unchecked(&cur);
        let pick = grad
            .iter()
            .enumerate()
            .filter(|&(j, g)| !modified[j] && *g != 0.0)
            .fold(None, |best: Option<(usize, f64)>, (j, &g)| match best {
                Some((_, bg)) if bg.abs() >= g.abs() => best,
                _ => Some((j, g)),
            });
        let Some((j, g)) = pick else { break };
        let (lo, hi) = bounds[j];
        cur[j] = (cur[j] - c * sign(g) * step).clamp(lo, hi);
        modified[j] = true;
        iterations += 1;
        if flipped(gp, x, &cur) {
            break;
        }
    }
    if iterations == 0 {
        return Ok(AdversarialResult::unchanged(x));
    }
    Ok(AdversarialResult::finish(gp, x, &cur, &bounds, f64::INFINITY, iterations))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Perturbation strength for the gradient sign attack.
    pub epsilon: f64,
    pub max_iter: usize,
    pub step_size: f64,
    /// Weight `s` of the misclassification term in the Carlini-Wagner objective.
    pub confidence: f64,
    /// How far past the decision boundary the latent mean must be pushed.
    #[serde(default)]
    pub margin: f64,
    /// Per-feature `[min, max]`.
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        AttackConfig { epsilon: 0.3, max_iter: 200, step_size: 0.01, confidence: 10.0, margin: 0.01, bounds, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.confidence >= 0.0) || !(self.margin >= 0.0) {
            return Err(invalid("epsilon, confidence and margin must be non-negative"));
        }
        if !(self.step_size > 0.0) {
            return Err(invalid(format!("step_size must be positive, got {}", self.step_size)));
        }
        validate_box(&self.bounds, self.bounds.len())
    }
}

/// Carlini-Wagner L2 attack by gradient descent in the tanh reparameterization.
///
/// Minimizes `|cand - x|^2 + s * max(c * m(cand), -margin)` where `c` is the
/// current label. Runs one descent from the point itself and two from jittered
/// starts; returns the closest successful candidate, or the lowest-objective
/// candidate when none succeeded.
pub fn cw_l2(gp: &TrainedGP, x: &[f64], config: &AttackConfig) -> Result<AdversarialResult> {
    config.validate()?;
    let bounds = check_inputs(gp, x, &config.bounds)?;
    let d = x.len();
    let s = config.confidence;
    if s == 0.0 {
        // nothing pulls towards the other class; the optimum is x itself
        return Ok(AdversarialResult::unchanged(x));
    }
    let c = current_label(gp.latent_mean_unchecked(x));
    let half: Vec<f64> = bounds.iter().map(|&(lo, hi)| (hi - lo) / 2.0).collect();
    let to_box = |w: &[f64]| -> Vec<f64> {
        w.iter()
            .zip(&bounds)
            .zip(&half)
            .map(|((&wj, &(lo, hi)), &h)| (lo + h * (wj.tanh() + 1.0)).clamp(lo, hi))
            .collect()
    };
    let objective = |cand: &[f64], m: f64| -> f64 {
        let dist: f64 = cand.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        dist + s * (c * m).max(-config.margin)
    };
    let w0: Vec<f64> = x
        .iter()
        .zip(&bounds)
        .zip(&half)
        .map(|((&xj, &(lo, _)), &h)| if h > 0.0 { ((xj - lo) / h - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh() } else { 0.0 })
        .collect();

    // the untouched point is a valid candidate with zero distance
    let m_x = gp.latent_mean_unchecked(x);
    let mut best_obj = (objective(x, m_x), x.to_vec());
    let mut best_success: Option<(f64, Vec<f64>)> = None;
    let mut jitter_rng = crate::rng(crate::sub_seed(config.seed, 0xC3));
    let normal = Normal::new(0.0, CW_JITTER_STD).expect("positive std");
    let mut total = 0;

    for restart in 0..CW_RESTARTS {
        let mut w = w0.clone();
        if restart > 0 {
            for (wj, &h) in w.iter_mut().zip(&half) {
                if h > 0.0 {
                    *wj += normal.sample(&mut jitter_rng);
                }
            }
        }
        for it in 0..=config.max_iter {
            let cand = to_box(&w);
            let m = gp.latent_mean_unchecked(&cand);
            let obj = objective(&cand, m);
            if !obj.is_finite() || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalFailure { context: "cw_l2", iteration: total });
            }
            if Decision::from_sign(m) != Decision::from_sign(m_x) {
                let dist = cand.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                if best_success.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                    best_success = Some((dist, cand.clone()));
                }
            }
            if obj < best_obj.0 {
                best_obj = (obj, cand.clone());
            }
            if it == config.max_iter {
                break;
            }
            total += 1;
            let hinge_active = c * m > -config.margin;
            let grad_m = if hinge_active && s > 0.0 { gp.latent_gradient_unchecked(&cand) } else { vec![0.0; d] };
            for j in 0..d {
                let dcand = half[j] * (1.0 - w[j].tanh().powi(2));
                let g = (2.0 * (cand[j] - x[j]) + s * c * grad_m[j]) * dcand;
                w[j] -= config.step_size * g;
            }
        }
    }
    let chosen = best_success.map(|(_, p)| p).unwrap_or(best_obj.1);
    Ok(AdversarialResult::finish(gp, x, &chosen, &bounds, f64::INFINITY, total))
}

/// One attack with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "snake_case")]
pub enum Attack {
    Gpfgs { epsilon: f64 },
    Gpjm { budget: usize, step: f64 },
    CwL2(AttackConfig),
}

impl Attack {
    pub fn name(&self) -> &'static str {
        match self {
            Attack::Gpfgs { .. } => "gpfgs",
            Attack::Gpjm { .. } => "gpjm",
            Attack::CwL2(_) => "cw_l2",
        }
    }

    /// The perturbation strength reported alongside results, when the attack has one.
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Attack::Gpfgs { epsilon } => Some(*epsilon),
            Attack::Gpjm { step, .. } => Some(*step),
            Attack::CwL2(_) => None,
        }
    }

    pub fn run(&self, gp: &TrainedGP, x: &[f64], bounds: &[(f64, f64)]) -> Result<AdversarialResult> {
        match self {
            Attack::Gpfgs { epsilon } => gpfgs(gp, x, *epsilon, bounds),
            Attack::Gpjm { budget, step } => gpjm(gp, x, *budget, *step, bounds),
            Attack::CwL2(cfg) => cw_l2(gp, x, &AttackConfig { bounds: bounds.to_vec(), ..cfg.clone() }),
        }
    }

    /// Attacks every row of `data`, keeping the true labels for later scoring.
    pub fn run_set(&self, name: impl Into<String>, gp: &TrainedGP, data: &Dataset, bounds: &[(f64, f64)]) -> Result<AttackSet> {
        let results = crate::par::try_map(data.features(), |x| self.run(gp, x, bounds))?;
        Ok(AttackSet { name: name.into(), epsilon: self.epsilon(), results, true_labels: data.labels().to_vec() })
    }
}

/// Named collection of adversarial examples with the true labels of their originals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSet {
    pub name: String,
    pub epsilon: Option<f64>,
    pub results: Vec<AdversarialResult>,
    pub true_labels: Vec<f64>,
}

impl AttackSet {
    pub fn flip_rate(&self) -> f64 {
        if self.results.is_empty() {
            return 0.0;
        }
        self.results.iter().filter(|r| r.success).count() as f64 / self.results.len() as f64
    }

    /// Fraction of adversarials that `gp` labels correctly. Under a rejection
    /// rule a rejected adversarial counts as correct: the attack was stopped.
    pub fn accuracy_on(&self, gp: &TrainedGP, rule: Option<&RejectRule>) -> Result<f64> {
        if self.results.is_empty() {
            return Err(invalid(format!("attack set `{}` is empty", self.name)));
        }
        check_dim(self.results.len(), self.true_labels.len())?;
        let correct = crate::par::try_map_range(self.results.len(), |i| -> Result<bool> {
            let dec = gp.decide(&self.results[i].adversarial, rule)?;
            Ok(dec.is_reject() || dec.label() == Some(self.true_labels[i]))
        })?;
        Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
    }

    /// One CSV row per example: attack, epsilon, original and adversarial
    /// coordinates, norms, success flag and true label.
    pub fn to_csv(&self) -> String {
        let d = self.results.first().map_or(0, |r| r.original.len());
        let mut out = String::from("attack,epsilon");
        for j in 0..d {
            out.push_str(&format!(",x{j}"));
        }
        for j in 0..d {
            out.push_str(&format!(",adv{j}"));
        }
        out.push_str(",l0,l2,linf,success,true_label\n");
        let eps = self.epsilon.map(|e| e.to_string()).unwrap_or_default();
        for (r, y) in self.results.iter().zip(&self.true_labels) {
            out.push_str(&format!("{},{}", self.name, eps));
            for v in r.original.iter().chain(&r.adversarial) {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{},{},{},{}\n", r.norms.l0, r.norms.l2, r.norms.linf, r.success, y));
        }
        out
    }
}

/// Signed accuracy difference in percentage points (`95%` vs `90%` gives `+5`).
pub fn signed_difference(acc_short: f64, acc_long: f64) -> f64 {
    100.0 * (acc_short - acc_long)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureRow {
    pub attack: String,
    pub short_accuracy: f64,
    pub long_accuracy: f64,
    pub difference: f64,
    pub short_accuracy_rejection: Option<f64>,
    pub long_accuracy_rejection: Option<f64>,
    pub difference_rejection: Option<f64>,
}

/// Replays every attack set against both victims. Positive differences mean
/// the short-lengthscale victim classified more adversarials correctly.
/// `zero_rejection` adds the near-zero rejection columns with that `eps`.
pub fn curvature_comparison(
    victim_short: &TrainedGP,
    victim_long: &TrainedGP,
    sets: &[AttackSet],
    zero_rejection: Option<f64>,
) -> Result<Vec<CurvatureRow>> {
    check_dim(victim_short.dim(), victim_long.dim())?;
    let rule = zero_rejection.map(|eps| RejectRule::NearZero { eps });
    sets.iter()
        .map(|set| {
            let short_accuracy = set.accuracy_on(victim_short, None)?;
            let long_accuracy = set.accuracy_on(victim_long, None)?;
            let (sr, lr) = match &rule {
                Some(r) => (Some(set.accuracy_on(victim_short, Some(r))?), Some(set.accuracy_on(victim_long, Some(r))?)),
                None => (None, None),
            };
            Ok(CurvatureRow {
                attack: set.name.clone(),
                short_accuracy,
                long_accuracy,
                difference: signed_difference(short_accuracy, long_accuracy),
                short_accuracy_rejection: sr,
                long_accuracy_rejection: lr,
                difference_rejection: sr.zip(lr).map(|(s, l)| signed_difference(s, l)),
            })
        })
        .collect()
}
