//! The rho-ball secure classifier and its relation to a GP with rejection.
//!
//! A point is labelled only when its kernel similarity to some anchor exceeds
//! `rho`; everything else is rejected. Under an RBF kernel the similarity ball
//! `k(x, a) > rho` is a Euclidean ball (in lengthscale units) of radius
//! `sqrt(-2 ln(rho / variance))`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::gp::{Decision, RejectionPolicy, TrainedGP};
use crate::kernel::{KernelFamily, KernelSpec};

/// Off-diagonal similarity below which anchors count as unrelated.
pub const IDENTITY_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SecureClassifier {
    anchors: Vec<Vec<f64>>,
    labels: Vec<f64>,
    rho: f64,
    spec: KernelSpec,
}

impl SecureClassifier {
    /// Fails when two differently labelled anchors have overlapping balls.
    pub fn new(anchors: Vec<Vec<f64>>, labels: Vec<f64>, rho: f64, spec: KernelSpec) -> Result<Self> {
        if spec.family != KernelFamily::Rbf {
            return Err(invalid("the secure classifier needs an abating (RBF) kernel"));
        }
        if anchors.is_empty() {
            return Err(invalid("at least one anchor is required"));
        }
        check_dim(anchors.len(), labels.len())?;
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("anchor labels must be -1 or +1"));
        }
        if !(rho > 0.0 && rho < spec.variance) {
            return Err(invalid(format!("rho must lie in (0, variance = {}), got {rho}", spec.variance)));
        }
        let d = anchors[0].len();
        for a in &anchors {
            check_dim(d, a.len())?;
        }
        spec.check_input_dim(d)?;
        let sc = SecureClassifier { anchors, labels, rho, spec };
        // open balls of radius r intersect iff the scaled centre distance is below 2r
        let r = sc.scaled_radius();
        for i in 0..sc.anchors.len() {
            for j in i + 1..sc.anchors.len() {
                if sc.labels[i] != sc.labels[j] {
                    let dist = (2.0 * sc.spec.dissimilarity(&sc.anchors[i], &sc.anchors[j])?).sqrt();
                    if dist < 2.0 * r {
                        return Err(invalid(format!(
                            "anchors {i} and {j} carry different labels but their rho-balls overlap"
                        )));
                    }
                }
            }
        }
        Ok(sc)
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Ball radius in lengthscale-scaled units.
    pub fn scaled_radius(&self) -> f64 {
        (-2.0 * (self.rho / self.spec.variance).ln()).sqrt()
    }

    /// Euclidean ball radius for a shared lengthscale.
    pub fn radius(&self) -> f64 {
        self.spec.lengthscale.primary() * self.scaled_radius()
    }

    /// Label of the most similar anchor when that similarity exceeds `rho`,
    /// otherwise reject.
    pub fn classify(&self, x: &[f64]) -> Result<Decision> {
        check_dim(self.anchors[0].len(), x.len())?;
        let (best, sim) = self
            .anchors
            .iter()
            .map(|a| self.spec.eval_unchecked(x, a))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        Ok(if sim > self.rho { Decision::from_sign(self.labels[best]) } else { Decision::Reject })
    }

    /// The band policy matching this classifier: `tau0 = tau1 = 1 - rho / variance`.
    pub fn matched_policy(&self) -> Result<RejectionPolicy> {
        RejectionPolicy::symmetric(1.0 - self.rho / self.spec.variance)
    }
}

/// True when every off-diagonal kernel entry among `anchors` is below `eps`.
pub fn check_identity_assumption(anchors: &[Vec<f64>], spec: &KernelSpec, eps: f64) -> Result<bool> {
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            if spec.eval(&anchors[i], &anchors[j])?.abs() >= eps {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub agreement_rate: f64,
    pub disagreements: Vec<Vec<f64>>,
}

/// Compares the secure classifier with GP-with-rejection probe by probe.
///
/// Requires the GP to be fitted on exactly the classifier's anchors and labels
/// with the same kernel, the identity assumption to hold, and the policy to be
/// the matched one (`tau = 1 - rho / variance`).
pub fn equivalence_check(
    sc: &SecureClassifier,
    gp: &TrainedGP,
    policy: &RejectionPolicy,
    probes: &[Vec<f64>],
) -> Result<EquivalenceReport> {
    if gp.train_features() != sc.anchors() || gp.train_targets() != sc.labels() {
        return Err(invalid("the GP was not trained on the secure classifier's anchors and labels"));
    }
    if gp.spec() != sc.spec() {
        return Err(invalid("the GP kernel differs from the secure classifier's kernel"));
    }
    if !check_identity_assumption(sc.anchors(), sc.spec(), IDENTITY_EPS)? {
        return Err(invalid("identity assumption violated: some anchors have non-negligible similarity"));
    }
    let tau = 1.0 - sc.rho / sc.spec.variance;
    if (policy.tau0() - tau).abs() > 1e-12 || (policy.tau1() - tau).abs() > 1e-12 {
        return Err(invalid(format!("rejection thresholds must both equal 1 - rho/variance = {tau}")));
    }
    if probes.is_empty() {
        return Err(invalid("at least one probe is required"));
    }
    let outcomes = crate::par::try_map(probes, |x| -> Result<bool> {
        Ok(sc.classify(x)? == gp.predict_with_rejection(x, policy)?)
    })?;
    let disagreements: Vec<Vec<f64>> =
        probes.iter().zip(&outcomes).filter(|(_, &ok)| !ok).map(|(p, _)| p.clone()).collect();
    Ok(EquivalenceReport {
        agreement_rate: 1.0 - disagreements.len() as f64 / probes.len() as f64,
        disagreements,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub outside_classified_fraction: f64,
    pub outside_count: usize,
    pub outside_classified_count: usize,
    pub grid_size: usize,
}

/// Fraction of `grid` that lies outside every rho-ball around the GP's
/// training points yet still receives a label under `policy`.
pub fn generalization_probe(
    gp: &TrainedGP,
    spec: &KernelSpec,
    rho: f64,
    grid: &[Vec<f64>],
    policy: &RejectionPolicy,
) -> Result<GeneralizationReport> {
    if grid.is_empty() {
        return Err(invalid("probe grid must be non-empty"));
    }
    let flags = crate::par::try_map(grid, |x| -> Result<(bool, bool)> {
        check_dim(gp.dim(), x.len())?;
        let outside = gp.train_features().iter().all(|a| spec.eval_unchecked(x, a) <= rho);
        let classified = outside && !gp.predict_with_rejection(x, policy)?.is_reject();
        Ok((outside, classified))
    })?;
    let outside_count = flags.iter().filter(|f| f.0).count();
    let outside_classified_count = flags.iter().filter(|f| f.1).count();
    Ok(GeneralizationReport {
        outside_classified_fraction: outside_classified_count as f64 / grid.len() as f64,
        outside_count,
        outside_classified_count,
        grid_size: grid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{grid_points_2d, uniform_points};
    use crate::gp::fit_regression_targets;

    const TINY_JITTER: f64 = 1e-12;

    fn rbf(l: f64) -> KernelSpec {
        KernelSpec::rbf(l, 1.0).unwrap()
    }

    fn spread_anchors(l: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let gap = 20.0 * l;
        (vec![vec![0.0, 0.0], vec![gap, 0.0], vec![0.0, gap], vec![gap, gap]], vec![1.0, -1.0, -1.0, 1.0])
    }

    #[test]
    fn classify_cases() {
        let (a, y) = spread_anchors(1.0);
        let sc = SecureClassifier::new(a.clone(), y, 0.5, rbf(1.0)).unwrap();
        assert_eq!(sc.classify(&a[1]).unwrap(), Decision::Negative);
        assert_eq!(sc.classify(&a[0]).unwrap(), Decision::Positive);
        assert_eq!(sc.classify(&[10.0, 10.0]).unwrap(), Decision::Reject);
        // exactly on the ball boundary: similarity == rho, strict inequality rejects
        let rho = (-0.5f64).exp();
        let sc = SecureClassifier::new(vec![vec![0.0]], vec![1.0], rho, rbf(1.0)).unwrap();
        assert_eq!(rbf(1.0).eval(&[1.0], &[0.0]).unwrap(), rho);
        assert_eq!(sc.classify(&[1.0]).unwrap(), Decision::Reject);
        assert_eq!(sc.classify(&[0.999]).unwrap(), Decision::Positive);
        assert!((sc.radius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn construction_guards() {
        // different labels with overlapping balls
        assert!(SecureClassifier::new(vec![vec![0.0], vec![1.0]], vec![1.0, -1.0], 0.5, rbf(1.0)).is_err());
        // same labels may overlap
        assert!(SecureClassifier::new(vec![vec![0.0], vec![1.0]], vec![1.0, 1.0], 0.5, rbf(1.0)).is_ok());
        assert!(SecureClassifier::new(vec![vec![0.0]], vec![1.0], 1.0, rbf(1.0)).is_err());
        assert!(SecureClassifier::new(vec![vec![0.0]], vec![1.0], 0.5, KernelSpec::linear(1.0).unwrap()).is_err());
    }

    #[test]
    fn identity_assumption_cases() {
        let l = 0.7;
        let spec = rbf(l);
        assert!(check_identity_assumption(&[vec![0.0], vec![20.0 * l]], &spec, 1e-10).unwrap());
        assert!(!check_identity_assumption(&[vec![1.0, 2.0], vec![1.0, 2.0]], &spec, 1e-10).unwrap());
        assert!(check_identity_assumption(&[vec![3.0]], &spec, 1e-10).unwrap());
    }

    #[test]
    fn equivalence_holds_in_identity_regime() {
        let l = 1.0;
        let (a, y) = spread_anchors(l);
        let rho = 0.4;
        let sc = SecureClassifier::new(a.clone(), y.clone(), rho, rbf(l)).unwrap();
        let gp = fit_regression_targets(&rbf(l), &a, &y, TINY_JITTER).unwrap();
        let probes = uniform_points(&[(-3.0, 23.0), (-3.0, 23.0)], 1000, 5);
        let policy = sc.matched_policy().unwrap();
        let rep = equivalence_check(&sc, &gp, &policy, &probes).unwrap();
        assert_eq!(rep.agreement_rate, 1.0);
        assert!(rep.disagreements.is_empty());
        let json = serde_json::to_value(&rep).unwrap();
        assert!(json.get("agreement_rate").is_some() && json.get("disagreements").is_some());
    }

    #[test]
    fn equivalence_with_rho_near_one_rejects_everything() {
        let l = 1.0;
        let (a, y) = spread_anchors(l);
        let rho = 1.0 - 1e-9;
        let sc = SecureClassifier::new(a.clone(), y.clone(), rho, rbf(l)).unwrap();
        let gp = fit_regression_targets(&rbf(l), &a, &y, TINY_JITTER).unwrap();
        let probes = uniform_points(&[(-3.0, 23.0), (-3.0, 23.0)], 500, 6);
        let policy = sc.matched_policy().unwrap();
        let rep = equivalence_check(&sc, &gp, &policy, &probes).unwrap();
        assert_eq!(rep.agreement_rate, 1.0);
        assert!(probes.iter().all(|p| sc.classify(p).unwrap().is_reject()));
    }

    #[test]
    fn equivalence_guards() {
        let l = 1.0;
        let a = vec![vec![0.0, 0.0], vec![2.0 * l, 0.0]];
        let y = vec![1.0, 1.0];
        let sc = SecureClassifier::new(a.clone(), y.clone(), 0.5, rbf(l)).unwrap();
        let gp = fit_regression_targets(&rbf(l), &a, &y, TINY_JITTER).unwrap();
        let policy = sc.matched_policy().unwrap();
        assert!(equivalence_check(&sc, &gp, &policy, &[vec![0.0, 0.0]]).is_err());

        let (a, y) = spread_anchors(l);
        let sc = SecureClassifier::new(a.clone(), y.clone(), 0.5, rbf(l)).unwrap();
        let other = fit_regression_targets(&rbf(l), &a[..3], &y[..3], TINY_JITTER).unwrap();
        assert!(equivalence_check(&sc, &other, &policy, &[vec![0.0, 0.0]]).is_err());
        let gp = fit_regression_targets(&rbf(l), &a, &y, TINY_JITTER).unwrap();
        let wrong = RejectionPolicy::symmetric(0.3).unwrap();
        assert!(equivalence_check(&sc, &gp, &wrong, &[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn generalization_probe_cases() {
        let l = 1.0;
        let rho = 0.5;
        let policy = RejectionPolicy::symmetric(1.0 - rho).unwrap();

        let (a, y) = spread_anchors(l);
        let gp = fit_regression_targets(&rbf(l), &a, &y, TINY_JITTER).unwrap();
        let grid = grid_points_2d([(-3.0, 23.0), (-3.0, 23.0)], 120);
        let rep = generalization_probe(&gp, &rbf(l), rho, &grid, &policy).unwrap();
        assert_eq!(rep.outside_classified_fraction, 0.0);
        assert!(rep.outside_count > 0);

        let close = vec![vec![0.0, 0.0], vec![l, 0.0]];
        let gp = fit_regression_targets(&rbf(l), &close, &[1.0, 1.0], TINY_JITTER).unwrap();
        let grid = grid_points_2d([(-3.0, 4.0), (-3.5, 3.5)], 120);
        let rep = generalization_probe(&gp, &rbf(l), rho, &grid, &policy).unwrap();
        assert!(rep.outside_classified_fraction > 0.0);

        // one anchor whose ball covers the whole grid: nothing is outside
        let gp = fit_regression_targets(&rbf(10.0), &[vec![0.0, 0.0]], &[1.0], TINY_JITTER).unwrap();
        let grid = grid_points_2d([(-1.0, 1.0), (-1.0, 1.0)], 30);
        let rep = generalization_probe(&gp, &rbf(10.0), rho, &grid, &policy).unwrap();
        assert_eq!(rep.outside_count, 0);
        assert_eq!(rep.outside_classified_fraction, 0.0);
    }

    #[test]
    fn generalization_is_not_monotone_in_lengthscale() {
        // the fraction rises while the balls start to interact and falls once they
        // merge and swallow the region between anchors
        let rho = 0.5;
        let policy = RejectionPolicy::symmetric(1.0 - rho).unwrap();
        let anchors = vec![vec![0.0, 0.0], vec![1.5, 0.0], vec![0.5, 1.2]];
        let labels = [1.0, 1.0, 1.0];
        let grid = grid_points_2d([(-10.0, 11.0), (-10.0, 10.0)], 200);
        let frac = |l: f64| {
            let gp = fit_regression_targets(&rbf(l), &anchors, &labels, TINY_JITTER).unwrap();
            generalization_probe(&gp, &rbf(l), rho, &grid, &policy).unwrap().outside_classified_fraction
        };
        let (small, mid, large) = (frac(0.05), frac(0.5), frac(3.0));
        assert_eq!(small, 0.0);
        assert!(mid > small);
        assert!(large < mid);
    }

    proptest::proptest! {
        #[test]
        fn identity_regime_fraction_is_a_lower_bound(l_big in 0.05f64..3.0) {
            let rho = 0.5;
            let policy = RejectionPolicy::symmetric(1.0 - rho).unwrap();
            let anchors = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
            let grid = grid_points_2d([(-4.0, 5.0), (-4.0, 4.0)], 40);
            let l_small = 1.0 / 25.0;
            let f = |l: f64| {
                let gp = fit_regression_targets(&rbf(l), &anchors, &[1.0, 1.0], TINY_JITTER).unwrap();
                generalization_probe(&gp, &rbf(l), rho, &grid, &policy).unwrap().outside_classified_fraction
            };
            proptest::prop_assert!(f(l_small) <= f(l_big.max(l_small)));
        }
    }

    #[test]
    fn never_labels_outside_all_balls() {
        let (a, y) = spread_anchors(0.5);
        let sc = SecureClassifier::new(a.clone(), y, 0.3, rbf(0.5)).unwrap();
        for p in uniform_points(&[(-2.0, 12.0), (-2.0, 12.0)], 2000, 3) {
            let outside = a.iter().all(|x| rbf(0.5).eval(&p, x).unwrap() <= 0.3);
            if outside {
                assert!(sc.classify(&p).unwrap().is_reject());
            }
        }
    }
}
