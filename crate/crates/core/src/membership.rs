//! Membership inference against a trained GP, plus the overfitting and
//! distribution-drift diagnostics that explain when it works.

pub mod forest;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{split_indices, Dataset};
use crate::error::{check_dim, invalid, Result};
use crate::gp::{accuracy, TrainedGP};

pub use forest::{DecisionTree, ForestParams, RandomForest};

/// GP output used as an attack feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipFeature {
    /// Class probability in classification mode, predictive mean in regression.
    Mean,
    Variance,
    LatentMean,
    /// The query point itself, one column per input dimension.
    RawInput,
}

impl MembershipFeature {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "variance" => Ok(Self::Variance),
            "latent_mean" => Ok(Self::LatentMean),
            "raw_input" => Ok(Self::RawInput),
            other => Err(invalid(format!("unknown membership feature `{other}`"))),
        }
    }
}

/// Number of columns produced by `features` for `d`-dimensional inputs.
pub fn feature_arity(features: &[MembershipFeature], d: usize) -> usize {
    features.iter().map(|f| if *f == MembershipFeature::RawInput { d } else { 1 }).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipDataset {
    pub rows: Vec<Vec<f64>>,
    /// `true` for points that were in the victim's training set.
    pub labels: Vec<bool>,
    pub feature_set: Vec<MembershipFeature>,
}

impl MembershipDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn count_in(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

fn feature_row(gp: &TrainedGP, x: &[f64], features: &[MembershipFeature]) -> Result<Vec<f64>> {
    let p = gp.predict(x)?;
    let mut row = Vec::with_capacity(feature_arity(features, x.len()));
    for f in features {
        match f {
            MembershipFeature::Mean => row.push(p.class_probability.unwrap_or(p.mean)),
            MembershipFeature::Variance => row.push(p.variance),
            MembershipFeature::LatentMean => row.push(p.latent_mean),
            MembershipFeature::RawInput => row.extend_from_slice(x),
        }
    }
    Ok(row)
}

fn row_set(rows: &[Vec<f64>]) -> HashSet<Vec<u64>> {
    rows.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect()
}

/// One row of GP outputs per point, labelled in/out and balanced by seeded
/// down-sampling of the larger side.
pub fn build_attack_dataset(
    gp: &TrainedGP,
    in_points: &Dataset,
    out_points: &Dataset,
    features: &[MembershipFeature],
    seed: u64,
) -> Result<MembershipDataset> {
    if features.is_empty() {
        return Err(invalid("feature set must be non-empty"));
    }
    if in_points.is_empty() || out_points.is_empty() {
        return Err(invalid("need at least one in-point and one out-point"));
    }
    check_dim(gp.dim(), in_points.dim())?;
    check_dim(gp.dim(), out_points.dim())?;
    let train = row_set(gp.train_features());
    let ins = row_set(in_points.features());
    let key = |r: &Vec<f64>| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    if out_points.features().iter().any(|r| ins.contains(&key(r))) {
        return Err(invalid("in-points and out-points overlap"));
    }
    if in_points.features().iter().any(|r| !train.contains(&key(r))) {
        return Err(invalid("every in-point must belong to the victim's training set"));
    }
    if out_points.features().iter().any(|r| train.contains(&key(r))) {
        return Err(invalid("out-points must not belong to the victim's training set"));
    }

    let k = in_points.len().min(out_points.len());
    let (in_idx, _) = split_indices(in_points.len(), k, crate::sub_seed(seed, 0));
    let (out_idx, _) = split_indices(out_points.len(), k, crate::sub_seed(seed, 1));
    let mut in_idx = in_idx;
    let mut out_idx = out_idx;
    in_idx.sort_unstable();
    out_idx.sort_unstable();
    let points: Vec<(&[f64], bool)> = in_idx
        .iter()
        .map(|&i| (in_points.row(i), true))
        .chain(out_idx.iter().map(|&i| (out_points.row(i), false)))
        .collect();
    let rows = crate::par::try_map(&points, |(x, _)| feature_row(gp, x, features))?;
    Ok(MembershipDataset { rows, labels: points.iter().map(|p| p.1).collect(), feature_set: features.to_vec() })
}

pub fn train_attack_classifier(ds: &MembershipDataset, params: ForestParams) -> Result<RandomForest> {
    RandomForest::fit(&ds.rows, &ds.labels, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipEval {
    pub accuracy: f64,
    /// Accuracy of always guessing the larger class.
    pub baseline: f64,
}

pub fn evaluate_membership(clf: &RandomForest, test: &MembershipDataset) -> Result<MembershipEval> {
    if test.is_empty() {
        return Err(invalid("membership test set is empty"));
    }
    let preds = crate::par::try_map(&test.rows, |r| clf.predict(r))?;
    let correct = preds.iter().zip(&test.labels).filter(|(p, y)| p == y).count();
    let n = test.len() as f64;
    let n_in = test.count_in() as f64;
    Ok(MembershipEval { accuracy: correct as f64 / n, baseline: n_in.max(n - n_in) / n })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
}

/// Forced-decision accuracy on `train` minus accuracy on `test`.
pub fn overfitting_gap(gp: &TrainedGP, train: &Dataset, test: &Dataset) -> Result<OverfitReport> {
    let train_acc = accuracy(gp, train, None)?.accuracy;
    let test_acc = accuracy(gp, test, None)?.accuracy;
    Ok(OverfitReport { train_acc, test_acc, gap: train_acc - test_acc })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub within_std: f64,
    pub cross_std: f64,
    pub ratio: f64,
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Population standard deviation, summed in sorted order so that equal
/// multisets give bit-identical results.
fn sorted_std(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Spread of kernel-space distances across train/test pairs relative to the
/// spread among training pairs.
///
/// The distance is the GP kernel's log-domain dissimilarity (for RBF, half the
/// squared lengthscale-scaled distance). Pairs of identical points are skipped
/// and every unordered pair counts once, so `test == train` gives a ratio of
/// exactly 1.
pub fn distribution_drift(gp: &TrainedGP, train: &Dataset, test: &Dataset) -> Result<DriftReport> {
    if train.len() < 2 || test.len() < 2 {
        return Err(invalid("drift needs at least two training and two test points"));
    }
    check_dim(gp.dim(), train.dim())?;
    check_dim(gp.dim(), test.dim())?;
    let spec = gp.spec();

    let pair_values = |pairs: &mut dyn Iterator<Item = (&[f64], &[f64])>| -> Result<Vec<f64>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (a, b) in pairs {
            let (ka, kb) = (bits(a), bits(b));
            if ka == kb {
                continue;
            }
            let key = if ka < kb { (ka, kb) } else { (kb, ka) };
            if seen.insert(key) {
                out.push(spec.dissimilarity(a, b)?);
            }
        }
        Ok(out)
    };
    let n = train.len();
    let within = pair_values(&mut (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| (train.row(i), train.row(j))))?;
    let cross = pair_values(
        &mut train.features().iter().flat_map(|a| test.features().iter().map(move |b| (a.as_slice(), b.as_slice()))),
    )?;
    if within.is_empty() || cross.is_empty() {
        return Err(invalid("drift needs at least one pair of distinct points in each set"));
    }
    let within_std = sorted_std(within);
    let cross_std = sorted_std(cross);
    if within_std == 0.0 {
        return Err(invalid("training pairs have zero distance spread"));
    }
    Ok(DriftReport { within_std, cross_std, ratio: cross_std / within_std })
}

/// The full attack: split the victim's training points and a pool of
/// non-members into a held-out balanced test set and an attacker training
/// set, fit the forest, score it, and attach both diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipExperiment {
    pub features: Vec<MembershipFeature>,
    pub forest: ForestParams,
    /// Share of the remaining victim training points the attacker knows.
    pub attacker_fraction: f64,
    pub test_size: usize,
}

impl Default for MembershipExperiment {
    fn default() -> Self {
        MembershipExperiment {
            features: vec![MembershipFeature::LatentMean],
            forest: ForestParams::default(),
            attacker_fraction: 0.8,
            test_size: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipOutcome {
    pub eval: MembershipEval,
    pub overfit: OverfitReport,
    pub drift: DriftReport,
    pub attack_train_rows: usize,
    pub attack_test_rows: usize,
}

impl MembershipExperiment {
    pub fn run(&self, gp: &TrainedGP, victim_train: &Dataset, outside: &Dataset, seed: u64) -> Result<MembershipOutcome> {
        if !(self.attacker_fraction > 0.0 && self.attacker_fraction <= 1.0) {
            return Err(invalid(format!("attacker fraction must lie in (0, 1], got {}", self.attacker_fraction)));
        }
        let half_in = self.test_size / 2;
        let half_out = self.test_size - half_in;
        if victim_train.len() <= half_in || outside.len() <= half_out {
            return Err(invalid(format!(
                "need more than {half_in} training points and {half_out} outside points for a {}-row test set",
                self.test_size
            )));
        }
        let (test_in, rest_in) = split_indices(victim_train.len(), half_in, crate::sub_seed(seed, 10));
        let (test_out, rest_out) = split_indices(outside.len(), half_out, crate::sub_seed(seed, 11));
        let known = ((rest_in.len() as f64 * self.attacker_fraction).ceil() as usize).clamp(1, rest_in.len());
        let known_in: Vec<usize> = rest_in[..known].to_vec();

        let attack_train = build_attack_dataset(
            gp,
            &victim_train.subset(&known_in)?,
            &outside.subset(&rest_out)?,
            &self.features,
            crate::sub_seed(seed, 12),
        )?;
        let attack_test = build_attack_dataset(
            gp,
            &victim_train.subset(&test_in)?,
            &outside.subset(&test_out)?,
            &self.features,
            crate::sub_seed(seed, 13),
        )?;
        let forest = train_attack_classifier(&attack_train, ForestParams { seed: crate::sub_seed(seed, 14), ..self.forest })?;
        Ok(MembershipOutcome {
            eval: evaluate_membership(&forest, &attack_test)?,
            overfit: overfitting_gap(gp, victim_train, outside)?,
            drift: distribution_drift(gp, victim_train, outside)?,
            attack_train_rows: attack_train.len(),
            attack_test_rows: attack_test.len(),
        })
    }
}

/// Serialized membership result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub feature_set: Vec<MembershipFeature>,
    pub accuracy: f64,
    pub baseline: f64,
    pub overfit_gap: f64,
    pub drift_ratio: f64,
    pub lengthscale: f64,
    pub seed: u64,
}

impl MembershipReport {
    pub fn new(outcome: &MembershipOutcome, features: &[MembershipFeature], lengthscale: f64, seed: u64) -> Self {
        MembershipReport {
            feature_set: features.to_vec(),
            accuracy: outcome.eval.accuracy,
            baseline: outcome.eval.baseline,
            overfit_gap: outcome.overfit.gap,
            drift_ratio: outcome.drift.ratio,
            lengthscale,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs_with_std, split};
    use crate::gp::{fit_classification_laplace, DEFAULT_MAX_ITER, DEFAULT_TOL};
    use crate::kernel::KernelSpec;
    use MembershipFeature::*;

    fn rbf(l: f64) -> KernelSpec {
        KernelSpec::rbf(l, 1.0).unwrap()
    }

    /// Heavily overlapping blobs: a victim on 40 points and a disjoint outside pool.
    fn overlap_task(seed: u64) -> (Dataset, Dataset) {
        let data = generate_blobs_with_std(120, 2, 1.0, 1.0, seed).unwrap();
        let (victim, outside) = split(&data, 40.0 / 120.0, seed).unwrap();
        (victim, outside)
    }

    fn victim(l: f64, train: &Dataset) -> TrainedGP {
        fit_classification_laplace(&rbf(l), train, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap()
    }

    #[test]
    fn arity_follows_feature_set() {
        let (train, outside) = overlap_task(0);
        let gp = victim(1.0, &train);
        let ds = build_attack_dataset(&gp, &train, &outside, &[Mean], 0).unwrap();
        assert_eq!(ds.n_features(), 1);
        let ds = build_attack_dataset(&gp, &train, &outside, &[Mean, Variance, RawInput], 0).unwrap();
        assert_eq!(ds.n_features(), 4);
        assert_eq!(feature_arity(&[Mean, Variance, RawInput], 2), 4);
        assert_eq!(ds.count_in(), ds.len() - ds.count_in());
    }

    #[test]
    fn build_guards() {
        let (train, outside) = overlap_task(1);
        let gp = victim(1.0, &train);
        assert!(build_attack_dataset(&gp, &train, &train, &[Mean], 0).is_err());
        assert!(build_attack_dataset(&gp, &outside, &outside.subset(&[0]).unwrap(), &[Mean], 0).is_err());
    }

    #[test]
    fn balanced_test_has_half_baseline() {
        let (train, outside) = overlap_task(2);
        let gp = victim(0.2, &train);
        let out = MembershipExperiment::default().run(&gp, &train, &outside, 2).unwrap();
        assert_eq!(out.attack_test_rows, 50);
        assert_eq!(out.eval.baseline, 0.5);
        assert!((0.0..=1.0).contains(&out.eval.accuracy));
    }

    #[test]
    fn constant_features_stay_near_baseline() {
        let mut total = 0.0;
        for seed in 0..20 {
            let rows = vec![vec![0.5]; 40];
            let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
            let ds = MembershipDataset { rows, labels, feature_set: vec![Mean] };
            let clf = train_attack_classifier(&ds, ForestParams { trees: 20, max_depth: 8, seed }).unwrap();
            let e = evaluate_membership(&clf, &ds).unwrap();
            total += e.accuracy - e.baseline;
        }
        assert!((total / 20.0).abs() <= 0.15);
    }

    #[test]
    fn short_lengthscale_leaks_membership() {
        let exp = MembershipExperiment::default();
        let (mut short, mut long) = (0.0, 0.0);
        for seed in 0..10 {
            let (train, outside) = overlap_task(seed);
            let s = exp.run(&victim(0.1, &train), &train, &outside, seed).unwrap();
            let l = exp.run(&victim(5.0, &train), &train, &outside, seed).unwrap();
            short += s.eval.accuracy - s.eval.baseline;
            long += l.eval.accuracy - l.eval.baseline;
            assert!(s.overfit.gap >= l.overfit.gap);
        }
        assert!(short / 10.0 >= 0.1, "short advantage {}", short / 10.0);
        assert!((long / 10.0).abs() <= 0.05, "long advantage {}", long / 10.0);
    }

    #[test]
    fn overfit_gap_arithmetic() {
        let (train, _) = overlap_task(3);
        let gp = victim(0.05, &train);
        let r = overfitting_gap(&gp, &train, &train).unwrap();
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.train_acc, 1.0);
    }

    #[test]
    fn drift_cases() {
        let (train, outside) = overlap_task(4);
        let gp = victim(1.0, &train);
        let same = distribution_drift(&gp, &train, &train).unwrap();
        assert_eq!(same.ratio, 1.0);
        let iid = distribution_drift(&gp, &train, &outside).unwrap();
        assert!((0.5..=2.0).contains(&iid.ratio), "iid ratio {}", iid.ratio);
    }

    #[test]
    fn shifted_test_set_drifts() {
        // data spread well below the lengthscale, test shifted by 10 lengthscales
        let l = 20.0;
        let data = generate_blobs_with_std(120, 2, 1.0, 1.0, 5).unwrap();
        let (train, test) = split(&data, 0.5, 5).unwrap();
        let gp = victim(l, &train);
        let shifted = test.shifted(&[10.0 * l, 0.0]).unwrap();
        let r = distribution_drift(&gp, &train, &shifted).unwrap();
        assert!(r.ratio >= 100.0, "ratio {}", r.ratio);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (train, outside) = overlap_task(6);
        let gp = victim(0.3, &train);
        let exp = MembershipExperiment { features: vec![LatentMean, Variance], ..Default::default() };
        assert_eq!(exp.run(&gp, &train, &outside, 1).unwrap(), exp.run(&gp, &train, &outside, 1).unwrap());
    }
}
