//! Model extraction and model stealing through black-box queries.
//!
//! The analytic attacks assume a noiseless regression GP whose kernel family,
//! signal variance and jitter are known to the attacker. The empirical attacks
//! (lengthscale sweep, kernel identification) only compare attacker-trained
//! classifiers against the oracle's outputs on a holdout set.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::data::{uniform_points, Dataset};
use crate::error::{check_dim, invalid, Error, Result};
use crate::gp::{fit_classification_laplace, fit_regression_targets, TrainedGP, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{add_diagonal, cholesky, solve_lower, solve_lower_transpose};

/// Number of grid points per sweep.
pub const SWEEP_STEPS: usize = 50;
/// Default holdout size for the sweep and kernel identification.
pub const DEFAULT_HOLDOUT: usize = 100;

type QueryFn = dyn Fn(&[f64]) -> (f64, f64) + Send + Sync;

/// Black-box access to a model: a point goes in, `(mean, variance)` comes out.
/// Every query is counted.
pub struct ModelOracle {
    query: Box<QueryFn>,
    count: AtomicU64,
}

impl fmt::Debug for ModelOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelOracle").field("query_count", &self.query_count()).finish_non_exhaustive()
    }
}

impl ModelOracle {
    pub fn new(query: impl Fn(&[f64]) -> (f64, f64) + Send + Sync + 'static) -> Self {
        ModelOracle { query: Box::new(query), count: AtomicU64::new(0) }
    }

    /// Exposes the latent mean and latent variance of a fitted GP.
    pub fn from_gp(gp: TrainedGP) -> Self {
        let d = gp.dim();
        ModelOracle::new(move |x| {
            assert_eq!(x.len(), d, "oracle query has the wrong dimension");
            let p = gp.predict(x).expect("dimension checked");
            (p.latent_mean, p.variance)
        })
    }

    pub fn query(&self, x: &[f64]) -> (f64, f64) {
        self.count.fetch_add(1, Ordering::SeqCst);
        (self.query)(x)
    }

    pub fn query_mean(&self, x: &[f64]) -> f64 {
        self.query(x).0
    }

    pub fn query_count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    DataKnownSingleL,
    DataKnownPerDim,
    LengthscaleKnownSingle,
    LengthscaleKnownPerDim,
    NothingKnownSingle,
    NothingKnownPerDim,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::DataKnownSingleL,
        Regime::DataKnownPerDim,
        Regime::LengthscaleKnownSingle,
        Regime::LengthscaleKnownPerDim,
        Regime::NothingKnownSingle,
        Regime::NothingKnownPerDim,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub regime: Regime,
    pub queries: usize,
    pub is_lower_bound_only: bool,
}

/// Minimum number of queries for an analytic attack in `regime`.
pub fn query_complexity(regime: Regime, n: usize, d: usize) -> Result<ComplexityEstimate> {
    if n == 0 || d == 0 {
        return Err(invalid("n and d must both be at least 1"));
    }
    let (queries, lower) = match regime {
        Regime::DataKnownSingleL => (2, false),
        Regime::DataKnownPerDim => (d + 1, false),
        Regime::LengthscaleKnownSingle => (n + 1, false),
        Regime::LengthscaleKnownPerDim => (n * d + 1, false),
        Regime::NothingKnownSingle => (n * d + 1, true),
        Regime::NothingKnownPerDim => (n * 2 * d + 1, true),
    };
    Ok(ComplexityEstimate { regime, queries, is_lower_bound_only: lower })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    Lengthscale(Vec<f64>),
    Points(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub estimate: Estimate,
    pub residual: f64,
    pub queries_used: u64,
    pub converged: bool,
    /// Cost after every accepted solver step (training-data recovery only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cost_history: Vec<f64>,
}

impl ExtractionReport {
    pub fn lengthscale(&self) -> Option<f64> {
        match &self.estimate {
            Estimate::Lengthscale(l) => l.first().copied(),
            Estimate::Points(_) => None,
        }
    }

    pub fn points(&self) -> Option<&[Vec<f64>]> {
        match &self.estimate {
            Estimate::Points(p) => Some(p),
            Estimate::Lengthscale(_) => None,
        }
    }
}

const SCAN_POINTS: usize = 200;
const BISECTION_STEPS: usize = 200;

/// Recovers a shared RBF lengthscale from two queries when the training data,
/// variance and jitter are known.
///
/// The residual `r(l) = oracle(x_q) - m_l(x_q)` at an off-data probe is scanned
/// on a log grid over `interval` and every sign change is bisected in `log l`.
/// A second probe picks among multiple roots and checks the result.
pub fn extract_lengthscale_analytic(
    oracle: &ModelOracle,
    template: &KernelSpec,
    train: &Dataset,
    jitter: f64,
    interval: (f64, f64),
    seed: u64,
) -> Result<ExtractionReport> {
    let (lo, hi) = interval;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(invalid(format!("search interval must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
    }
    if template.family != KernelFamily::Rbf {
        return Err(invalid("lengthscale extraction needs an RBF kernel"));
    }
    if train.is_empty() {
        return Err(invalid("training data must be non-empty"));
    }
    let start = oracle.query_count();
    let probes = probe_points(train, 2, seed);
    let y1 = oracle.query_mean(&probes[0]);
    let y2 = oracle.query_mean(&probes[1]);

    let refit = |l: f64| -> Result<TrainedGP> {
        fit_regression_targets(&template.with_lengthscale(l)?, train.features(), train.labels(), jitter)
    };
    let residual = |l: f64, probe: &[f64], y: f64| -> Result<f64> { Ok(y - refit(l)?.latent_mean(probe)?) };

    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> =
        (0..SCAN_POINTS).map(|i| (llo + (lhi - llo) * i as f64 / (SCAN_POINTS - 1) as f64).exp()).collect();
    let values = crate::par::try_map(&grid, |&l| residual(l, &probes[0], y1))?;

    let mut roots = Vec::new();
    for i in 0..SCAN_POINTS - 1 {
        let (a, b) = (values[i], values[i + 1]);
        if a == 0.0 {
            roots.push(grid[i]);
        } else if a * b < 0.0 {
            roots.push(bisect_log(|l| residual(l, &probes[0], y1), grid[i], grid[i + 1], a)?);
        }
    }
    if values[SCAN_POINTS - 1] == 0.0 {
        roots.push(grid[SCAN_POINTS - 1]);
    }
    if roots.is_empty() {
        return Err(Error::Bracketing { lo_residual: values[0], hi_residual: values[SCAN_POINTS - 1] });
    }
    let mut best = (f64::INFINITY, f64::NAN, f64::NAN);
    for l in roots {
        let r2 = residual(l, &probes[1], y2)?.abs();
        if r2 < best.0 {
            best = (r2, l, residual(l, &probes[0], y1)?.abs());
        }
    }
    let (r2, l, r1) = best;
    Ok(ExtractionReport {
        estimate: Estimate::Lengthscale(vec![l]),
        residual: r1.max(r2),
        queries_used: oracle.query_count() - start,
        converged: r1 < 1e-8 && r2 < 1e-8,
        cost_history: Vec::new(),
    })
}

fn bisect_log(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64> {
    for _ in 0..BISECTION_STEPS {
        let mid = (0.5 * (a.ln() + b.ln())).exp();
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Ok(if fa.abs() <= f(b)?.abs() { a } else { b })
}

/// Seeded uniform probes over the bounding box of `data`.
fn probe_points(data: &Dataset, n: usize, seed: u64) -> Vec<Vec<f64>> {
    uniform_points(&data.bounds(), n, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub jitter: f64,
    /// Per-feature `[min, max]` the probes are drawn from.
    pub probe_box: Vec<(f64, f64)>,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl RecoveryConfig {
    pub fn new(probe_box: Vec<(f64, f64)>, jitter: f64) -> Self {
        RecoveryConfig { jitter, probe_box, restarts: 16, max_iter: 200, seed: 0 }
    }
}

/// Recovers the training inputs of a noiseless regression GP whose kernel and
/// labels are known, from `budget` probe queries.
///
/// Solves the nonlinear least-squares problem over the `n * d` anchor
/// coordinates with Levenberg-Marquardt and a finite-difference Jacobian, from
/// several starts. The recovered points come back in arbitrary order.
pub fn recover_training_data_analytic(
    oracle: &ModelOracle,
    spec: &KernelSpec,
    labels: &[f64],
    d: usize,
    budget: usize,
    config: &RecoveryConfig,
) -> Result<ExtractionReport> {
    let n = labels.len();
    if n == 0 || d == 0 {
        return Err(invalid("need at least one anchor and one dimension"));
    }
    spec.check_input_dim(d)?;
    check_dim(d, config.probe_box.len())?;
    let bound = query_complexity(Regime::LengthscaleKnownPerDim, n, d)?.queries;
    if budget < bound {
        return Err(invalid(format!(
            "query budget {budget} is below the n*d+1 = {bound} queries needed to recover {n} points in {d} dimensions"
        )));
    }
    if config.probe_box.iter().any(|&(lo, hi)| !(lo < hi)) {
        return Err(invalid("probe box must have min < max in every dimension"));
    }

    let start = oracle.query_count();
    let probes = uniform_points(&config.probe_box, budget, crate::sub_seed(config.seed, 1));
    let observed: Vec<f64> = probes.iter().map(|p| oracle.query_mean(p)).collect();
    let queries_used = oracle.query_count() - start;

    let problem = Recovery { spec, labels, d, jitter: config.jitter, probes: &probes, observed: &observed };
    let starts = problem.initial_guesses(&config.probe_box, config.restarts, config.seed);
    let fits = crate::par::map(&starts, |theta| problem.levenberg_marquardt(theta.clone(), config.max_iter));
    let (theta, history) = fits
        .into_iter()
        .min_by(|a, b| a.1.last().unwrap_or(&f64::INFINITY).total_cmp(b.1.last().unwrap_or(&f64::INFINITY)))
        .expect("at least one start");
    let cost = *history.last().unwrap_or(&f64::INFINITY);
    if !cost.is_finite() {
        return Err(Error::NumericalFailure { context: "training-data recovery", iteration: 0 });
    }
    let rms = (cost / budget as f64).sqrt();
    Ok(ExtractionReport {
        estimate: Estimate::Points(theta.chunks(d).map(<[f64]>::to_vec).collect()),
        residual: rms,
        queries_used,
        converged: rms < 1e-6,
        cost_history: history,
    })
}

struct Recovery<'a> {
    spec: &'a KernelSpec,
    labels: &'a [f64],
    d: usize,
    jitter: f64,
    probes: &'a [Vec<f64>],
    observed: &'a [f64],
}

impl Recovery<'_> {
    /// Model residuals `observed - m_theta(probe)`, or `None` when the anchors
    /// make the kernel matrix singular.
    fn residuals(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let anchors: Vec<Vec<f64>> = theta.chunks(self.d).map(<[f64]>::to_vec).collect();
        let mut k = self.spec.self_matrix(&anchors).ok()?;
        add_diagonal(&mut k, self.jitter);
        let chol = cholesky(&k).ok()?;
        let y = nalgebra::DVector::from_column_slice(self.labels);
        let alpha = solve_lower_transpose(&chol, &solve_lower(&chol, &y));
        let r: Vec<f64> = self
            .probes
            .iter()
            .zip(self.observed)
            .map(|(p, &o)| o - anchors.iter().zip(alpha.iter()).map(|(a, w)| w * self.spec.eval_unchecked(p, a)).sum::<f64>())
            .collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn cost(&self, theta: &[f64]) -> f64 {
        self.residuals(theta).map_or(f64::INFINITY, |r| r.iter().map(|v| v * v).sum())
    }

    /// One start per anchor placed on the probe with the strongest response of
    /// the anchor's sign, followed by seeded uniform starts.
    fn initial_guesses(&self, probe_box: &[(f64, f64)], restarts: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut order: Vec<usize> = (0..self.probes.len()).collect();
        let mut greedy = Vec::with_capacity(self.labels.len() * self.d);
        for &y in self.labels {
            order.sort_by(|&a, &b| (y * self.observed[b]).total_cmp(&(y * self.observed[a])));
            let pick = order.remove(0);
            greedy.extend_from_slice(&self.probes[pick]);
            if order.is_empty() {
                order = (0..self.probes.len()).collect();
            }
        }
        let mut starts = vec![greedy];
        let n = self.labels.len();
        for (r, p) in uniform_points(probe_box, restarts * n, crate::sub_seed(seed, 2)).chunks(n).enumerate() {
            if r >= restarts {
                break;
            }
            starts.push(p.concat());
        }
        starts
    }

    fn jacobian(&self, theta: &[f64], base: &[f64]) -> Option<nalgebra::DMatrix<f64>> {
        let (q, p) = (base.len(), theta.len());
        let mut jac = nalgebra::DMatrix::zeros(q, p);
        let mut probe = theta.to_vec();
        for j in 0..p {
            let h = 1e-7 * theta[j].abs().max(1.0);
            probe[j] = theta[j] + h;
            let plus = self.residuals(&probe)?;
            probe[j] = theta[j] - h;
            let minus = self.residuals(&probe)?;
            probe[j] = theta[j];
            for i in 0..q {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Some(jac)
    }

    /// Returns the final parameters and the cost after every accepted step,
    /// starting with the initial cost.
    fn levenberg_marquardt(&self, mut theta: Vec<f64>, max_iter: usize) -> (Vec<f64>, Vec<f64>) {
        let Some(mut r) = self.residuals(&theta) else {
            return (theta, vec![f64::INFINITY]);
        };
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        let mut history = vec![cost];
        let mut lambda = 1e-3;
        for _ in 0..max_iter {
            if cost < 1e-28 {
                break;
            }
            let Some(jac) = self.jacobian(&theta, &r) else { break };
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * nalgebra::DVector::from_column_slice(&r);
            let mut accepted = false;
            while lambda < 1e12 {
                let mut a = jtj.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
                }
                let Ok(l) = cholesky(&a) else {
                    lambda *= 10.0;
                    continue;
                };
                let step = solve_lower_transpose(&l, &solve_lower(&l, &grad));
                let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t - s).collect();
                let new_cost = self.cost(&candidate);
                if new_cost < cost {
                    let done = step.norm() < 1e-15 * (1.0 + theta.iter().map(|t| t * t).sum::<f64>().sqrt());
                    theta = candidate;
                    r = self.residuals(&theta).expect("finite cost implies residuals");
                    cost = new_cost;
                    history.push(cost);
                    lambda = (lambda / 3.0).max(1e-15);
                    accepted = !done;
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted {
                break;
            }
        }
        (theta, history)
    }
}

/// Minimum-cost matching of `recovered` to `truth` under Euclidean cost.
/// Returns the permutation (`perm[i]` is the recovered index matched to
/// `truth[i]`) and the largest matched distance. Exhaustive, so meant for
/// small `n`.
pub fn match_points(recovered: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    check_dim(truth.len(), recovered.len())?;
    if truth.len() > 9 {
        return Err(invalid("exhaustive matching supports at most 9 points"));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let best = (0..truth.len())
        .permutations(truth.len())
        .map(|perm| {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| dist(&truth[i], &recovered[j])).sum();
            (total, perm)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least the identity permutation");
    let worst = best.1.iter().enumerate().map(|(i, &j)| dist(&truth[i], &recovered[j])).fold(0.0, f64::max);
    Ok((best.1, worst))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRegime {
    Same,
    Mixed,
    Disjoint,
}

impl DataRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            DataRegime::Same => "same",
            DataRegime::Mixed => "mixed",
            DataRegime::Disjoint => "disjoint",
        }
    }
}

/// Builds the attacker's training set of `size` rows: all from the victim's
/// training data (`Same`), all from `fresh` (`Disjoint`), or half and half.
pub fn attacker_data_for_regime(
    victim_train: &Dataset,
    fresh: &Dataset,
    regime: DataRegime,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    let take = |data: &Dataset, k: usize, stream: u64| -> Result<Dataset> {
        if k > data.len() {
            return Err(invalid(format!("need {k} rows but only {} are available", data.len())));
        }
        let (idx, _) = crate::data::split_indices(data.len(), k, crate::sub_seed(seed, stream));
        data.subset(&idx)
    };
    if size == 0 {
        return Err(invalid("attacker data size must be positive"));
    }
    match regime {
        DataRegime::Same => take(victim_train, size, 0),
        DataRegime::Disjoint => take(fresh, size, 1),
        DataRegime::Mixed => {
            let half = size / 2;
            take(victim_train, half, 0)?.concat(&take(fresh, size - half, 1)?)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// `(l_a, distance)` in increasing `l_a`.
    pub curve: Vec<(f64, f64)>,
    pub argmin: f64,
    pub queries_used: u64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l_a,distance\n");
        for (l, d) in &self.curve {
            out.push_str(&format!("{l},{d}\n"));
        }
        out
    }

    /// Grid spacing of the sweep.
    pub fn step(&self) -> f64 {
        match self.curve.as_slice() {
            [a, b, ..] => b.0 - a.0,
            _ => 0.0,
        }
    }
}

/// The sweep grid: `SWEEP_STEPS` lengthscales from `hint / 2` in steps of `hint / 50`.
pub fn sweep_grid(hint: f64) -> Vec<f64> {
    (0..SWEEP_STEPS).map(|k| hint * (SWEEP_STEPS / 2 + k) as f64 / SWEEP_STEPS as f64).collect()
}

fn ensure_disjoint(a: &Dataset, b: &Dataset) -> Result<()> {
    if b.features().iter().any(|x| a.features().contains(x)) {
        return Err(invalid("holdout must be disjoint from the attacker's training data"));
    }
    Ok(())
}

fn mean_abs_distance(gp: &TrainedGP, holdout: &[Vec<f64>], reference: &[f64]) -> f64 {
    holdout.iter().zip(reference).map(|(x, r)| (gp.latent_mean_unchecked(x) - r).abs()).sum::<f64>()
        / holdout.len() as f64
}

/// Trains one Laplace classifier per grid lengthscale on `attacker_data` and
/// measures the mean absolute latent-mean distance to the oracle on `holdout`.
/// The oracle is queried once per holdout point.
pub fn estimate_lengthscale_sweep(
    oracle: &ModelOracle,
    template: &KernelSpec,
    attacker_data: &Dataset,
    hint: f64,
    holdout: &Dataset,
) -> Result<SweepReport> {
    if holdout.is_empty() {
        return Err(invalid("holdout must be non-empty"));
    }
    if !(hint > 0.0 && hint.is_finite()) {
        return Err(invalid(format!("lengthscale hint must be positive, got {hint}")));
    }
    check_dim(attacker_data.dim(), holdout.dim())?;
    ensure_disjoint(attacker_data, holdout)?;
    let start = oracle.query_count();
    let reference: Vec<f64> = holdout.features().iter().map(|x| oracle.query_mean(x)).collect();
    let queries_used = oracle.query_count() - start;
    let grid = sweep_grid(hint);
    let curve = crate::par::try_map(&grid, |&l| -> Result<(f64, f64)> {
        let gp = fit_classification_laplace(&template.with_lengthscale(l)?, attacker_data, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        Ok((l, mean_abs_distance(&gp, holdout.features(), &reference)))
    })?;
    let argmin = curve.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty grid").0;
    Ok(SweepReport { curve, argmin, queries_used })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDistance {
    pub kernel: KernelSpec,
    pub distance: f64,
}

/// Short label such as `rbf(l=0.5)` or `poly(deg=2)`.
pub fn kernel_label(spec: &KernelSpec) -> String {
    match spec.family {
        KernelFamily::Rbf => format!("rbf(l={})", spec.lengthscale.primary()),
        KernelFamily::Linear => "linear".to_string(),
        KernelFamily::Polynomial => format!("poly(deg={})", spec.degree),
    }
}

/// Fits one Laplace classifier per candidate kernel on `train` and ranks the
/// candidates by mean absolute latent-mean distance to the oracle on `holdout`.
pub fn identify_kernel(
    oracle: &ModelOracle,
    candidates: &[KernelSpec],
    train: &Dataset,
    holdout: &Dataset,
) -> Result<Vec<KernelDistance>> {
    if candidates.is_empty() {
        return Err(invalid("candidate kernel list is empty"));
    }
    if holdout.is_empty() {
        return Err(invalid("holdout must be non-empty"));
    }
    check_dim(train.dim(), holdout.dim())?;
    let reference: Vec<f64> = holdout.features().iter().map(|x| oracle.query_mean(x)).collect();
    let mut rows = crate::par::try_map(candidates, |spec| -> Result<KernelDistance> {
        let gp = fit_classification_laplace(spec, train, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        Ok(KernelDistance { kernel: spec.clone(), distance: mean_abs_distance(&gp, holdout.features(), &reference) })
    })?;
    rows.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(rows)
}

pub fn kernel_distances_to_csv(rows: &[KernelDistance]) -> String {
    let mut out = String::from("kernel,distance\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", kernel_label(&r.kernel), r.distance));
    }
    out
}
