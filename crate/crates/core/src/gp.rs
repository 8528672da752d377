//! Gaussian process regression and Laplace-approximated binary classification.
//!
//! Both modes expose the same latent predictive mean `k(x, X)^T alpha`, which
//! drives decisions, rejection and every attack gradient. Classification uses
//! the logistic link.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{add_diagonal, cholesky, cholesky_solve_refined, dot_compensated, solve_lower, solve_lower_transpose};

/// Default Newton iteration budget for classification.
pub const DEFAULT_MAX_ITER: usize = 100;
/// Default Newton convergence tolerance on the max-norm latent change.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default threshold for the reject-near-zero rule.
pub const DEFAULT_ZERO_EPS: f64 = 1e-3;
/// Variances tried by [`select_variance`].
pub const VARIANCE_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

const MAX_HALVINGS: usize = 20;

/// Default jitter: `1e-6 * variance`.
pub fn default_jitter(spec: &KernelSpec) -> f64 {
    1e-6 * spec.variance
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Regression,
    Classification,
}

/// Predictive quantities at one query point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Decision value. Equal to `latent_mean` in both modes.
    pub mean: f64,
    /// Latent predictive variance, clamped at zero.
    pub variance: f64,
    pub latent_mean: f64,
    /// Moderated logistic output `sigmoid(m / sqrt(1 + pi v / 8))`; classification only.
    pub class_probability: Option<f64>,
}

/// Classify-or-reject outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Positive,
    Negative,
    Reject,
}

impl Decision {
    /// Forced sign decision; zero counts as positive.
    pub fn from_sign(m: f64) -> Self {
        if m >= 0.0 {
            Decision::Positive
        } else {
            Decision::Negative
        }
    }

    pub fn label(self) -> Option<f64> {
        match self {
            Decision::Positive => Some(1.0),
            Decision::Negative => Some(-1.0),
            Decision::Reject => None,
        }
    }

    pub fn is_reject(self) -> bool {
        self == Decision::Reject
    }

    /// `1`, `-1` or `reject`.
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Positive => "1",
            Decision::Negative => "-1",
            Decision::Reject => "reject",
        }
    }
}

/// Rejection band `[-1 + tau0, 1 - tau1]` on the latent mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionPolicy {
    tau0: f64,
    tau1: f64,
}

impl RejectionPolicy {
    pub fn new(tau0: f64, tau1: f64) -> Result<Self> {
        for t in [tau0, tau1] {
            if !(t > 0.0 && t < 1.0) {
                return Err(invalid(format!("rejection thresholds must lie in (0, 1), got {t}")));
            }
        }
        Ok(RejectionPolicy { tau0, tau1 })
    }

    pub fn symmetric(tau: f64) -> Result<Self> {
        Self::new(tau, tau)
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn decide(&self, m: f64) -> Decision {
        if m >= -1.0 + self.tau0 && m <= 1.0 - self.tau1 {
            Decision::Reject
        } else {
            Decision::from_sign(m)
        }
    }
}

/// A rule deciding when a prediction is withheld.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RejectRule {
    Band(RejectionPolicy),
    /// Reject when `|m| < eps` or `m == 0`.
    NearZero { eps: f64 },
}

impl RejectRule {
    pub fn decide(&self, m: f64) -> Decision {
        match *self {
            RejectRule::Band(p) => p.decide(m),
            RejectRule::NearZero { eps } => {
                if m == 0.0 || m.abs() < eps {
                    Decision::Reject
                } else {
                    Decision::from_sign(m)
                }
            }
        }
    }
}

/// Immutable fitted model.
#[derive(Clone, Debug)]
pub struct TrainedGP {
    spec: KernelSpec,
    mode: FitMode,
    train_features: Vec<Vec<f64>>,
    train_targets: Vec<f64>,
    jitter: f64,
    alpha: DVector<f64>,
    latent_mode: Option<DVector<f64>>,
    /// sqrt(W) at the latent mode; classification only.
    sqrt_w: Option<DVector<f64>>,
    /// Cholesky factor of `K + jitter I` (regression) or
    /// `I + W^1/2 (K + jitter I) W^1/2` (classification).
    chol: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<f64>,
}

/// Regression on the ±1 labels of `data`.
pub fn fit_regression(spec: &KernelSpec, data: &Dataset, jitter: f64) -> Result<TrainedGP> {
    fit_regression_targets(spec, data.features(), data.labels(), jitter)
}

/// Regression on arbitrary real targets.
pub fn fit_regression_targets(
    spec: &KernelSpec,
    features: &[Vec<f64>],
    targets: &[f64],
    jitter: f64,
) -> Result<TrainedGP> {
    if features.is_empty() {
        return Err(invalid("training set must be non-empty"));
    }
    check_dim(features.len(), targets.len())?;
    check_jitter(jitter)?;
    let mut k = spec.self_matrix(features)?;
    add_diagonal(&mut k, jitter);
    let chol = cholesky(&k)?;
    let y = DVector::from_column_slice(targets);
    // ill-conditioned systems leave alpha large and cancelling; refinement keeps
    // the predictive mean accurate to the conditioning of K rather than beyond it
    let alpha = cholesky_solve_refined(&k, &chol, &y, 2);
    Ok(TrainedGP {
        spec: spec.clone(),
        mode: FitMode::Regression,
        train_features: features.to_vec(),
        train_targets: targets.to_vec(),
        jitter,
        alpha,
        latent_mode: None,
        sqrt_w: None,
        chol,
        iterations: 0,
        converged: true,
        objective_trace: Vec::new(),
    })
}

fn check_jitter(jitter: f64) -> Result<()> {
    if !(jitter > 0.0) || !jitter.is_finite() {
        return Err(invalid(format!("jitter must be positive, got {jitter}")));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(z)`, stable for large |z|.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Unnormalized log posterior `-1/2 a^T f + sum ln sigmoid(y_i f_i)`.
fn laplace_objective(a: &DVector<f64>, f: &DVector<f64>, y: &[f64]) -> f64 {
    -0.5 * a.dot(f) + f.iter().zip(y).map(|(fi, yi)| log_sigmoid(yi * fi)).sum::<f64>()
}

/// Factorizes `B = I + W^1/2 K W^1/2` at latent values `f`.
fn laplace_factor(k: &DMatrix<f64>, f: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = f.len();
    let sqrt_w = f.map(|fi| {
        let p = sigmoid(fi);
        (p * (1.0 - p)).sqrt()
    });
    let b = DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * k[(i, j)] * sqrt_w[j] + if i == j { 1.0 } else { 0.0 });
    Ok((sqrt_w, cholesky(&b)?))
}

/// Binary classification with a Laplace approximation to the latent posterior.
///
/// Newton iterations with step halving (at most 20 halvings) run until the
/// max-norm change of the latent mode drops below `tol` or `max_iter` steps
/// have been taken.
pub fn fit_classification_laplace(
    spec: &KernelSpec,
    data: &Dataset,
    max_iter: usize,
    tol: f64,
) -> Result<TrainedGP> {
    fit_classification_laplace_with_jitter(spec, data, max_iter, tol, default_jitter(spec))
}

pub fn fit_classification_laplace_with_jitter(
    spec: &KernelSpec,
    data: &Dataset,
    max_iter: usize,
    tol: f64,
    jitter: f64,
) -> Result<TrainedGP> {
    if !data.has_both_classes() {
        return Err(invalid("classification needs both classes in the training data"));
    }
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    check_jitter(jitter)?;
    let y = data.labels();
    let n = y.len();
    let t: Vec<f64> = y.iter().map(|yi| (yi + 1.0) / 2.0).collect();
    let mut k = spec.self_matrix(data.features())?;
    add_diagonal(&mut k, jitter);

    let mut a = DVector::<f64>::zeros(n);
    let mut f = DVector::<f64>::zeros(n);
    let mut obj = laplace_objective(&a, &f, y);
    let mut trace = vec![obj];
    let mut iterations = 0;
    let mut converged = max_iter == 0;

    for iter in 0..max_iter {
        let (sqrt_w, l) = laplace_factor(&k, &f)?;
        let grad = DVector::from_fn(n, |i, _| t[i] - sigmoid(f[i]));
        let b = DVector::from_fn(n, |i, _| sqrt_w[i] * sqrt_w[i] * f[i] + grad[i]);
        let kb = &k * &b;
        let c = solve_lower(&l, &kb.component_mul(&sqrt_w));
        let a_full = &b - solve_lower_transpose(&l, &c).component_mul(&sqrt_w);
        let f_full = &k * &a_full;
        if a_full.iter().chain(f_full.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { context: "laplace newton step", iteration: iter });
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let a_s = &a + (&a_full - &a) * step;
            let f_s = &f + (&f_full - &f) * step;
            let obj_s = laplace_objective(&a_s, &f_s, y);
            if !obj_s.is_finite() {
                return Err(Error::NumericalFailure { context: "laplace objective", iteration: iter });
            }
            if obj_s >= obj {
                accepted = Some((a_s, f_s, obj_s));
                break;
            }
            step /= 2.0;
        }
        let Some((a_s, f_s, obj_s)) = accepted else {
            // no ascent direction left at working precision
            converged = true;
            break;
        };
        let change = (&f_s - &f).amax();
        a = a_s;
        f = f_s;
        obj = obj_s;
        trace.push(obj);
        iterations = iter + 1;
        if change < tol {
            converged = true;
            break;
        }
    }

    let (sqrt_w, chol) = laplace_factor(&k, &f)?;
    Ok(TrainedGP {
        spec: spec.clone(),
        mode: FitMode::Classification,
        train_features: data.features().to_vec(),
        train_targets: y.to_vec(),
        jitter,
        alpha: a,
        latent_mode: Some(f),
        sqrt_w: Some(sqrt_w),
        chol,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Picks the kernel variance from [`VARIANCE_GRID`] with the best validation
/// accuracy (first on ties). Lengthscale stays fixed.
pub fn select_variance(
    spec: &KernelSpec,
    train: &Dataset,
    validation: &Dataset,
    max_iter: usize,
    tol: f64,
) -> Result<(KernelSpec, f64)> {
    let scored = crate::par::try_map(&VARIANCE_GRID, |&v| -> Result<(KernelSpec, f64)> {
        let s = spec.with_variance(v)?;
        let gp = fit_classification_laplace(&s, train, max_iter, tol)?;
        Ok((s, accuracy(&gp, validation, None)?.accuracy))
    })?;
    let mut best = scored[0].clone();
    for cand in scored.into_iter().skip(1) {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(best)
}

impl TrainedGP {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn mode(&self) -> FitMode {
        self.mode
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn latent_mode(&self) -> Option<&DVector<f64>> {
        self.latent_mode.as_ref()
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn train_features(&self) -> &[Vec<f64>] {
        &self.train_features
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.train_targets
    }

    pub fn n_train(&self) -> usize {
        self.train_targets.len()
    }

    pub fn dim(&self) -> usize {
        self.train_features[0].len()
    }

    /// Newton steps taken (0 for regression).
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Log-posterior objective after each accepted Newton step, starting at 0 iterations.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    /// Training rows as a dataset (only valid when targets are ±1).
    pub fn training_data(&self) -> Result<Dataset> {
        Dataset::new(self.train_features.clone(), self.train_targets.clone())
    }

    /// Latent mean only, skipping the variance solve.
    pub fn latent_mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.latent_mean_unchecked(x))
    }

    pub(crate) fn latent_mean_unchecked(&self, x: &[f64]) -> f64 {
        let kx: Vec<f64> = self.train_features.iter().map(|xi| self.spec.eval_unchecked(x, xi)).collect();
        dot_compensated(&kx, self.alpha.as_slice())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        check_dim(self.dim(), x.len())?;
        let kx = DVector::from_vec(self.spec.cross_vector(x, &self.train_features));
        let mean = dot_compensated(kx.as_slice(), self.alpha.as_slice());
        let rhs = match &self.sqrt_w {
            Some(sw) => kx.component_mul(sw),
            None => kx,
        };
        let v = solve_lower(&self.chol, &rhs);
        let variance = (self.spec.eval_unchecked(x, x) - v.dot(&v)).max(0.0);
        let class_probability = match self.mode {
            FitMode::Classification => {
                let kappa = 1.0 / (1.0 + std::f64::consts::PI * variance / 8.0).sqrt();
                Some(sigmoid(kappa * mean))
            }
            FitMode::Regression => None,
        };
        Ok(Prediction { mean, variance, latent_mean: mean, class_probability })
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        crate::par::try_map(xs, |x| self.predict(x))
    }

    /// Rejects when the latent mean falls in `[-1 + tau0, 1 - tau1]`.
    pub fn predict_with_rejection(&self, x: &[f64], policy: &RejectionPolicy) -> Result<Decision> {
        Ok(policy.decide(self.latent_mean(x)?))
    }

    /// Rejects when `|latent mean| < eps` (or exactly zero).
    pub fn predict_with_zero_rejection(&self, x: &[f64], eps: f64) -> Result<Decision> {
        if !(eps >= 0.0) {
            return Err(invalid(format!("eps must be non-negative, got {eps}")));
        }
        Ok(RejectRule::NearZero { eps }.decide(self.latent_mean(x)?))
    }

    /// Forced decision, or the rule's decision when one is given.
    pub fn decide(&self, x: &[f64], rule: Option<&RejectRule>) -> Result<Decision> {
        let m = self.latent_mean(x)?;
        Ok(match rule {
            Some(r) => r.decide(m),
            None => Decision::from_sign(m),
        })
    }

    /// Gradient of the latent mean with respect to the query point.
    pub fn latent_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.latent_gradient_unchecked(x))
    }

    pub(crate) fn latent_gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (xi, a) in self.train_features.iter().zip(self.alpha.iter()) {
            for (gj, kj) in g.iter_mut().zip(self.spec.gradient_unchecked(x, xi)) {
                *gj += a * kj;
            }
        }
        g
    }

    pub fn to_document(&self) -> GpDocument {
        GpDocument {
            spec: self.spec.clone(),
            mode: self.mode,
            jitter: self.jitter,
            alpha: self.alpha.iter().copied().collect(),
            latent_mode: self.latent_mode.as_ref().map(|f| f.iter().copied().collect()),
            train_features: self.train_features.clone(),
            train_targets: self.train_targets.clone(),
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// Rebuilds a model from its document, refactorizing the stored system.
    pub fn from_document(doc: GpDocument) -> Result<Self> {
        let n = doc.train_targets.len();
        if n == 0 || doc.train_features.len() != n || doc.alpha.len() != n {
            return Err(invalid("model document has inconsistent sizes"));
        }
        check_jitter(doc.jitter)?;
        doc.spec.validate()?;
        let mut k = doc.spec.self_matrix(&doc.train_features)?;
        add_diagonal(&mut k, doc.jitter);
        let (latent_mode, sqrt_w, chol) = match (doc.mode, doc.latent_mode) {
            (FitMode::Regression, None) => (None, None, cholesky(&k)?),
            (FitMode::Classification, Some(f)) => {
                check_dim(n, f.len())?;
                let f = DVector::from_vec(f);
                let (sw, l) = laplace_factor(&k, &f)?;
                (Some(f), Some(sw), l)
            }
            _ => return Err(invalid("latent_mode must be present exactly for classification models")),
        };
        Ok(TrainedGP {
            spec: doc.spec,
            mode: doc.mode,
            train_features: doc.train_features,
            train_targets: doc.train_targets,
            jitter: doc.jitter,
            alpha: DVector::from_vec(doc.alpha),
            latent_mode,
            sqrt_w,
            chol,
            iterations: doc.iterations,
            converged: doc.converged,
            objective_trace: Vec::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GpDocument = serde_json::from_str(s).map_err(|e| invalid(format!("bad model json: {e}")))?;
        Self::from_document(doc)
    }
}

/// Serialized form of a [`TrainedGP`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDocument {
    pub spec: KernelSpec,
    pub mode: FitMode,
    pub jitter: f64,
    pub alpha: Vec<f64>,
    pub latent_mode: Option<Vec<f64>>,
    pub train_features: Vec<Vec<f64>>,
    pub train_targets: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Axis-aligned 2D box `[(x0_lo, x0_hi), (x1_lo, x1_hi)]`.
pub type Bounds2 = [(f64, f64); 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub x0: f64,
    pub x1: f64,
    pub decision: Decision,
    pub mean: f64,
    pub variance: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Row-major prediction grid over a 2D box: `x1` indexes rows, `x0` columns,
/// both endpoints included.
pub fn decision_grid(
    gp: &TrainedGP,
    bounds: Bounds2,
    resolution: usize,
    rule: Option<&RejectRule>,
) -> Result<Vec<GridCell>> {
    if gp.dim() != 2 {
        return Err(invalid(format!("decision grid needs 2D inputs, model has {}", gp.dim())));
    }
    if resolution == 0 {
        return Err(invalid("grid resolution must be at least 1"));
    }
    let xs = linspace(bounds[0].0, bounds[0].1, resolution);
    let ys = linspace(bounds[1].0, bounds[1].1, resolution);
    crate::par::try_map_range(resolution * resolution, |idx| {
        let (x0, x1) = (xs[idx % resolution], ys[idx / resolution]);
        let p = gp.predict(&[x0, x1])?;
        let decision = match rule {
            Some(r) => r.decide(p.mean),
            None => Decision::from_sign(p.mean),
        };
        Ok(GridCell { x0, x1, decision, mean: p.mean, variance: p.variance })
    })
}

/// CSV with header `x0,x1,label,mean,variance`.
pub fn grid_to_csv(cells: &[GridCell]) -> String {
    let mut out = String::from("x0,x1,label,mean,variance\n");
    for c in cells {
        out.push_str(&format!("{},{},{},{},{}\n", c.x0, c.x1, c.decision.as_str(), c.mean, c.variance));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub reject_rate: f64,
}

/// Accuracy over `data`. Under a rejection rule, rejected points count as errors.
pub fn accuracy(gp: &TrainedGP, data: &Dataset, rule: Option<&RejectRule>) -> Result<AccuracyReport> {
    if data.is_empty() {
        return Err(invalid("accuracy needs a non-empty dataset"));
    }
    let decisions = crate::par::try_map(data.features(), |x| gp.decide(x, rule))?;
    let n = data.len() as f64;
    let correct = decisions.iter().zip(data.labels()).filter(|(d, &y)| d.label() == Some(y)).count();
    let rejected = decisions.iter().filter(|d| d.is_reject()).count();
    Ok(AccuracyReport { accuracy: correct as f64 / n, reject_rate: rejected as f64 / n })
}
