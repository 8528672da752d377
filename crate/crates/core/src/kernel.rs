//! Covariance functions.
//!
//! The RBF kernel is `variance * exp(-sum_j (x_j - y_j)^2 / (2 l_j^2))`, so a
//! short lengthscale gives a local, steep model and a long one a flat model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Linear,
    #[serde(rename = "poly")]
    Polynomial,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Linear => "linear",
            KernelFamily::Polynomial => "poly",
        })
    }
}

/// One shared lengthscale, or one per input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lengthscale {
    Shared(f64),
    PerDim(Vec<f64>),
}

impl Lengthscale {
    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        match self {
            Lengthscale::Shared(l) => *l,
            Lengthscale::PerDim(ls) => ls[j],
        }
    }

    /// The shared value, or the first per-dimension value.
    pub fn primary(&self) -> f64 {
        self.get(0)
    }

    fn values(&self) -> &[f64] {
        match self {
            Lengthscale::Shared(l) => std::slice::from_ref(l),
            Lengthscale::PerDim(ls) => ls,
        }
    }
}

#[derive(Deserialize)]
struct RawSpec {
    family: KernelFamily,
    #[serde(default = "default_lengthscale")]
    lengthscale: Lengthscale,
    #[serde(default = "default_variance")]
    variance: f64,
    #[serde(default = "default_degree")]
    degree: u32,
    #[serde(default = "default_offset")]
    offset: f64,
}

fn default_lengthscale() -> Lengthscale {
    Lengthscale::Shared(1.0)
}
fn default_variance() -> f64 {
    1.0
}
fn default_degree() -> u32 {
    2
}
fn default_offset() -> f64 {
    1.0
}

impl TryFrom<RawSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let spec = KernelSpec {
            family: raw.family,
            lengthscale: raw.lengthscale,
            variance: raw.variance,
            degree: raw.degree,
            offset: raw.offset,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Kernel family plus its parameters.
///
/// Serializes as `{"family": "rbf"|"linear"|"poly", "lengthscale": number|array,
/// "variance": number, "degree": int, "offset": number}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: Lengthscale,
    pub variance: f64,
    pub degree: u32,
    pub offset: f64,
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64, variance: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Rbf,
            lengthscale: Lengthscale::Shared(lengthscale),
            variance,
            degree: default_degree(),
            offset: default_offset(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf_per_dim(lengthscales: Vec<f64>, variance: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Rbf,
            lengthscale: Lengthscale::PerDim(lengthscales),
            variance,
            degree: default_degree(),
            offset: default_offset(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(variance: f64) -> Result<Self> {
        let spec = KernelSpec { family: KernelFamily::Linear, ..KernelSpec::rbf(1.0, variance)? };
        spec.validate()?;
        Ok(spec)
    }

    pub fn polynomial(variance: f64, degree: u32, offset: f64) -> Result<Self> {
        let spec = KernelSpec { family: KernelFamily::Polynomial, degree, offset, ..KernelSpec::rbf(1.0, variance)? };
        spec.validate()?;
        Ok(spec)
    }

    /// Same spec with a new shared lengthscale.
    pub fn with_lengthscale(&self, l: f64) -> Result<Self> {
        let spec = KernelSpec { lengthscale: Lengthscale::Shared(l), ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_variance(&self, variance: f64) -> Result<Self> {
        let spec = KernelSpec { variance, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(invalid(format!("kernel variance must be positive, got {}", self.variance)));
        }
        let ls = self.lengthscale.values();
        if ls.is_empty() || ls.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(invalid(format!("lengthscales must be positive, got {ls:?}")));
        }
        if self.family == KernelFamily::Polynomial && self.degree == 0 {
            return Err(invalid("polynomial degree must be at least 1"));
        }
        if !self.offset.is_finite() {
            return Err(invalid("polynomial offset must be finite"));
        }
        Ok(())
    }

    /// Checks that points of dimension `d` are compatible with this spec.
    pub fn check_input_dim(&self, d: usize) -> Result<()> {
        if let (KernelFamily::Rbf, Lengthscale::PerDim(ls)) = (self.family, &self.lengthscale) {
            check_dim(ls.len(), d)?;
        }
        Ok(())
    }

    /// Half the squared lengthscale-scaled distance, the RBF exponent.
    fn scaled_sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(j, (a, b))| {
                let r = (a - b) / self.lengthscale.get(j);
                r * r
            })
            .sum::<f64>()
            / 2.0
    }

    /// `k(x, y)` without dimension checks.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Rbf => self.variance * (-self.scaled_sq_dist(x, y)).exp(),
            KernelFamily::Linear => self.variance * dot(x, y),
            KernelFamily::Polynomial => self.variance * (dot(x, y) + self.offset).powi(self.degree as i32),
        }
    }

    /// Kernel similarity `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        self.check_input_dim(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn gradient_unchecked(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match self.family {
            KernelFamily::Rbf => {
                let k = self.eval_unchecked(x, y);
                x.iter()
                    .zip(y)
                    .enumerate()
                    .map(|(j, (a, b))| {
                        let l = self.lengthscale.get(j);
                        -k * (a - b) / (l * l)
                    })
                    .collect()
            }
            KernelFamily::Linear => y.iter().map(|b| self.variance * b).collect(),
            KernelFamily::Polynomial => {
                let p = self.degree as i32;
                let c = self.variance * p as f64 * (dot(x, y) + self.offset).powi(p - 1);
                y.iter().map(|b| c * b).collect()
            }
        }
    }

    /// Gradient of `k(x, y)` with respect to `x`.
    pub fn gradient_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), y.len())?;
        self.check_input_dim(x.len())?;
        Ok(self.gradient_unchecked(x, y))
    }

    /// Kernel-induced dissimilarity used by the drift diagnostic.
    ///
    /// For RBF this is the exponent `sum_j (x_j - y_j)^2 / (2 l_j^2)`, i.e.
    /// `-ln(k / variance)`, which does not saturate far from the data. Other
    /// families use the squared feature-space distance
    /// `k(x,x) + k(y,y) - 2 k(x,y)`.
    pub fn dissimilarity(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        self.check_input_dim(x.len())?;
        Ok(match self.family {
            KernelFamily::Rbf => self.scaled_sq_dist(x, y),
            _ => self.eval_unchecked(x, x) + self.eval_unchecked(y, y) - 2.0 * self.eval_unchecked(x, y),
        })
    }

    /// Kernel matrix between two point sets, `K[i][j] = k(a_i, b_j)`.
    pub fn matrix(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let d = check_point_set(a)?;
        check_dim(d, check_point_set(b)?)?;
        self.check_input_dim(d)?;
        let rows = crate::par::map(a, |x| b.iter().map(|y| self.eval_unchecked(x, y)).collect::<Vec<_>>());
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
    }

    /// Symmetric self-covariance of one point set.
    pub fn self_matrix(&self, a: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let d = check_point_set(a)?;
        self.check_input_dim(d)?;
        let n = a.len();
        let rows = crate::par::map_range(n, |i| (0..=i).map(|j| self.eval_unchecked(&a[i], &a[j])).collect::<Vec<_>>());
        Ok(DMatrix::from_fn(n, n, |i, j| if j <= i { rows[i][j] } else { rows[j][i] }))
    }

    /// `k(x, a_i)` for every row of `a`.
    pub fn cross_vector(&self, x: &[f64], a: &[Vec<f64>]) -> Vec<f64> {
        a.iter().map(|y| self.eval_unchecked(x, y)).collect()
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn check_point_set(a: &[Vec<f64>]) -> Result<usize> {
    let first = a.first().ok_or_else(|| invalid("point set must be non-empty"))?;
    let d = first.len();
    for p in a {
        check_dim(d, p.len())?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
    }

    fn all_specs(d: usize) -> Vec<KernelSpec> {
        vec![
            KernelSpec::rbf(0.7, 1.3).unwrap(),
            KernelSpec::rbf_per_dim((0..d).map(|j| 0.5 + j as f64 * 0.4).collect(), 2.0).unwrap(),
            KernelSpec::linear(0.8).unwrap(),
            KernelSpec::polynomial(1.1, 3, 0.5).unwrap(),
        ]
    }

    #[test]
    fn rbf_values() {
        let k = KernelSpec::rbf(1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        let v = k.eval(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367_879_4).abs() < 1e-7);
        let k2 = KernelSpec::rbf(0.5, 2.5).unwrap();
        assert_eq!(k2.eval(&[4.0], &[4.0]).unwrap(), 2.5);
    }

    #[test]
    fn linear_and_poly_values() {
        let lin = KernelSpec::linear(1.0).unwrap();
        assert_eq!(lin.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let poly = KernelSpec::polynomial(2.0, 2, 1.0).unwrap();
        assert_eq!(poly.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 2.0 * 144.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let k = KernelSpec::rbf(1.0, 1.0).unwrap();
        assert!(matches!(k.eval(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        let pd = KernelSpec::rbf_per_dim(vec![1.0, 2.0], 1.0).unwrap();
        assert!(pd.eval(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(k.gradient_x(&[1.0], &[1.0, 2.0]).is_err());
        assert!(k.matrix(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::rbf(0.0, 1.0).is_err());
        assert!(KernelSpec::rbf(1.0, -1.0).is_err());
        assert!(KernelSpec::rbf_per_dim(vec![1.0, -2.0], 1.0).is_err());
        assert!(KernelSpec::polynomial(1.0, 0, 1.0).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let spec: KernelSpec = serde_json::from_str(r#"{"family":"rbf","lengthscale":[0.5,2.0],"variance":1.5}"#).unwrap();
        assert_eq!(spec.lengthscale, Lengthscale::PerDim(vec![0.5, 2.0]));
        assert_eq!(spec.degree, 2);
        let back: KernelSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let poly: KernelSpec = serde_json::from_str(r#"{"family":"poly","variance":1,"degree":3,"offset":0}"#).unwrap();
        assert_eq!(poly.family, KernelFamily::Polynomial);
        assert!(serde_json::from_str::<KernelSpec>(r#"{"family":"rbf","lengthscale":-1,"variance":1}"#).is_err());
    }

    #[test]
    fn rbf_self_matrix_diagonal_and_duplicates() {
        let k = KernelSpec::rbf(0.9, 1.7).unwrap();
        let pts = random_points(6, 3, 1);
        let m = k.self_matrix(&pts).unwrap();
        for i in 0..6 {
            assert_eq!(m[(i, i)], 1.7);
        }
        let dup = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let m = k.self_matrix(&dup).unwrap();
        assert!(m.iter().all(|&v| v == 1.7));
    }

    #[test]
    fn matrix_matches_entrywise_loop() {
        let a = random_points(5, 3, 2);
        let b = random_points(4, 3, 3);
        for spec in all_specs(3) {
            let m = spec.matrix(&a, &b).unwrap();
            let s = spec.self_matrix(&a).unwrap();
            let s2 = spec.matrix(&a, &a).unwrap();
            for i in 0..5 {
                for j in 0..4 {
                    assert_eq!(m[(i, j)], spec.eval(&a[i], &b[j]).unwrap());
                }
                for j in 0..5 {
                    assert_eq!(s[(i, j)], spec.eval(&a[i], &a[j]).unwrap());
                    assert!((s[(i, j)] - s[(j, i)]).abs() <= 1e-12);
                    assert!((s[(i, j)] - s2[(i, j)]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_special_cases() {
        let k = KernelSpec::rbf(1.2, 1.0).unwrap();
        assert!(k.gradient_x(&[0.4, 0.1], &[0.4, 0.1]).unwrap().iter().all(|&g| g == 0.0));
        let lin = KernelSpec::linear(2.0).unwrap();
        assert_eq!(lin.gradient_x(&[9.0, -3.0], &[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        for seed in 0..20 {
            let pts = random_points(2, 3, 100 + seed);
            for spec in all_specs(3) {
                let g = spec.gradient_x(&pts[0], &pts[1]).unwrap();
                for j in 0..3 {
                    let mut xp = pts[0].clone();
                    let mut xm = pts[0].clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (spec.eval(&xp, &pts[1]).unwrap() - spec.eval(&xm, &pts[1]).unwrap()) / (2.0 * h);
                    let scale = g[j].abs().max(fd.abs()).max(1e-3);
                    assert!((g[j] - fd).abs() / scale < 1e-5, "{:?} comp {j}: {} vs {fd}", spec.family, g[j]);
                }
            }
        }
    }

    #[test]
    fn rbf_abates_far_from_data() {
        let l = 0.8;
        let k = KernelSpec::rbf(l, 1.0).unwrap();
        assert!(k.eval(&[0.0, 0.0], &[20.0 * l, 0.0]).unwrap() < 1e-12);
    }

    #[test]
    fn jittered_rbf_matrix_factorizes() {
        for (n, seed) in [(10, 0), (100, 1), (500, 2)] {
            let pts = random_points(n, 2, seed);
            let mut m = KernelSpec::rbf(1.0, 1.0).unwrap().self_matrix(&pts).unwrap();
            for i in 0..n {
                m[(i, i)] += 1e-6;
            }
            assert!(cholesky(&m).is_ok(), "n = {n}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_for_all_families(a in proptest::collection::vec(-5.0f64..5.0, 3), b in proptest::collection::vec(-5.0f64..5.0, 3)) {
            for spec in all_specs(3) {
                prop_assert_eq!(spec.eval(&a, &b).unwrap(), spec.eval(&b, &a).unwrap());
            }
        }

        #[test]
        fn shorter_lengthscale_is_less_similar(dist in 0.01f64..5.0, l1 in 0.1f64..3.0, dl in 0.01f64..3.0) {
            let short = KernelSpec::rbf(l1, 1.0).unwrap();
            let long = KernelSpec::rbf(l1 + dl, 1.0).unwrap();
            prop_assert!(short.eval(&[0.0], &[dist]).unwrap() < long.eval(&[0.0], &[dist]).unwrap());
        }

        #[test]
        fn rbf_entries_in_range(pts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 1..8), var in 0.1f64..5.0) {
            let spec = KernelSpec::rbf(0.6, var).unwrap();
            let m = spec.self_matrix(&pts).unwrap();
            for v in m.iter() {
                prop_assert!(*v >= 0.0 && *v <= var);
            }
        }
    }
}
