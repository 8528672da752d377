//! Experiment configuration: one TOML file per experiment, overridable from
//! the command line.

use std::path::{Path, PathBuf};

use gpattack_core::data::{generate_blobs_with_std, generate_two_moons, load_csv, normalize, split};
use gpattack_core::evasion::AttackConfig;
use gpattack_core::gp::RejectionPolicy;
use gpattack_core::membership::MembershipFeature;
use gpattack_core::{Dataset, KernelFamily, KernelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Lengthscale pairs `(short, long)` for the reference tasks.
pub const REFERENCE_LENGTHSCALES: [(&str, f64, f64); 8] = [
    ("hidost", 0.5, 1.9),
    ("drebin", 0.5, 1.9),
    ("spam", 0.3, 5.0),
    ("bank", 0.3, 2.0),
    ("mnist91", 1.0, 8.0),
    ("mnist38", 1.0, 8.0),
    ("svhn91", 8.0, 16.0),
    ("svhn10", 8.0, 16.0),
];

pub fn reference_lengthscales(name: &str) -> Option<(f64, f64)> {
    REFERENCE_LENGTHSCALES.iter().find(|r| r.0 == name).map(|r| (r.1, r.2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub lengthscales: LengthscalePair,
    #[serde(default)]
    pub rejection: RejectionConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evasion: EvasionConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub membership: MembershipConfig,
    #[serde(default)]
    pub secure: SecureConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: default_out(),
            data: DataConfig::default(),
            kernel: KernelConfig::default(),
            lengthscales: LengthscalePair::default(),
            rejection: RejectionConfig::default(),
            train: TrainConfig::default(),
            evasion: EvasionConfig::default(),
            extraction: ExtractionConfig::default(),
            membership: MembershipConfig::default(),
            secure: SecureConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    TwoMoons,
    Blobs,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub n: usize,
    pub noise: f64,
    pub dim: usize,
    pub separation: f64,
    pub std: f64,
    pub path: Option<PathBuf>,
    pub label_column: String,
    pub train_fraction: f64,
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::TwoMoons,
            n: 200,
            noise: 0.2,
            dim: 2,
            separation: 2.0,
            std: 1.0,
            path: None,
            label_column: "label".into(),
            train_fraction: 0.75,
            normalize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub variance: f64,
    pub degree: u32,
    pub offset: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { family: KernelFamily::Rbf, variance: 1.0, degree: 2, offset: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthscalePair {
    pub short: f64,
    pub long: f64,
}

impl Default for LengthscalePair {
    fn default() -> Self {
        let (short, long) = reference_lengthscales("mnist91").expect("reference row exists");
        LengthscalePair { short, long }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejectionConfig {
    pub tau0: f64,
    pub tau1: f64,
    pub zero_eps: f64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig { tau0: 0.5, tau1: 0.5, zero_eps: gpattack_core::gp::DEFAULT_ZERO_EPS }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Decision grid resolution for 2D data; 0 disables the grid.
    pub grid_resolution: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_iter: gpattack_core::gp::DEFAULT_MAX_ITER, tol: gpattack_core::gp::DEFAULT_TOL, grid_resolution: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvasionConfig {
    pub points: usize,
    pub epsilon: f64,
    pub jsma_budget: usize,
    pub jsma_step: f64,
    pub cw_max_iter: usize,
    pub cw_step_size: f64,
    pub cw_confidence: f64,
    pub cw_margin: f64,
}

impl Default for EvasionConfig {
    fn default() -> Self {
        let cw = AttackConfig::new(Vec::new());
        EvasionConfig {
            points: 50,
            epsilon: cw.epsilon,
            jsma_budget: 2,
            jsma_step: 0.3,
            cw_max_iter: cw.max_iter,
            cw_step_size: cw.step_size,
            cw_confidence: cw.confidence,
            cw_margin: cw.margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Training rows given to the analytic attacks.
    pub analytic_points: usize,
    pub jitter: f64,
    pub interval: (f64, f64),
    /// Anchors to recover in the training-data attack.
    pub recover_points: usize,
    /// Recovery budget as a multiple of `n * d`.
    pub budget_factor: usize,
    pub holdout: usize,
    pub regime: gpattack_core::extraction::DataRegime,
    /// Attacker training rows; 0 uses as many as the regime allows.
    pub attacker_size: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            analytic_points: 10,
            jitter: 1e-8,
            interval: (0.05, 20.0),
            recover_points: 2,
            budget_factor: 3,
            holdout: gpattack_core::extraction::DEFAULT_HOLDOUT,
            regime: gpattack_core::extraction::DataRegime::Same,
            attacker_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MembershipConfig {
    pub features: Vec<MembershipFeature>,
    pub victim_points: usize,
    pub trees: usize,
    pub max_depth: usize,
    pub attacker_fraction: f64,
    pub test_size: usize,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        MembershipConfig {
            features: vec![MembershipFeature::LatentMean],
            victim_points: 40,
            trees: 100,
            max_depth: 8,
            attacker_fraction: 0.8,
            test_size: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecureConfig {
    pub rho: f64,
    pub probes: usize,
    pub grid_resolution: usize,
    pub jitter: f64,
}

impl Default for SecureConfig {
    fn default() -> Self {
        SecureConfig { rho: 0.5, probes: 10_000, grid_resolution: 100, jitter: 1e-12 }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lengthscale_short: Option<f64>,
    pub lengthscale_long: Option<f64>,
    pub kernel: Option<KernelFamily>,
    /// A generator name (`two_moons`, `blobs`) or a CSV path.
    pub data: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(l) = o.lengthscale_short {
            self.lengthscales.short = l;
        }
        if let Some(l) = o.lengthscale_long {
            self.lengthscales.long = l;
        }
        if let Some(k) = o.kernel {
            self.kernel.family = k;
        }
        match o.data.as_deref() {
            Some("two_moons") => self.data.source = DataSource::TwoMoons,
            Some("blobs") => self.data.source = DataSource::Blobs,
            Some(path) => {
                self.data.source = DataSource::Csv;
                self.data.path = Some(PathBuf::from(path));
            }
            None => {}
        }
    }

    /// Checks every invariant, collecting all problems into one message.
    pub fn validate(&self) -> CliResult<()> {
        let mut problems = Vec::new();
        let l = self.lengthscales;
        if !(l.short > 0.0 && l.long.is_finite()) {
            problems.push(format!("lengthscales must be positive and finite (short = {}, long = {})", l.short, l.long));
        } else if l.short >= l.long {
            problems.push(format!("short lengthscale {} must be below long lengthscale {}", l.short, l.long));
        }
        if let Err(e) = self.spec(l.short.max(f64::MIN_POSITIVE)) {
            problems.push(format!("kernel: {e}"));
        }
        if let Err(e) = RejectionPolicy::new(self.rejection.tau0, self.rejection.tau1) {
            problems.push(format!("rejection: {e}"));
        }
        if !(self.rejection.zero_eps >= 0.0) {
            problems.push("rejection.zero_eps must be non-negative".into());
        }
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            problems.push(format!("data.train_fraction must lie in (0, 1), got {}", d.train_fraction));
        }
        match d.source {
            DataSource::Csv => match &d.path {
                None => problems.push("data.path is required for csv data".into()),
                Some(p) if !p.is_file() => problems.push(format!("data file {} does not exist", p.display())),
                Some(_) => {}
            },
            DataSource::TwoMoons if d.n < 4 || d.n % 2 != 0 => {
                problems.push(format!("two_moons needs an even data.n >= 4, got {}", d.n))
            }
            DataSource::Blobs if d.n < 4 || d.dim == 0 => problems.push("blobs needs data.n >= 4 and data.dim >= 1".into()),
            _ => {}
        }
        if self.secure.rho <= 0.0 || self.secure.rho >= self.kernel.variance {
            problems.push(format!("secure.rho must lie in (0, kernel.variance), got {}", self.secure.rho));
        }
        if self.evasion.jsma_budget == 0 {
            problems.push("evasion.jsma_budget must be at least 1".into());
        }
        if self.extraction.budget_factor == 0 {
            problems.push("extraction.budget_factor must be at least 1".into());
        }
        if self.membership.features.is_empty() {
            problems.push("membership.features must not be empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    /// Kernel with the given lengthscale.
    pub fn spec(&self, lengthscale: f64) -> gpattack_core::Result<KernelSpec> {
        let k = &self.kernel;
        match k.family {
            KernelFamily::Rbf => KernelSpec::rbf(lengthscale, k.variance),
            KernelFamily::Linear => KernelSpec::linear(k.variance),
            KernelFamily::Polynomial => KernelSpec::polynomial(k.variance, k.degree, k.offset),
        }
    }

    pub fn rejection_policy(&self) -> gpattack_core::Result<RejectionPolicy> {
        RejectionPolicy::new(self.rejection.tau0, self.rejection.tau1)
    }

    /// Loads or generates the data and splits it into train and test parts.
    pub fn load_data(&self) -> CliResult<(Dataset, Dataset)> {
        let d = &self.data;
        let seeds = self.seeds();
        let data = match d.source {
            DataSource::TwoMoons => generate_two_moons(d.n, d.noise, seeds.data)?,
            DataSource::Blobs => generate_blobs_with_std(d.n, d.dim, d.separation, d.std, seeds.data)?,
            DataSource::Csv => load_csv(d.path.as_ref().expect("validated"), &d.label_column)?,
        };
        let data = if d.normalize { normalize(&data).0 } else { data };
        Ok(split(&data, d.train_fraction, seeds.split)?)
    }

    pub fn seeds(&self) -> Seeds {
        let s = |k| gpattack_core::sub_seed(self.seed, k);
        Seeds { master: self.seed, data: s(1), split: s(2), attack: s(3), extraction: s(4), membership: s(5) }
    }
}

/// Per-stage seeds derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub data: u64,
    pub split: u64,
    pub attack: u64,
    pub extraction: u64,
    pub membership: u64,
}

/// Default template, optionally with the lengthscale pair of a reference task.
pub fn template(reference: Option<&str>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(name) = reference {
        let (short, long) = reference_lengthscales(name).ok_or_else(|| {
            let known: Vec<&str> = REFERENCE_LENGTHSCALES.iter().map(|r| r.0).collect();
            CliError::Config(format!("unknown reference task `{name}`; known: {}", known.join(", ")))
        })?;
        cfg.lengthscales = LengthscalePair { short, long };
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_template_uses_mnist91_pair() {
        let cfg = template(None).unwrap();
        assert_eq!((cfg.lengthscales.short, cfg.lengthscales.long), (1.0, 8.0));
        assert_eq!(template(Some("spam")).unwrap().lengthscales, LengthscalePair { short: 0.3, long: 5.0 });
        assert!(template(Some("imagenet")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("seed = 4\n[lengthscales]\nshort = 0.2\nlong = 2.0\n").unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.data, DataConfig::default());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides { seed: Some(9), lengthscale_short: Some(0.5), data: Some("blobs".into()), ..Default::default() });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lengthscales.short, 0.5);
        assert_eq!(cfg.data.source, DataSource::Blobs);
    }

    #[test]
    fn validation_collects_problems() {
        let mut cfg = ExperimentConfig::default();
        cfg.lengthscales = LengthscalePair { short: 3.0, long: 2.0 };
        cfg.data.source = DataSource::Csv;
        cfg.data.path = Some("/definitely/not/here.csv".into());
        match cfg.validate() {
            Err(CliError::Validation(p)) => assert_eq!(p.len(), 2, "{p:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }
}
