//! The subcommands. Each one writes its reports and a manifest into the
//! configured output directory.

use std::path::{Path, PathBuf};

use gpattack_core::data::{grid_points_2d, uniform_points};
use gpattack_core::evasion::{curvature_comparison, default_box, Attack, AttackConfig, AttackSet, CurvatureRow};
use gpattack_core::extraction::{
    attacker_data_for_regime, estimate_lengthscale_sweep, extract_lengthscale_analytic, identify_kernel,
    kernel_distances_to_csv, kernel_label, match_points, query_complexity, recover_training_data_analytic,
    ComplexityEstimate, DataRegime, ExtractionReport, ModelOracle, RecoveryConfig, Regime,
};
use gpattack_core::gp::{
    accuracy, decision_grid, fit_classification_laplace, fit_regression_targets, grid_to_csv, RejectRule,
};
use gpattack_core::membership::{ForestParams, MembershipExperiment, MembershipReport};
use gpattack_core::secure::{
    check_identity_assumption, equivalence_check, generalization_probe, GeneralizationReport, SecureClassifier,
    IDENTITY_EPS,
};
use gpattack_core::{Dataset, KernelSpec, TrainedGP};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{ArtifactWriter, Manifest, MANIFEST_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Evade,
    Extract,
    Membership,
    SecureDemo,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Train, Command::Evade, Command::Extract, Command::Membership, Command::SecureDemo];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Evade => "evade",
            Command::Extract => "extract",
            Command::Membership => "membership",
            Command::SecureDemo => "secure-demo",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Validates `cfg`, runs `cmd` and returns the manifest path.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let mut out = ArtifactWriter::create(&cfg.out)?;
    match cmd {
        Command::Train => train(cfg, &mut out)?,
        Command::Evade => evade(cfg, &mut out)?,
        Command::Extract => extract(cfg, &mut out)?,
        Command::Membership => membership(cfg, &mut out)?,
        Command::SecureDemo => secure_demo(cfg, &mut out)?,
    }
    out.finish(cmd.name(), cfg)
}

/// Re-runs the experiment recorded in a manifest, optionally into another directory.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    let path = if manifest_path.is_dir() { manifest_path.join(MANIFEST_FILE) } else { manifest_path.to_path_buf() };
    let manifest = Manifest::load(&path)?;
    let cmd = Command::parse(&manifest.subcommand).ok_or_else(|| CliError::Manifest {
        path: path.clone(),
        message: format!("unknown subcommand `{}`", manifest.subcommand),
    })?;
    let mut cfg = manifest.config;
    if let Some(dir) = out {
        cfg.out = dir.to_path_buf();
    }
    run(cmd, &cfg)
}

fn fit_victims(cfg: &ExperimentConfig, train: &Dataset) -> CliResult<(TrainedGP, TrainedGP)> {
    let fit = |l: f64| -> CliResult<TrainedGP> {
        Ok(fit_classification_laplace(&cfg.spec(l)?, train, cfg.train.max_iter, cfg.train.tol)?)
    };
    Ok((fit(cfg.lengthscales.short)?, fit(cfg.lengthscales.long)?))
}

#[derive(Serialize)]
struct VictimSummary {
    lengthscale: f64,
    iterations: usize,
    converged: bool,
    train_accuracy: f64,
    test_accuracy: f64,
    test_accuracy_rejection: f64,
    test_reject_rate: f64,
    test_accuracy_zero_rejection: f64,
}

#[derive(Serialize)]
struct TrainReport {
    train_size: usize,
    test_size: usize,
    dim: usize,
    kernel: String,
    short: VictimSummary,
    long: VictimSummary,
}

fn summarize(cfg: &ExperimentConfig, gp: &TrainedGP, train: &Dataset, test: &Dataset) -> CliResult<VictimSummary> {
    let band = RejectRule::Band(cfg.rejection_policy()?);
    let zero = RejectRule::NearZero { eps: cfg.rejection.zero_eps };
    let with_band = accuracy(gp, test, Some(&band))?;
    Ok(VictimSummary {
        lengthscale: gp.spec().lengthscale.primary(),
        iterations: gp.iterations(),
        converged: gp.converged(),
        train_accuracy: accuracy(gp, train, None)?.accuracy,
        test_accuracy: accuracy(gp, test, None)?.accuracy,
        test_accuracy_rejection: with_band.accuracy,
        test_reject_rate: with_band.reject_rate,
        test_accuracy_zero_rejection: accuracy(gp, test, Some(&zero))?.accuracy,
    })
}

fn padded_bounds_2d(data: &Dataset) -> [(f64, f64); 2] {
    let b = data.bounds();
    let pad = |(lo, hi): (f64, f64)| {
        let m = 0.1 * (hi - lo).max(1e-9);
        (lo - m, hi + m)
    };
    [pad(b[0]), pad(b[1])]
}

fn train(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> CliResult<()> {
    let (train, test) = cfg.load_data()?;
    let (short, long) = fit_victims(cfg, &train)?;
    out.write("model_short.json", &short.to_json())?;
    out.write("model_long.json", &long.to_json())?;
    out.write_json(
        "accuracy.json",
        &TrainReport {
            train_size: train.len(),
            test_size: test.len(),
            dim: train.dim(),
            kernel: cfg.kernel.family.to_string(),
            short: summarize(cfg, &short, &train, &test)?,
            long: summarize(cfg, &long, &train, &test)?,
        },
    )?;
    if train.dim() == 2 && cfg.train.grid_resolution > 0 {
        let bounds = padded_bounds_2d(&train);
        let rule = RejectRule::Band(cfg.rejection_policy()?);
        for (name, gp) in [("grid_short.csv", &short), ("grid_long.csv", &long)] {
            let cells = decision_grid(gp, bounds, cfg.train.grid_resolution, Some(&rule))?;
            out.write(name, &grid_to_csv(&cells))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct FlipRate {
    set: String,
    flip_rate: f64,
    mean_l2_successful: Option<f64>,
}

#[derive(Serialize)]
struct EvasionReport {
    points: usize,
    zero_rejection_eps: f64,
    flip_rates: Vec<FlipRate>,
    curvature: Vec<CurvatureRow>,
}

fn evade(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> CliResult<()> {
    let (train, test) = cfg.load_data()?;
    let (short, long) = fit_victims(cfg, &train)?;
    let k = cfg.evasion.points.min(test.len());
    let targets = test.subset(&(0..k).collect::<Vec<_>>())?;
    let bounds = default_box(&train);
    let e = &cfg.evasion;
    let cw = AttackConfig {
        epsilon: e.epsilon,
        max_iter: e.cw_max_iter,
        step_size: e.cw_step_size,
        confidence: e.cw_confidence,
        margin: e.cw_margin,
        bounds: bounds.clone(),
        seed: cfg.seeds().attack,
    };
    let attacks = [
        Attack::Gpfgs { epsilon: e.epsilon },
        Attack::Gpjm { budget: e.jsma_budget, step: e.jsma_step },
        Attack::CwL2(cw),
    ];
    let mut sets: Vec<AttackSet> = Vec::new();
    for (victim_name, victim) in [("short", &short), ("long", &long)] {
        for attack in &attacks {
            let name = format!("{}_{}", attack.name(), victim_name);
            let set = attack.run_set(name.clone(), victim, &targets, &bounds)?;
            out.write(&format!("attacks_{name}.csv"), &set.to_csv())?;
            sets.push(set);
        }
    }
    let flip_rates = sets
        .iter()
        .map(|s| {
            let ok: Vec<f64> = s.results.iter().filter(|r| r.success).map(|r| r.norms.l2).collect();
            FlipRate {
                set: s.name.clone(),
                flip_rate: s.flip_rate(),
                mean_l2_successful: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
            }
        })
        .collect();
    let curvature = curvature_comparison(&short, &long, &sets, Some(cfg.rejection.zero_eps))?;
    out.write_json(
        "evasion.json",
        &EvasionReport { points: k, zero_rejection_eps: cfg.rejection.zero_eps, flip_rates, curvature },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct RecoverySummary {
    report: ExtractionReport,
    truth: Vec<Vec<f64>>,
    max_matched_error: f64,
    budget: usize,
}

#[derive(Serialize)]
struct KernelRow {
    kernel: String,
    distance: f64,
}

#[derive(Serialize)]
struct ExtractReport {
    complexity: Vec<ComplexityEstimate>,
    lengthscale: ExtractionReport,
    victim_lengthscale: f64,
    recovery: RecoverySummary,
    sweep_regime: String,
    sweep_argmin: f64,
    sweep_step: f64,
    sweep_queries: u64,
    kernels: Vec<KernelRow>,
}

fn take(data: &Dataset, k: usize) -> CliResult<Dataset> {
    Ok(data.subset(&(0..k.min(data.len())).collect::<Vec<_>>())?)
}

fn extract(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> CliResult<()> {
    let (train, test) = cfg.load_data()?;
    let x = &cfg.extraction;
    let seeds = cfg.seeds();
    let l = cfg.lengthscales.short;
    let spec = cfg.spec(l)?;
    let d = train.dim();

    let complexity = Regime::ALL
        .iter()
        .map(|&r| query_complexity(r, train.len(), d))
        .collect::<Result<Vec<_>, _>>()?;

    // analytic lengthscale recovery against a noiseless regression victim
    let known = take(&train, x.analytic_points)?;
    let oracle = ModelOracle::from_gp(fit_regression_targets(&spec, known.features(), known.labels(), x.jitter)?);
    let lengthscale = extract_lengthscale_analytic(&oracle, &cfg.spec(1.0)?, &known, x.jitter, x.interval, seeds.extraction)?;

    // training-data recovery with the lengthscale known
    let anchors = take(&train, x.recover_points)?;
    let oracle = ModelOracle::from_gp(fit_regression_targets(&spec, anchors.features(), anchors.labels(), x.jitter)?);
    let n = anchors.len();
    let budget = (x.budget_factor * n * d).max(n * d + 1);
    let rc = RecoveryConfig { seed: seeds.extraction, ..RecoveryConfig::new(train.bounds(), x.jitter) };
    let recovered = recover_training_data_analytic(&oracle, &spec, anchors.labels(), d, budget, &rc)?;
    let (_, max_matched_error) = match_points(recovered.points().expect("point estimate"), anchors.features())?;

    // empirical sweep and kernel identification against a classifier victim
    if test.len() < 2 {
        return Err(CliError::Validation(vec!["test split too small for a holdout".into()]));
    }
    let holdout_n = x.holdout.min(test.len() / 2).max(1);
    let holdout = take(&test, holdout_n)?;
    let fresh = test.subset(&(holdout_n..test.len()).collect::<Vec<_>>())?;
    let victim = fit_classification_laplace(&spec, &train, cfg.train.max_iter, cfg.train.tol)?;
    let oracle = ModelOracle::from_gp(victim);
    let wanted = if x.attacker_size == 0 { train.len() } else { x.attacker_size };
    let size = match x.regime {
        DataRegime::Same => wanted.min(train.len()),
        DataRegime::Disjoint => wanted.min(fresh.len()),
        DataRegime::Mixed => wanted.min(2 * train.len().min(fresh.len())),
    };
    let attacker = attacker_data_for_regime(&train, &fresh, x.regime, size, seeds.extraction)?;
    let sweep = estimate_lengthscale_sweep(&oracle, &cfg.spec(1.0)?, &attacker, l, &holdout)?;
    out.write("sweep.csv", &sweep.to_csv())?;

    let candidates: Vec<KernelSpec> = vec![
        KernelSpec::rbf(cfg.lengthscales.short, cfg.kernel.variance)?,
        KernelSpec::rbf(cfg.lengthscales.long, cfg.kernel.variance)?,
        KernelSpec::linear(cfg.kernel.variance)?,
        KernelSpec::polynomial(cfg.kernel.variance, cfg.kernel.degree, cfg.kernel.offset)?,
    ];
    let kernels = identify_kernel(&oracle, &candidates, &train, &holdout)?;
    out.write("kernels.csv", &kernel_distances_to_csv(&kernels))?;

    out.write_json(
        "extraction.json",
        &ExtractReport {
            complexity,
            lengthscale,
            victim_lengthscale: l,
            recovery: RecoverySummary { report: recovered, truth: anchors.features().to_vec(), max_matched_error, budget },
            sweep_regime: x.regime.as_str().to_string(),
            sweep_argmin: sweep.argmin,
            sweep_step: sweep.step(),
            sweep_queries: sweep.queries_used,
            kernels: kernels.iter().map(|k| KernelRow { kernel: kernel_label(&k.kernel), distance: k.distance }).collect(),
        },
    )?;
    Ok(())
}

fn membership(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> CliResult<()> {
    let (train, test) = cfg.load_data()?;
    let m = &cfg.membership;
    let k = m.victim_points.min(train.len());
    let victim_train = take(&train, k)?;
    let outside = train.subset(&(k..train.len()).collect::<Vec<_>>())?.concat(&test)?;
    let seed = cfg.seeds().membership;
    let exp = MembershipExperiment {
        features: m.features.clone(),
        forest: ForestParams { trees: m.trees, max_depth: m.max_depth, seed },
        attacker_fraction: m.attacker_fraction,
        test_size: m.test_size,
    };
    for (name, l) in [("short", cfg.lengthscales.short), ("long", cfg.lengthscales.long)] {
        let gp = fit_classification_laplace(&cfg.spec(l)?, &victim_train, cfg.train.max_iter, cfg.train.tol)?;
        let outcome = exp.run(&gp, &victim_train, &outside, seed)?;
        out.write_json(&format!("membership_{name}.json"), &MembershipReport::new(&outcome, &m.features, l, cfg.seed))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SecureReport {
    rho: f64,
    anchors: Vec<Vec<f64>>,
    anchor_labels: Vec<f64>,
    identity_lengthscale: f64,
    ball_radius: f64,
    probes: usize,
    agreement_rate: f64,
    disagreements: Vec<Vec<f64>>,
    identity_regime: GeneralizationReport,
    adjacent_anchor_lengthscale: f64,
    adjacent_anchors: GeneralizationReport,
}

/// Farthest-point selection of up to `k` training rows, starting from row 0.
fn spread_anchors(data: &Dataset, k: usize) -> Vec<usize> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = data.features().iter().map(|x| dist2(x, data.row(0))).collect();
    while chosen.len() < k.min(data.len()) {
        let (next, &d) = nearest.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
        if d == 0.0 {
            break;
        }
        chosen.push(next);
        for (i, x) in data.features().iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(x, data.row(next)));
        }
    }
    chosen
}

fn secure_demo(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> CliResult<()> {
    let (train, _) = cfg.load_data()?;
    let s = &cfg.secure;
    let variance = cfg.kernel.variance;
    let idx = spread_anchors(&train, 6);
    let anchors = train.subset(&idx)?;
    let min_dist = (0..anchors.len())
        .flat_map(|i| (i + 1..anchors.len()).map(move |j| (i, j)))
        .map(|(i, j)| anchors.row(i).iter().zip(anchors.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    // similarity exp(-7^2 / 2) ~ 2e-11 between the closest anchors
    let l_id = if min_dist.is_finite() { min_dist / 7.0 } else { cfg.lengthscales.short };
    let spec = KernelSpec::rbf(l_id, variance)?;
    debug_assert!(check_identity_assumption(anchors.features(), &spec, IDENTITY_EPS)?);
    let sc = SecureClassifier::new(anchors.features().to_vec(), anchors.labels().to_vec(), s.rho, spec.clone())?;
    let gp = fit_regression_targets(&spec, anchors.features(), anchors.labels(), s.jitter)?;
    let policy = sc.matched_policy()?;
    let probes = uniform_points(&train.bounds(), s.probes, cfg.seeds().attack);
    let eq = equivalence_check(&sc, &gp, &policy, &probes)?;

    let grid: Vec<Vec<f64>> = if train.dim() == 2 {
        grid_points_2d(padded_bounds_2d(&train), s.grid_resolution)
    } else {
        probes.clone()
    };
    let identity_regime = generalization_probe(&gp, &spec, s.rho, &grid, &policy)?;

    // two same-label anchors one lengthscale apart
    let l = cfg.lengthscales.short;
    let a = train.row(0).to_vec();
    let mut b = a.clone();
    b[0] += l;
    let y = train.labels()[0];
    let pair_spec = KernelSpec::rbf(l, variance)?;
    let pair_gp = fit_regression_targets(&pair_spec, &[a.clone(), b.clone()], &[y, y], s.jitter)?;
    let span = 4.0 * l;
    let pair_box: Vec<(f64, f64)> = (0..a.len()).map(|j| (a[j].min(b[j]) - span, a[j].max(b[j]) + span)).collect();
    let pair_grid = if a.len() == 2 {
        grid_points_2d([pair_box[0], pair_box[1]], s.grid_resolution)
    } else {
        uniform_points(&pair_box, s.probes, cfg.seeds().attack)
    };
    let adjacent_anchors = generalization_probe(&pair_gp, &pair_spec, s.rho, &pair_grid, &policy)?;

    out.write_json(
        "secure.json",
        &SecureReport {
            rho: s.rho,
            anchors: anchors.features().to_vec(),
            anchor_labels: anchors.labels().to_vec(),
            identity_lengthscale: l_id,
            ball_radius: sc.radius(),
            probes: probes.len(),
            agreement_rate: eq.agreement_rate,
            disagreements: eq.disagreements,
            identity_regime,
            adjacent_anchor_lengthscale: l,
            adjacent_anchors,
        },
    )?;
    Ok(())
}
