use std::sync::OnceLock;

use gpattack_core::data::{generate_blobs, generate_two_moons, split, uniform_points};
use gpattack_core::evasion::{box_around, cw_l2, default_box, gpjm, Attack, AttackConfig};
use gpattack_core::extraction::{estimate_lengthscale_sweep, identify_kernel, ModelOracle};
use gpattack_core::gp::{fit_classification_laplace, DEFAULT_MAX_ITER, DEFAULT_TOL};
use gpattack_core::linalg::{add_diagonal, cholesky};
use gpattack_core::membership::{build_attack_dataset, MembershipFeature};
use gpattack_core::{Dataset, KernelSpec, TrainedGP};
use proptest::prelude::*;

fn rbf(l: f64) -> KernelSpec {
    KernelSpec::rbf(l, 1.0).unwrap()
}

fn moons() -> &'static (TrainedGP, Dataset, Vec<(f64, f64)>) {
    static CELL: OnceLock<(TrainedGP, Dataset, Vec<(f64, f64)>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate_two_moons(120, 0.2, 3).unwrap();
        let (train, test) = split(&data, 0.75, 3).unwrap();
        let gp = fit_classification_laplace(&rbf(0.4), &train, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let bounds = default_box(&train);
        (gp, test, bounds)
    })
}

#[test]
fn rbf_abates_at_twenty_lengthscales() {
    for l in [0.1, 1.0, 7.5] {
        let k = rbf(l).eval(&[0.0, 0.0], &[20.0 * l, 0.0]).unwrap();
        assert!(k < 1e-12, "l = {l}: {k}");
    }
}

#[test]
fn rbf_gram_with_jitter_factorizes_at_n_500() {
    let pts = uniform_points(&[(-3.0, 3.0); 3], 500, 4);
    for l in [0.05, 1.0, 10.0] {
        let mut k = rbf(l).self_matrix(&pts).unwrap();
        add_diagonal(&mut k, 1e-6);
        assert!(cholesky(&k).is_ok(), "l = {l}");
    }
}

#[test]
fn generators_are_pure() {
    assert_eq!(generate_two_moons(50, 0.1, 9).unwrap(), generate_two_moons(50, 0.1, 9).unwrap());
    assert_eq!(generate_blobs(40, 3, 2.0, 9).unwrap(), generate_blobs(40, 3, 2.0, 9).unwrap());
    assert_ne!(generate_blobs(40, 3, 2.0, 9).unwrap(), generate_blobs(40, 3, 2.0, 10).unwrap());
}

#[test]
fn model_json_round_trip_predicts_identically() {
    let (gp, test, _) = moons();
    let back = TrainedGP::from_json(&gp.to_json()).unwrap();
    for x in test.features() {
        assert_eq!(gp.predict(x).unwrap(), back.predict(x).unwrap());
    }
}

#[test]
fn oracle_accounting_matches_reports() {
    let data = generate_blobs(80, 2, 2.0, 1).unwrap();
    let (train, holdout) = split(&data, 0.5, 1).unwrap();
    let oracle = ModelOracle::from_gp(fit_classification_laplace(&rbf(0.7), &train, 50, 1e-8).unwrap());
    let sweep = estimate_lengthscale_sweep(&oracle, &rbf(1.0), &train, 0.7, &holdout).unwrap();
    let before = oracle.query_count();
    assert_eq!(before, sweep.queries_used);
    identify_kernel(&oracle, &[rbf(0.7), KernelSpec::linear(1.0).unwrap()], &train, &holdout).unwrap();
    assert_eq!(oracle.query_count() - before, holdout.len() as u64);
}

#[test]
fn sweep_is_deterministic() {
    let data = generate_two_moons(80, 0.1, 2).unwrap();
    let (train, holdout) = split(&data, 0.5, 2).unwrap();
    let run = || {
        let oracle = ModelOracle::from_gp(fit_classification_laplace(&rbf(0.5), &train, 50, 1e-8).unwrap());
        estimate_lengthscale_sweep(&oracle, &rbf(1.0), &train, 0.6, &holdout).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn transfer_reuses_adversarial_points() {
    let (gp, test, bounds) = moons();
    let set = Attack::Gpfgs { epsilon: 0.3 }.run_set("fgs", gp, test, bounds).unwrap();
    let other = fit_classification_laplace(&rbf(2.0), &gp.training_data().unwrap(), 50, 1e-8).unwrap();
    // evaluation against a second model reads the stored points; nothing is re-attacked
    let a = set.accuracy_on(&other, None).unwrap();
    let b = set.accuracy_on(&other, None).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gpjm_changes_at_most_budget_features(i in 0usize..30, budget in 1usize..3, step in 0.05f64..1.0) {
        let (gp, test, bounds) = moons();
        let x = test.row(i % test.len());
        let r = gpjm(gp, x, budget, step, bounds).unwrap();
        prop_assert!(r.norms.l0 <= budget);
        let changed = x.iter().zip(&r.adversarial).filter(|(a, b)| a != b).count();
        prop_assert!(changed <= budget);
    }

    #[test]
    fn cw_lands_inside_the_box(i in 0usize..30, seed in 0u64..1000) {
        let (gp, test, bounds) = moons();
        let x = test.row(i % test.len());
        let cfg = AttackConfig { max_iter: 40, seed, ..AttackConfig::new(bounds.clone()) };
        let r = cw_l2(gp, x, &cfg).unwrap();
        for (v, &(lo, hi)) in r.adversarial.iter().zip(&box_around(bounds, x)) {
            prop_assert!(lo <= *v && *v <= hi);
        }
        prop_assert_eq!(r.clone(), cw_l2(gp, x, &cfg).unwrap());
    }

    #[test]
    fn attack_dataset_is_balanced(seed in 0u64..1000, n_out in 5usize..60) {
        let data = generate_blobs(100, 2, 1.0, seed).unwrap();
        let (train, rest) = split(&data, 0.3, seed).unwrap();
        let gp = fit_classification_laplace(&rbf(0.5), &train, 50, 1e-8).unwrap();
        let out = rest.subset(&(0..n_out.min(rest.len())).collect::<Vec<_>>()).unwrap();
        let ds = build_attack_dataset(&gp, &train, &out, &[MembershipFeature::Mean, MembershipFeature::RawInput], seed).unwrap();
        let n_in = ds.count_in();
        prop_assert!(n_in.abs_diff(ds.len() - n_in) <= 1);
        prop_assert_eq!(ds.n_features(), 3);
    }
}
