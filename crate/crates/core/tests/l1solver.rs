use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rrpcp::harness::random_l1_instance;
use rrpcp::l1solver::*;
use rrpcp::oracle::lp_oracle;

fn tol() -> SolverTolerances {
    SolverTolerances::default()
}

fn rel_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

fn instance(seed: u64, q: usize, eps: f64, n_excluded: usize) -> L1Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(q / 3 + 2..=q / 2 + 3);
    let k = rng.gen_range(1..=3);
    random_l1_instance(&mut rng, n, q, k, eps, n_excluded)
}

#[test]
fn duplicated_identity_has_unit_objective() {
    let a = DMatrix::identity(3, 3);
    let a = DMatrix::from_fn(3, 6, |r, c| a[(r, c % 3)]);
    let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let rep = solve_bp_eq(&a, &b, &tol()).unwrap();
    assert!((rep.objective - 1.0).abs() < 1e-6);
    assert!(rep.residual_sq <= 1e-8);
    let zero = solve_bp_eq(&a, &DVector::zeros(3), &tol()).unwrap();
    assert_eq!(zero.solution, DVector::zeros(6));
}

#[test]
fn identity_sensing() {
    let a = DMatrix::identity(8, 8);
    let b = DVector::from_fn(8, |i, _| if i == 2 { 5.0 } else { 0.0 });
    let rep = solve_bpdn(&L1Problem::new(a, b.clone(), 1e-12), &tol()).unwrap();
    assert!((&rep.solution - &b).amax() < 1e-5);
}

#[test]
fn restricted_ls_on_identity_and_random() {
    let a = DMatrix::identity(5, 5);
    let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let v = restricted_least_squares(&a, &[1, 3], &b).solution;
    assert!((v - DVector::from_vec(vec![0.0, 2.0, 0.0, 4.0, 0.0])).amax() < 1e-14);
    assert_eq!(restricted_least_squares(&a, &[], &b).solution, DVector::zeros(5));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = DMatrix::from_fn(20, 40, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut t: Vec<usize> = rand::seq::index::sample(&mut rng, 40, 5).into_vec();
        t.sort_unstable();
        let w = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(20, 5, |r, c| a[(r, t[c])]) * &w;
        let rls = restricted_least_squares(&a, &t, &b);
        assert!(!rls.ill_conditioned());
        for (k, &i) in t.iter().enumerate() {
            assert!((rls.solution[i] - w[k]).abs() < 1e-10);
        }
        assert_eq!(rls.solution.iter().filter(|v| **v != 0.0).count(), 5);
    }
}

#[test]
fn sparse_instances_match_oracle() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bpdn = random_l1_instance(&mut rng, 10, 20, 2, 1e-8, 0);
        let rep = solve_bpdn(&bpdn, &tol()).unwrap();
        let lp = lp_oracle(&bpdn).unwrap();
        assert!(rel_gap(rep.objective, lp.objective, 1e-12) < 1e-5, "bpdn seed {seed}");

        let eq = random_l1_instance(&mut rng, 10, 25, 2, 0.0, 0);
        let rep = solve_bp_eq(&eq.a, &eq.b, &tol()).unwrap();
        let lp = lp_oracle(&eq).unwrap();
        assert!(rel_gap(rep.objective, lp.objective, 1e-12) < 1e-5, "eq seed {seed}");
    }
}

#[test]
fn unreachable_budget_is_infeasible() {
    let a = DMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let b = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    assert!(solve_bpdn(&L1Problem::new(a, b, 0.5), &tol()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_reports_are_feasible(seed in any::<u64>(), q in 6usize..=25, eps in prop_oneof![Just(0.0), 1e-6..2.0], nx in 0usize..3) {
        let prob = instance(seed, q, eps, nx);
        let rep = solve_bpdn(&prob, &tol()).unwrap();
        prop_assert!(rep.converged);
        prop_assert!(rep.residual_sq <= prob.eps + tol().feasibility_tol);
        prop_assert!((rep.residual_sq - prob.residual_sq(&rep.solution)).abs() < 1e-9);
        prop_assert!((rep.objective - prob.objective(&rep.solution)).abs() < 1e-9);
    }

    #[test]
    fn matches_lp_oracle(seed in any::<u64>(), q in 6usize..=25, eps in prop_oneof![Just(0.0), 1e-6..2.0], nx in 0usize..3) {
        let prob = instance(seed, q, eps, nx);
        let rep = solve_bpdn(&prob, &tol()).unwrap();
        let lp = lp_oracle(&prob).unwrap();
        let floor = 1e-9 * (1.0 + prob.b.norm());
        prop_assert!(rel_gap(rep.objective, lp.objective, floor) < 1e-5,
            "solver {} oracle {}", rep.objective, lp.objective);
    }

    #[test]
    fn larger_budget_never_costs_more(seed in any::<u64>(), q in 6usize..=25, e1 in 1e-4..1.0, extra in 0.0..2.0) {
        let base = instance(seed, q, e1, 0);
        let wide = L1Problem { eps: e1 + extra, ..base.clone() };
        let o1 = lp_oracle(&base).unwrap().objective;
        let o2 = lp_oracle(&wide).unwrap().objective;
        prop_assert!(o2 <= o1 * (1.0 + 1e-7) + 1e-12);
        let s1 = solve_bpdn(&base, &tol()).unwrap().objective;
        let s2 = solve_bpdn(&wide, &tol()).unwrap().objective;
        prop_assert!(s2 <= s1 * (1.0 + 2e-5) + 1e-12);
    }

    #[test]
    fn excluding_entries_never_costs_more(seed in any::<u64>(), q in 6usize..=25, eps in 1e-4..1.0) {
        let plain = instance(seed, q, eps, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut ex: Vec<usize> = rand::seq::index::sample(&mut rng, q, 3).into_vec();
        ex.sort_unstable();
        let some = plain.clone().with_excluded(ex);
        let all = plain.clone().with_excluded((0..q).collect());
        let o_plain = solve_bpdn(&plain, &tol()).unwrap().objective;
        let o_some = solve_bpdn(&some, &tol()).unwrap().objective;
        prop_assert!(o_some <= o_plain * (1.0 + 2e-5) + 1e-12);
        let rep_all = solve_bpdn(&all, &tol()).unwrap();
        prop_assert_eq!(rep_all.objective, 0.0);
        prop_assert!(rep_all.residual_sq <= eps + tol().feasibility_tol);
    }

    #[test]
    fn invariant_under_joint_scaling(seed in any::<u64>(), q in 6usize..=25, eps in 1e-4..1.0, c in 0.1..10.0) {
        let prob = instance(seed, q, eps, 1);
        let scaled = L1Problem {
            a: &prob.a * c,
            b: &prob.b * c,
            eps: c * c * eps,
            excluded: prob.excluded.clone(),
        };
        let r1 = solve_bpdn(&prob, &tol()).unwrap();
        let r2 = solve_bpdn(&scaled, &tol()).unwrap();
        prop_assert!(rel_gap(r2.objective, r1.objective, 1e-9) < 2e-5);
        let scale = r1.solution.amax().max(1.0);
        prop_assert!((&r1.solution - &r2.solution).amax() / scale < 1e-3);
    }
}
