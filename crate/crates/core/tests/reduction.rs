use glvreduce_core::integrate::integrate_fixed;
use glvreduce_core::memory::{
    build_reduced_system, evaluate_rate, evaluate_y, reconstruct_eliminated, solve_reduced, NodeValues,
    SolverSettings,
};
use glvreduce_core::reducibility::{build_plan_canonical, check_reducible, zero_set, SearchStrategy};
use glvreduce_core::GlvModel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Diagonally dominant model with the canonical required zeros in place.
fn canonical_model(rng: &mut ChaCha8Rng, total: usize, retained: usize) -> GlvModel {
    let mut a = vec![vec![0.0; total]; total];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { rng.gen_range(-1.5..-0.5) } else { rng.gen_range(-0.3..0.3) / total as f64 };
        }
    }
    for e in zero_set(total, retained).unwrap() {
        a[e.row][e.col] = 0.0;
    }
    let b = (0..total).map(|_| rng.gen_range(0.5..1.5)).collect();
    let x0 = (0..total).map(|_| rng.gen_range(0.1..1.0)).collect();
    GlvModel::new(b, a, x0, None).unwrap()
}

fn linf_rel(a: &[f64], b: &[f64]) -> f64 {
    let e = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    e / b.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[test]
fn y_terms_reproduce_detailed_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (total, retained) in [(2, 1), (3, 1), (4, 2), (5, 4), (6, 2)] {
        let m = canonical_model(&mut rng, total, retained);
        let rs = build_reduced_system(&m, &build_plan_canonical(total, retained).unwrap()).unwrap();
        let det = integrate_fixed(&m, 3.0, 1e-2).unwrap();
        for (x, dx) in det.x.iter().zip(&det.dx) {
            let v = NodeValues::from_detailed(&rs, x, dx);
            for step in rs.steps() {
                let sp = step.y.eliminated;
                let y = evaluate_y(&step.y, &v).unwrap();
                assert!((y - x[sp]).abs() <= 1e-12 * x[sp].max(1.0), "S={total} s={retained}: y {y} vs {}", x[sp]);
                let r = evaluate_rate(&step.chi, &v);
                assert!((r - dx[sp]).abs() <= 1e-12 * dx[sp].abs().max(1.0));
            }
        }
    }
}

fn nested_errors(m: &GlvModel, dt: f64) -> Vec<f64> {
    let rs = build_reduced_system(m, &build_plan_canonical(3, 1).unwrap()).unwrap();
    let rt = solve_reduced(&rs, &SolverSettings::new(10.0, dt)).unwrap();
    let det = integrate_fixed(m, 10.0, dt).unwrap();
    let x1: Vec<f64> = rt.x.iter().map(|x| x[0]).collect();
    let mut errs = vec![linf_rel(&x1, &det.series(0))];
    for s in reconstruct_eliminated(&rs, &rt) {
        errs.push(linf_rel(&s.values, &det.series(s.species)));
    }
    errs
}

#[test]
fn nested_three_species_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = canonical_model(&mut rng, 3, 1);
    assert_eq!(m.a(0, 2), 0.0);
    let coarse = nested_errors(&m, 2e-3);
    let fine = nested_errors(&m, 1e-3);
    for (c, f) in coarse.iter().zip(&fine) {
        assert!(*f <= 1e-3, "{fine:?}");
        // errors already at round-off need no further reduction
        assert!(*f <= 1e-13 || c / f >= 3.0, "coarse {coarse:?} fine {fine:?}");
    }
}

#[test]
fn fixed_point_iterations_stay_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = canonical_model(&mut rng, 4, 1);
    let rs = build_reduced_system(&m, &build_plan_canonical(4, 1).unwrap()).unwrap();
    let rt = solve_reduced(&rs, &SolverSettings::new(5.0, 1e-2)).unwrap();
    assert!(rt.max_iterations >= 1 && rt.max_iterations < 20, "{}", rt.max_iterations);

    let tight = SolverSettings { fp_max_iter: 1, ..SolverSettings::new(5.0, 1e-2) };
    assert!(solve_reduced(&rs, &tight).is_err());
}

fn scramble(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scrambled_patterns_are_recovered(seed in any::<u64>(), total in 2usize..=8, frac in 0.0f64..1.0) {
        let retained = 1 + ((total - 1) as f64 * frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = canonical_model(&mut rng, total, retained);
        let perm = scramble(&mut rng, total);
        let scrambled = m.permuted(&perm).unwrap();
        let kept: Vec<usize> = (0..total).filter(|&k| perm[k] < retained).collect();
        let report = check_reducible(&scrambled, &kept, SearchStrategy::Exhaustive).unwrap();
        prop_assert!(report.feasible, "perm {:?} violations {:?}", perm, report.plan.violations);
        prop_assert!(build_reduced_system(&scrambled, &report.plan).is_ok());
    }

    #[test]
    fn search_is_deterministic(seed in any::<u64>(), total in 3usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = canonical_model(&mut rng, total, 1);
        let perm = scramble(&mut rng, total);
        let scrambled = m.permuted(&perm).unwrap();
        let kept = vec![perm.iter().position(|&p| p == 0).unwrap()];
        let a = check_reducible(&scrambled, &kept, SearchStrategy::Exhaustive).unwrap();
        let b = check_reducible(&scrambled, &kept, SearchStrategy::Exhaustive).unwrap();
        prop_assert_eq!(a, b);
    }
}
