use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use trek::blockops::{BlockDiagMatrix, BlockLayout};
use trek::oracle::{dense_restricted_solve, plain_cg};
use trek::rek::{
    rek_solve, rek_solve_observed, DenseProjector, DiagonalElimination, IdentityProjector,
    InnerProductSpace, Projector, SolveStatus, SolverConfig,
};

fn matrix(n: usize, m: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_iterator(n, m, entries.iter().copied().cycle().take(n * m))
}

/// `AᵀA/N + shift·I` built from the given entries.
fn spd(n: usize, entries: &[f64], shift: f64) -> DMatrix<f64> {
    let a = matrix(n, n, entries);
    a.transpose() * &a / n as f64 + DMatrix::identity(n, n) * shift
}

fn instance(
    max_n: usize,
) -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2..=max_n).prop_flat_map(|n| {
        (
            Just(n),
            1..=n,
            prop::collection::vec(-1.0..1.0f64, n * n),
            prop::collection::vec(-1.0..1.0f64, n * n),
            prop::collection::vec(-1.0..1.0f64, n),
            prop::collection::vec(-1.0..1.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn terminates_within_projector_rank((n, q, s, c, b, x0) in instance(20)) {
        let s = spd(n, &s, 1.0);
        let c = matrix(n, q, &c) + DMatrix::identity(n, q);
        let proj = DenseProjector::onto_columns(&c).unwrap();
        let rank = c.rank(1e-10);
        let (_, report) = rek_solve(
            &s,
            &proj,
            &DVector::from_vec(b),
            &DVector::from_vec(x0),
            &SolverConfig::default(),
        )
        .unwrap();
        prop_assert_eq!(report.status, SolveStatus::Converged);
        prop_assert!(report.iterations <= rank, "{} > {}", report.iterations, rank);
        prop_assert_eq!(report.residual_trace.len(), report.iterations + 1);
        prop_assert!(report.final_delta() < 1e-10);
    }

    #[test]
    fn krylov_invariants_hold((n, q, s, c, b, x0) in instance(12)) {
        let s = spd(n, &s, 0.5);
        let c = matrix(n, q, &c) + DMatrix::identity(n, q);
        let proj = DenseProjector::onto_columns(&c).unwrap();
        let b = DVector::from_vec(b);
        let mut residuals = Vec::new();
        let mut directions = Vec::new();
        let mut objective = Vec::new();
        rek_solve_observed(&s, &proj, &b, &DVector::from_vec(x0), &SolverConfig::default(), |st| {
            residuals.push(st.residual.clone());
            directions.extend(st.direction.cloned());
            objective.push(0.5 * st.x.dot(&(&s * st.x)) - b.dot(st.x));
        })
        .unwrap();

        let r0 = residuals[0].norm_squared();
        for i in 0..residuals.len() {
            for k in 0..i {
                prop_assert!(residuals[i].dot(&residuals[k]).abs() <= 1e-8 * r0);
            }
        }
        let energy = directions.iter().map(|p| p.dot(&(&s * p))).fold(0.0, f64::max);
        for i in 0..directions.len() {
            for k in 0..i {
                prop_assert!(directions[i].dot(&(&s * &directions[k])).abs() <= 1e-8 * energy);
            }
        }
        for w in objective.windows(2) {
            prop_assert!(w[1] <= w[0], "objective rose from {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn identity_projector_reproduces_textbook_cg((n, _q, s, _c, b, x0) in instance(50)) {
        let s = spd(n, &s, 0.5);
        let b = DVector::from_vec(b);
        let x0 = DVector::from_vec(x0);
        let cfg = SolverConfig::default().with_tol(1e-20);
        let mut iterates = Vec::new();
        rek_solve_observed(&s, &IdentityProjector, &b, &x0, &cfg, |st| iterates.push(st.x.clone()))
            .unwrap();
        let reference = plain_cg(&s, &b, &x0, 1e-20, cfg.maxiter);
        prop_assert_eq!(iterates.len(), reference.iterates.len());
        for (x, y) in iterates.iter().zip(&reference.iterates) {
            prop_assert!((x - y).amax() <= 1e-10);
        }
    }

    #[test]
    fn dense_projector_contract((n, q, _s, c, u, v) in instance(10)) {
        let c = matrix(n, q, &c);
        let proj = DenseProjector::onto_columns(&c).unwrap();
        let u = DVector::from_vec(u);
        let v = DVector::from_vec(v);
        let pu = proj.projected(&u);
        let ppu = proj.projected(&pu);
        prop_assert!((&ppu - &pu).norm() <= 1e-12 * pu.norm().max(1.0));
        let lhs = pu.dot(&v);
        let rhs = u.dot(&proj.projected(&v));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (u.norm() * v.norm()).max(1.0));
    }

    #[test]
    fn diagonal_elimination_contract(
        sizes in prop::collection::vec(1usize..5, 1..4),
        seed in prop::collection::vec(-1.0..1.0f64, 64),
    ) {
        let layout = std::sync::Arc::new(BlockLayout::new(sizes).unwrap());
        let len = layout.total_squared();
        let u = BlockDiagMatrix::odmat(seed.iter().cycle().take(len).copied().collect(), layout.clone()).unwrap();
        let v = BlockDiagMatrix::odmat(seed.iter().rev().cycle().take(len).copied().collect(), layout).unwrap();
        let pu = DiagonalElimination.projected(&u);
        prop_assert_eq!(DiagonalElimination.projected(&pu), pu.clone());
        let lhs = InnerProductSpace::dot(&pu, &v);
        let rhs = InnerProductSpace::dot(&u, &DiagonalElimination.projected(&v));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn rank_three_restriction_matches_dense_solve() {
    let n = 8;
    let entries: Vec<f64> = (0..n * n)
        .map(|k| ((k * 37 % 19) as f64 - 9.0) / 7.0)
        .collect();
    let s = spd(n, &entries, 0.3);
    let c = DMatrix::from_fn(n, 3, |i, j| ((i * 5 + j * 11) % 7) as f64 - 3.0);
    let b = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
    let proj = DenseProjector::onto_columns(&c).unwrap();
    let (x, report) =
        rek_solve(&s, &proj, &b, &DVector::zeros(n), &SolverConfig::default()).unwrap();
    let expected = dense_restricted_solve(&s, &c, &b).unwrap();
    assert_eq!(report.status, SolveStatus::Converged);
    assert!(report.iterations <= 3, "{}", report.iterations);
    assert!(
        (&x - &expected).amax() <= 1e-8,
        "{}",
        (&x - &expected).amax()
    );
}

#[test]
fn residual_trace_may_rise() {
    // strongly skewed spectrum, where δ is not monotone
    let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e3, 1e6]));
    let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    let cfg = SolverConfig::default().with_tol(1e-30);
    let (_, report) = rek_solve(&s, &IdentityProjector, &b, &DVector::zeros(3), &cfg).unwrap();
    assert!(report.residual_trace.windows(2).any(|w| w[1] > w[0]));
    assert!(report.converged());
}

#[test]
fn ill_conditioned_columns_give_idempotent_projector() {
    let c = DMatrix::from_column_slice(
        2,
        2,
        &[
            0.8936946275955655,
            -0.43282763219187126,
            0.6819909244897161,
            -0.29978184550992487,
        ],
    );
    let proj = DenseProjector::onto_columns(&c).unwrap();
    let u = DVector::from_vec(vec![0.0, -0.3725138504572553]);
    let pu = proj.projected(&u);
    assert!((proj.projected(&pu) - &pu).norm() <= 1e-12 * pu.norm().max(1.0));
    // full column rank in the plane: the projector is the identity
    assert!((&proj.0 - DMatrix::<f64>::identity(2, 2)).amax() <= 1e-14);
}
