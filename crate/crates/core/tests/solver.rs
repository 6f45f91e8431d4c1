use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use tvp_gamp::benchmark::default_gamp_config;
use tvp_gamp::design::{DenseOperator, LinearOperator, TvpDesignOperator};
use tvp_gamp::dgp::{simulate, SimKind, SimSpec};
use tvp_gamp::gamp::{gamp_solve, solve_tvp, AlphaUpdate, GampConfig, VarianceMode};
use tvp_gamp::oracles::exact_gaussian_posterior;
use tvp_gamp::Error;

fn normal_matrix(t: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DMatrix::from_fn(t, p, |_, _| rng.sample(StandardNormal))
}

#[test]
fn tvp_solve_matches_dense_posterior_for_fixed_precisions() {
    let base = normal_matrix(60, 4, 0);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let y: Vec<f64> = (0..60).map(|i| base[(i, 0)] + rng.sample::<f64, _>(StandardNormal)).collect();
    let dense = TvpDesignOperator::new(&base).unwrap().to_dense().unwrap();
    for alpha in [0.1, 1.0, 10.0] {
        let cfg = GampConfig {
            alpha_update: AlphaUpdate::Fixed,
            alpha_init: alpha,
            variance: VarianceMode::KnownConstant { sigma2: 1.0 },
            tol: 1e-12,
            max_iter: 5000,
            ..GampConfig::default()
        };
        let fit = solve_tvp(&base, &y, &cfg).unwrap();
        assert!(fit.solution.state.converged);
        let (mean, _) = exact_gaussian_posterior(&dense, &y, &vec![alpha; dense.ncols()], 1.0).unwrap();
        for (a, b) in fit.solution.state.beta_hat.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9, "alpha {alpha}: {a} vs {b}");
        }
    }
}

#[test]
fn bounded_oscillation_is_reported_as_divergence() {
    // Replication 31 of the AR(4) design locks into a 2-cycle at the default damping.
    let data = simulate(&SimSpec::new(SimKind::Ar4, 500, 1), 31).unwrap();
    let op = DenseOperator::new(data.x.clone());
    let cfg = default_gamp_config(SimKind::Ar4);
    assert!(matches!(gamp_solve(&op, &data.y, &cfg), Err(Error::Divergence { .. })));

    let heavier = GampConfig { damping: 0.7, ..cfg };
    let sol = gamp_solve(&op, &data.y, &heavier).unwrap();
    assert!(sol.state.beta_hat.iter().all(|b| b.abs() < 2.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tvp_operator_adjoint_identity(t in 1usize..30, p in 1usize..6, seed in any::<u64>()) {
        let op = TvpDesignOperator::new(&normal_matrix(t, p, seed)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        let v: Vec<f64> = (0..op.ncols()).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = (0..op.nrows()).map(|_| rng.sample(StandardNormal)).collect();
        let mut av = vec![0.0; op.nrows()];
        let mut atu = vec![0.0; op.ncols()];
        op.forward_into(&v, &mut av);
        op.adjoint_into(&u, &mut atu);
        let lhs: f64 = av.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(&atu).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}
