use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use varorder_core::analysis::{effective_order, order_posterior, truncation_threshold};
use varorder_core::model::{ParamLayout, UnconstrainedParams};
use varorder_core::nuts::PosteriorDraws;
use varorder_core::reparam::{a_to_pacf, a_to_var, check_stationary, pacf_to_a, var_to_pacf};
use varorder_core::{Matrix, VarModel};

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> Matrix<f64> {
    let x = normal_matrix(rng, m, m, 1.0);
    x.matmul_t(&x).scale(1.0 / m as f64).add(&Matrix::identity(m).scale(0.5))
}

/// A random `(Σ, A_1..A_p)` with `m <= 3`, `p <= 4`.
fn random_case(seed: u64) -> (Matrix<f64>, Vec<Matrix<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=3);
    let p = rng.random_range(1..=4);
    let scale = rng.random_range(0.2..1.5);
    let sigma = random_spd(&mut rng, m);
    let a = (0..p).map(|_| normal_matrix(&mut rng, m, m, scale)).collect();
    (sigma, a)
}

fn max_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.sub(b).max_abs()
}

/// Near the unit circle `Γ_0` dwarfs `Σ` and round-off grows roughly with
/// the square of that ratio, so the tolerance does too.
fn tolerance(model: &VarModel<f64>) -> f64 {
    let kappa = model.gamma[0].max_abs() / model.sigma.max_abs();
    1e-8f64.max(10.0 * kappa * kappa * f64::EPSILON)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn mapped_coefficients_are_stationary(seed in any::<u64>()) {
        let (sigma, a) = random_case(seed);
        let (model, _) = a_to_var(&sigma, &a).unwrap();
        let (stable, radius) = check_stationary(&model.phi);
        prop_assert!(stable, "spectral radius {radius}");
    }

    #[test]
    fn roundtrip_through_coefficients(seed in any::<u64>()) {
        let (sigma, a) = random_case(seed);
        let (model, _) = a_to_var(&sigma, &a).unwrap();
        let tol = tolerance(&model);
        let (sigma_back, pacf_back) = var_to_pacf(&model).unwrap();
        prop_assert!(max_diff(&sigma_back, &sigma) < tol * sigma.max_abs().max(1.0));
        let pacf = a_to_pacf(&a).unwrap();
        for (p, q) in pacf.iter().zip(&pacf_back) {
            prop_assert!(max_diff(p, q) < tol);
        }
        let a_back = pacf_to_a(&pacf_back).unwrap();
        for (x, y) in a.iter().zip(&a_back) {
            let err = max_diff(x, y);
            prop_assert!(err < tol * x.max_abs().max(1.0), "A roundtrip error {err:e}");
        }
    }

    #[test]
    fn recursion_autocovariances_solve_lyapunov(seed in any::<u64>()) {
        let (sigma, a) = random_case(seed);
        let (model, _) = a_to_var(&sigma, &a).unwrap();
        let oracle = VarModel::from_coefficients(model.sigma.clone(), model.phi.clone()).unwrap();
        let scale = oracle.gamma[0].max_abs();
        for (g, h) in model.gamma.iter().zip(&oracle.gamma) {
            let rel = max_diff(g, h) / scale;
            prop_assert!(rel < tolerance(&oracle), "relative autocovariance error {rel:e}");
        }
    }

    #[test]
    fn effective_order_shrinks_as_threshold_grows(seed in any::<u64>(), e1 in 0.0..0.5f64, e2 in 0.0..0.5f64) {
        let (_, a) = random_case(seed);
        let pacf = a_to_pacf(&a).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(effective_order(&pacf, lo) >= effective_order(&pacf, hi));
    }

    #[test]
    fn threshold_is_monotone(m in 1usize..8, n in 2usize..5000, b1 in 0.5..0.999f64, b2 in 0.5..0.999f64) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        prop_assert!(truncation_threshold(m, n, lo).unwrap() <= truncation_threshold(m, n, hi).unwrap());
        prop_assert!(truncation_threshold(m, n + 1, lo).unwrap() < truncation_threshold(m, n, lo).unwrap());
        prop_assert!(truncation_threshold(m, n, lo).unwrap() < truncation_threshold(m + 1, n, lo).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_unpack_roundtrip(m in 1usize..4, p in 1usize..5, seed in any::<u64>()) {
        let layout = ParamLayout::new(m, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..layout.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let params: UnconstrainedParams<f64> = layout.unpack(&theta);
        prop_assert_eq!(layout.pack(&params), theta);
        prop_assert_eq!(layout.names().len(), layout.dim());
    }

    #[test]
    fn order_posterior_ignores_chain_order(seed in any::<u64>(), beta in 0.5..0.999f64) {
        let layout = ParamLayout::new(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chains: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| (0..20).map(|_| (0..layout.dim()).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()).collect())
            .collect();
        let mut reversed = chains.clone();
        reversed.reverse();
        let a = order_posterior(&PosteriorDraws::from_rows(layout.names(), chains), &layout, 200, beta).unwrap();
        let b = order_posterior(&PosteriorDraws::from_rows(layout.names(), reversed), &layout, 200, beta).unwrap();
        prop_assert_eq!(a.pmf, b.pmf);
    }
}

