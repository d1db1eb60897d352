//! Covariance propagation against the closed form
//! `Σ(t) = Σ∞ − e^{At} Σ∞ e^{Aᵀt}` for stable linear systems.

use nalgebra::DMatrix;
use proptest::prelude::*;
use stocycle::clt::{propagate_gaussian, stationary_covariance};
use stocycle::linalg::{max_abs, sym_eigen};
use stocycle::model::{builtin_model, linear_params};
use stocycle::ode::StepControl;

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

/// Stable drift: negative definite symmetric part plus a rotation.
fn system(n: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (matrix(n), matrix(n), matrix(n)).prop_map(move |(m, s, c)| {
        let a = -(&m * m.transpose()) - DMatrix::identity(n, n) * 0.3 + (&s - s.transpose());
        let d = &c * c.transpose() + DMatrix::identity(n, n) * 0.05;
        (a, d)
    })
}

fn ctrl() -> StepControl {
    StepControl::with_tolerances(1e-11, 1e-13)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transient_covariance_matches_matrix_exponential((a, d) in (2usize..=3).prop_flat_map(system), t in 0.1f64..3.0) {
        let n = a.nrows();
        let model = builtin_model("linear", &linear_params(&a)).unwrap().with_diffusion(d.clone()).unwrap();
        let tube = propagate_gaussian(&model, &vec![0.0; n], &vec![0.0; n], &DMatrix::zeros(n, n), &[0.0, t], &ctrl()).unwrap();
        let inf = stationary_covariance(&a, &d).unwrap();
        let e = (&a * t).exp();
        let exact = &inf - &e * &inf * e.transpose();
        prop_assert!(max_abs(&(&tube.sigma[1] - &exact)) < 1e-8 * max_abs(&inf));
        prop_assert!(sym_eigen(&tube.sigma[1]).0[0] > -1e-12);
    }

    #[test]
    fn stationary_covariance_is_invariant((a, d) in (2usize..=3).prop_flat_map(system)) {
        let n = a.nrows();
        let inf = stationary_covariance(&a, &d).unwrap();
        let residual = &a * &inf + &inf * a.transpose() + &d * 2.0;
        prop_assert!(max_abs(&residual) < 1e-10 * max_abs(&inf).max(1.0));
        let model = builtin_model("linear", &linear_params(&a)).unwrap().with_diffusion(d).unwrap();
        let tube = propagate_gaussian(&model, &vec![0.0; n], &vec![0.0; n], &inf, &[0.0, 1.0, 2.5], &ctrl()).unwrap();
        for s in &tube.sigma {
            prop_assert!(max_abs(&(s - &inf)) < 1e-8 * max_abs(&inf));
        }
    }
}
