use nalgebra::DVector;
use stocycle::cycle::{analyze_cycle, transverse_variance_product, CurvatureOptions, CycleAnalysis};
use stocycle::flow::CycleOptions;
use stocycle::linalg::sym_eigen;
use stocycle::model::{builtin_model, params};
use stocycle::ModelSpec;

fn vdp() -> ModelSpec {
    builtin_model("vdp", &params(&[("mu", 1.0)])).unwrap()
}

fn analysis(n: usize) -> CycleAnalysis {
    analyze_cycle(&vdp(), &[2.0, 0.0], n, &CycleOptions::default(), &CurvatureOptions::default())
        .unwrap()
}

#[test]
fn vdp_curvature_invariants() {
    let an = analysis(1024);
    let c = &an.curvature;
    println!(
        "periods {} periodicity {:e} riccati {:e} tangency {:e} skew {:e}",
        c.periods_used,
        c.periodicity_error,
        c.max_riccati_residual(),
        c.tangency_defect(&an.samples),
        an.frame.skew_defect()
    );
    assert!(c.periodicity_error < 1e-6);
    assert!(c.max_riccati_residual() < 1e-5);
    assert!(c.tangency_defect(&an.samples) < 1e-6);
    assert!(an.frame.skew_defect() < 5e-4);
    for (k, kr) in c.k_full.iter().zip(&c.k_reduced) {
        assert!(kr[(0, 0)] > 0.0);
        let (vals, _) = sym_eigen(k);
        assert!(vals[0].abs() < 1e-6 * vals[1]);
        let v = transverse_variance_product(k, 1e-6).unwrap();
        assert!((v * kr[(0, 0)] - 1.0).abs() < 1e-9);
    }
    assert!(an.prefactor.closure_error.abs() < 1e-5);
}

#[test]
fn vdp_conserved_quantity_and_marginal() {
    let an = analysis(1024);
    let c = an.conserved_quantity();
    let g = an.marginal();
    println!("c rel std {:e} max dev {:e}; g flux dev {:e}", c.relative_std, c.max_relative_deviation, g.flux_deviation);
    assert!(c.relative_std < 1e-3);
    assert!(g.flux_deviation < 1e-3);
    assert!((g.normalization - 1.0).abs() < 1e-12);
}

#[test]
fn vdp_entropy_expressions_agree() {
    let an = analysis(2048);
    let e = an.entropy();
    println!("max {:e} dev {:e} avgs {:?}", e.max_abs, e.max_pairwise_deviation, e.period_averages);
    assert!(e.max_pairwise_deviation < 1e-4 * e.max_abs);
    assert!(e.period_averages.iter().all(|a| a.abs() < 1e-6));
}

#[test]
fn vdp_flux_orthogonal_to_gradient_at_second_order() {
    let an = analysis(1024);
    let i = 300;
    let x0 = an.samples.states[i].clone();
    let k = &an.curvature.k_full[i];
    let (_, vecs) = sym_eigen(k);
    let v: DVector<f64> = vecs.column(1).into_owned();
    let inner = |delta: f64| {
        let x = &x0 + &v * delta;
        let f = an.flux(&x).unwrap();
        let grad = &f.curvature * (&x - &f.projection.point);
        f.gamma.dot(&grad).abs()
    };
    let (a, b) = (inner(1e-2), inner(5e-3));
    println!("{a:e} {b:e} ratio {}", a / b);
    assert!(a / b > 3.5);
}
