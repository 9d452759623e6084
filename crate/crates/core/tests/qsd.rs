use std::collections::BTreeMap;
use std::f64::consts::E;
use std::sync::Arc;

use mvpp_core::diagnostics::tv_distance;
use mvpp_core::models::{bd_quasi_ergodic_urn, mm_infty_urn, protected_nodes_urn, three_state_chain};
use mvpp_core::qsd::{
    analytic_reference, bd_qsd, fixed_point_residual, nu_r, power_iteration_qsd, Matrix, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use proptest::prelude::*;

#[test]
fn protected_nu_r_reproduces_pi_hat() {
    let spec = protected_nodes_urn().unwrap();
    let nu = analytic_reference("protected_nu", &BTreeMap::new()).unwrap();
    let nr = nu_r(&nu, spec.kernel.replacement().as_ref(), 60).unwrap();
    // The displayed ν has mass 2e/(1+2e); the reference is its normalization.
    let mass = 2.0 * E / (1.0 + 2.0 * E);
    let pi_hat_0 = nr.weight(0) * mass;
    assert!((pi_hat_0 - (E - 2.0) / (1.0 + 2.0 * E)).abs() < 1e-12, "{pi_hat_0}");
    assert!((nr.total_mass() * mass - E / (1.0 + 2.0 * E)).abs() < 1e-12);
    assert!((nr.weight(0) / nr.total_mass() - (1.0 - 2.0 / E)).abs() < 1e-12);
    let pi = analytic_reference("protected_pi", &BTreeMap::new()).unwrap();
    assert!(tv_distance(&nr.normalize().unwrap(), &pi.to_measure().unwrap()).unwrap() < 1e-12);
}

#[test]
fn mm_infty_stationarity() {
    let spec = mm_infty_urn(1.0, 2.0).unwrap();
    let r = spec.kernel.replacement();
    // The invariant law of the jump kernel is stationary to round-off.
    let embedded = analytic_reference("mm_infty_embedded", &spec.params).unwrap();
    let tv =
        tv_distance(&nu_r(&embedded, r.as_ref(), 60).unwrap().normalize().unwrap(), &embedded.to_measure().unwrap())
            .unwrap();
    assert!(tv < 1e-8, "{tv}");
    // Poisson(1/2) is not invariant for the jump kernel: νR(0) = ν(1)·μ/(μ+λ).
    let poisson = spec.reference.clone().unwrap();
    let pr = nu_r(&poisson, r.as_ref(), 60).unwrap();
    let want0 = poisson.pmf(1) * 2.0 / 3.0;
    assert!((pr.weight(0) - want0).abs() < 1e-15);
    assert!((pr.weight(0) - poisson.pmf(0)).abs() > 0.1);
}

#[test]
fn bd_truncation_is_stable_and_nu_r_proportional() {
    let lambda = |x: u64| 0.1 / (x as f64 + 1.0);
    let mu = |x: u64| if x == 0 { 0.0 } else { 0.9 };
    let n100 = bd_qsd(lambda, mu, 100).unwrap();
    let n200 = bd_qsd(lambda, mu, 200).unwrap();
    assert!(tv_distance(&n100.to_measure().unwrap(), &n200.to_measure().unwrap()).unwrap() < 1e-8);

    let spec = bd_quasi_ergodic_urn(Arc::new(lambda), Arc::new(mu), 200, 200).unwrap();
    let nu = spec.reference.as_ref().unwrap();
    let nr = nu_r(nu, spec.kernel.replacement().as_ref(), 200).unwrap();
    assert!(tv_distance(&nr.normalize().unwrap(), &nu.to_measure().unwrap()).unwrap() < 1e-8);
    assert!(
        fixed_point_residual(&mvpp_core::qsd::truncate_bd_kernel(lambda, mu, 200).unwrap(), &n200).unwrap()
            < 10.0 * DEFAULT_TOL
    );
}

#[test]
fn three_state_oracle() {
    let g = three_state_chain();
    let r = power_iteration_qsd(&g, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let nu = r.pmf_vec().unwrap();
    for (a, b) in nu.iter().zip([2.0 / 7.0, 3.0 / 7.0, 2.0 / 7.0]) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!((r.eigenvalue.unwrap() - 0.8).abs() < 1e-10);
    assert!(r.warnings.is_empty());
}

fn random_matrix(entries: &[f64], n: usize) -> Matrix {
    (0..n)
        .map(|i| {
            let row = &entries[i * n..(i + 1) * n];
            let s: f64 = row.iter().sum::<f64>() + 0.05;
            row.iter().map(|v| v / s).collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_iteration_is_scale_invariant(entries in prop::collection::vec(0.05f64..1.0, 16), c in 0.1f64..1.0) {
        let g = random_matrix(&entries, 4);
        let scaled: Matrix = g.iter().map(|row| row.iter().map(|v| v * c).collect()).collect();
        let a = power_iteration_qsd(&g, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let b = power_iteration_qsd(&scaled, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        for (x, y) in a.pmf_vec().unwrap().iter().zip(b.pmf_vec().unwrap()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert!((b.eigenvalue.unwrap() - c * a.eigenvalue.unwrap()).abs() < 1e-10);
        prop_assert!(fixed_point_residual(&g, &a).unwrap() < 10.0 * DEFAULT_TOL);
        prop_assert!(fixed_point_residual(&scaled, &b).unwrap() < 10.0 * DEFAULT_TOL);
    }

    #[test]
    fn poisson_pmfs_are_normalized(rate in 0.05f64..20.0) {
        let p: BTreeMap<String, f64> = [("rate".to_string(), rate)].into_iter().collect();
        let r = analytic_reference("poisson", &p).unwrap();
        prop_assert!((r.pmf_vec().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
