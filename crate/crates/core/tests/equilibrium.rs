use coulomb_lab::equilibrium::{euler_lagrange_residual, mean_field_energy, solve_equilibrium_direct, EquilibriumConfig};
use coulomb_lab::potential::{PotentialKind, PotentialSpec};
use coulomb_lab::LabError;
use proptest::prelude::*;

fn solve(spec: &PotentialSpec, hw: f64, h: f64) -> Result<coulomb_lab::equilibrium::EquilibriumSolution, LabError> {
    solve_equilibrium_direct(spec, &EquilibriumConfig::on_box(vec![-hw; spec.dim], vec![hw; spec.dim], h))
}

#[test]
fn small_box_is_reported() {
    let r = solve(&PotentialSpec::quadratic(2), 0.75, 1.0 / 8.0);
    assert!(matches!(r, Err(LabError::BoxTooSmall { .. })), "{r:?}");
}

#[test]
fn dimension_mismatch_is_rejected() {
    let cfg = EquilibriumConfig::on_box(vec![-2.0; 3], vec![2.0; 3], 0.5);
    assert!(solve_equilibrium_direct(&PotentialSpec::quadratic(2), &cfg).is_err());
}

#[test]
fn quartic_potential_support() {
    // V = |x|⁴: density 4r²/π on the disk of radius 2^{-1/4}
    let quartic = PotentialSpec::new(2, PotentialKind::Radial { coeffs: vec![0.0, 0.0, 0.0, 0.0, 1.0] }).unwrap();
    let q = solve(&quartic, 2.0, 1.0 / 16.0).unwrap();
    let r = q.support_radius_estimate();
    assert!((r - 0.5f64.powf(0.25)).abs() <= 3.0 / 16.0, "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn solution_invariants(w1 in 0.5f64..2.0, w2 in 0.5f64..2.0) {
        let spec = PotentialSpec::new(2, PotentialKind::Anisotropic { weights: vec![w1, w2] }).unwrap();
        let eq = solve(&spec, 3.0, 1.0 / 8.0).unwrap();
        let vol = eq.grid().cell_volume();
        prop_assert!(eq.density.values.iter().all(|&m| m >= 0.0));
        let mass: f64 = eq.density.values.iter().sum::<f64>() * vol;
        prop_assert!((mass - 1.0).abs() <= 1e-8);
        let (below, on_support) = euler_lagrange_residual(&eq);
        prop_assert!(below <= 1e-8 && on_support <= 1e-8, "{below} {on_support}");
        // c = I − ½∫V dμ₀
        let v: f64 = eq.density.rows().map(|(x, m)| m * vol * spec.value(&x)).sum();
        prop_assert!((eq.c - (eq.energy - 0.5 * v)).abs() <= 1e-8);
        prop_assert!((mean_field_energy(&eq.density, &spec).unwrap() - eq.energy).abs() <= 1e-8);
    }
}
