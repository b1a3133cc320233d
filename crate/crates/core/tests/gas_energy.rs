use std::f64::consts::PI;
use std::sync::OnceLock;

use coulomb_lab::equilibrium::{solve_equilibrium_direct, EquilibriumConfig, EquilibriumSolution};
use coulomb_lab::gas_energy::{blow_up_scale, easy_lower_bound_check, hamiltonian, splitting_report, PointConfiguration};
use coulomb_lab::potential::PotentialSpec;
use coulomb_lab::LabError;
use proptest::prelude::*;

fn circle_law() -> &'static EquilibriumSolution {
    static SOL: OnceLock<EquilibriumSolution> = OnceLock::new();
    SOL.get_or_init(|| {
        let cfg = EquilibriumConfig::on_box(vec![-2.0; 2], vec![2.0; 2], 1.0 / 16.0);
        solve_equilibrium_direct(&PotentialSpec::quadratic(2), &cfg).unwrap()
    })
}

fn disk_points(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..2.0 * PI), 2..max)
        .prop_map(|v| v.into_iter().map(|(r, a)| vec![r.sqrt() * a.cos(), r.sqrt() * a.sin()]).collect())
}

#[test]
fn coincident_points_are_reported() {
    let c = PointConfiguration::new(2, vec![vec![0.1, 0.1], vec![0.1, 0.1]]).unwrap();
    assert!(!c.is_distinct());
    assert_eq!(
        hamiltonian(&c, &PotentialSpec::quadratic(2)).unwrap_err(),
        LabError::CoincidentPoints { i: 0, j: 1 }
    );
    assert!(PointConfiguration::new(2, vec![vec![f64::NAN, 0.0]]).is_err());
}

#[test]
fn blow_up_scales() {
    assert_eq!(blow_up_scale(16, 2), 4.0);
    assert_eq!(blow_up_scale(5, 1), 5.0);
    assert!((blow_up_scale(27, 3) - 3.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn residual_within_reported_tolerance(pts in disk_points(12)) {
        let c = PointConfiguration::new(2, pts).unwrap();
        prop_assume!(c.min_separation() > 1e-3);
        let r = splitting_report(&c, circle_law(), None).unwrap();
        prop_assert!(r.residual.abs() <= r.quadrature_tolerance, "{r:?}");
        let parts = r.leading + r.confinement + r.log_term + r.scale * r.next_order_limit;
        prop_assert!((r.hamiltonian - parts - r.residual).abs() <= 1e-9 * r.hamiltonian.abs().max(1.0));
    }

    #[test]
    fn blow_up_round_trip(pts in disk_points(10)) {
        let c = PointConfiguration::new(2, pts).unwrap();
        let back = c.blow_up().blow_down();
        for (a, b) in c.points.iter().zip(&back.points) {
            prop_assert!((a[0] - b[0]).abs() <= 1e-12 && (a[1] - b[1]).abs() <= 1e-12);
        }
        let s = (c.n() as f64).sqrt();
        prop_assert!((c.blow_up().min_separation() - s * c.min_separation()).abs() <= 1e-9 * s);
    }

    #[test]
    fn lower_bound_holds(pts in disk_points(16)) {
        let c = PointConfiguration::new(2, pts).unwrap();
        prop_assume!(c.is_distinct());
        let check = easy_lower_bound_check(&c, circle_law()).unwrap();
        prop_assert!(check.holds);
        prop_assert!(check.fitted_constant >= 0.0);
    }

    #[test]
    fn hamiltonian_is_rotation_invariant(pts in disk_points(10), theta in 0.0f64..2.0 * PI) {
        let c = PointConfiguration::new(2, pts.clone()).unwrap();
        prop_assume!(c.is_distinct());
        let (s, co) = theta.sin_cos();
        let rotated = PointConfiguration::new(2, pts.iter().map(|p| vec![co * p[0] - s * p[1], s * p[0] + co * p[1]]).collect()).unwrap();
        let v = PotentialSpec::quadratic(2);
        let (a, b) = (hamiltonian(&c, &v).unwrap(), hamiltonian(&rotated, &v).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}
