mod common;

use common::{dense_coefficients, rel_err};
use exterior_wavemaps::grid::RadialGrid;
use exterior_wavemaps::harness::{job_rng, projection_check, random_exterior_data};
use exterior_wavemaps::projection::{
    apply_projection, build_basis, norm_via_identity, project_coefficients, ExteriorData, PowerTail,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn explicit_coefficients_match_dense_solve(half in 1u32..=5, radius in 1.0f64..10.0, seed in any::<u64>()) {
        let d = 2 * half + 1;
        let mut rng = job_rng(seed, &[]);
        let u = random_exterior_data(&mut rng, d, radius, 4001, true).unwrap();
        let basis = build_basis(d as i64, radius).unwrap();
        let c = project_coefficients(&u, &basis).unwrap();
        let (lam, mu) = dense_coefficients(&u);
        prop_assert!(rel_err(&c.lambda, &lam) <= 1e-8, "lambda {:?} vs {:?}", c.lambda, lam);
        prop_assert!(rel_err(&c.mu, &mu) <= 1e-8, "mu {:?} vs {:?}", c.mu, mu);
    }

    #[test]
    fn projection_identities(half in 1u32..=5, radius in 1.0f64..10.0, seed in any::<u64>()) {
        let d = 2 * half + 1;
        let mut rng = job_rng(seed, &[1]);
        let chk = projection_check(&mut rng, d, radius, 1, 4001).unwrap();
        prop_assert!(chk.idempotence <= 1e-8, "{chk:?}");
        prop_assert!(chk.self_adjointness <= 1e-8, "{chk:?}");
        prop_assert!(chk.pythagoras <= 1e-8, "{chk:?}");
        prop_assert!(chk.annihilation <= 1e-8, "{chk:?}");
    }

    #[test]
    fn perpendicular_norm_identity_agrees_with_projection(half in 1u32..=5, radius in 1.0f64..10.0, seed in any::<u64>()) {
        let d = 2 * half + 1;
        let mut rng = job_rng(seed, &[2]);
        let u = random_exterior_data(&mut rng, d, radius, 4001, true).unwrap();
        let basis = build_basis(d as i64, radius).unwrap();
        let split = norm_via_identity(&u, &basis).unwrap();
        let (_, perp) = apply_projection(&u, &project_coefficients(&u, &basis).unwrap(), &basis).unwrap();
        let direct = perp.norm_sq().unwrap();
        prop_assert!((split.perp_norm_sq - direct).abs() <= 1e-8 * split.total_norm_sq);
        prop_assert!(split.perp_norm_sq >= -1e-10 * split.total_norm_sq);
        prop_assert!(!split.quadrature_failure);
    }
}

#[test]
fn three_dimensions_has_one_h1_element_and_no_l2() {
    let basis = build_basis(3, 2.0).unwrap();
    assert_eq!((basis.k, basis.ktilde), (0, 1));
    // (1/r, g) projects onto (1/r, 0) regardless of g.
    let grid = RadialGrid::exterior(2.0, 10.0, 2001).unwrap();
    let u = ExteriorData::from_fns(3, grid, |r| 1.0 / r, |r| -1.0 / (r * r), |r| (-(r - 5.0).powi(2)).exp())
        .unwrap()
        .with_tail(PowerTail::new(vec![(1.0, -1.0)]), PowerTail::default());
    let c = project_coefficients(&u, &basis).unwrap();
    assert!((c.lambda[0] - 1.0).abs() < 1e-10, "{:?}", c.lambda);
    assert!(c.mu.is_empty());
}
