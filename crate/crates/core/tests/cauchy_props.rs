mod common;

use exterior_wavemaps::cauchy::{self, coefficients, is_identity, mat_mul, rat, verify_identities, CauchyMatrix, Rational};
use num_traits::{One, Zero};
use proptest::prelude::*;

fn distinct_nodes(max: usize) -> impl Strategy<Value = (Vec<Rational>, Vec<Rational>)> {
    (1..=max)
        .prop_flat_map(|m| prop::collection::vec((-40i64..=40, 1i64..=9), 2 * m))
        .prop_map(|v| {
            let all: Vec<Rational> = v.into_iter().map(|(p, q)| rat(p, q)).collect();
            let m = all.len() / 2;
            (all[..m].to_vec(), all[m..].to_vec())
        })
        .prop_filter("nodes must be pairwise distinct", |(x, y)| {
            let all: Vec<&Rational> = x.iter().chain(y).collect();
            (0..all.len()).all(|a| (a + 1..all.len()).all(|b| all[a] != all[b]))
        })
}

fn det_by_elimination(a: &[Vec<Rational>]) -> Rational {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = Rational::one();
    for col in 0..n {
        let Some(p) = (col..n).find(|&r| !m[r][col].is_zero()) else { return Rational::zero() };
        if p != col {
            m.swap(col, p);
            det = -det;
        }
        det *= m[col][col].clone();
        for r in col + 1..n {
            let factor = &m[r][col] / &m[col][col];
            for c in col..n {
                let sub = &factor * &m[col][c];
                m[r][c] = &m[r][c] - sub;
            }
        }
    }
    det
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn explicit_inverse_matches_elimination((x, y) in distinct_nodes(6)) {
        let a = CauchyMatrix::new(x, y).unwrap();
        let entries = a.entries();
        let inv = a.inverse();
        prop_assert!(is_identity(&mat_mul(&entries, &inv)));
        prop_assert!(is_identity(&mat_mul(&inv, &entries)));
        prop_assert_eq!(Some(inv), common::gauss_inverse(&entries));
    }

    #[test]
    fn determinant_formula_matches_elimination((x, y) in distinct_nodes(5)) {
        let a = CauchyMatrix::new(x, y).unwrap();
        prop_assert_eq!(a.determinant(), det_by_elimination(&a.entries()));
    }

    #[test]
    fn identities_hold_in_every_odd_dimension(half in 1i64..=14) {
        let d = 2 * half + 1;
        let report = verify_identities(&coefficients(d).unwrap());
        prop_assert!(report.all_hold(), "{:?}", report.failures());
    }

    #[test]
    fn basis_counts_partition_the_exponents(half in 1i64..=14) {
        let d = 2 * half + 1;
        let (k, kt) = cauchy::basis_counts(d as u32);
        prop_assert_eq!(k, (d / 4) as usize);
        prop_assert_eq!(kt, ((d + 2) / 4) as usize);
        // exponents 2i - d stay below the integrability thresholds
        prop_assert!(k == 0 || 4 * k as i64 - d < 0);
        prop_assert!(kt == 0 || 4 * kt as i64 - d - 2 < 0);
    }
}

#[test]
fn seven_dimensional_first_coefficient_is_three() {
    let fam = coefficients(7).unwrap();
    assert_eq!(fam.c[0], rat(3, 1));
}

#[test]
fn gram_inverse_from_cauchy_structure() {
    // At R = 1 the L2 Gram matrix is the Cauchy matrix 1/(d - 2i - 2j).
    for d in [9i64, 13, 17] {
        let k = (d / 4) as usize;
        let gram: Vec<Vec<Rational>> = (1..=k as i64)
            .map(|i| (1..=k as i64).map(|j| rat(1, d - 2 * i - 2 * j)).collect())
            .collect();
        let inv = common::gauss_inverse(&gram).unwrap();
        let fam = coefficients(d).unwrap();
        for i in 0..k {
            for j in 0..k {
                let (ii, jj) = (i as i64 + 1, j as i64 + 1);
                let closed = &fam.c[i] * &fam.c[j] * rat(1, d - 2 * ii - 2 * jj);
                assert_eq!(inv[i][j], closed, "d={d} ({ii},{jj})");
            }
        }
    }
}
