//! Exact Cauchy matrices, their determinants and inverses, and the coefficient
//! families `c_j`, `d_j` that appear in the explicit projection formulas.
//!
//! Everything here is exact rational arithmetic; no floating point.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

/// Cauchy matrix `a_ij = 1 / (x_i - y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyMatrix {
    x: Vec<Rational>,
    y: Vec<Rational>,
}

impl CauchyMatrix {
    pub fn new(x: Vec<Rational>, y: Vec<Rational>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::NodeLengthMismatch { x: x.len(), y: y.len() });
        }
        for (which, nodes) in [("x", &x), ("y", &y)] {
            for a in 0..nodes.len() {
                for b in a + 1..nodes.len() {
                    if nodes[a] == nodes[b] {
                        return Err(Error::RepeatedNode { which, a, b });
                    }
                }
            }
        }
        for (i, xi) in x.iter().enumerate() {
            for (j, yj) in y.iter().enumerate() {
                if xi == yj {
                    return Err(Error::CoincidentNodes { i, j });
                }
            }
        }
        Ok(Self { x, y })
    }

    pub fn from_ints(x: &[i64], y: &[i64]) -> Result<Self> {
        Self::new(x.iter().map(|&v| int(v)).collect(), y.iter().map(|&v| int(v)).collect())
    }

    pub fn size(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[Rational] {
        &self.x
    }

    pub fn y(&self) -> &[Rational] {
        &self.y
    }

    pub fn entry(&self, i: usize, j: usize) -> Rational {
        (&self.x[i] - &self.y[j]).recip()
    }

    pub fn entries(&self) -> Vec<Vec<Rational>> {
        let m = self.size();
        (0..m).map(|i| (0..m).map(|j| self.entry(i, j)).collect()).collect()
    }

    /// `prod_{i<j} (x_i - x_j)(y_j - y_i) / prod_{i,j} (x_i - y_j)`.
    pub fn determinant(&self) -> Rational {
        let m = self.size();
        let mut num = Rational::one();
        for i in 0..m {
            for j in i + 1..m {
                num *= (&self.x[i] - &self.x[j]) * (&self.y[j] - &self.y[i]);
            }
        }
        let mut den = Rational::one();
        for xi in &self.x {
            for yj in &self.y {
                den *= xi - yj;
            }
        }
        num / den
    }

    /// Explicit inverse `b_ij = (x_j - y_i) A_j(y_i) B_i(x_j)` with `A`, `B` the
    /// Lagrange polynomials on the `x` and `y` nodes.
    pub fn inverse(&self) -> Vec<Vec<Rational>> {
        let m = self.size();
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        (&self.x[j] - &self.y[i])
                            * lagrange_basis(&self.x, j, &self.y[i])
                            * lagrange_basis(&self.y, i, &self.x[j])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Lagrange basis polynomial `L_i(at) = prod_{l != i} (at - n_l) / (n_i - n_l)`.
pub fn lagrange_basis(nodes: &[Rational], i: usize, at: &Rational) -> Rational {
    let mut acc = Rational::one();
    for (l, nl) in nodes.iter().enumerate() {
        if l != i {
            acc *= (at - nl) / (&nodes[i] - nl);
        }
    }
    acc
}

pub fn mat_mul(a: &[Vec<Rational>], b: &[Vec<Rational>]) -> Vec<Vec<Rational>> {
    let n = a.len();
    let p = b.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            (0..p)
                .map(|j| {
                    a[i].iter()
                        .zip(b)
                        .fold(Rational::zero(), |acc, (aik, bk)| acc + aik * &bk[j])
                })
                .collect()
        })
        .collect()
}

pub fn is_identity(m: &[Vec<Rational>]) -> bool {
    m.iter().enumerate().all(|(i, row)| {
        row.len() == m.len()
            && row
                .iter()
                .enumerate()
                .all(|(j, v)| if i == j { v.is_one() } else { v.is_zero() })
    })
}

/// Leading principal minors via plain Gaussian elimination
/// (no pivoting). Once a pivot vanishes the remaining minors are reported as 0.
pub fn leading_principal_minors(m: &[Vec<Rational>]) -> Vec<Rational> {
    let n = m.len();
    let mut a: Vec<Vec<Rational>> = m.to_vec();
    let mut minors = Vec::with_capacity(n);
    let mut det = Rational::one();
    for p in 0..n {
        if a[p][p].is_zero() {
            minors.resize(n, Rational::zero());
            return minors;
        }
        det *= &a[p][p];
        minors.push(det.clone());
        for r in p + 1..n {
            let f = &a[r][p] / &a[p][p];
            for c in p..n {
                let delta = &f * &a[p][c];
                a[r][c] -= delta;
            }
        }
    }
    minors
}

pub fn is_positive_definite(m: &[Vec<Rational>]) -> bool {
    let zero = Rational::zero();
    let symmetric = m
        .iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, v)| *v == m[j][i]));
    symmetric && leading_principal_minors(m).iter().all(|v| *v > zero)
}

/// Number of L2 and H1 basis exponents for an odd dimension.
pub fn basis_counts(d: u32) -> (usize, usize) {
    ((d / 4) as usize, ((d + 2) / 4) as usize)
}

pub fn check_dimension(d: i64) -> Result<u32> {
    if d < 3 || d % 2 == 0 {
        return Err(Error::InvalidDimension(d));
    }
    Ok(d as u32)
}

/// `c_j` and `d_j` for an odd dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFamily {
    pub dim: u32,
    pub k: usize,
    pub ktilde: usize,
    pub c: Vec<Rational>,
    pub dvec: Vec<Rational>,
}

/// `prod_{l=1..count} (shift - 2j - 2l) / prod_{l != j} (2l - 2j)`.
fn product_coefficient(shift: i64, count: usize, j: i64) -> Rational {
    let mut num = Rational::one();
    let mut den = Rational::one();
    for l in 1..=count as i64 {
        num *= int(shift - 2 * j - 2 * l);
        if l != j {
            den *= int(2 * l - 2 * j);
        }
    }
    num / den
}

pub fn coefficients(d: i64) -> Result<CoefficientFamily> {
    let dim = check_dimension(d)?;
    let (k, ktilde) = basis_counts(dim);
    let c = (1..=k as i64).map(|j| product_coefficient(d, k, j)).collect();
    let dvec = (1..=ktilde as i64)
        .map(|j| product_coefficient(d + 2, ktilde, j))
        .collect();
    Ok(CoefficientFamily { dim, k, ktilde, c, dvec })
}

impl CoefficientFamily {
    fn d(&self) -> i64 {
        self.dim as i64
    }

    /// `[1/(d-2i-2j)]_{k x k}`, the L2 Gram matrix at R = 1.
    pub fn l2_gram_unit(&self) -> Vec<Vec<Rational>> {
        let d = self.d();
        square(self.k, |i, j| rat(1, d - 2 * i - 2 * j))
    }

    /// `[1/(d+2-2i-2j)]_{kt x kt}`, the Cauchy factor of the H1 Gram matrix.
    pub fn h1_cauchy_unit(&self) -> Vec<Vec<Rational>> {
        let d = self.d();
        square(self.ktilde, |i, j| rat(1, d + 2 - 2 * i - 2 * j))
    }

    /// Closed-form inverse of [`Self::l2_gram_unit`]: `c_i c_j / (d-2i-2j)`.
    pub fn l2_gram_unit_inverse(&self) -> Vec<Vec<Rational>> {
        let d = self.d();
        square(self.k, |i, j| {
            &self.c[i as usize - 1] * &self.c[j as usize - 1] * rat(1, d - 2 * i - 2 * j)
        })
    }

    /// Closed-form inverse of [`Self::h1_cauchy_unit`]: `d_i d_j / (d+2-2i-2j)`.
    pub fn h1_cauchy_unit_inverse(&self) -> Vec<Vec<Rational>> {
        let d = self.d();
        square(self.ktilde, |i, j| {
            &self.dvec[i as usize - 1] * &self.dvec[j as usize - 1] * rat(1, d + 2 - 2 * i - 2 * j)
        })
    }

    /// The L2 Gram matrix as a Cauchy matrix with `x_i = d - 2i`, `y_j = 2j`.
    pub fn l2_cauchy(&self) -> Result<CauchyMatrix> {
        let d = self.d();
        let x: Vec<i64> = (1..=self.k as i64).map(|i| d - 2 * i).collect();
        let y: Vec<i64> = (1..=self.k as i64).map(|j| 2 * j).collect();
        CauchyMatrix::from_ints(&x, &y)
    }

    pub fn h1_cauchy(&self) -> Result<CauchyMatrix> {
        let d = self.d();
        let x: Vec<i64> = (1..=self.ktilde as i64).map(|i| d + 2 - 2 * i).collect();
        let y: Vec<i64> = (1..=self.ktilde as i64).map(|j| 2 * j).collect();
        CauchyMatrix::from_ints(&x, &y)
    }

    pub fn c_f64(&self) -> Vec<f64> {
        self.c.iter().map(to_f64).collect()
    }

    pub fn d_f64(&self) -> Vec<f64> {
        self.dvec.iter().map(to_f64).collect()
    }
}

fn square(n: usize, f: impl Fn(i64, i64) -> Rational) -> Vec<Vec<Rational>> {
    (1..=n as i64)
        .map(|i| (1..=n as i64).map(|j| f(i, j)).collect())
        .collect()
}

pub fn to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "identity", rename_all = "kebab-case")]
pub enum Identity {
    /// `sum_j c_j/(d-2m-2j) = 1`
    CSum { m: usize },
    /// `sum_j c_j/(2j) + 1 = prod_l (d-2l)/(2l)`
    CProduct,
    /// `sum_j d_j/(d+2-2m-2j) = 1`
    DSum { m: usize },
    /// `sum_j d_j/(2j) + 1 = prod_l (d+2-2l)/(2l)`
    DProduct,
    /// `sum_i c_i/(d-2i-2j)^2 = 1/c_j`
    CSquares { j: usize },
}

impl Identity {
    pub fn label(&self) -> String {
        match self {
            Identity::CSum { m } => format!("c-sum(m={m})"),
            Identity::CProduct => "c-product".into(),
            Identity::DSum { m } => format!("d-sum(m={m})"),
            Identity::DProduct => "d-product".into(),
            Identity::CSquares { j } => format!("c-squares(j={j})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub identity: Identity,
    pub dim: u32,
    /// lhs - rhs, exact.
    pub residual: Rational,
}

impl IdentityCheck {
    pub fn holds(&self) -> bool {
        self.residual.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub dim: u32,
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(IdentityCheck::holds)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.holds())
            .map(|c| format!("{} failed for d={}: residual {}", c.identity.label(), c.dim, c.residual))
            .collect()
    }
}

pub fn verify_identities(fam: &CoefficientFamily) -> IdentityReport {
    let d = fam.d();
    let mut checks = Vec::new();
    let mut push = |identity, residual| checks.push(IdentityCheck { identity, dim: fam.dim, residual });

    for m in 1..=fam.k as i64 {
        let lhs = fam
            .c
            .iter()
            .zip(1i64..)
            .fold(Rational::zero(), |acc, (c, j)| acc + c * rat(1, d - 2 * m - 2 * j));
        push(Identity::CSum { m: m as usize }, lhs - Rational::one());
    }
    {
        let lhs = fam
            .c
            .iter()
            .zip(1i64..)
            .fold(Rational::one(), |acc, (c, j)| acc + c * rat(1, 2 * j));
        let rhs = (1..=fam.k as i64).fold(Rational::one(), |acc, l| acc * rat(d - 2 * l, 2 * l));
        push(Identity::CProduct, lhs - rhs);
    }
    for m in 1..=fam.ktilde as i64 {
        let lhs = fam
            .dvec
            .iter()
            .zip(1i64..)
            .fold(Rational::zero(), |acc, (dj, j)| acc + dj * rat(1, d + 2 - 2 * m - 2 * j));
        push(Identity::DSum { m: m as usize }, lhs - Rational::one());
    }
    {
        let lhs = fam
            .dvec
            .iter()
            .zip(1i64..)
            .fold(Rational::one(), |acc, (dj, j)| acc + dj * rat(1, 2 * j));
        let rhs =
            (1..=fam.ktilde as i64).fold(Rational::one(), |acc, l| acc * rat(d + 2 - 2 * l, 2 * l));
        push(Identity::DProduct, lhs - rhs);
    }
    for (j, cj) in (1i64..).zip(&fam.c) {
        let lhs = fam.c.iter().zip(1i64..).fold(Rational::zero(), |acc, (ci, i)| {
            let den = d - 2 * i - 2 * j;
            acc + ci * rat(1, den * den)
        });
        push(Identity::CSquares { j: j as usize }, lhs - cj.recip());
    }
    IdentityReport { dim: fam.dim, checks }
}

/// One CSV row of the coefficient tabulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRow {
    pub d: u32,
    pub family: String,
    pub index: String,
    pub numerator: BigInt,
    pub denominator: BigInt,
}

/// Rows for `c_j`, `d_j` and every identity residual, for each odd `d` in the range.
pub fn tabulate(dims: impl IntoIterator<Item = i64>) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for d in dims {
        let fam = coefficients(d)?;
        let row = |family: &str, index: String, v: &Rational| TableRow {
            d: fam.dim,
            family: family.to_string(),
            index,
            numerator: v.numer().clone(),
            denominator: v.denom().clone(),
        };
        for (j, c) in fam.c.iter().enumerate() {
            rows.push(row("c", (j + 1).to_string(), c));
        }
        for (j, v) in fam.dvec.iter().enumerate() {
            rows.push(row("d", (j + 1).to_string(), v));
        }
        for check in verify_identities(&fam).checks {
            rows.push(row("residual", check.identity.label(), &check.residual));
        }
    }
    Ok(rows)
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("d,family,index,numerator,denominator\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.d, r.family, r.index, r.numerator, r.denominator));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry() {
        let m = CauchyMatrix::from_ints(&[3], &[1]).unwrap();
        assert_eq!(m.entries(), vec![vec![rat(1, 2)]]);
        assert_eq!(m.determinant(), rat(1, 2));
        assert_eq!(m.inverse(), vec![vec![int(2)]]);
    }

    #[test]
    fn two_by_two() {
        let m = CauchyMatrix::from_ints(&[5, 3], &[2, 4]).unwrap();
        assert_eq!(m.entries(), vec![vec![rat(1, 3), int(1)], vec![int(1), int(-1)]]);
        assert_eq!(m.determinant(), rat(-4, 3));
        assert!(is_identity(&mat_mul(&m.entries(), &m.inverse())));
    }

    #[test]
    fn gram_entry_d7() {
        let m = CauchyMatrix::from_ints(&[5], &[2]).unwrap();
        assert_eq!(m.entry(0, 0), rat(1, 3));
    }

    #[test]
    fn rejects_bad_nodes() {
        match CauchyMatrix::from_ints(&[1, 4], &[2, 4]) {
            Err(Error::CoincidentNodes { i: 1, j: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            CauchyMatrix::from_ints(&[1, 1], &[2, 3]),
            Err(Error::RepeatedNode { which: "x", .. })
        ));
        assert!(matches!(
            CauchyMatrix::from_ints(&[1], &[2, 3]),
            Err(Error::NodeLengthMismatch { .. })
        ));
    }

    #[test]
    fn coefficient_values() {
        let f7 = coefficients(7).unwrap();
        assert_eq!((f7.k, f7.ktilde), (1, 2));
        assert_eq!(f7.c, vec![int(3)]);
        assert_eq!(f7.dvec, vec![rat(15, 2), rat(-3, 2)]);
        let f11 = coefficients(11).unwrap();
        assert_eq!(f11.c, vec![rat(35, 2), rat(-15, 2)]);
        let f3 = coefficients(3).unwrap();
        assert!(f3.c.is_empty());
        assert_eq!(f3.dvec, vec![int(1)]);
    }

    #[test]
    fn rejects_even_or_small() {
        assert!(matches!(coefficients(4), Err(Error::InvalidDimension(4))));
        assert!(matches!(coefficients(1), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn identities_worked_examples() {
        let f7 = coefficients(7).unwrap();
        // c_1/(7-2-2) = 1
        assert_eq!(&f7.c[0] / int(3), int(1));
        // d_1/2 + d_2/4 + 1 = 35/8
        assert_eq!(&f7.dvec[0] / int(2) + &f7.dvec[1] / int(4) + int(1), rat(35, 8));
        let f11 = coefficients(11).unwrap();
        assert_eq!(&f11.c[0] / int(2) + &f11.c[1] / int(4) + int(1), rat(63, 8));
        assert!(verify_identities(&f7).all_hold());
        assert!(verify_identities(&f11).all_hold());
    }

    #[test]
    fn d3_identities_vacuous_for_c() {
        let rep = verify_identities(&coefficients(3).unwrap());
        assert!(rep.all_hold());
        assert!(!rep.checks.iter().any(|c| matches!(c.identity, Identity::CSum { .. })));
    }

    #[test]
    fn broken_family_reports_residual() {
        let mut fam = coefficients(9).unwrap();
        fam.c[0] += int(1);
        let rep = verify_identities(&fam);
        assert!(!rep.all_hold());
        assert!(rep.failures()[0].contains("d=9"));
    }

    #[test]
    fn closed_form_inverses_match_cauchy_inverse() {
        for d in (3..=21).step_by(2) {
            let fam = coefficients(d).unwrap();
            assert_eq!(fam.l2_cauchy().unwrap().inverse(), fam.l2_gram_unit_inverse());
            assert_eq!(fam.h1_cauchy().unwrap().inverse(), fam.h1_cauchy_unit_inverse());
            assert!(is_identity(&mat_mul(&fam.h1_cauchy_unit(), &fam.h1_cauchy_unit_inverse())));
        }
    }

    #[test]
    fn tabulation_csv_header_and_rows() {
        let rows = tabulate([3, 7]).unwrap();
        let csv = table_csv(&rows);
        assert!(csv.starts_with("d,family,index,numerator,denominator\n"));
        assert!(csv.contains("7,c,1,3,1\n"));
        assert!(csv.contains("7,d,1,15,2\n"));
        assert!(csv.contains("7,d,2,-3,2\n"));
    }
}
