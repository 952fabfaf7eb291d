//! Orthogonal projection onto the resonance space `P(R)` in
//! `H1dot x L2(r >= R, r^{d-1} dr)` for odd `d`.
//!
//! `P(R)` is spanned by `(r^{2i-d}, 0)` for `1 <= i <= kt = floor((d+2)/4)` and
//! `(0, r^{2j-d})` for `1 <= j <= k = floor(d/4)`. Coefficients come from the
//! explicit inverses of the two Gram matrices, so no linear solve happens here.

use serde::Serialize;

use crate::cauchy::{self, CoefficientFamily};
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::quadrature::{derivative4, simpson};

/// Relative bound on the truncated tail of every moment integral.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Finite sum of power laws `sum coeff * r^power`, used as the exact
/// continuation of data beyond the last grid node.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PowerTail {
    pub terms: Vec<(f64, f64)>,
}

impl PowerTail {
    pub fn new(terms: Vec<(f64, f64)>) -> Self {
        Self { terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.terms.iter().map(|(a, p)| a * r.powf(*p)).sum()
    }

    pub fn deriv(&self, r: f64) -> f64 {
        self.terms.iter().map(|(a, p)| a * p * r.powf(p - 1.0)).sum()
    }

    pub fn negated(&self) -> Self {
        Self { terms: self.terms.iter().map(|(a, p)| (-a, *p)).collect() }
    }

    /// Sum of two tails; equal powers are merged so that differences of
    /// nearly equal tails do not cancel inside a later norm.
    pub fn plus(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        for &(a, p) in &other.terms {
            match terms.iter_mut().find(|(_, q)| *q == p) {
                Some(t) => t.0 += a,
                None => terms.push((a, p)),
            }
        }
        Self { terms }
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.negated())
    }
}

/// `int_from^inf r^e dr`, defined for `e < -1`.
fn tail_power_integral(from: f64, e: f64) -> Result<f64> {
    if e >= -1.0 {
        return Err(Error::InvalidArgument(format!(
            "power tail r^{e} is not integrable at infinity"
        )));
    }
    Ok(-from.powf(e + 1.0) / (e + 1.0))
}

/// Radial data `(f, g)` on `r >= R`, sampled on a uniform mesh that starts at `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExteriorData {
    pub dim: u32,
    pub grid: RadialGrid,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    f_r: Vec<f64>,
    pub f_tail: PowerTail,
    pub g_tail: PowerTail,
}

impl ExteriorData {
    /// Samples with `f_r` obtained by fourth-order differencing.
    pub fn new(dim: u32, grid: RadialGrid, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        let f_r = if f.len() >= 5 { derivative4(&f, grid.dr()) } else { vec![0.0; f.len()] };
        Self::with_derivative(dim, grid, f, f_r, g)
    }

    pub fn with_derivative(
        dim: u32,
        grid: RadialGrid,
        f: Vec<f64>,
        f_r: Vec<f64>,
        g: Vec<f64>,
    ) -> Result<Self> {
        cauchy::check_dimension(dim as i64)?;
        let n = grid.len();
        if f.len() != n || g.len() != n || f_r.len() != n {
            return Err(Error::InvalidArgument(format!(
                "sample lengths ({}, {}, {}) do not match grid ({n})",
                f.len(),
                f_r.len(),
                g.len()
            )));
        }
        if let Some(i) = f.iter().chain(&g).chain(&f_r).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: i % n, time: 0.0 });
        }
        Ok(Self { dim, grid, f, g, f_r, f_tail: PowerTail::default(), g_tail: PowerTail::default() })
    }

    /// Samples analytic data; `f_r` is taken from the supplied derivative.
    pub fn from_fns(
        dim: u32,
        grid: RadialGrid,
        f: impl Fn(f64) -> f64,
        f_r: impl Fn(f64) -> f64,
        g: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let r = grid.radii();
        Self::with_derivative(
            dim,
            grid,
            r.iter().map(|&x| f(x)).collect(),
            r.iter().map(|&x| f_r(x)).collect(),
            r.iter().map(|&x| g(x)).collect(),
        )
    }

    pub fn with_tail(mut self, f_tail: PowerTail, g_tail: PowerTail) -> Self {
        self.f_tail = f_tail;
        self.g_tail = g_tail;
        self
    }

    pub fn zeros_like(&self) -> Self {
        let n = self.grid.len();
        Self {
            f: vec![0.0; n],
            g: vec![0.0; n],
            f_r: vec![0.0; n],
            f_tail: PowerTail::default(),
            g_tail: PowerTail::default(),
            ..self.clone()
        }
    }

    pub fn radius(&self) -> f64 {
        self.grid.r_min()
    }

    pub fn f_r(&self) -> &[f64] {
        &self.f_r
    }

    pub fn has_tail(&self) -> bool {
        !(self.f_tail.is_empty() && self.g_tail.is_empty())
    }

    fn weight(&self) -> impl Fn(f64) -> f64 + '_ {
        let p = self.dim as i32 - 1;
        move |r| r.powi(p)
    }

    fn same_mesh(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.grid != other.grid {
            return Err(Error::StateMismatch("exterior data live on different meshes".into()));
        }
        Ok(())
    }

    /// `<u, v>` in `H1dot x L2(r >= R, r^{d-1} dr)`, tails included.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.same_mesh(other)?;
        let w = self.weight();
        let integrand: Vec<f64> = (0..self.grid.len())
            .map(|i| {
                (self.f_r[i] * other.f_r[i] + self.g[i] * other.g[i]) * w(self.grid.r(i))
            })
            .collect();
        let mut total = simpson(&integrand, self.grid.dr());
        let rout = self.grid.r_max();
        let d = self.dim as f64;
        for (a, p) in &self.f_tail.terms {
            for (b, q) in &other.f_tail.terms {
                total += a * p * b * q * tail_power_integral(rout, p + q + d - 3.0)?;
            }
        }
        for (a, p) in &self.g_tail.terms {
            for (b, q) in &other.g_tail.terms {
                total += a * b * tail_power_integral(rout, p + q + d - 1.0)?;
            }
        }
        Ok(total)
    }

    pub fn norm_sq(&self) -> Result<f64> {
        self.inner(self)
    }

    fn moment(&self, samples: &[f64], power: i32, tail: &PowerTail, tail_deriv: bool) -> Result<Moment> {
        let integrand: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.r(i).powi(power))
            .collect();
        let mut value = simpson(&integrand, self.grid.dr());
        let rout = self.grid.r_max();
        let edge = integrand.last().copied().unwrap_or(0.0).abs() * rout;
        for (a, p) in &tail.terms {
            value += if tail_deriv {
                a * p * tail_power_integral(rout, p - 1.0 + power as f64)?
            } else {
                a * tail_power_integral(rout, p + power as f64)?
            };
        }
        let truncation = if tail.is_empty() { edge } else { 0.0 };
        Ok(Moment { value, truncation })
    }

    /// `int_R^inf f_r r^{2i-2} dr` for `i = 1..=count`.
    fn h1_moments(&self, count: usize) -> Result<Vec<Moment>> {
        (1..=count as i32)
            .map(|i| self.moment(&self.f_r, 2 * i - 2, &self.f_tail, true))
            .collect()
    }

    /// `int_R^inf g r^{2i-1} dr` for `i = 1..=count`.
    fn l2_moments(&self, count: usize) -> Result<Vec<Moment>> {
        (1..=count as i32)
            .map(|i| self.moment(&self.g, 2 * i - 1, &self.g_tail, false))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Moment {
    value: f64,
    /// `|integrand(R_out)| * R_out` when the ray is truncated, else 0.
    truncation: f64,
}

impl Moment {
    fn flagged(&self) -> bool {
        self.truncation > TAIL_TOLERANCE * self.value.abs()
    }
}

/// Moment vectors of `u` against the basis: `int f_r r^{2i-2}` and `int g r^{2i-1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Moments {
    pub h1: Vec<f64>,
    pub l2: Vec<f64>,
    pub flagged: bool,
}

pub fn moments(u: &ExteriorData, basis: &ProjectionBasis) -> Result<Moments> {
    let h1 = u.h1_moments(basis.ktilde)?;
    let l2 = u.l2_moments(basis.k)?;
    let flagged = h1.iter().chain(&l2).any(Moment::flagged);
    Ok(Moments {
        h1: h1.iter().map(|m| m.value).collect(),
        l2: l2.iter().map(|m| m.value).collect(),
        flagged,
    })
}

pub type Matrix = Vec<Vec<f64>>;

/// Gram matrices of `P(R)` and their closed-form inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    pub dim: u32,
    pub radius: f64,
    pub k: usize,
    pub ktilde: usize,
    /// `A(R)`: L2 Gram matrix of `r^{2i-d}`, `k x k`.
    pub gram_l2: Matrix,
    /// `At(R)`: H1dot Gram matrix of `r^{2i-d}`, `kt x kt`.
    pub gram_h1: Matrix,
    pub inv_l2: Matrix,
    pub inv_h1: Matrix,
    pub coeffs: CoefficientFamily,
    c: Vec<f64>,
    dv: Vec<f64>,
}

pub fn build_basis(d: i64, radius: f64) -> Result<ProjectionBasis> {
    let dim = cauchy::check_dimension(d)?;
    if !(radius >= 1.0) || !radius.is_finite() {
        return Err(Error::InvalidRadius(radius));
    }
    let coeffs = cauchy::coefficients(d)?;
    let (k, ktilde) = (coeffs.k, coeffs.ktilde);
    let c = coeffs.c_f64();
    let dv = coeffs.d_f64();
    let df = d as f64;
    let pw = |e: i64| radius.powi(e as i32);
    let gram_l2 = table(k, |i, j| pw(2 * i + 2 * j - d) / (df - 2.0 * (i + j) as f64));
    let gram_h1 = table(ktilde, |i, j| {
        ((2 * i - d) * (2 * j - d)) as f64 * pw(2 * i + 2 * j - d - 2)
            / (df + 2.0 - 2.0 * (i + j) as f64)
    });
    let inv_l2 = table(k, |i, j| {
        c[(i - 1) as usize] * c[(j - 1) as usize] * pw(d - 2 * i - 2 * j)
            / (df - 2.0 * (i + j) as f64)
    });
    let inv_h1 = table(ktilde, |i, j| {
        dv[(i - 1) as usize] * dv[(j - 1) as usize] * pw(d + 2 - 2 * i - 2 * j)
            / (((d - 2 * i) * (d - 2 * j)) as f64 * (df + 2.0 - 2.0 * (i + j) as f64))
    });
    Ok(ProjectionBasis { dim, radius, k, ktilde, gram_l2, gram_h1, inv_l2, inv_h1, coeffs, c, dv })
}

fn table(n: usize, f: impl Fn(i64, i64) -> f64) -> Matrix {
    (1..=n as i64).map(|i| (1..=n as i64).map(|j| f(i, j)).collect()).collect()
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn quad_form(m: &Matrix, v: &[f64]) -> f64 {
    mat_vec(m, v).iter().zip(v).map(|(a, b)| a * b).sum()
}

impl ProjectionBasis {
    /// Largest entry of `|A B - I|` over both Gram pairs.
    pub fn inverse_residual(&self) -> f64 {
        let resid = |a: &Matrix, b: &Matrix| {
            let n = a.len();
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v: f64 = (0..n).map(|l| a[i][l] * b[l][j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((v - target).abs());
                }
            }
            worst
        };
        resid(&self.gram_l2, &self.inv_l2).max(resid(&self.gram_h1, &self.inv_h1))
    }

    /// Exponent of the `i`-th basis function (1-based): `2i - d`.
    pub fn exponent(&self, i: usize) -> i32 {
        2 * i as i32 - self.dim as i32
    }

    /// `(f, f_r, g)` of `pi_R u` at radius `r`.
    pub fn evaluate(&self, coeffs: &ProjectionCoefficients, r: f64) -> (f64, f64, f64) {
        let mut f = 0.0;
        let mut f_r = 0.0;
        for (i, l) in (1..).zip(&coeffs.lambda) {
            let e = self.exponent(i);
            f += l * r.powi(e);
            f_r += l * e as f64 * r.powi(e - 1);
        }
        let g = (1..).zip(&coeffs.mu).map(|(j, m)| m * r.powi(self.exponent(j))).sum();
        (f, f_r, g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionCoefficients {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub radius: f64,
    pub time: f64,
    /// Set when a moment integral was cut off with a non-negligible integrand.
    pub tail_flagged: bool,
    /// Bound on the coefficient error caused by the cut-off.
    pub error_bound: f64,
}

fn check_compatible(u: &ExteriorData, basis: &ProjectionBasis) -> Result<()> {
    if u.dim != basis.dim {
        return Err(Error::StateMismatch(format!(
            "data dimension {} vs basis dimension {}",
            u.dim, basis.dim
        )));
    }
    if (u.radius() - basis.radius).abs() > 1e-12 * basis.radius {
        return Err(Error::StateMismatch(format!(
            "data starts at r = {} but basis radius is {}",
            u.radius(),
            basis.radius
        )));
    }
    Ok(())
}

/// Explicit-formula coefficients `lambda_j(R)`, `mu_j(R)`.
pub fn project_coefficients(u: &ExteriorData, basis: &ProjectionBasis) -> Result<ProjectionCoefficients> {
    check_compatible(u, basis)?;
    let h1 = u.h1_moments(basis.ktilde)?;
    let l2 = u.l2_moments(basis.k)?;
    let d = basis.dim as i64;
    let df = d as f64;
    let rr = basis.radius;
    let lam_coef = |i: i64, j: i64| {
        -rr.powi((d + 2 - 2 * i - 2 * j) as i32) * basis.dv[(i - 1) as usize] * basis.dv[(j - 1) as usize]
            / ((df - 2.0 * j as f64) * (df + 2.0 - 2.0 * (i + j) as f64))
    };
    let mu_coef = |i: i64, j: i64| {
        rr.powi((d - 2 * i - 2 * j) as i32) * basis.c[(i - 1) as usize] * basis.c[(j - 1) as usize]
            / (df - 2.0 * (i + j) as f64)
    };
    let mut error_bound: f64 = 0.0;
    let lambda = (1..=basis.ktilde as i64)
        .map(|j| {
            let mut bound = 0.0;
            let v = (1..=basis.ktilde as i64)
                .map(|i| {
                    let c = lam_coef(i, j);
                    bound += c.abs() * h1[(i - 1) as usize].truncation;
                    c * h1[(i - 1) as usize].value
                })
                .sum();
            error_bound = error_bound.max(bound);
            v
        })
        .collect();
    let mu = (1..=basis.k as i64)
        .map(|j| {
            let mut bound = 0.0;
            let v = (1..=basis.k as i64)
                .map(|i| {
                    let c = mu_coef(i, j);
                    bound += c.abs() * l2[(i - 1) as usize].truncation;
                    c * l2[(i - 1) as usize].value
                })
                .sum();
            error_bound = error_bound.max(bound);
            v
        })
        .collect();
    let tail_flagged = h1.iter().chain(&l2).any(Moment::flagged);
    Ok(ProjectionCoefficients { lambda, mu, radius: rr, time: 0.0, tail_flagged, error_bound })
}

/// `(pi_R u, pi_R^perp u)` sampled on the mesh of `u`.
pub fn apply_projection(
    u: &ExteriorData,
    coeffs: &ProjectionCoefficients,
    basis: &ProjectionBasis,
) -> Result<(ExteriorData, ExteriorData)> {
    check_compatible(u, basis)?;
    let n = u.grid.len();
    let (mut pf, mut pfr, mut pg) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (f, f_r, g) = basis.evaluate(coeffs, u.grid.r(i));
        pf.push(f);
        pfr.push(f_r);
        pg.push(g);
    }
    let f_tail = PowerTail::new(
        (1..).zip(&coeffs.lambda).map(|(i, l)| (*l, basis.exponent(i) as f64)).collect(),
    );
    let g_tail =
        PowerTail::new((1..).zip(&coeffs.mu).map(|(j, m)| (*m, basis.exponent(j) as f64)).collect());
    let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let perp = ExteriorData::with_derivative(u.dim, u.grid, sub(&u.f, &pf), sub(&u.f_r, &pfr), sub(&u.g, &pg))?
        .with_tail(u.f_tail.minus(&f_tail), u.g_tail.minus(&g_tail));
    let proj = ExteriorData::with_derivative(u.dim, u.grid, pf, pfr, pg)?.with_tail(f_tail, g_tail);
    Ok((proj, perp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormSplit {
    pub proj_norm_sq: f64,
    pub perp_norm_sq: f64,
    pub total_norm_sq: f64,
    /// Negative perpendicular norm beyond rounding: the quadrature is not trustworthy.
    pub quadrature_failure: bool,
    pub tail_flagged: bool,
}

/// `||pi_R^perp u||^2 = <u,u> - U B U^T` with the explicit inverses.
pub fn norm_via_identity(u: &ExteriorData, basis: &ProjectionBasis) -> Result<NormSplit> {
    check_compatible(u, basis)?;
    let total = u.norm_sq()?;
    let m = moments(u, basis)?;
    let uh1: Vec<f64> = m
        .h1
        .iter()
        .enumerate()
        .map(|(i, v)| basis.exponent(i + 1) as f64 * v)
        .collect();
    let proj = quad_form(&basis.inv_h1, &uh1) + quad_form(&basis.inv_l2, &m.l2);
    let perp = total - proj;
    Ok(NormSplit {
        proj_norm_sq: proj,
        perp_norm_sq: perp,
        total_norm_sq: total,
        quadrature_failure: perp < -1e-9 * total.max(1.0),
        tail_flagged: m.flagged,
    })
}

/// `||pi_R u||^2` from the coefficients and the Gram matrices.
pub fn projected_norm_from_coefficients(coeffs: &ProjectionCoefficients, basis: &ProjectionBasis) -> f64 {
    quad_form(&basis.gram_h1, &coeffs.lambda) + quad_form(&basis.gram_l2, &coeffs.mu)
}

/// Largest relative mismatch between the quadrature moments and the moments
/// rebuilt from the coefficients through the Gram matrices.
pub fn reconstruction_residual(
    u: &ExteriorData,
    coeffs: &ProjectionCoefficients,
    basis: &ProjectionBasis,
) -> Result<f64> {
    let m = moments(u, basis)?;
    let d = basis.dim as i32;
    let rr = basis.radius;
    let mut worst: f64 = 0.0;
    let scale_h1 = m.h1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 1..=basis.ktilde as i32 {
        let rebuilt: f64 = (1..=basis.ktilde as i32)
            .map(|j| {
                -rr.powi(2 * i + 2 * j - d - 2) * (d - 2 * j) as f64 / (d + 2 - 2 * i - 2 * j) as f64
                    * coeffs.lambda[(j - 1) as usize]
            })
            .sum();
        let diff = (rebuilt - m.h1[(i - 1) as usize]).abs();
        if scale_h1 > 0.0 {
            worst = worst.max(diff / scale_h1);
        } else {
            worst = worst.max(diff);
        }
    }
    let scale_l2 = m.l2.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 1..=basis.k as i32 {
        let rebuilt: f64 = (1..=basis.k as i32)
            .map(|j| rr.powi(2 * i + 2 * j - d) / (d - 2 * i - 2 * j) as f64 * coeffs.mu[(j - 1) as usize])
            .sum();
        let diff = (rebuilt - m.l2[(i - 1) as usize]).abs();
        worst = worst.max(if scale_l2 > 0.0 { diff / scale_l2 } else { diff });
    }
    Ok(worst)
}

/// Closed form of `d/dR ||pi_R^perp u||^2` in terms of `d lambda/dR`, `d mu/dR`.
pub fn perp_norm_derivative(d: u32, radius: f64, dlambda: &[f64], dmu: &[f64]) -> f64 {
    let di = d as i32;
    let lam: f64 = (1..).zip(dlambda).map(|(i, v)| v * radius.powi(2 * i - di)).sum();
    let mu: f64 = (1..)
        .zip(dmu)
        .map(|(i, v)| v * radius.powi(2 * i - di + 1) / (di - 2 - 2 * i) as f64)
        .sum();
    -(lam * lam + mu * mu) * radius.powi(di - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Seminorms {
    /// `sum (lambda_i R0^{2i-(d+2)/2})^2 + sum (mu_i R0^{2i-d/2})^2` at the first radius.
    pub pip_norm_sq: f64,
    /// `int sum (d_r lambda_i r^{2i-(d+1)/2})^2 + sum (d_r mu_i r^{2i-(d-1)/2})^2 dr`.
    pub pipp_norm_sq: f64,
    pub coarse: bool,
}

/// Weighted sums of squares of the coefficients and their `R`-derivatives
/// along a track sampled on a uniform `R` lattice.
pub fn coefficient_seminorms(track: &[ProjectionCoefficients], d: u32) -> Result<Seminorms> {
    if track.len() < 3 {
        return Err(Error::InvalidArgument("coefficient track needs at least 3 radii".into()));
    }
    let h = track[1].radius - track[0].radius;
    let uniform = track
        .windows(2)
        .all(|w| ((w[1].radius - w[0].radius) - h).abs() <= 1e-9 * h.abs().max(1.0));
    if !(h > 0.0) || !uniform {
        return Err(Error::InvalidArgument("coefficient track must use a uniform increasing R grid".into()));
    }
    let df = d as f64;
    let first = &track[0];
    let r0 = first.radius;
    let pip = (1..).zip(&first.lambda).map(|(i, l)| (l * r0.powf(2.0 * i as f64 - (df + 2.0) / 2.0)).powi(2)).sum::<f64>()
        + (1..).zip(&first.mu).map(|(i, m)| (m * r0.powf(2.0 * i as f64 - df / 2.0)).powi(2)).sum::<f64>();

    let nl = first.lambda.len();
    let nm = first.mu.len();
    let deriv = |series: Vec<f64>| {
        if series.len() >= 5 { derivative4(&series, h) } else { crate::quadrature::derivative2(&series, h) }
    };
    let mut density = vec![0.0; track.len()];
    let mut coarse = false;
    for (idx, pick, offset) in (0..nl)
        .map(|i| (i, true, (df + 1.0) / 2.0))
        .chain((0..nm).map(|i| (i, false, (df - 1.0) / 2.0)))
    {
        let series: Vec<f64> =
            track.iter().map(|c| if pick { c.lambda[idx] } else { c.mu[idx] }).collect();
        let scale = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let jump = series.windows(2).fold(0.0f64, |a, w| a.max((w[1] - w[0]).abs()));
        if scale > 0.0 && jump > 0.25 * scale {
            coarse = true;
        }
        let dser = deriv(series);
        for (k, c) in track.iter().enumerate() {
            let w = dser[k] * c.radius.powf(2.0 * (idx + 1) as f64 - offset);
            density[k] += w * w;
        }
    }
    Ok(Seminorms { pip_norm_sq: pip, pipp_norm_sq: simpson(&density, h), coarse })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(r0: f64, span: f64, n: usize) -> RadialGrid {
        RadialGrid::exterior(r0, r0 + span, n).unwrap()
    }

    #[test]
    fn basis_small_cases() {
        let b = build_basis(5, 1.0).unwrap();
        assert_eq!(b.gram_l2, vec![vec![1.0]]);
        assert_eq!(b.inv_l2, vec![vec![1.0]]);
        let b3 = build_basis(3, 2.0).unwrap();
        assert_eq!(b3.k, 0);
        assert!(b3.gram_l2.is_empty());
        assert_eq!(b3.ktilde, 1);
        assert!((b3.gram_h1[0][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn basis_rejects_bad_input() {
        assert!(matches!(build_basis(6, 1.0), Err(Error::InvalidDimension(6))));
        assert!(matches!(build_basis(7, 0.5), Err(Error::InvalidRadius(_))));
    }

    #[test]
    fn inverse_scaling_law() {
        for d in [5i64, 7, 9, 11, 13] {
            let b1 = build_basis(d, 1.0).unwrap();
            for rr in [2.0, 10.0] {
                let b = build_basis(d, rr).unwrap();
                assert!(b.inverse_residual() < 1e-10, "d={d} R={rr}");
                for i in 0..b.k {
                    for j in 0..b.k {
                        let expect = b1.inv_l2[i][j] * rr.powi(d as i32 - 2 * (i + j + 2) as i32);
                        assert!((b.inv_l2[i][j] - expect).abs() <= 1e-12 * expect.abs());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_coefficients() {
        let b = build_basis(7, 2.0).unwrap();
        let g = mesh(2.0, 4.0, 101);
        let u = ExteriorData::new(7, g, vec![0.0; 101], vec![0.0; 101]).unwrap();
        let c = project_coefficients(&u, &b).unwrap();
        assert!(c.lambda.iter().chain(&c.mu).all(|v| *v == 0.0));
        assert!(!c.tail_flagged);
    }

    #[test]
    fn leading_basis_element_is_reproduced() {
        for d in [3u32, 5, 7, 9, 11] {
            let rr = 2.0;
            let b = build_basis(d as i64, rr).unwrap();
            let e = 2.0 - d as f64;
            let g = mesh(rr, 3.0 * rr, 8001);
            let u = ExteriorData::from_fns(d, g, |r| r.powf(e), |r| e * r.powf(e - 1.0), |_| 0.0)
                .unwrap()
                .with_tail(PowerTail::new(vec![(1.0, e)]), PowerTail::default());
            let c = project_coefficients(&u, &b).unwrap();
            assert!((c.lambda[0] - 1.0).abs() < 1e-10, "d={d} {:?}", c.lambda);
            assert!(c.lambda[1..].iter().chain(&c.mu).all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn truncated_tail_is_flagged() {
        let b = build_basis(5, 1.0).unwrap();
        let g = mesh(1.0, 4.0, 201);
        let u = ExteriorData::from_fns(5, g, |r| r.powi(-3), |r| -3.0 * r.powi(-4), |_| 0.0).unwrap();
        let c = project_coefficients(&u, &b).unwrap();
        assert!(c.tail_flagged);
        assert!(c.error_bound > 0.0);
    }

    #[test]
    fn orthogonal_moments_leave_g_untouched() {
        // g orthogonal to r^{-3} in L2(r^4 dr) on [1, 3]: int g r dr = 0.
        let d = 5;
        let b = build_basis(d, 1.0).unwrap();
        let g = mesh(1.0, 2.0, 2001);
        let gf = |r: f64| (r - 1.0).powi(2) * (3.0 - r).powi(2) * (r - 2.0) / r;
        let u = ExteriorData::from_fns(d as u32, g, |_| 0.0, |_| 0.0, gf).unwrap();
        let split = norm_via_identity(&u, &b).unwrap();
        assert!(split.proj_norm_sq.abs() < 1e-12);
        assert!((split.perp_norm_sq - split.total_norm_sq).abs() < 1e-12);
    }

    #[test]
    fn constant_track_has_zero_derivative_seminorm() {
        let track: Vec<_> = (0..9)
            .map(|i| ProjectionCoefficients {
                lambda: vec![1.0, -2.0],
                mu: vec![0.5],
                radius: 2.0 + 0.5 * i as f64,
                time: 0.0,
                tail_flagged: false,
                error_bound: 0.0,
            })
            .collect();
        let s = coefficient_seminorms(&track, 7).unwrap();
        assert_eq!(s.pipp_norm_sq, 0.0);
        let expect = (1.0 * 2f64.powf(2.0 - 4.5)).powi(2)
            + (-2.0 * 2f64.powf(4.0 - 4.5)).powi(2)
            + (0.5 * 2f64.powf(2.0 - 3.5)).powi(2);
        assert!((s.pip_norm_sq - expect).abs() < 1e-14);
    }
}
