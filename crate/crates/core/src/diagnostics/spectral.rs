//! Discrete spectrum of `H = -Laplace + V` on `r >= 1` with a Dirichlet condition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolver::{Bump, Evolver, Form};
use crate::grid::RadialGrid;
use crate::harmonic::HarmonicMapProfile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralOptions {
    pub r_max: f64,
    pub npoints: usize,
    pub probes: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { r_max: 41.0, npoints: 4001, probes: 100, seed: 7, tol: 1e-12, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCheck {
    pub dim: u32,
    pub ell: Option<u32>,
    pub degree: Option<u32>,
    pub grid: RadialGrid,
    pub smallest_eigenvalue: f64,
    pub iterations: usize,
    /// Eigenvalue count below the estimate; zero certifies it is the smallest.
    pub sturm_count_below: usize,
    /// Whether the estimate came from bisection after inverse iteration
    /// landed on another eigenvalue.
    pub bisected: bool,
    /// Min and max of `<Hf, f> / ||f||^2_{H^1}` over the probes.
    pub c1: f64,
    pub c2: f64,
    pub rayleigh: Vec<f64>,
}

impl SpectralCheck {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Symmetric tridiagonal matrix on the interior nodes.
struct Tridiag {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiag {
    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.off[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Solves `(A - sigma) y = x` by the Thomas algorithm.
    fn solve(&self, sigma: f64, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let mut c = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut piv = self.diag[0] - sigma;
        for i in 0..n {
            if i > 0 {
                piv = self.diag[i] - sigma - self.off[i - 1] * c[i - 1];
            }
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::NotConverged(format!("singular shifted matrix at row {i}")));
            }
            if i + 1 < n {
                c[i] = self.off[i] / piv;
            }
            y[i] = (x[i] - if i > 0 { self.off[i - 1] * y[i - 1] } else { 0.0 }) / piv;
        }
        for i in (0..n - 1).rev() {
            y[i] -= c[i] * y[i + 1];
        }
        Ok(y)
    }

    /// Number of eigenvalues below `x` (negative pivots of `LDL^T` of `A - x`).
    fn sturm_count(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.diag.len() {
            let b2 = if i > 0 { self.off[i - 1].powi(2) } else { 0.0 };
            q = self.diag[i] - x - if i > 0 { b2 / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * (self.diag[i].abs() + x.abs()).max(1e-300);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin_lower(&self) -> f64 {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                if i > 0 {
                    s += self.off[i - 1].abs();
                }
                if i + 1 < n {
                    s += self.off[i].abs();
                }
                self.diag[i] - s
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A = W^{1/2} H W^{-1/2}` with `H z = -(1/w) D(w D z) + V z`.
fn assemble(r: &[f64], weight_pow: i32, potential: &[f64], dr: f64) -> (Tridiag, Vec<f64>, Vec<f64>) {
    let n = r.len();
    let w: Vec<f64> = r.iter().map(|x| x.powi(weight_pow)).collect();
    let wh: Vec<f64> = (0..n - 1).map(|i| (0.5 * (r[i] + r[i + 1])).powi(weight_pow)).collect();
    let m = n - 2;
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m.saturating_sub(1)];
    for k in 0..m {
        let i = k + 1;
        diag[k] = (wh[i] + wh[i - 1]) / (dr * dr * w[i]) + potential[i];
        if k + 1 < m {
            off[k] = -wh[i] / (dr * dr * (w[i] * w[i + 1]).sqrt());
        }
    }
    (Tridiag { diag, off }, w, wh)
}

/// Smallest eigenvalue and Rayleigh quotients `<Hf, f> / ||f||^2_{H^1}` of the
/// discretised `H` in dimension `d`; `V` comes from the profile (then
/// `d = 2l + 3`), or is zero.
pub fn spectral_check(d: u32, profile: Option<&HarmonicMapProfile>, opts: &SpectralOptions) -> Result<SpectralCheck> {
    crate::cauchy::check_dimension(d as i64)?;
    let grid = RadialGrid::new(opts.r_max, opts.npoints)?;
    let potential = match profile {
        Some(p) => {
            if 2 * p.ell + 3 != d {
                return Err(Error::InvalidArgument(format!(
                    "profile with l = {} lives in dimension {}, not {d}",
                    p.ell,
                    2 * p.ell + 3
                )));
            }
            Evolver::wave_map(Form::U, grid, p)?.potential().to_vec()
        }
        None => vec![0.0; grid.len()],
    };
    let r = grid.radii();
    let dr = grid.dr();
    let (a, w, wh) = assemble(&r, d as i32 - 1, &potential, dr);
    let m = a.diag.len();

    // Inverse iteration at zero shift, refined by the Rayleigh quotient.
    let mut x = vec![1.0 / (m as f64).sqrt(); m];
    let mut lambda = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.max_iter {
        let mut y = a.solve(0.0, &x)?;
        let norm = dot(&y, &y).sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        let next = dot(&y, &a.mul(&y));
        x = y;
        iterations = it;
        if (next - lambda).abs() <= opts.tol * next.abs().max(1e-300) {
            lambda = next;
            converged = true;
            break;
        }
        lambda = next;
    }
    if !converged {
        return Err(Error::EigenNoConvergence(iterations));
    }
    let below = lambda - 1e-9 * lambda.abs().max(1e-12);
    let mut sturm = a.sturm_count(below);
    let mut bisected = false;
    if sturm > 0 {
        let (mut lo, mut hi) = (a.gershgorin_lower(), below);
        while hi - lo > opts.tol * hi.abs().max(1e-300) {
            let mid = 0.5 * (lo + hi);
            if a.sturm_count(mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lambda = 0.5 * (lo + hi);
        sturm = a.sturm_count(lo);
        bisected = true;
    }

    // Rayleigh probes in the discrete forms, so that V = 0 gives exactly one.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let span = opts.r_max - 1.0;
    let mut rayleigh = Vec::with_capacity(opts.probes);
    for _ in 0..opts.probes {
        let bumps: Vec<Bump> = (0..3)
            .map(|_| {
                let width = rng.gen_range(0.05 * span..=0.3 * span);
                let center = rng.gen_range(1.0 + width..=opts.r_max - width);
                Bump::new(rng.gen_range(-1.0..=1.0), center, width)
            })
            .collect();
        let f: Vec<f64> = r.iter().map(|&x| bumps.iter().map(|b| b.eval(x)).sum()).collect();
        let mut grad = 0.0;
        for i in 0..r.len() - 1 {
            grad += wh[i] * ((f[i + 1] - f[i]) / dr).powi(2) * dr;
        }
        let pot: f64 = (1..r.len() - 1).map(|i| w[i] * potential[i] * f[i] * f[i] * dr).sum();
        if grad > 0.0 {
            rayleigh.push((grad + pot) / grad);
        }
    }
    let c1 = rayleigh.iter().copied().fold(f64::INFINITY, f64::min);
    let c2 = rayleigh.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralCheck {
        dim: d,
        ell: profile.map(|p| p.ell),
        degree: profile.map(|p| p.n),
        grid,
        smallest_eigenvalue: lambda,
        iterations,
        sturm_count_below: sturm,
        bisected,
        c1,
        c2,
        rayleigh,
    })
}
