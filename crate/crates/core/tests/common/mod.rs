#![allow(dead_code)]

use std::path::Path;

use exterior_wavemaps::cauchy::Rational;
use exterior_wavemaps::config::{self, ExperimentConfig, RawConfig};
use exterior_wavemaps::projection::{ExteriorData, PowerTail};
use nalgebra::{DMatrix, DVector};
use num_traits::{One, Zero};

/// Inverse by Gauss-Jordan elimination with exact pivots; `None` if singular.
pub fn gauss_inverse(a: &[Vec<Rational>]) -> Option<Vec<Vec<Rational>>> {
    let n = a.len();
    let mut m: Vec<Vec<Rational>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Rational::one() } else { Rational::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let p = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, p);
        let inv = m[col][col].recip();
        for v in m[col].iter_mut() {
            *v = &*v * &inv;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in 0..2 * n {
                    let sub = &factor * &m[col][c];
                    m[r][c] = &m[r][c] - sub;
                }
            }
        }
    }
    Some(m.into_iter().map(|row| row[n..].to_vec()).collect())
}

/// A shipped example config with its output redirected to `out`.
pub fn example_config(name: &str, out: &Path, overrides: &[&str]) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut raw = RawConfig::parse(&text).unwrap_or_else(|e| panic!("{name}: {e:?}"));
    raw.set(&format!("output.dir={}", out.display())).unwrap();
    for o in overrides {
        raw.set(o).unwrap();
    }
    config::validate(&raw).unwrap_or_else(|e| panic!("{name}: {e:?}"))
}

/// `(r^e, 0)` or `(0, r^e)` on the mesh of `like`, with its exact tail.
fn power_element(like: &ExteriorData, e: f64, in_f: bool) -> ExteriorData {
    let tail = PowerTail::new(vec![(1.0, e)]);
    let zero = |_: f64| 0.0;
    let u = if in_f {
        ExteriorData::from_fns(like.dim, like.grid, |r| r.powf(e), |r| e * r.powf(e - 1.0), zero).unwrap()
    } else {
        ExteriorData::from_fns(like.dim, like.grid, zero, zero, |r| r.powf(e)).unwrap()
    };
    if in_f {
        u.with_tail(tail, PowerTail::default())
    } else {
        u.with_tail(PowerTail::default(), tail)
    }
}

/// Coefficients by assembling the Gram system from quadrature inner products
/// and solving it densely.
pub fn dense_coefficients(u: &ExteriorData) -> (Vec<f64>, Vec<f64>) {
    let d = u.dim as i64;
    let solve = |elems: Vec<ExteriorData>| -> Vec<f64> {
        let n = elems.len();
        if n == 0 {
            return Vec::new();
        }
        let g = DMatrix::from_fn(n, n, |i, j| elems[i].inner(&elems[j]).unwrap());
        let b = DVector::from_fn(n, |i, _| u.inner(&elems[i]).unwrap());
        g.lu().solve(&b).expect("Gram matrix is nonsingular").iter().copied().collect()
    };
    let kt = ((d + 2) / 4) as usize;
    let k = (d / 4) as usize;
    let lam = solve((1..=kt as i64).map(|i| power_element(u, (2 * i - d) as f64, true)).collect());
    let mu = solve((1..=k as i64).map(|i| power_element(u, (2 * i - d) as f64, false)).collect());
    (lam, mu)
}

/// Max difference relative to the largest entry of either vector.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
