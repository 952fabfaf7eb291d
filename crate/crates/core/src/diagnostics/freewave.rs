//! Exact radial free waves in odd dimension `d = 2m + 3` by descent:
//! `u(t, r) = (r^{-1} d/dr)^m [(F(r + t) + G(r - t)) / r]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::simpson;

/// `A (1 - x^2)^K` on `|x| < 1`, `x = (xi - c) / w`; a polynomial bump with
/// `K - 1` continuous derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub power: u32,
    #[serde(skip)]
    coeffs: Vec<f64>,
}

impl PolyBump {
    pub fn new(amplitude: f64, center: f64, width: f64, power: u32) -> Self {
        let k = power as usize;
        let mut coeffs = vec![0.0; 2 * k + 1];
        let mut binom = 1.0;
        for m in 0..=k {
            coeffs[2 * m] = if m % 2 == 0 { binom } else { -binom };
            binom = binom * (k - m) as f64 / (m + 1) as f64;
        }
        Self { amplitude, center, width, power, coeffs }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.width, self.center + self.width)
    }

    /// `j`-th derivative at `xi`.
    pub fn deriv(&self, j: usize, xi: f64) -> f64 {
        let x = (xi - self.center) / self.width;
        if x.abs() >= 1.0 || j >= self.coeffs.len() {
            return 0.0;
        }
        // Horner on the j-times differentiated polynomial.
        let n = self.coeffs.len();
        let mut acc = 0.0;
        for i in (j..n).rev() {
            let mut c = self.coeffs[i];
            for q in 0..j {
                c *= (i - q) as f64;
            }
            acc = acc * x + c;
        }
        self.amplitude * acc / self.width.powi(j as i32)
    }
}

/// `F` (incoming, evaluated at `r + t`) and `G` (outgoing, at `r - t`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub incoming: Vec<PolyBump>,
    pub outgoing: Vec<PolyBump>,
}

impl SeedPair {
    /// `F = G`: initial data of the form `(f, 0)`.
    pub fn even(seed: PolyBump) -> Self {
        Self { incoming: vec![seed.clone()], outgoing: vec![seed] }
    }

    /// `G = -F`: initial data of the form `(0, g)`.
    pub fn odd(seed: PolyBump) -> Self {
        let neg = PolyBump::new(-seed.amplitude, seed.center, seed.width, seed.power);
        Self { incoming: vec![seed], outgoing: vec![neg] }
    }

    pub fn outgoing_only(seed: PolyBump) -> Self {
        Self { incoming: vec![], outgoing: vec![seed] }
    }

    fn hull(list: &[PolyBump]) -> Option<(f64, f64)> {
        list.iter().map(PolyBump::support).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    pub fn incoming_support(&self) -> Option<(f64, f64)> {
        Self::hull(&self.incoming)
    }

    pub fn outgoing_support(&self) -> Option<(f64, f64)> {
        Self::hull(&self.outgoing)
    }

    /// Smallest support point of either seed, i.e. where the `t = 0` data starts.
    pub fn data_start(&self) -> f64 {
        [self.incoming_support(), self.outgoing_support()]
            .iter()
            .flatten()
            .map(|s| s.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn data_end(&self) -> f64 {
        [self.incoming_support(), self.outgoing_support()]
            .iter()
            .flatten()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn sum(list: &[PolyBump], j: usize, xi: f64) -> f64 {
        list.iter().map(|b| b.deriv(j, xi)).sum()
    }
}

/// `coef * h^{(j)} * r^{-p}`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    coef: f64,
    j: usize,
    p: i32,
}

fn d_dr(terms: &[Term]) -> Vec<Term> {
    let mut out: Vec<Term> = Vec::new();
    let mut push = |t: Term| {
        if let Some(e) = out.iter_mut().find(|e| e.j == t.j && e.p == t.p) {
            e.coef += t.coef;
        } else {
            out.push(t);
        }
    };
    for t in terms {
        push(Term { coef: t.coef, j: t.j + 1, p: t.p });
        push(Term { coef: -(t.p as f64) * t.coef, j: t.j, p: t.p + 1 });
    }
    out.retain(|t| t.coef != 0.0);
    out
}

/// Expansion of `(r^{-1} d/dr)^m (h / r)`.
fn descent_terms(m: u32) -> Vec<Term> {
    let mut terms = vec![Term { coef: 1.0, j: 0, p: 1 }];
    for _ in 0..m {
        terms = d_dr(&terms)
            .into_iter()
            .map(|t| Term { p: t.p + 1, ..t })
            .collect();
    }
    terms
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeWaveValue {
    pub u: f64,
    pub u_t: f64,
    pub u_r: f64,
}

/// Exact free wave generated by a seed pair.
#[derive(Debug, Clone)]
pub struct FreeWave {
    pub dim: u32,
    pub seeds: SeedPair,
    terms: Vec<Term>,
    terms_r: Vec<Term>,
    terms_rr: Vec<Term>,
}

impl FreeWave {
    pub fn new(dim: u32, seeds: SeedPair) -> Result<Self> {
        crate::cauchy::check_dimension(dim as i64)?;
        let terms = descent_terms((dim - 3) / 2);
        let terms_r = d_dr(&terms);
        let terms_rr = d_dr(&terms_r);
        Ok(Self { dim, seeds, terms, terms_r, terms_rr })
    }

    /// `sum c r^{-p} [F^{(j+k)}(r+t) + (-1)^k G^{(j+k)}(r-t)]`.
    fn eval(&self, terms: &[Term], t: f64, r: f64, k: usize) -> f64 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        terms
            .iter()
            .map(|term| {
                let h = SeedPair::sum(&self.seeds.incoming, term.j + k, r + t)
                    + sign * SeedPair::sum(&self.seeds.outgoing, term.j + k, r - t);
                term.coef * h * r.powi(-term.p)
            })
            .sum()
    }

    pub fn value(&self, t: f64, r: f64) -> FreeWaveValue {
        FreeWaveValue {
            u: self.eval(&self.terms, t, r, 0),
            u_t: self.eval(&self.terms, t, r, 1),
            u_r: self.eval(&self.terms_r, t, r, 0),
        }
    }

    /// `u_tt - u_rr - (d-1)/r u_r`, all derivatives taken analytically.
    pub fn residual(&self, t: f64, r: f64) -> f64 {
        let u_tt = self.eval(&self.terms, t, r, 2);
        let u_rr = self.eval(&self.terms_rr, t, r, 0);
        let u_r = self.eval(&self.terms_r, t, r, 0);
        u_tt - u_rr - (self.dim as f64 - 1.0) / r * u_r
    }

    /// `int_a^b (u_t^2 + u_r^2) r^{d-1} dr` by Simpson on `n` nodes.
    pub fn energy_between(&self, t: f64, a: f64, b: f64, n: usize) -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = (b - a) / (n - 1) as f64;
        let dens: Vec<f64> = (0..n)
            .map(|i| {
                let r = a + i as f64 * h;
                let v = self.value(t, r);
                (v.u_t * v.u_t + v.u_r * v.u_r) * r.powi(self.dim as i32 - 1)
            })
            .collect();
        simpson(&dens, h)
    }

    /// Energy on `r >= R + |t|`, restricted to where the solution can be nonzero.
    pub fn exterior_energy(&self, radius: f64, t: f64, n: usize) -> f64 {
        let start = radius + t.abs();
        let mut end = f64::NEG_INFINITY;
        if let Some((_, hi)) = self.seeds.incoming_support() {
            end = end.max(hi - t);
        }
        if let Some((_, hi)) = self.seeds.outgoing_support() {
            end = end.max(hi + t);
        }
        self.energy_between(t, start, end, n)
    }

    /// `2 int_{xi >= R} (G^{(m+1)})^2` and the same for `F`: the exact
    /// `t -> +inf` and `t -> -inf` exterior energies.
    pub fn exterior_limits(&self, radius: f64, n: usize) -> (f64, f64) {
        let m1 = ((self.dim - 3) / 2 + 1) as usize;
        let piece = |list: &[PolyBump], hull: Option<(f64, f64)>| {
            let Some((lo, hi)) = hull else { return 0.0 };
            let lo = lo.max(radius);
            if hi <= lo {
                return 0.0;
            }
            let h = (hi - lo) / (n - 1) as f64;
            let v: Vec<f64> = (0..n)
                .map(|i| SeedPair::sum(list, m1, lo + i as f64 * h).powi(2))
                .collect();
            2.0 * simpson(&v, h)
        };
        (
            piece(&self.seeds.outgoing, self.seeds.outgoing_support()),
            piece(&self.seeds.incoming, self.seeds.incoming_support()),
        )
    }
}

/// Point evaluation of the exact free wave.
pub fn free_wave_exact(d: i64, seeds: &SeedPair, t: f64, r: f64) -> Result<FreeWaveValue> {
    let dim = crate::cauchy::check_dimension(d)?;
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    Ok(FreeWave::new(dim, seeds.clone())?.value(t, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed() -> PolyBump {
        PolyBump::new(1.0, 4.0, 1.5, 10)
    }

    #[test]
    fn three_dimensional_case_is_dalembert() {
        let s = SeedPair { incoming: vec![seed()], outgoing: vec![PolyBump::new(0.5, 5.0, 1.0, 10)] };
        for (t, r) in [(0.0, 4.2), (0.7, 3.9), (-1.3, 5.5)] {
            let v = free_wave_exact(3, &s, t, r).unwrap();
            let expect = (s.incoming[0].deriv(0, r + t) + s.outgoing[0].deriv(0, r - t)) / r;
            assert!((v.u - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn even_dimension_rejected() {
        assert!(matches!(free_wave_exact(4, &SeedPair::even(seed()), 0.0, 2.0), Err(Error::InvalidDimension(4))));
    }

    #[test]
    fn descent_terms_five_dimensions() {
        // (1/r) d/dr (h/r) = h'/r^2 - h/r^3
        let t = descent_terms(1);
        assert_eq!(t.len(), 2);
        assert!(t.contains(&Term { coef: 1.0, j: 1, p: 2 }));
        assert!(t.contains(&Term { coef: -1.0, j: 0, p: 3 }));
    }

    #[test]
    fn plug_back_residual_is_tiny() {
        for d in [3u32, 5, 7, 9] {
            let w = FreeWave::new(d, SeedPair::even(seed())).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..200 {
                let r = 1.0 + 0.05 * i as f64;
                for t in [0.0, 0.4, 1.7, -2.2] {
                    worst = worst.max(w.residual(t, r).abs());
                }
            }
            assert!(worst < 1e-8, "d={d}: {worst}");
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let w = FreeWave::new(7, SeedPair::odd(seed())).unwrap();
        let h = 1e-5;
        for (t, r) in [(0.3, 3.4), (1.1, 4.6)] {
            let v = w.value(t, r);
            let ut = (w.value(t + h, r).u - w.value(t - h, r).u) / (2.0 * h);
            let ur = (w.value(t, r + h).u - w.value(t, r - h).u) / (2.0 * h);
            assert!((v.u_t - ut).abs() < 1e-6 * (1.0 + ut.abs()));
            assert!((v.u_r - ur).abs() < 1e-6 * (1.0 + ur.abs()));
        }
    }

    #[test]
    fn outgoing_energy_is_conserved_and_equals_limit() {
        let w = FreeWave::new(5, SeedPair::outgoing_only(seed())).unwrap();
        let (plus, minus) = w.exterior_limits(2.0, 20001);
        assert_eq!(minus, 0.0);
        for t in [0.0, 3.0, 10.0] {
            let e = w.exterior_energy(2.0, t, 20001);
            assert!((e - plus).abs() < 1e-8 * plus, "t={t}: {e} vs {plus}");
        }
    }
}
