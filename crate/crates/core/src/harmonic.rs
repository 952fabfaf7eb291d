//! Exterior harmonic maps `Q_{l,n}` via shooting on the damped pendulum
//! `phi_ss + phi_s = k sin(2 phi)`, `k = l(l+1)/2`, `s = log r`.
//!
//! The equilibria `m pi` are saddles (eigenvalues `l` and `-(l+1)`); generic
//! trajectories spiral into the wells `(m + 1/2) pi`. `Q_{l,n}` is the unique
//! trajectory from `phi(0) = 0` that lands on the stable manifold of `n pi`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::Dopri5;
use crate::quadrature::derivative4;

pub const DEFAULT_S_MAX: f64 = 40.0;
pub const DEFAULT_SAMPLE_STEP: f64 = 2.5e-4;
pub const BASIN_RADIUS: f64 = 1e-6;
pub const BRACKET_WIDTH: f64 = 1e-12;
const ATOL: f64 = 1e-12;
const RTOL: f64 = 1e-10;
const A_MAX_LIMIT: f64 = 1e8;

pub fn kappa(ell: u32) -> f64 {
    let l = ell as f64;
    l * (l + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub s: f64,
    pub phi: f64,
    pub phidot: f64,
}

/// Where a trajectory ended up by the end of its horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Terminal {
    /// Entered the basin of the attracting well `(m + 1/2) pi`.
    Well { m: i64 },
    /// Sitting within the basin of the saddle `m pi` at the horizon.
    Rest { m: i64 },
    Transient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub ell: u32,
    pub a: f64,
    pub states: Vec<PendulumState>,
    pub terminal: Terminal,
}

fn pendulum(k: f64) -> impl FnMut(f64, &[f64; 2]) -> [f64; 2] {
    move |_s, y| [y[1], k * (2.0 * y[0]).sin() - y[1]]
}

fn basin_distance(phi: f64, phidot: f64, centre: f64) -> f64 {
    (phi - centre).abs() + phidot.abs()
}

/// Forward integration from `(0, a)` to `s_max`, recorded every `0.01` in `s`.
/// Stops early once the trajectory enters the basin of a well.
pub fn integrate_pendulum(ell: u32, a: f64, s_max: f64) -> Result<Trajectory> {
    if ell == 0 {
        return Err(Error::InvalidArgument("ell must be >= 1".into()));
    }
    if !(s_max > 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!("need s_max > 0 and finite a (s_max={s_max}, a={a})")));
    }
    let k = kappa(ell);
    let mut solver = Dopri5::new(pendulum(k), ATOL, RTOL);
    let mut s = 0.0;
    let mut y = [0.0, a];
    let mut states = vec![PendulumState { s, phi: y[0], phidot: y[1] }];
    let out_step = 0.01;
    let mut idx = 0usize;
    let mut terminal = Terminal::Transient;
    while s < s_max {
        idx += 1;
        let target = (idx as f64 * out_step).min(s_max);
        solver.advance(&mut s, &mut y, target)?;
        states.push(PendulumState { s, phi: y[0], phidot: y[1] });
        let m = (y[0] / PI - 0.5).round() as i64;
        if basin_distance(y[0], y[1], (m as f64 + 0.5) * PI) < BASIN_RADIUS {
            terminal = Terminal::Well { m };
            break;
        }
    }
    if terminal == Terminal::Transient {
        let m = (y[0] / PI).round() as i64;
        if basin_distance(y[0], y[1], m as f64 * PI) < BASIN_RADIUS {
            terminal = Terminal::Rest { m };
        }
    }
    Ok(Trajectory { ell, a, states, terminal })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shot {
    Under,
    Over,
}

/// Pendulum energy `phi_s^2/2 + k cos(2 phi)/2`; non-increasing in `s`.
fn pendulum_energy(k: f64, phi: f64, phidot: f64) -> f64 {
    0.5 * phidot * phidot + 0.5 * k * (2.0 * phi).cos()
}

/// Over if `phi` crosses `n pi`, under if it is trapped below the barrier
/// while still short of `n pi`. At the horizon the sign of the unstable
/// component at the saddle `n pi` decides.
fn classify_shot(ell: u32, n: u32, a: f64, s_max: f64) -> Result<Shot> {
    let k = kappa(ell);
    let target = n as f64 * PI;
    let barrier = 0.5 * k;
    let mut solver = Dopri5::new(pendulum(k), ATOL, RTOL);
    let mut s = 0.0;
    let mut y = [0.0, a];
    let chunk = 0.05;
    let mut idx = 0usize;
    while s < s_max {
        idx += 1;
        solver.advance(&mut s, &mut y, (idx as f64 * chunk).min(s_max))?;
        if y[0] > target {
            return Ok(Shot::Over);
        }
        if pendulum_energy(k, y[0], y[1]) < barrier * (1.0 - 1e-12) {
            return Ok(Shot::Under);
        }
    }
    let l = ell as f64;
    let unstable = (l + 1.0) * (y[0] - target) + y[1];
    Ok(if unstable > 0.0 { Shot::Over } else { Shot::Under })
}

/// Options controlling the shooting and sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    pub s_max: f64,
    pub sample_step: f64,
    /// First trial value of the geometric bracket scan.
    pub a_start: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self { s_max: DEFAULT_S_MAX, sample_step: DEFAULT_SAMPLE_STEP, a_start: 1.0 }
    }
}

/// Geometric scan for `(undershoot, overshoot)` witnesses.
pub fn find_bracket(ell: u32, n: u32, opts: &ShootOptions) -> Result<(f64, f64)> {
    let mut lo = 0.0;
    let mut a = opts.a_start;
    while a <= A_MAX_LIMIT {
        match classify_shot(ell, n, a, opts.s_max)? {
            Shot::Over => return Ok((lo, a)),
            Shot::Under => lo = a,
        }
        a *= 2.0;
    }
    Err(Error::BracketNotFound { ell, n, a_max: A_MAX_LIMIT })
}

/// Bisection on `a = phi'(0)` inside a given bracket down to `BRACKET_WIDTH`.
pub fn bisect_shooting_parameter(ell: u32, n: u32, lo: f64, hi: f64, s_max: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    if classify_shot(ell, n, hi, s_max)? != Shot::Over {
        return Err(Error::InvalidArgument(format!("a = {hi} is not an overshoot")));
    }
    if lo > 0.0 && classify_shot(ell, n, lo, s_max)? != Shot::Under {
        return Err(Error::InvalidArgument(format!("a = {lo} is not an undershoot")));
    }
    while hi - lo > BRACKET_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match classify_shot(ell, n, mid, s_max)? {
            Shot::Over => hi = mid,
            Shot::Under => lo = mid,
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sampled harmonic map. Samples are stored in `s = log r` on a uniform grid,
/// as `delta = n pi - Q` so that the decaying tail keeps full relative precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMapProfile {
    pub ell: u32,
    pub n: u32,
    pub shoot_param: f64,
    pub alpha0: f64,
    pub s_max: f64,
    pub ds: f64,
    pub delta: Vec<f64>,
    pub delta_s: Vec<f64>,
    /// `phi'(0)` implied by the inward integration; should match `shoot_param`.
    pub inward_param: f64,
    pub fit_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileHeader {
    pub ell: u32,
    pub n: u32,
    #[serde(rename = "shootParam")]
    pub shoot_param: f64,
    pub alpha0: f64,
    pub residual: f64,
    #[serde(rename = "sMax")]
    pub s_max: f64,
    pub ds: f64,
}

/// Two-term expansion of `delta` at large `s`.
fn delta_series(ell: u32, alpha: f64, s: f64) -> (f64, f64) {
    let l = ell as f64;
    let beta = -l * alpha.powi(3) / (3.0 * (4.0 * l + 3.0));
    let e1 = (-(l + 1.0) * s).exp();
    let e3 = e1 * e1 * e1;
    (alpha * e1 + beta * e3, -(l + 1.0) * alpha * e1 - 3.0 * (l + 1.0) * beta * e3)
}

enum Inward {
    /// `delta` passed `n pi + 1/2` before reaching `s = 0`.
    Overshoot,
    Reached { delta0: f64, samples: Option<(Vec<f64>, Vec<f64>)> },
}

fn integrate_inward(ell: u32, n: u32, alpha: f64, s_max: f64, ds: f64, record: bool) -> Result<Inward> {
    let k = kappa(ell);
    let limit = n as f64 * PI + 0.5;
    let steps = (s_max / ds).round() as usize;
    let mut solver = Dopri5::new(pendulum(k), 1e-300, 1e-12);
    let mut s = steps as f64 * ds;
    let (d0, d1) = delta_series(ell, alpha, s);
    let mut y = [d0, d1];
    let mut delta = Vec::new();
    let mut delta_s = Vec::new();
    if record {
        delta = vec![0.0; steps + 1];
        delta_s = vec![0.0; steps + 1];
        delta[steps] = y[0];
        delta_s[steps] = y[1];
    }
    let stride = if record { 1 } else { 50 };
    let mut i = steps;
    while i > 0 {
        i = i.saturating_sub(stride);
        solver.advance(&mut s, &mut y, i as f64 * ds)?;
        if y[0] > limit {
            return Ok(Inward::Overshoot);
        }
        if record {
            delta[i] = y[0];
            delta_s[i] = y[1];
        }
    }
    Ok(Inward::Reached { delta0: y[0], samples: record.then_some((delta, delta_s)) })
}

/// `alpha` such that the inward solution from the asymptotic series has `delta(0) = n pi`.
fn solve_alpha(ell: u32, n: u32, s_max: f64, ds: f64) -> Result<f64> {
    let target = n as f64 * PI;
    let above = |alpha: f64| -> Result<bool> {
        Ok(match integrate_inward(ell, n, alpha, s_max, ds, false)? {
            Inward::Overshoot => true,
            Inward::Reached { delta0, .. } => delta0 > target,
        })
    };
    let mut lo = 1.0;
    let mut hi = 1.0;
    if above(1.0)? {
        while above(lo)? {
            lo *= 0.5;
            if lo < 1e-12 {
                return Err(Error::NotConverged("asymptotic coefficient scan below 1e-12".into()));
            }
        }
    } else {
        while !above(hi)? {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::NotConverged("asymptotic coefficient scan above 1e12".into()));
            }
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if above(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

/// `Q_{l,n}` with the default options.
pub fn shoot(ell: u32, n: u32) -> Result<HarmonicMapProfile> {
    shoot_with(ell, n, &ShootOptions::default())
}

pub fn shoot_with(ell: u32, n: u32, opts: &ShootOptions) -> Result<HarmonicMapProfile> {
    if ell == 0 {
        return Err(Error::InvalidArgument("ell must be >= 1".into()));
    }
    if !(opts.s_max > 0.0) || !(opts.sample_step > 0.0) || opts.sample_step > opts.s_max / 16.0 {
        return Err(Error::InvalidArgument(format!(
            "bad horizon/sample step: s_max={}, ds={}",
            opts.s_max, opts.sample_step
        )));
    }
    let steps = (opts.s_max / opts.sample_step).round() as usize;
    let ds = opts.s_max / steps as f64;
    if n == 0 {
        return Ok(HarmonicMapProfile {
            ell,
            n,
            shoot_param: 0.0,
            alpha0: 0.0,
            s_max: opts.s_max,
            ds,
            delta: vec![0.0; steps + 1],
            delta_s: vec![0.0; steps + 1],
            inward_param: 0.0,
            fit_residual: 0.0,
        });
    }
    let (lo, hi) = find_bracket(ell, n, opts)?;
    let shoot_param = bisect_shooting_parameter(ell, n, lo, hi, opts.s_max)?;
    let alpha = solve_alpha(ell, n, opts.s_max, ds)?;
    let (mut delta, delta_s) = match integrate_inward(ell, n, alpha, opts.s_max, ds, true)? {
        Inward::Reached { samples: Some(s), .. } => s,
        _ => return Err(Error::NotConverged("inward integration overshot at the solved coefficient".into())),
    };
    // Q(1) = 0 is imposed; the root-find leaves at most a few ulps here.
    delta[0] = n as f64 * PI;
    let inward_param = -delta_s[0];
    let mut profile = HarmonicMapProfile {
        ell,
        n,
        shoot_param,
        alpha0: alpha,
        s_max: opts.s_max,
        ds,
        delta,
        delta_s,
        inward_param,
        fit_residual: 0.0,
    };
    let fit = fit_alpha(&profile)?;
    profile.alpha0 = fit.alpha;
    profile.fit_residual = fit.residual;
    let mismatch = (shoot_param - inward_param).abs();
    if mismatch > 1e-6 * shoot_param.max(1.0) {
        return Err(Error::NotConverged(format!(
            "forward shooting a = {shoot_param} disagrees with inward a = {inward_param}"
        )));
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaFit {
    pub alpha: f64,
    /// Coefficient of the `r^{-2(l+1)}` correction.
    pub correction: f64,
    /// RMS residual of the fit.
    pub residual: f64,
}

/// Least squares for `delta r^{l+1} = alpha + c r^{-2(l+1)}` over the last decade of `r`.
pub fn fit_alpha(profile: &HarmonicMapProfile) -> Result<AlphaFit> {
    if profile.n == 0 {
        return Ok(AlphaFit { alpha: 0.0, correction: 0.0, residual: 0.0 });
    }
    let last = profile.delta.len() - 1;
    let tail = profile.delta[last];
    if !(tail.abs() <= 1e-8) {
        return Err(Error::NotConverged(format!("|Q(r_max) - n pi| = {:e}", tail.abs())));
    }
    let l1 = profile.ell as f64 + 1.0;
    let s_lo = (profile.s_max - std::f64::consts::LN_10).max(0.0);
    let first = (s_lo / profile.ds).ceil() as usize;
    let rows: Vec<(f64, f64)> = (first..=last)
        .map(|i| {
            let s = i as f64 * profile.ds;
            (profile.delta[i] * (l1 * s).exp(), (-2.0 * l1 * s).exp())
        })
        .collect();
    let m = rows.len() as f64;
    // Orthogonalise the correction column against the constant column.
    let mean_y = rows.iter().map(|r| r.0).sum::<f64>() / m;
    let mean_x = rows.iter().map(|r| r.1).sum::<f64>() / m;
    let sxx: f64 = rows.iter().map(|r| (r.1 - mean_x).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| (r.1 - mean_x) * (r.0 - mean_y)).sum();
    let scale: f64 = rows.iter().map(|r| r.1 * r.1).sum::<f64>().sqrt();
    let correction = if scale > 0.0 && sxx.sqrt() > 1e-10 * scale { sxy / sxx } else { 0.0 };
    let alpha = mean_y - correction * mean_x;
    let residual = (rows.iter().map(|r| (r.0 - alpha - correction * r.1).powi(2)).sum::<f64>() / m).sqrt();
    Ok(AlphaFit { alpha, correction, residual })
}

impl HarmonicMapProfile {
    /// Synthetic profile from an analytic `delta(s)` and its derivative.
    pub fn from_delta(
        ell: u32,
        n: u32,
        s_max: f64,
        ds: f64,
        delta: impl Fn(f64) -> f64,
        delta_s: impl Fn(f64) -> f64,
    ) -> Self {
        let steps = (s_max / ds).round() as usize;
        let ds = s_max / steps as f64;
        let grid: Vec<f64> = (0..=steps).map(|i| i as f64 * ds).collect();
        HarmonicMapProfile {
            ell,
            n,
            shoot_param: -delta_s(0.0),
            alpha0: 0.0,
            s_max,
            ds,
            delta: grid.iter().map(|&s| delta(s)).collect(),
            delta_s: grid.iter().map(|&s| delta_s(s)).collect(),
            inward_param: -delta_s(0.0),
            fit_residual: 0.0,
        }
    }

    pub fn r_max(&self) -> f64 {
        self.s_max.exp()
    }

    pub fn target(&self) -> f64 {
        self.n as f64 * PI
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn s(&self, i: usize) -> f64 {
        i as f64 * self.ds
    }

    /// `(r, Q, Q')` at sample `i`.
    pub fn sample(&self, i: usize) -> (f64, f64, f64) {
        let r = self.s(i).exp();
        (r, self.target() - self.delta[i], -self.delta_s[i] / r)
    }

    /// `(delta, delta_s)` at `s`, cubic Hermite inside the sampled range,
    /// asymptotic expansion beyond it.
    fn delta_at(&self, s: f64) -> (f64, f64) {
        if self.n == 0 {
            return (0.0, 0.0);
        }
        if s >= self.s_max {
            return delta_series(self.ell, self.alpha0, s);
        }
        let x = s / self.ds;
        let i = (x.floor() as usize).min(self.len() - 2);
        let t = x - i as f64;
        let h = self.ds;
        let (p0, p1) = (self.delta[i], self.delta[i + 1]);
        let (m0, m1) = (self.delta_s[i] * h, self.delta_s[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1;
        let dv = (6.0 * t2 - 6.0 * t) * p0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1;
        (v, dv / h)
    }

    /// `n pi - Q(r)`, accurate in relative terms for large `r`.
    pub fn delta_at_r(&self, r: f64) -> Result<f64> {
        check_radius(r)?;
        Ok(self.delta_at(r.ln()).0)
    }

    /// Plug-back residual of `phi_ss + phi_s = k sin 2phi` over the samples,
    /// with `phi_ss` from fourth-order differences of the sampled `phi_s`.
    pub fn residual(&self) -> f64 {
        if self.n == 0 || self.len() < 5 {
            return 0.0;
        }
        let k = kappa(self.ell);
        let dss = derivative4(&self.delta_s, self.ds);
        dss.iter()
            .zip(&self.delta_s)
            .zip(&self.delta)
            .map(|((a, b), c)| (a + b - k * (2.0 * c).sin()).abs())
            .fold(0.0, f64::max)
    }

    pub fn header(&self) -> ProfileHeader {
        ProfileHeader {
            ell: self.ell,
            n: self.n,
            shoot_param: self.shoot_param,
            alpha0: self.alpha0,
            residual: self.residual(),
            s_max: self.s_max,
            ds: self.ds,
        }
    }

    /// `r,Q,Q'` table, every `stride`-th sample.
    pub fn to_csv(&self, stride: usize) -> String {
        let mut out = String::from("r,Q,dQ\n");
        let stride = stride.max(1);
        let mut idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        if idx.last() != Some(&(self.len() - 1)) {
            idx.push(self.len() - 1);
        }
        for i in idx {
            let (r, q, dq) = self.sample(i);
            let _ = writeln!(out, "{r:.17e},{q:.17e},{dq:.17e}");
        }
        out
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidRadius(r));
    }
    Ok(())
}

/// `(Q(r), Q'(r))`.
pub fn evaluate_q(profile: &HarmonicMapProfile, r: f64) -> Result<(f64, f64)> {
    check_radius(r)?;
    let (d, ds) = profile.delta_at(r.ln());
    Ok((profile.target() - d, -ds / r))
}

/// `E_l(psi, 0) = int (psi_r^2 r^2 / 2 + k sin^2 psi) dr`, written in `s`.
pub fn static_energy_in_s(ell: u32, ds: f64, phi: &[f64], phi_s: &[f64]) -> f64 {
    let k = kappa(ell);
    let density: Vec<f64> = phi
        .iter()
        .zip(phi_s)
        .enumerate()
        .map(|(i, (p, q))| (0.5 * q * q + k * p.sin().powi(2)) * (i as f64 * ds).exp())
        .collect();
    crate::quadrature::simpson(&density, ds)
}

impl HarmonicMapProfile {
    /// Static energy of `Q` over `1 <= r <= r_max`.
    pub fn energy(&self) -> f64 {
        let phi: Vec<f64> = self.delta.iter().map(|d| self.target() - d).collect();
        let phi_s: Vec<f64> = self.delta_s.iter().map(|d| -d).collect();
        static_energy_in_s(self.ell, self.ds, &phi, &phi_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_velocity_stays_at_rest() {
        let t = integrate_pendulum(1, 0.0, 5.0).unwrap();
        assert_eq!(t.terminal, Terminal::Rest { m: 0 });
        assert!(t.states.iter().all(|p| p.phi == 0.0 && p.phidot == 0.0));
    }

    #[test]
    fn huge_kick_passes_pi() {
        let t = integrate_pendulum(1, 1e6, 80.0).unwrap();
        assert!(t.states.iter().any(|p| p.phi > PI));
        match t.terminal {
            Terminal::Well { m } => assert!(m >= 1),
            other => panic!("unexpected terminal {other:?}"),
        }
    }

    #[test]
    fn degree_zero_is_trivial() {
        let p = shoot(2, 0).unwrap();
        assert_eq!(p.alpha0, 0.0);
        assert!(p.delta.iter().all(|d| *d == 0.0));
        assert_eq!(evaluate_q(&p, 7.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(shoot(0, 1).is_err());
        let p = shoot(1, 0).unwrap();
        assert!(matches!(evaluate_q(&p, 0.5), Err(Error::InvalidRadius(_))));
        assert!(integrate_pendulum(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn synthetic_fit_recovers_alpha() {
        for ell in 1..=3u32 {
            let l1 = ell as f64 + 1.0;
            let p = HarmonicMapProfile::from_delta(
                ell,
                1,
                24.0 / l1,
                1e-3,
                |s| 5.0 * (-l1 * s).exp() - (-3.0 * l1 * s).exp(),
                |s| -5.0 * l1 * (-l1 * s).exp() + 3.0 * l1 * (-3.0 * l1 * s).exp(),
            );
            let fit = fit_alpha(&p).unwrap();
            assert!((fit.alpha - 5.0).abs() < 1e-9, "ell={ell}: {fit:?}");
        }
    }

    #[test]
    fn q11_profile_contracts() {
        let p = shoot(1, 1).unwrap();
        assert!(p.alpha0 > 0.0);
        assert_eq!(evaluate_q(&p, 1.0).unwrap().0, 0.0);
        let (_, dq1) = evaluate_q(&p, 1.0).unwrap();
        assert!((dq1 - p.inward_param).abs() < 1e-12);
        assert!((p.target() - evaluate_q(&p, p.r_max()).unwrap().0).abs() <= 1e-8);
        assert!(p.residual() <= 1e-8, "residual {}", p.residual());
        let seam = p.s_max.exp();
        let below = evaluate_q(&p, seam * (1.0 - 1e-12)).unwrap().0;
        let above = evaluate_q(&p, seam * (1.0 + 1e-12)).unwrap().0;
        assert!((below - above).abs() < 1e-7);
    }
}
