//! Exterior energy channels for free radial waves.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use super::freewave::{FreeWave, SeedPair};
use crate::cauchy;
use crate::error::{Error, Result};
use crate::evolver::{Bump, EvolveOptions, Evolver, ProbeSet};
use crate::grid::RadialGrid;
use crate::projection::{build_basis, norm_via_identity, ExteriorData, PowerTail};

pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `C^inf` step: 0 for `x <= 0`, 1 for `x >= 1`.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

pub fn smooth_step_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a * b * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x))) / ((a + b) * (a + b))
}

/// Sampled initial data `(f, g)` on `r >= 1` with its exact derivative `f_r`.
/// Data that does not have compact support carries power tails, which
/// describe it beyond the last sample for the projection.
#[derive(Clone)]
pub struct RadialData {
    pub f: RadialFn,
    pub f_r: RadialFn,
    pub g: RadialFn,
    /// End of the support; `None` if the data extends to infinity.
    pub reach: Option<f64>,
    pub f_tail: PowerTail,
    pub g_tail: PowerTail,
}

impl fmt::Debug for RadialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialData")
            .field("reach", &self.reach)
            .field("f_tail", &self.f_tail)
            .field("g_tail", &self.g_tail)
            .finish_non_exhaustive()
    }
}

impl RadialData {
    pub fn bumps(field: &[Bump], velocity: &[Bump]) -> Self {
        let fb = field.to_vec();
        let fb2 = field.to_vec();
        let vb = velocity.to_vec();
        let reach = field.iter().chain(velocity).map(|b| b.support().1).fold(1.0, f64::max);
        Self {
            f: Arc::new(move |r| fb.iter().map(|b| b.eval(r)).sum()),
            f_r: Arc::new(move |r| fb2.iter().map(|b| b.deriv(r)).sum()),
            g: Arc::new(move |r| vb.iter().map(|b| b.eval(r)).sum()),
            reach: Some(reach),
            f_tail: PowerTail::default(),
            g_tail: PowerTail::default(),
        }
    }

    /// The element `(r^{2i-d}, 0)` (or `(0, r^{2i-d})` when `velocity` is set)
    /// of `P(R)`, switched on smoothly between `r = 1` and `r = R`.
    pub fn resonance(d: i64, radius: f64, i: usize, velocity: bool) -> Result<Self> {
        let fam = cauchy::coefficients(d)?;
        let count = if velocity { fam.k } else { fam.ktilde };
        if i == 0 || i > count {
            return Err(Error::InvalidArgument(format!(
                "index {i} outside 1..={count} for d = {d}"
            )));
        }
        if !(radius > 1.0) {
            return Err(Error::InvalidRadius(radius));
        }
        let e = (2 * i as i64 - d) as f64;
        let span = radius - 1.0;
        let chi = move |r: f64| smooth_step((r - 1.0) / span);
        let chi_r = move |r: f64| smooth_step_deriv((r - 1.0) / span) / span;
        let value: RadialFn = Arc::new(move |r| r.powf(e) * chi(r));
        let slope: RadialFn = Arc::new(move |r| e * r.powf(e - 1.0) * chi(r) + r.powf(e) * chi_r(r));
        let zero: RadialFn = Arc::new(|_| 0.0);
        let tail = PowerTail::new(vec![(1.0, e)]);
        Ok(if velocity {
            Self { f: zero.clone(), f_r: zero, g: value, reach: None, f_tail: PowerTail::default(), g_tail: tail }
        } else {
            Self { f: value, f_r: slope, g: zero, reach: None, f_tail: tail, g_tail: PowerTail::default() }
        })
    }

    /// Two random bumps in each component, supported in `[R, R + span]`.
    pub fn random(rng: &mut impl Rng, radius: f64, span: f64) -> Self {
        let pick = |rng: &mut dyn rand::RngCore| {
            let width = rng.gen_range(0.3..=(0.5 * span).min(1.5));
            let center = rng.gen_range(radius + width..=radius + span - width);
            Bump::new(rng.gen_range(-1.0..=1.0), center, width)
        };
        let f = [pick(rng), pick(rng)];
        let g = [pick(rng), pick(rng)];
        Self::bumps(&f, &g)
    }

    /// `(f, -g)`: the data whose forward evolution is the backward one.
    fn reversed(&self) -> Self {
        let g = self.g.clone();
        Self { g: Arc::new(move |r| -g(r)), g_tail: self.g_tail.negated(), ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub enum ChannelData {
    /// Descent-generated data; evolved by the exact oracle.
    Seeds(SeedPair),
    /// Anything else; evolved numerically by the linear evolver.
    Sampled(RadialData),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelOptions {
    /// Grid spacing for numeric runs.
    pub dr: f64,
    pub cfl: f64,
    /// Sampling interval of the exterior energies.
    pub cadence: f64,
    /// A limit is flagged if it still changes by more than `plateau_tolerance`
    /// (relative) per unit time over the last `plateau_window`.
    pub plateau_window: f64,
    pub plateau_tolerance: f64,
    /// Also run to `2T` and report the change of the limits.
    pub doubling: bool,
    /// Nodes for the quadratures of the exact path and the projection.
    pub quad_points: usize,
    /// Extra room between the data and the outer edge of numeric runs.
    pub margin: f64,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        Self {
            dr: 0.01,
            cfl: 0.5,
            cadence: 0.5,
            plateau_window: 1.0,
            plateau_tolerance: 0.01,
            doubling: false,
            quad_points: 8001,
            margin: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMethod {
    Exact,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelReport {
    pub dim: u32,
    pub radius: f64,
    pub horizon: f64,
    pub method: ChannelMethod,
    pub times: Vec<f64>,
    pub exterior_energy_plus: Vec<f64>,
    pub exterior_energy_minus: Vec<f64>,
    pub total_norm_sq: f64,
    pub proj_norm_sq: f64,
    pub perp_norm_sq: f64,
    /// Exterior energies at `t = +-T`.
    pub limit_plus: f64,
    pub limit_minus: f64,
    /// `max(limit_plus, limit_minus) / perp_norm_sq`; `None` when the data is
    /// numerically inside `P(R)`.
    pub ratio: Option<f64>,
    /// Relative change per unit time over the last window before `T`.
    pub plateau_rate: f64,
    pub plateau_flagged: bool,
    /// `|E(2T) - E(T)| / E(T)`, the larger of both directions.
    pub doubling_change: Option<f64>,
    /// Exact `t -> +-inf` limits, for descent-generated data.
    pub analytic_limits: Option<(f64, f64)>,
    pub oracle_residual: Option<f64>,
    pub tail_flagged: bool,
    pub quadrature_failure: bool,
}

impl ChannelReport {
    pub fn max_limit(&self) -> f64 {
        self.limit_plus.max(self.limit_minus)
    }

    /// Exterior energy left at `+-T` as a fraction of the one at `t = 0`.
    pub fn terminal_fraction(&self) -> f64 {
        let e0 = self.exterior_energy_plus[0];
        if e0 > 0.0 {
            self.max_limit() / e0
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `time,plus,minus` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,exterior_plus,exterior_minus\n");
        for ((t, p), m) in self.times.iter().zip(&self.exterior_energy_plus).zip(&self.exterior_energy_minus) {
            out.push_str(&format!("{t:.6},{p:.15e},{m:.15e}\n"));
        }
        out
    }
}

struct Series {
    times: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

fn sample_times(t_end: f64, cadence: f64) -> Vec<f64> {
    let steps = (t_end / cadence).round().max(1.0) as usize;
    (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect()
}

fn exact_series(wave: &FreeWave, radius: f64, t_end: f64, opts: &ChannelOptions) -> Series {
    let times = sample_times(t_end, opts.cadence);
    let plus = times.iter().map(|&t| wave.exterior_energy(radius, t, opts.quad_points)).collect();
    let minus = times.iter().map(|&t| wave.exterior_energy(radius, -t, opts.quad_points)).collect();
    Series { times, plus, minus }
}

/// Largest plug-back residual of the oracle over the region the report
/// integrates, relative to the size of `u_tt` there.
fn oracle_residual(wave: &FreeWave, radius: f64, t_end: f64) -> f64 {
    let lo = radius.min(wave.seeds.data_start()).max(radius * 0.5).max(0.5);
    let hi = wave.seeds.data_end() + t_end;
    let mut res: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for k in 0..=4 {
        let t = t_end * k as f64 / 4.0;
        for s in [t, -t] {
            for i in 0..=400 {
                let r = lo + (hi - lo) * i as f64 / 400.0;
                res = res.max(wave.residual(s, r).abs());
                scale = scale.max(wave.value(s, r).u.abs());
            }
        }
    }
    res / scale
}

fn numeric_series(d: u32, radius: f64, data: &RadialData, t_end: f64, opts: &ChannelOptions) -> Result<Series> {
    let r_max = match data.reach {
        Some(reach) => reach.max(radius) + t_end + opts.margin,
        None => radius + 2.0 * t_end + opts.margin,
    };
    let ev = Evolver::linear(d, RadialGrid::with_spacing(r_max, opts.dr)?)?;
    let probes = ProbeSet { cadence: opts.cadence, radii: vec![radius], keep_snapshots: false };
    let run_opts = EvolveOptions { cfl: opts.cfl, probes, r_interest: Some(radius) };
    let mut out = Vec::new();
    for dat in [data.clone(), data.reversed()] {
        let mut s = ev.rest_state();
        let n = s.field.len();
        let f1 = (dat.f)(1.0);
        if f1.abs() > 1e-12 || (dat.g)(1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("data must vanish at r = 1 (f(1) = {f1})")));
        }
        for i in 1..n {
            let r = ev.grid().r(i);
            s.field[i] = (dat.f)(r);
            if i < n - 1 {
                s.velocity[i] = (dat.g)(r);
            }
        }
        let run = ev.evolve(&s, t_end, &run_opts).map_err(|e| e.error)?;
        let series: Vec<(f64, f64)> = run.ledger.rows.iter().map(|r| (r.time, r.local[0].exterior)).collect();
        out.push(series);
    }
    let times = out[0].iter().map(|p| p.0).collect();
    let plus = out[0].iter().map(|p| p.1).collect();
    let minus = out[1].iter().map(|p| p.1).collect();
    Ok(Series { times, plus, minus })
}

fn value_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    let i = times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map_or(0, |p| p.0);
    values[i]
}

/// Exterior energies `int_{r >= R + |t|} (u_t^2 + u_r^2) r^{d-1} dr` of the free
/// wave with the given data, for `0 <= t <= T` in both time directions.
pub fn channel_experiment(
    d: i64,
    radius: f64,
    data: &ChannelData,
    horizon: f64,
    opts: &ChannelOptions,
) -> Result<ChannelReport> {
    let dim = cauchy::check_dimension(d)?;
    if !(radius >= 1.0) || !radius.is_finite() {
        return Err(Error::InvalidRadius(radius));
    }
    if !(horizon > opts.plateau_window) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must exceed the plateau window {}",
            opts.plateau_window
        )));
    }
    let t_end = if opts.doubling { 2.0 * horizon } else { horizon };
    let basis = build_basis(d, radius)?;

    let (method, series, analytic, residual, exterior) = match data {
        ChannelData::Seeds(seeds) => {
            let wave = FreeWave::new(dim, seeds.clone())?;
            let res = oracle_residual(&wave, radius, t_end);
            if res > 1e-8 {
                return Err(Error::NotConverged(format!("free-wave oracle plug-back residual {res:e}")));
            }
            let end = seeds.data_end();
            if !(end > radius) {
                return Err(Error::InvalidArgument(format!("data ends at {end}, inside R = {radius}")));
            }
            let grid = RadialGrid::exterior(radius, end, opts.quad_points)?;
            let u = ExteriorData::from_fns(
                dim,
                grid,
                |r| wave.value(0.0, r).u,
                |r| wave.value(0.0, r).u_r,
                |r| wave.value(0.0, r).u_t,
            )?;
            let series = exact_series(&wave, radius, t_end, opts);
            let limits = wave.exterior_limits(radius, opts.quad_points);
            (ChannelMethod::Exact, series, Some(limits), Some(res), u)
        }
        ChannelData::Sampled(rd) => {
            let series = numeric_series(dim, radius, rd, t_end, opts)?;
            let end = match rd.reach {
                Some(reach) => reach,
                None => radius + 2.0 * t_end + opts.margin,
            };
            if !(end > radius) {
                return Err(Error::InvalidArgument(format!("data ends at {end}, inside R = {radius}")));
            }
            let grid = RadialGrid::exterior(radius, end, opts.quad_points)?;
            let (f, f_r, g) = (rd.f.clone(), rd.f_r.clone(), rd.g.clone());
            let u = ExteriorData::from_fns(dim, grid, |r| f(r), |r| f_r(r), |r| g(r))?
                .with_tail(rd.f_tail.clone(), rd.g_tail.clone());
            (ChannelMethod::Numeric, series, None, None, u)
        }
    };

    let split = norm_via_identity(&exterior, &basis)?;
    let limit_plus = value_at(&series.times, &series.plus, horizon);
    let limit_minus = value_at(&series.times, &series.minus, horizon);
    let rate = |values: &[f64], lim: f64| {
        let before = value_at(&series.times, values, horizon - opts.plateau_window);
        if lim > 0.0 {
            (lim - before).abs() / (lim * opts.plateau_window)
        } else {
            0.0
        }
    };
    let plateau_rate = rate(&series.plus, limit_plus).max(rate(&series.minus, limit_minus));
    let doubling_change = opts.doubling.then(|| {
        let change = |values: &[f64], lim: f64| {
            let later = *values.last().unwrap_or(&lim);
            if lim > 0.0 {
                (later - lim).abs() / lim
            } else {
                0.0
            }
        };
        change(&series.plus, limit_plus).max(change(&series.minus, limit_minus))
    });
    let max_limit = limit_plus.max(limit_minus);
    let ratio = (split.perp_norm_sq > 1e-12 * split.total_norm_sq).then(|| max_limit / split.perp_norm_sq);

    Ok(ChannelReport {
        dim,
        radius,
        horizon,
        method,
        times: series.times,
        exterior_energy_plus: series.plus,
        exterior_energy_minus: series.minus,
        total_norm_sq: split.total_norm_sq,
        proj_norm_sq: split.proj_norm_sq,
        perp_norm_sq: split.perp_norm_sq,
        limit_plus,
        limit_minus,
        ratio,
        plateau_rate,
        plateau_flagged: plateau_rate > opts.plateau_tolerance,
        doubling_change,
        analytic_limits: analytic,
        oracle_residual: residual,
        tail_flagged: split.tail_flagged,
        quadrature_failure: split.quadrature_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::freewave::PolyBump;

    #[test]
    fn smooth_step_derivative_matches_difference() {
        for x in [0.1, 0.37, 0.5, 0.81] {
            let h = 1e-6;
            let fd = (smooth_step(x + h) - smooth_step(x - h)) / (2.0 * h);
            assert!((smooth_step_deriv(x) - fd).abs() < 1e-7);
        }
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn even_seed_splits_energy_evenly() {
        let seeds = SeedPair::even(PolyBump::new(1.0, 4.0, 1.0, 12));
        let rep = channel_experiment(5, 2.0, &ChannelData::Seeds(seeds), 10.0, &ChannelOptions::default()).unwrap();
        assert_eq!(rep.method, ChannelMethod::Exact);
        let ratio = rep.ratio.unwrap();
        assert!((ratio - 0.5).abs() < 1e-6, "ratio {ratio}");
        assert!(!rep.plateau_flagged);
        let (p, m) = rep.analytic_limits.unwrap();
        assert!((p - rep.limit_plus).abs() < 1e-6 * p);
        assert!((m - rep.limit_minus).abs() < 1e-6 * m);
    }

    #[test]
    fn rejects_data_not_vanishing_at_one() {
        let d = RadialData {
            f: Arc::new(|_| 1.0),
            f_r: Arc::new(|_| 0.0),
            g: Arc::new(|_| 0.0),
            reach: Some(3.0),
            f_tail: PowerTail::default(),
            g_tail: PowerTail::default(),
        };
        let opts = ChannelOptions { dr: 0.05, ..Default::default() };
        assert!(channel_experiment(3, 2.0, &ChannelData::Sampled(d), 4.0, &opts).is_err());
    }

    #[test]
    fn numeric_bump_in_three_dimensions() {
        // (f, 0) in d = 3: the exterior energy at late times is half the total.
        let data = RadialData::bumps(&[Bump::new(1.0, 4.0, 1.0)], &[]);
        let opts = ChannelOptions { dr: 0.01, ..Default::default() };
        let rep = channel_experiment(3, 2.0, &ChannelData::Sampled(data), 8.0, &opts).unwrap();
        let ratio = rep.ratio.unwrap();
        assert!((ratio - 0.5).abs() < 0.01, "ratio {ratio}");
        assert!((rep.limit_plus - rep.limit_minus).abs() < 1e-6 * rep.limit_plus);
    }
}
