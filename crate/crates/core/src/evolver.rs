//! Method-of-lines evolution of the exterior wave map.
//!
//! Both forms are written as `w(r) z_tt = (w z_r)_r - w P'(z)` with weight
//! `w = r^2` (psi-form) or `w = r^{d-1}` (u-form), and discretised with the
//! conservative three-point operator
//!
//! `Lap z_i = [w_{i+1/2}(z_{i+1} - z_i) - w_{i-1/2}(z_i - z_{i-1})] / (dr^2 w_i)`.
//!
//! The semi-discrete energy built from the same weights is conserved exactly
//! when both end nodes are pinned. Time stepping is classical RK4.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::harmonic::{kappa, HarmonicMapProfile};
use crate::quadrature::{derivative4, simpson};

pub const DEFAULT_CFL: f64 = 0.5;
pub const MAX_CFL: f64 = 0.8;
/// Nodes kept between the region of interest and the outer boundary.
pub const CAUSAL_MARGIN_NODES: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Form {
    Psi,
    U,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveState {
    pub form: Form,
    pub grid: RadialGrid,
    pub field: Vec<f64>,
    pub velocity: Vec<f64>,
    pub time: f64,
    pub ell: u32,
    pub degree: u32,
}

impl WaveState {
    /// Spatial dimension of the u-form reduction, `2l + 3`.
    pub fn dim(&self) -> u32 {
        2 * self.ell + 3
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if self.field.len() != n || self.velocity.len() != n {
            return Err(Error::StateMismatch(format!(
                "field/velocity lengths {}/{} do not match the {n}-point grid",
                self.field.len(),
                self.velocity.len()
            )));
        }
        if self.grid.r_min() != 1.0 {
            return Err(Error::InvalidGrid("evolution grids start at r = 1".into()));
        }
        if self.field[0] != 0.0 || self.velocity[0] != 0.0 {
            return Err(Error::StateMismatch("Dirichlet condition at r = 1 violated".into()));
        }
        if let Some(i) = self.field.iter().chain(&self.velocity).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: i % n, time: self.time });
        }
        Ok(())
    }
}

/// Smooth compactly supported bump `A exp(1 - 1/(1 - x^2))`, `x = (r - c)/w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl Bump {
    pub fn new(amplitude: f64, center: f64, width: f64) -> Self {
        Self { amplitude, center, width }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.width, self.center + self.width)
    }

    pub fn eval(&self, r: f64) -> f64 {
        let x = (r - self.center) / self.width;
        if x.abs() >= 1.0 || self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * (1.0 - 1.0 / (1.0 - x * x)).exp()
    }

    pub fn deriv(&self, r: f64) -> f64 {
        let x = (r - self.center) / self.width;
        if x.abs() >= 1.0 || self.amplitude == 0.0 {
            return 0.0;
        }
        let q = 1.0 - x * x;
        self.eval(r) * (-2.0 * x / (q * q)) / self.width
    }

    pub fn second_deriv(&self, r: f64) -> f64 {
        let x = (r - self.center) / self.width;
        if x.abs() >= 1.0 || self.amplitude == 0.0 {
            return 0.0;
        }
        let q = 1.0 - x * x;
        let w2 = self.width * self.width;
        self.eval(r) * (4.0 * x * x / q.powi(4) - 2.0 / (q * q) - 8.0 * x * x / q.powi(3)) / w2
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub field: Option<Bump>,
    pub velocity: Option<Bump>,
}

impl Perturbation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn field(b: Bump) -> Self {
        Self { field: Some(b), velocity: None }
    }

    /// Largest radius touched by the perturbation (1 if none).
    pub fn reach(&self) -> f64 {
        [self.field, self.velocity].iter().flatten().map(|b| b.support().1).fold(1.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    PsiToU,
    UToPsi,
}

/// Pieces of the semi-discrete energy. `total` is the conserved quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyParts {
    pub kinetic: f64,
    pub gradient: f64,
    pub potential: f64,
    pub total: f64,
}

/// Simpson-quadrature energy of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyComponents {
    pub kinetic: f64,
    pub gradient: f64,
    pub potential: f64,
    pub total: f64,
    /// `<Hu, u> = int (u_r^2 + V u^2) r^{d-1} dr`, u-form only.
    pub quadratic_form: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    WaveMap,
    Linear,
}

/// Discretised equation on a fixed grid, with the harmonic map background
/// precomputed at the nodes.
#[derive(Debug, Clone)]
pub struct Evolver {
    kind: Kind,
    form: Form,
    grid: RadialGrid,
    ell: u32,
    degree: u32,
    kappa: f64,
    r: Vec<f64>,
    w: Vec<f64>,
    w_half: Vec<f64>,
    r_ell: Vec<f64>,
    q: Vec<f64>,
    sin2q: Vec<f64>,
    cos2q: Vec<f64>,
    potential_v: Vec<f64>,
    balance: Vec<f64>,
}

fn weights(grid: &RadialGrid, p: i32) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = grid.radii();
    let w = r.iter().map(|x| x.powi(p)).collect();
    let w_half = (0..grid.len() - 1)
        .map(|i| (0.5 * (r[i] + r[i + 1])).powi(p))
        .collect();
    (r, w, w_half)
}

fn lap(z: &[f64], w: &[f64], w_half: &[f64], dr: f64, i: usize) -> f64 {
    (w_half[i] * (z[i + 1] - z[i]) - w_half[i - 1] * (z[i] - z[i - 1])) / (dr * dr * w[i])
}

/// `2x - sin 2x` without cancellation for small `x`.
fn two_x_minus_sin(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        x * x2 * (4.0 / 3.0 - x2 * (4.0 / 15.0 - x2 * 8.0 / 315.0))
    } else {
        2.0 * x - (2.0 * x).sin()
    }
}

impl Evolver {
    /// Wave-map dynamics around `Q_{l,n}` in either form.
    pub fn wave_map(form: Form, grid: RadialGrid, profile: &HarmonicMapProfile) -> Result<Self> {
        if grid.r_min() != 1.0 {
            return Err(Error::InvalidGrid("evolution grids start at r = 1".into()));
        }
        let ell = profile.ell;
        let p = match form {
            Form::Psi => 2,
            Form::U => 2 * ell as i32 + 2,
        };
        let (r, w, w_half) = weights(&grid, p);
        let k = kappa(ell);
        let mut q = Vec::with_capacity(r.len());
        let mut sin2q = Vec::with_capacity(r.len());
        let mut cos2q = Vec::with_capacity(r.len());
        let mut potential_v = Vec::with_capacity(r.len());
        for &x in &r {
            let d = profile.delta_at_r(x)?;
            q.push(if x == 1.0 { 0.0 } else { profile.target() - d });
            sin2q.push(-(2.0 * d).sin());
            cos2q.push((2.0 * d).cos());
            potential_v.push(-4.0 * k * d.sin().powi(2) / (x * x));
        }
        let mut balance = vec![0.0; r.len()];
        if form == Form::Psi {
            let dr = grid.dr();
            for i in 1..r.len() - 1 {
                balance[i] = lap(&q, &w, &w_half, dr, i) - k * (2.0 * q[i]).sin() / (r[i] * r[i]);
            }
        }
        let r_ell = r.iter().map(|x| x.powi(ell as i32)).collect();
        Ok(Self {
            kind: Kind::WaveMap,
            form,
            grid,
            ell,
            degree: profile.n,
            kappa: k,
            r,
            w,
            w_half,
            r_ell,
            q,
            sin2q,
            cos2q,
            potential_v,
            balance,
        })
    }

    /// Drops the discrete-residual correction of the psi-form, leaving the
    /// bare centred scheme.
    pub fn without_balance(mut self) -> Self {
        self.balance.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    /// Free radial wave `u_tt = u_rr + (d-1)/r u_r` in odd dimension `d >= 3`.
    pub fn linear(dim: u32, grid: RadialGrid) -> Result<Self> {
        crate::cauchy::check_dimension(dim as i64)?;
        if grid.r_min() != 1.0 {
            return Err(Error::InvalidGrid("evolution grids start at r = 1".into()));
        }
        let (r, w, w_half) = weights(&grid, dim as i32 - 1);
        let n = r.len();
        Ok(Self {
            kind: Kind::Linear,
            form: Form::U,
            grid,
            ell: (dim - 3) / 2,
            degree: 0,
            kappa: 0.0,
            r,
            w,
            w_half,
            r_ell: vec![1.0; n],
            q: vec![0.0; n],
            sin2q: vec![0.0; n],
            cos2q: vec![1.0; n],
            potential_v: vec![0.0; n],
            balance: vec![0.0; n],
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn is_linear(&self) -> bool {
        self.kind == Kind::Linear
    }

    pub fn dim(&self) -> u32 {
        2 * self.ell + 3
    }

    /// `Q` at the nodes (zero for the linear model).
    pub fn background(&self) -> &[f64] {
        &self.q
    }

    /// `V(r_i)` at the nodes.
    pub fn potential(&self) -> &[f64] {
        &self.potential_v
    }

    /// `(F(r_i, u_i), G(r_i, u_i))`.
    pub fn nonlinear_terms(&self, i: usize, u: f64) -> (f64, f64) {
        if self.kind == Kind::Linear {
            return (0.0, 0.0);
        }
        let phi = self.r_ell[i] * u;
        let scale = self.kappa / (self.r_ell[i] * self.r[i] * self.r[i]);
        let f = 2.0 * scale * phi.sin().powi(2) * self.sin2q[i];
        let g = scale * two_x_minus_sin(phi) * self.cos2q[i];
        (f, g)
    }

    /// A zero-deviation state: `(Q, 0)` in psi-form, `(0, 0)` in u-form.
    pub fn rest_state(&self) -> WaveState {
        let n = self.grid.len();
        let field = match self.form {
            Form::Psi => self.q.clone(),
            Form::U => vec![0.0; n],
        };
        WaveState {
            form: self.form,
            grid: self.grid,
            field,
            velocity: vec![0.0; n],
            time: 0.0,
            ell: self.ell,
            degree: self.degree,
        }
    }

    fn check_state(&self, state: &WaveState) -> Result<()> {
        if state.form != self.form || state.grid != self.grid || state.ell != self.ell {
            return Err(Error::StateMismatch(format!(
                "state ({:?}, l={}, {} nodes) does not match the evolver ({:?}, l={}, {} nodes)",
                state.form,
                state.ell,
                state.grid.len(),
                self.form,
                self.ell,
                self.grid.len()
            )));
        }
        if self.kind == Kind::WaveMap && state.degree != self.degree {
            return Err(Error::StateMismatch(format!(
                "degree {} vs background degree {}",
                state.degree, self.degree
            )));
        }
        Ok(())
    }

    fn accel_into(&self, z: &[f64], out: &mut [f64]) {
        let n = z.len();
        let dr = self.grid.dr();
        out[0] = 0.0;
        out[n - 1] = 0.0;
        match (self.kind, self.form) {
            (Kind::Linear, _) => {
                for i in 1..n - 1 {
                    out[i] = lap(z, &self.w, &self.w_half, dr, i);
                }
            }
            (Kind::WaveMap, Form::Psi) => {
                for i in 1..n - 1 {
                    let r2 = self.r[i] * self.r[i];
                    out[i] = lap(z, &self.w, &self.w_half, dr, i)
                        - self.kappa * (2.0 * z[i]).sin() / r2
                        - self.balance[i];
                }
            }
            (Kind::WaveMap, Form::U) => {
                for i in 1..n - 1 {
                    let (f, g) = self.nonlinear_terms(i, z[i]);
                    out[i] = lap(z, &self.w, &self.w_half, dr, i) - self.potential_v[i] * z[i] + f + g;
                }
            }
        }
    }

    pub fn acceleration(&self, state: &WaveState) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut out = vec![0.0; state.field.len()];
        self.accel_into(&state.field, &mut out);
        Ok(out)
    }

    /// One RK4 step. `|dt|` must not exceed `0.8 dr`; negative `dt` runs backwards.
    pub fn step(&self, state: &WaveState, dt: f64) -> Result<WaveState> {
        self.check_state(state)?;
        let limit = MAX_CFL * self.grid.dr();
        if !(dt.abs() <= limit * (1.0 + 1e-12)) {
            return Err(Error::Cfl { dt, limit });
        }
        let n = state.field.len();
        let u = &state.field;
        let v = &state.velocity;
        let h = 0.5 * dt;
        let mut a1 = vec![0.0; n];
        let mut a2 = vec![0.0; n];
        let mut a3 = vec![0.0; n];
        let mut a4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.accel_into(u, &mut a1);
        for i in 0..n {
            tmp[i] = u[i] + h * v[i];
        }
        self.accel_into(&tmp, &mut a2);
        for i in 0..n {
            tmp[i] = u[i] + h * (v[i] + h * a1[i]);
        }
        self.accel_into(&tmp, &mut a3);
        for i in 0..n {
            tmp[i] = u[i] + dt * (v[i] + h * a2[i]);
        }
        self.accel_into(&tmp, &mut a4);
        let mut field = vec![0.0; n];
        let mut velocity = vec![0.0; n];
        for i in 0..n {
            // velocity stages: v, v + h a1, v + h a2, v + dt a3
            field[i] = u[i] + dt * v[i] + dt * dt / 6.0 * (a1[i] + a2[i] + a3[i]);
            velocity[i] = v[i] + dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
        }
        let time = state.time + dt;
        if let Some(i) = field.iter().chain(&velocity).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { node: i % n, time });
        }
        Ok(WaveState { field, velocity, time, ..state.clone() })
    }

    /// Potential energy density at node `i` (already multiplied by the weight).
    fn potential_density(&self, i: usize, z: f64) -> f64 {
        match (self.kind, self.form) {
            (Kind::Linear, _) => 0.0,
            (Kind::WaveMap, Form::Psi) => {
                self.kappa * z.sin().powi(2) + self.w[i] * self.balance[i] * (z - self.q[i])
            }
            (Kind::WaveMap, Form::U) => {
                let phi = self.r_ell[i] * z;
                let sin_sum = self.sin2q[i] * phi.cos() + self.cos2q[i] * phi.sin();
                self.kappa * (sin_sum * phi.sin() - phi * self.sin2q[i] - phi * phi)
            }
        }
    }

    /// The conserved semi-discrete energy.
    pub fn discrete_energy(&self, state: &WaveState) -> Result<EnergyParts> {
        self.check_state(state)?;
        let n = state.field.len();
        let dr = self.grid.dr();
        let z = &state.field;
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for i in 1..n - 1 {
            kinetic += 0.5 * self.w[i] * dr * state.velocity[i].powi(2);
            potential += dr * self.potential_density(i, z[i]);
        }
        let gradient: f64 = (0..n - 1).map(|i| 0.5 * self.w_half[i] * (z[i + 1] - z[i]).powi(2) / dr).sum();
        Ok(EnergyParts { kinetic, gradient, potential, total: kinetic + gradient + potential })
    }

    /// Simpson-quadrature energy over `[1, r_max]`.
    pub fn energy(&self, state: &WaveState) -> Result<EnergyComponents> {
        self.check_state(state)?;
        let dr = self.grid.dr();
        let z = &state.field;
        let zr = derivative4(z, dr);
        let dens = |f: &dyn Fn(usize) -> f64| simpson(&(0..z.len()).map(f).collect::<Vec<_>>(), dr);
        let kinetic = dens(&|i| 0.5 * self.w[i] * state.velocity[i].powi(2));
        let gradient = dens(&|i| 0.5 * self.w[i] * zr[i].powi(2));
        let potential = match (self.kind, self.form) {
            (Kind::Linear, _) => 0.0,
            (Kind::WaveMap, Form::Psi) => dens(&|i| self.kappa * z[i].sin().powi(2)),
            (Kind::WaveMap, Form::U) => dens(&|i| self.potential_density(i, z[i])),
        };
        let quadratic_form = (self.form == Form::U).then(|| {
            dens(&|i| (zr[i].powi(2) + self.potential_v[i] * z[i].powi(2)) * self.w[i])
        });
        Ok(EnergyComponents {
            kinetic,
            gradient,
            potential,
            total: kinetic + gradient + potential,
            quadratic_form,
        })
    }

    /// Squared local norm of the deviation from the background over `a <= r <= b`.
    /// psi-form: `int (phi_t^2 + phi_r^2 + l(l+1) phi^2 / r^2) r^2 dr` with `phi = psi - Q`;
    /// u-form: `int (u_t^2 + u_r^2) r^{d-1} dr`.
    pub fn local_norm_sq(&self, state: &WaveState, a: f64, b: f64) -> Result<f64> {
        self.check_state(state)?;
        let dr = self.grid.dr();
        let lo = self.grid.index_at_or_above(a.max(1.0));
        let hi = self.grid.index_at_or_below(b.min(self.grid.r_max()));
        if hi <= lo {
            return Ok(0.0);
        }
        let dev: Vec<f64> = match self.form {
            Form::Psi => state.field.iter().zip(&self.q).map(|(p, q)| p - q).collect(),
            Form::U => state.field.clone(),
        };
        let dz = derivative4(&dev, dr);
        let dens: Vec<f64> = (lo..=hi)
            .map(|i| {
                let mut e = state.velocity[i].powi(2) + dz[i].powi(2);
                if self.form == Form::Psi {
                    e += 2.0 * self.kappa * dev[i].powi(2) / (self.r[i] * self.r[i]);
                }
                e * self.w[i]
            })
            .collect();
        Ok(simpson(&dens, dr))
    }

    /// Outer-edge energy flux `-w (z_r) z_t` at the last node.
    pub fn outer_flux(&self, state: &WaveState) -> f64 {
        let n = state.field.len();
        let zr = (state.field[n - 1] - state.field[n - 2]) / self.grid.dr();
        -self.w_half[n - 2] * zr * state.velocity[n - 1]
    }

    /// `psi_0 = Q + bump`, `psi_1 = velocity bump`, converted to the evolver's form.
    pub fn make_initial_data(&self, pert: &Perturbation) -> Result<WaveState> {
        let rmax = self.grid.r_max();
        for b in [pert.field, pert.velocity].iter().flatten() {
            let (lo, hi) = b.support();
            if !b.amplitude.is_finite() || !(b.width > 0.0) || !b.center.is_finite() {
                return Err(Error::InvalidArgument(format!("bad perturbation {b:?}")));
            }
            if lo < 1.0 || hi >= rmax {
                return Err(Error::InvalidArgument(format!(
                    "perturbation support [{lo}, {hi}] must lie inside [1, {rmax})"
                )));
            }
        }
        let bump = |b: &Option<Bump>, i: usize| b.map_or(0.0, |b| b.eval(self.r[i]));
        let n = self.grid.len();
        let mut field = vec![0.0; n];
        let mut velocity = vec![0.0; n];
        for i in 0..n {
            let scale = if self.form == Form::U && self.kind == Kind::WaveMap { self.r_ell[i] } else { 1.0 };
            field[i] = bump(&pert.field, i) / scale;
            velocity[i] = bump(&pert.velocity, i) / scale;
            if self.form == Form::Psi {
                field[i] += self.q[i];
            }
        }
        field[0] = 0.0;
        velocity[0] = 0.0;
        velocity[n - 1] = 0.0;
        let state = WaveState {
            form: self.form,
            grid: self.grid,
            field,
            velocity,
            time: 0.0,
            ell: self.ell,
            degree: self.degree,
        };
        state.validate()?;
        if self.kind == Kind::WaveMap {
            let end = self.endpoint_angle(&state);
            if (end - self.degree as f64 * PI).abs() > 0.1 {
                return Err(Error::InvalidArgument(format!(
                    "initial data ends at {end}, not within 0.1 of {} pi",
                    self.degree
                )));
            }
        }
        Ok(state)
    }

    /// `psi(r_max)`, whichever form the state is in.
    pub fn endpoint_angle(&self, state: &WaveState) -> f64 {
        let n = state.field.len();
        match self.form {
            Form::Psi => state.field[n - 1],
            Form::U => self.q[n - 1] + self.r_ell[n - 1] * state.field[n - 1],
        }
    }

    /// Conversion between `psi` and `u = (psi - Q) / r^l` on this evolver's grid.
    pub fn convert(&self, state: &WaveState, direction: Direction) -> Result<WaveState> {
        if self.kind != Kind::WaveMap {
            return Err(Error::StateMismatch("conversion needs a wave-map background".into()));
        }
        if state.grid != self.grid || state.ell != self.ell || state.degree != self.degree {
            return Err(Error::StateMismatch(format!(
                "state (l={}, n={}) vs background (l={}, n={})",
                state.ell, state.degree, self.ell, self.degree
            )));
        }
        let (from, to) = match direction {
            Direction::PsiToU => (Form::Psi, Form::U),
            Direction::UToPsi => (Form::U, Form::Psi),
        };
        if state.form != from {
            return Err(Error::StateMismatch(format!("expected a {from:?}-form state")));
        }
        let n = state.field.len();
        let (field, velocity) = match direction {
            Direction::PsiToU => (
                (0..n).map(|i| (state.field[i] - self.q[i]) / self.r_ell[i]).collect(),
                (0..n).map(|i| state.velocity[i] / self.r_ell[i]).collect(),
            ),
            Direction::UToPsi => (
                (0..n).map(|i| self.q[i] + self.r_ell[i] * state.field[i]).collect(),
                (0..n).map(|i| self.r_ell[i] * state.velocity[i]).collect(),
            ),
        };
        Ok(WaveState { form: to, field, velocity, ..state.clone() })
    }
}

/// `psi_rr + (2/r) psi_r - l(l+1) sin(2 psi) / (2 r^2)` for a psi-form state.
pub fn rhs_psi(state: &WaveState, profile: &HarmonicMapProfile) -> Result<Vec<f64>> {
    if state.form != Form::Psi {
        return Err(Error::StateMismatch("rhs_psi needs a psi-form state".into()));
    }
    Evolver::wave_map(Form::Psi, state.grid, profile)?.acceleration(state)
}

/// `u_rr + (d-1)/r u_r - V u + F + G` for a u-form state.
pub fn rhs_u(state: &WaveState, profile: &HarmonicMapProfile) -> Result<Vec<f64>> {
    if state.form != Form::U {
        return Err(Error::StateMismatch("rhs_u needs a u-form state".into()));
    }
    Evolver::wave_map(Form::U, state.grid, profile)?.acceleration(state)
}

pub fn convert_psi_u(state: &WaveState, profile: &HarmonicMapProfile, direction: Direction) -> Result<WaveState> {
    let form = match direction {
        Direction::PsiToU => Form::Psi,
        Direction::UToPsi => Form::U,
    };
    Evolver::wave_map(form, state.grid, profile)?.convert(state, direction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    /// Time between ledger rows.
    pub cadence: f64,
    /// Radii `R` for the core `[1, R]` and exterior `[R + t, r_max - margin]` norms.
    pub radii: Vec<f64>,
    pub keep_snapshots: bool,
}

impl Default for ProbeSet {
    fn default() -> Self {
        Self { cadence: 1.0, radii: vec![5.0], keep_snapshots: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalEnergy {
    pub radius: f64,
    /// Squared norm over `1 <= r <= R`.
    pub core: f64,
    /// Squared norm over `r >= R + |t|`, cut at the causal edge.
    pub exterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub time: f64,
    pub total: f64,
    pub kinetic: f64,
    pub gradient: f64,
    pub potential: f64,
    pub local: Vec<LocalEnergy>,
    /// Energy that has left through the outer edge so far.
    pub cumulative_flux: f64,
    /// `psi(t, r_max)`; `None` for the linear model.
    pub endpoint: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    /// Largest `|E(t) - E(0) + flux(t)| / E(0)`.
    pub fn conservation_error(&self) -> f64 {
        let Some(first) = self.rows.first() else { return 0.0 };
        let e0 = first.total;
        let scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
        self.rows
            .iter()
            .map(|r| (r.total - e0 + r.cumulative_flux).abs() / scale)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,total,kinetic,gradient,potential,flux\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}\n",
                r.time, r.total, r.kinetic, r.gradient, r.potential, r.cumulative_flux
            ));
        }
        out
    }

    /// `time,R,core,exterior` rows.
    pub fn channel_csv(&self) -> String {
        let mut out = String::from("time,R,core,exterior\n");
        for r in &self.rows {
            for l in &r.local {
                out.push_str(&format!("{:.6},{},{:.15e},{:.15e}\n", r.time, l.radius, l.core, l.exterior));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub cfl: f64,
    pub probes: ProbeSet,
    /// Radius that must stay causally isolated from the outer edge; defaults
    /// to the largest probe radius.
    pub r_interest: Option<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { cfl: DEFAULT_CFL, probes: ProbeSet::default(), r_interest: None }
    }
}

#[derive(Debug, Clone)]
pub struct EvolveRun {
    pub final_state: WaveState,
    pub ledger: EnergyLedger,
    pub snapshots: Vec<WaveState>,
}

/// Failed run: the error plus the last state that was still finite.
#[derive(Debug)]
pub struct EvolveFailure {
    pub error: Error,
    pub last_good: Option<WaveState>,
}

impl From<Error> for EvolveFailure {
    fn from(error: Error) -> Self {
        Self { error, last_good: None }
    }
}

impl Evolver {
    fn ledger_row(&self, state: &WaveState, probes: &ProbeSet, cumulative_flux: f64) -> Result<LedgerRow> {
        let parts = self.discrete_energy(state)?;
        let edge = self.grid.r_max() - CAUSAL_MARGIN_NODES * self.grid.dr();
        let t = state.time.abs();
        let local = probes
            .radii
            .iter()
            .map(|&radius| {
                Ok(LocalEnergy {
                    radius,
                    core: self.local_norm_sq(state, 1.0, radius)?,
                    exterior: self.local_norm_sq(state, radius + t, edge)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LedgerRow {
            time: state.time,
            total: parts.total,
            kinetic: parts.kinetic,
            gradient: parts.gradient,
            potential: parts.potential,
            local,
            cumulative_flux,
            endpoint: (self.kind == Kind::WaveMap).then(|| self.endpoint_angle(state)),
        })
    }

    /// Advances to `state.time + T` (or backwards for negative `T`).
    pub fn evolve(&self, state: &WaveState, t_total: f64, opts: &EvolveOptions) -> Result<EvolveRun, EvolveFailure> {
        self.check_state(state)?;
        state.validate()?;
        if !(opts.cfl > 0.0) || opts.cfl > MAX_CFL {
            return Err(Error::Cfl { dt: opts.cfl * self.grid.dr(), limit: MAX_CFL * self.grid.dr() }.into());
        }
        let dr = self.grid.dr();
        let r_interest = opts
            .r_interest
            .unwrap_or_else(|| opts.probes.radii.iter().copied().fold(1.0, f64::max));
        let required = r_interest + t_total.abs() + CAUSAL_MARGIN_NODES * dr;
        if self.grid.r_max() < required {
            return Err(Error::Causality { rmax: self.grid.r_max(), required }.into());
        }
        let steps = (t_total.abs() / (opts.cfl * dr)).ceil().max(if t_total == 0.0 { 0.0 } else { 1.0 }) as usize;
        let dt = if steps == 0 { 0.0 } else { t_total / steps as f64 };
        let every = if dt == 0.0 { 1 } else { ((opts.probes.cadence / dt.abs()).round() as usize).max(1) };

        let mut ledger = EnergyLedger::default();
        let mut snapshots = Vec::new();
        let mut flux = 0.0;
        let mut cur = state.clone();
        let mut prev_flux_rate = self.outer_flux(&cur);
        ledger.rows.push(self.ledger_row(&cur, &opts.probes, flux)?);
        if opts.probes.keep_snapshots {
            snapshots.push(cur.clone());
        }
        for k in 1..=steps {
            let next = match self.step(&cur, dt) {
                Ok(s) => s,
                Err(error) => return Err(EvolveFailure { error, last_good: Some(cur) }),
            };
            cur = next;
            let rate = self.outer_flux(&cur);
            flux += 0.5 * (prev_flux_rate + rate) * dt;
            prev_flux_rate = rate;
            if k % every == 0 || k == steps {
                ledger.rows.push(self.ledger_row(&cur, &opts.probes, flux)?);
                if opts.probes.keep_snapshots {
                    snapshots.push(cur.clone());
                }
            }
        }
        Ok(EvolveRun { final_state: cur, ledger, snapshots })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"WVCK";

/// Little-endian checkpoint: header `{form u8, ell u32, n u32, time f64,
/// npoints u64, dr f64}` followed by the field and velocity arrays.
pub fn checkpoint_bytes(state: &WaveState) -> Vec<u8> {
    let n = state.field.len();
    let mut out = Vec::with_capacity(4 + 33 + 16 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(match state.form {
        Form::Psi => 0,
        Form::U => 1,
    });
    out.extend_from_slice(&state.ell.to_le_bytes());
    out.extend_from_slice(&state.degree.to_le_bytes());
    out.extend_from_slice(&state.time.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&state.grid.dr().to_le_bytes());
    for v in state.field.iter().chain(&state.velocity) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn state_from_checkpoint(bytes: &[u8]) -> Result<WaveState> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 37 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing header"));
    }
    let mut pos = 4;
    let mut take = |k: usize| {
        let s = &bytes[pos..pos + k];
        pos += k;
        s
    };
    let form = match take(1)[0] {
        0 => Form::Psi,
        1 => Form::U,
        other => return Err(bad(&format!("unknown form tag {other}"))),
    };
    let ell = u32::from_le_bytes(take(4).try_into().unwrap());
    let degree = u32::from_le_bytes(take(4).try_into().unwrap());
    let time = f64::from_le_bytes(take(8).try_into().unwrap());
    let n = u64::from_le_bytes(take(8).try_into().unwrap()) as usize;
    let dr = f64::from_le_bytes(take(8).try_into().unwrap());
    if bytes.len() != 37 + 16 * n {
        return Err(bad(&format!("expected {} bytes for {n} nodes, found {}", 37 + 16 * n, bytes.len())));
    }
    let read = |from: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let o = from + 8 * i;
                f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap())
            })
            .collect()
    };
    let field = read(37);
    let velocity = read(37 + 8 * n);
    let grid = RadialGrid::from_spacing(n, dr)?;
    let state = WaveState { form, grid, field, velocity, time, ell, degree };
    state.validate()?;
    Ok(state)
}

pub fn write_checkpoint(path: &Path, state: &WaveState) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<WaveState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    state_from_checkpoint(&bytes)
}
