//! Dormand–Prince 5(4) embedded Runge–Kutta pair with step-size control.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

pub struct Dopri5<const N: usize, F> {
    rhs: F,
    pub atol: f64,
    pub rtol: f64,
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl<const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]> Dopri5<N, F> {
    pub fn new(rhs: F, atol: f64, rtol: f64) -> Self {
        Self { rhs, atol, rtol, h: 1e-3, accepted: 0, rejected: 0 }
    }

    /// Advances `(t, y)` to exactly `t_end`. The step size carries over between calls.
    pub fn advance(&mut self, t: &mut f64, y: &mut [f64; N], t_end: f64) -> Result<()> {
        let dir = if t_end >= *t { 1.0 } else { -1.0 };
        let mut k1 = (self.rhs)(*t, y);
        while (t_end - *t) * dir > 0.0 {
            let remaining = (t_end - *t).abs();
            let mut h = self.h.abs().min(remaining);
            let last = h >= remaining;
            let min_step = 1e-14 * t.abs().max(1.0);
            if h < min_step && !last {
                return Err(Error::Integration { s: *t, reason: format!("step size underflow (h = {h:e})") });
            }
            let hs = h * dir;
            let stage = |coef: &[(f64, &[f64; N])]| {
                let mut out = *y;
                for (c, k) in coef {
                    for i in 0..N {
                        out[i] += hs * c * k[i];
                    }
                }
                out
            };
            let k2 = (self.rhs)(*t + C2 * hs, &stage(&[(A21, &k1)]));
            let k3 = (self.rhs)(*t + C3 * hs, &stage(&[(A31, &k1), (A32, &k2)]));
            let k4 = (self.rhs)(*t + C4 * hs, &stage(&[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = (self.rhs)(*t + C5 * hs, &stage(&[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
            let k6 = (self.rhs)(
                *t + hs,
                &stage(&[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new = stage(&[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = (self.rhs)(*t + hs, &y_new);

            let mut err: f64 = 0.0;
            for i in 0..N {
                let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                h *= 0.1;
                self.h = h;
                self.rejected += 1;
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                *t = if last { t_end } else { *t + hs };
                *y = y_new;
                k1 = k7;
                self.accepted += 1;
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.rejected += 1;
                self.h = h * factor.min(1.0);
            }
        }
        Ok(())
    }
}
