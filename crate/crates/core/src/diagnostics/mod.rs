//! Channel experiments, scattering metrics, coefficient tracks and the
//! spectral check.

pub mod channels;
pub mod freewave;
pub mod spectral;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolver::{Direction, Evolver, Form, WaveState, CAUSAL_MARGIN_NODES};
use crate::harmonic::HarmonicMapProfile;
use crate::projection::{build_basis, project_coefficients, reconstruction_residual, ExteriorData, ProjectionBasis};
use crate::quadrature::derivative4;

pub use channels::{channel_experiment, ChannelData, ChannelMethod, ChannelOptions, ChannelReport, RadialData};
pub use freewave::{free_wave_exact, FreeWave, FreeWaveValue, PolyBump, SeedPair};
pub use spectral::{spectral_check, SpectralCheck, SpectralOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatteringSample {
    pub time: f64,
    /// Squared deviation norms of `psi - Q` over `[1, R]`, `[R, R + |t|]` and
    /// `[R + |t|, edge]`.
    pub core: f64,
    pub annulus: f64,
    pub exterior: f64,
    /// Squared u-form norm over `[R + |t|, edge]`.
    pub exterior_u: f64,
}

/// Deviation from the harmonic map along a run, split at `R` and `R + |t|`.
pub fn scattering_metrics(
    snapshots: &[WaveState],
    profile: &HarmonicMapProfile,
    radius: f64,
) -> Result<Vec<ScatteringSample>> {
    let Some(first) = snapshots.first() else { return Ok(Vec::new()) };
    let grid = first.grid;
    let psi = Evolver::wave_map(Form::Psi, grid, profile)?;
    let uf = Evolver::wave_map(Form::U, grid, profile)?;
    let edge = grid.r_max() - CAUSAL_MARGIN_NODES * grid.dr();
    snapshots
        .iter()
        .map(|s| {
            let (ps, us) = match s.form {
                Form::Psi => (s.clone(), psi.convert(s, Direction::PsiToU)?),
                Form::U => (uf.convert(s, Direction::UToPsi)?, s.clone()),
            };
            let front = (radius + s.time.abs()).min(edge);
            Ok(ScatteringSample {
                time: s.time,
                core: psi.local_norm_sq(&ps, 1.0, radius)?,
                annulus: psi.local_norm_sq(&ps, radius, front)?,
                exterior: psi.local_norm_sq(&ps, front, edge)?,
                exterior_u: uf.local_norm_sq(&us, front, edge)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackRow {
    pub time: f64,
    pub radius: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub tail_flagged: bool,
    /// Relative mismatch of the moments rebuilt from the coefficients.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoefficientTracks {
    pub dim: u32,
    pub rows: Vec<TrackRow>,
}

impl CoefficientTracks {
    /// `t,R,j,lambda,mu,tail_flagged,residual`; a blank cell where the family
    /// has no `j`-th member.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,R,j,lambda,mu,tail_flagged,residual\n");
        for row in &self.rows {
            let n = row.lambda.len().max(row.mu.len());
            for j in 0..n {
                let cell = |v: Option<&f64>| v.map_or(String::new(), |x| format!("{x:.15e}"));
                out.push_str(&format!(
                    "{:.6},{:.6},{},{},{},{},{:.3e}\n",
                    row.time,
                    row.radius,
                    j + 1,
                    cell(row.lambda.get(j)),
                    cell(row.mu.get(j)),
                    row.tail_flagged,
                    row.residual
                ));
            }
        }
        out
    }

    /// `sup_{R >= r_min} |lambda_j(t, R)| R^{2j - (d+2)/2}` for each time.
    pub fn weighted_lambda_sup(&self, j: usize, r_min: f64) -> Vec<(f64, f64)> {
        let e = 2.0 * j as f64 - (self.dim as f64 + 2.0) / 2.0;
        let mut by_time: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for row in self.rows.iter().filter(|r| r.radius >= r_min - 1e-9) {
            let Some(l) = row.lambda.get(j - 1) else { continue };
            let v = l.abs() * row.radius.powf(e);
            let entry = by_time.entry(row.time.to_bits()).or_insert((row.time, 0.0));
            entry.1 = entry.1.max(v);
        }
        let mut out: Vec<(f64, f64)> = by_time.into_values().collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    pub fn max_residual(&self) -> f64 {
        self.rows.iter().filter(|r| !r.tail_flagged).map(|r| r.residual).fold(0.0, f64::max)
    }
}

/// `lambda_j(t, R)`, `mu_j(t, R)` of u-form snapshots on the given radii. The
/// exterior mesh for radius `R` runs from the first node at or above `R` to
/// the causal edge; the reported radius is that node.
pub fn track_projection_coefficients(snapshots: &[WaveState], radii: &[f64]) -> Result<CoefficientTracks> {
    let Some(first) = snapshots.first() else { return Ok(CoefficientTracks::default()) };
    let dim = first.dim();
    let grid = first.grid;
    let end = grid.len() - 1 - CAUSAL_MARGIN_NODES as usize;
    let mut meshes: Vec<(usize, ProjectionBasis)> = Vec::with_capacity(radii.len());
    for &radius in radii {
        let i0 = grid.index_at_or_above(radius);
        let sub = grid.slice(i0, end)?;
        meshes.push((i0, build_basis(dim as i64, sub.r_min())?));
    }
    let mut rows = Vec::with_capacity(snapshots.len() * radii.len());
    for s in snapshots {
        if s.form != Form::U {
            return Err(Error::StateMismatch("coefficient tracks need u-form snapshots".into()));
        }
        if s.grid != grid || s.dim() != dim {
            return Err(Error::StateMismatch("snapshots must share one grid and dimension".into()));
        }
        let u_r = derivative4(&s.field, grid.dr());
        for (i0, basis) in &meshes {
            let sub = grid.slice(*i0, end)?;
            let data = ExteriorData::with_derivative(
                dim,
                sub,
                s.field[*i0..=end].to_vec(),
                u_r[*i0..=end].to_vec(),
                s.velocity[*i0..=end].to_vec(),
            )?;
            let c = project_coefficients(&data, basis)?;
            let residual = reconstruction_residual(&data, &c, basis)?;
            rows.push(TrackRow {
                time: s.time,
                radius: basis.radius,
                lambda: c.lambda,
                mu: c.mu,
                tail_flagged: c.tail_flagged,
                residual,
            });
        }
    }
    Ok(CoefficientTracks { dim, rows })
}
