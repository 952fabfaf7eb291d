//! Runs validated experiment configs and writes their artifacts.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cauchy::{self, CauchyMatrix, Rational};
use crate::config::{ChannelDataKind, ChannelParams, EvolveParams, ExperimentConfig, Params, ProjectionParams};
use crate::diagnostics::{
    self, channel_experiment, ChannelData, ChannelOptions, ChannelReport, PolyBump, RadialData, SeedPair,
    SpectralOptions,
};
use crate::error::{Error, Result};
use crate::evolver::{self, Bump, Direction, EvolveOptions, Evolver, Form, Perturbation, ProbeSet, WaveState, CAUSAL_MARGIN_NODES};
use crate::grid::RadialGrid;
use crate::harmonic::{self, ShootOptions};
use crate::projection::{apply_projection, build_basis, project_coefficients, ExteriorData, PowerTail};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub config_hash: String,
    pub tool_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<ProducedFile>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Files that are missing or whose checksum no longer matches.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| match fs::read(dir.join(&f.path)) {
                Ok(bytes) => sha256_hex(&bytes) != f.sha256,
                Err(_) => true,
            })
            .map(|f| f.path.clone())
            .collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Write-then-rename into the output directory; remembers what it wrote so a
/// failed run can be rolled back.
struct Outputs {
    dir: PathBuf,
    files: Vec<ProducedFile>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        // A stale manifest must not outlive the files it lists.
        let manifest = dir.join(MANIFEST_NAME);
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
        }
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(rel);
        write_atomic(&target, bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ProducedFile { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    fn rollback(&self) {
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(&f.path));
        }
    }
}

pub fn write_atomic(target: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = target.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, target).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(target, e)
    })
}

/// Executes the experiment. On failure every file this run produced is
/// removed and no manifest is written.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let started = unix_now();
    let mut out = Outputs::new(&config.output_dir)?;
    let result = match &config.params {
        Params::TabulateCoefficients(p) => run_tabulate(p, config.seed, &mut out),
        Params::Shoot(p) => run_shoot(p, &mut out),
        Params::Evolve(p) => run_evolve(p, &mut out),
        Params::Channels(p) => run_channels(p, config.seed, &mut out),
        Params::Spectral(p) => run_spectral(p, config.seed, &mut out),
        Params::Sweep(p) => run_sweep(p, &mut out),
        Params::Projection(p) => run_projection(p, config.seed, &mut out),
    };
    if let Err(e) = result {
        out.rollback();
        return Err(e);
    }
    let mut files = out.files.clone();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        kind: config.kind().name().to_string(),
        config_hash: config.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    if let Err(e) = write_atomic(&config.output_dir.join(MANIFEST_NAME), text.as_bytes()) {
        out.rollback();
        return Err(e);
    }
    Ok(manifest)
}

/// Independent stream per job, so parallel execution order does not matter.
pub fn job_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update(t.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_string_pretty(v)?.into_bytes())
}

// ---------------------------------------------------------------- algebra

/// Distinct random rationals `p/q` with `|p| <= 40`, `1 <= q <= 12`, avoiding `forbidden`.
fn random_nodes(rng: &mut impl Rng, m: usize, forbidden: &[Rational]) -> Vec<Rational> {
    let mut out: Vec<Rational> = Vec::with_capacity(m);
    while out.len() < m {
        let v = cauchy::rat(rng.gen_range(-40..=40), rng.gen_range(1..=12));
        if !out.contains(&v) && !forbidden.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// A random Cauchy matrix of size `1..=max_size`.
pub fn random_cauchy(rng: &mut impl Rng, max_size: usize) -> CauchyMatrix {
    let m = rng.gen_range(1..=max_size);
    let x = random_nodes(rng, m, &[]);
    let y = random_nodes(rng, m, &x);
    CauchyMatrix::new(x, y).expect("nodes are distinct by construction")
}

#[derive(Debug, Clone, Serialize)]
struct CauchyCheck {
    index: usize,
    size: usize,
    inverse_exact: bool,
    determinant: String,
}

fn run_tabulate(p: &crate::config::TabulateParams, seed: u64, out: &mut Outputs) -> Result<()> {
    let rows = cauchy::tabulate(p.dims.iter().copied())?;
    out.write("coefficients.csv", cauchy::table_csv(&rows).as_bytes())?;
    if p.verify {
        let mut csv = String::from("d,identity,holds,residual\n");
        let mut failures = Vec::new();
        for &d in &p.dims {
            let report = cauchy::verify_identities(&cauchy::coefficients(d)?);
            for c in &report.checks {
                csv.push_str(&format!("{d},{},{},{}\n", c.identity.label(), c.holds(), c.residual));
            }
            failures.extend(report.failures());
        }
        out.write("identities.csv", csv.as_bytes())?;
        if !failures.is_empty() {
            return Err(Error::NotConverged(failures.join("; ")));
        }
    }
    if p.cauchy_random > 0 {
        let mut checks = Vec::with_capacity(p.cauchy_random);
        for index in 0..p.cauchy_random {
            let mut rng = job_rng(seed, &[1, index as u64]);
            let m = random_cauchy(&mut rng, p.cauchy_max_size);
            let ok = cauchy::is_identity(&cauchy::mat_mul(&m.entries(), &m.inverse()));
            checks.push(CauchyCheck { index, size: m.size(), inverse_exact: ok, determinant: m.determinant().to_string() });
        }
        out.write("cauchy_checks.json", &json(&checks)?)?;
        if let Some(bad) = checks.iter().find(|c| !c.inverse_exact) {
            return Err(Error::NotConverged(format!("explicit Cauchy inverse wrong for matrix {}", bad.index)));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- shooting

#[derive(Debug, Clone, Serialize)]
pub struct ShootSummary {
    pub ell: u32,
    pub n: u32,
    pub shoot_param: f64,
    pub inward_param: f64,
    pub alpha0: f64,
    pub residual: f64,
    /// `alpha0` re-computed with the horizon doubled.
    pub alpha0_doubled: Option<f64>,
    /// Shooting parameter bisected over the wide bracket `[0, 1e4]`.
    pub wide_bracket_param: Option<f64>,
}

/// Shoots one harmonic map; with `checks` also at twice the horizon and over
/// a wide bracket, which must land on the same solution.
pub fn shoot_case(ell: u32, n: u32, opts: &ShootOptions, checks: bool) -> Result<(harmonic::HarmonicMapProfile, ShootSummary)> {
    let profile = harmonic::shoot_with(ell, n, opts)?;
    let residual = profile.residual();
    if residual > 1e-8 {
        return Err(Error::NotConverged(format!(
            "l={ell} n={n}: profile plug-back residual {residual:e} exceeds 1e-8"
        )));
    }
    let (alpha0_doubled, wide_bracket_param) = if checks {
        let doubled = ShootOptions { s_max: 2.0 * opts.s_max, ..opts.clone() };
        let a2 = harmonic::shoot_with(ell, n, &doubled)?.alpha0;
        let wide = if n == 0 { 0.0 } else { harmonic::bisect_shooting_parameter(ell, n, 0.0, 1e4, opts.s_max)? };
        (Some(a2), Some(wide))
    } else {
        (None, None)
    };
    let summary = ShootSummary {
        ell,
        n,
        shoot_param: profile.shoot_param,
        inward_param: profile.inward_param,
        alpha0: profile.alpha0,
        residual,
        alpha0_doubled,
        wide_bracket_param,
    };
    Ok((profile, summary))
}

fn run_shoot(p: &crate::config::ShootParams, out: &mut Outputs) -> Result<()> {
    let opts = ShootOptions { s_max: p.s_max, sample_step: p.sample_step, ..ShootOptions::default() };
    let results: Vec<_> = p
        .cases
        .par_iter()
        .map(|&(l, n)| shoot_case(l, n, &opts, p.checks))
        .collect::<Result<_>>()?;
    let mut csv = String::from("ell,n,shoot_param,inward_param,alpha0,residual,alpha0_doubled,wide_bracket_param\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
    for (profile, s) in &results {
        let stem = format!("profile_l{}_n{}", s.ell, s.n);
        out.write(&format!("{stem}.csv"), profile.to_csv(p.stride).as_bytes())?;
        out.write(&format!("{stem}.json"), &json(&profile.header())?)?;
        csv.push_str(&format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.3e},{},{}\n",
            s.ell,
            s.n,
            s.shoot_param,
            s.inward_param,
            s.alpha0,
            s.residual,
            opt(s.alpha0_doubled),
            opt(s.wide_bracket_param)
        ));
    }
    out.write("shoot_summary.csv", csv.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------- evolution

#[derive(Debug, Clone, Serialize)]
pub struct RelaxationSummary {
    pub ell: u32,
    pub degree: u32,
    pub amplitude: f64,
    pub final_time: f64,
    pub conservation_error: f64,
    /// `||psi - Q||_{H(1 <= r <= R)}` at the start and the end (norms, not squares).
    pub core_initial: f64,
    pub core_final: f64,
    pub core_ratio: f64,
    /// Largest `|psi(t, r_max) - n pi|` over the run.
    pub endpoint_deviation: f64,
    /// Endpoint stayed within 0.1 of `n pi`.
    pub degree_conserved: bool,
    /// Largest `sup_r |psi - Q|` over the sampled states.
    pub max_deviation: f64,
    /// Largest `|psi - Q|` ahead of the light cone `r >= reach + t + 2 dr`.
    pub leak: f64,
    /// Nodes past the light cone beyond which `|psi - Q| <= 1e-10` throughout.
    pub leak_clearance_nodes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub npoints: usize,
    pub dr: f64,
    /// Max error of the semi-discrete psi-form right-hand side against the
    /// closed form, for `psi = Q + bump`.
    pub operator_error: f64,
    /// `log2` of the operator error ratio to the previous (coarser) grid.
    pub operator_order: Option<f64>,
    /// Max `|psi - psi_finest|` at shared nodes after evolving to the
    /// convergence time; absent on the finest grid.
    pub solution_error: Option<f64>,
    pub solution_order: Option<f64>,
}

/// Refines the grid `levels - 1` times by halving `dr`. On each grid it
/// measures the psi-form operator on `Q + bump` against the closed form
/// `b'' + 2b'/r - l(l+1)(sin 2(Q+b) - sin 2Q)/(2r^2)` (using `L(Q) = 0`), and
/// evolves the same data to `time` for a comparison with the finest run.
pub fn grid_convergence(p: &EvolveParams, levels: usize, time: f64) -> Result<Vec<ConvergenceRow>> {
    if levels < 2 {
        return Err(Error::InvalidArgument("convergence needs at least two grids".into()));
    }
    let profile = harmonic::shoot(p.ell, p.degree)?;
    let b = Bump::new(if p.amplitude != 0.0 { p.amplitude } else { 0.3 }, p.center, p.width);
    let two_kappa = 2.0 * harmonic::kappa(p.ell);
    let opts = EvolveOptions {
        cfl: p.cfl,
        probes: ProbeSet { cadence: time, radii: vec![p.scattering_radius], keep_snapshots: false },
        r_interest: None,
    };
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    let mut finals = Vec::with_capacity(levels);
    for k in 0..levels {
        let npoints = (p.npoints - 1) * (1 << k) + 1;
        let grid = RadialGrid::new(p.rmax, npoints)?;
        let ev = Evolver::wave_map(Form::Psi, grid, &profile)?;
        let s = ev.make_initial_data(&Perturbation::field(b))?;
        let acc = ev.acceleration(&s)?;
        let q = ev.background();
        let mut operator_error: f64 = 0.0;
        for i in 1..npoints - 1 {
            let r = grid.r(i);
            let psi = q[i] + b.eval(r);
            let exact = b.second_deriv(r) + 2.0 * b.deriv(r) / r
                - two_kappa * ((2.0 * psi).sin() - (2.0 * q[i]).sin()) / (2.0 * r * r);
            operator_error = operator_error.max((acc[i] - exact).abs());
        }
        let operator_order = rows.last().map(|prev| (prev.operator_error / operator_error).log2());
        rows.push(ConvergenceRow {
            npoints,
            dr: grid.dr(),
            operator_error,
            operator_order,
            solution_error: None,
            solution_order: None,
        });
        finals.push(ev.evolve(&s, time, &opts).map_err(|f| f.error)?.final_state.field);
    }
    let finest = &finals[levels - 1];
    for k in 0..levels - 1 {
        let stride = 1 << (levels - 1 - k);
        let err = finals[k].iter().enumerate().map(|(i, v)| (v - finest[i * stride]).abs()).fold(0.0, f64::max);
        rows[k].solution_error = Some(err);
        if k > 0 {
            rows[k].solution_order = rows[k - 1].solution_error.map(|prev| (prev / err).log2());
        }
    }
    Ok(rows)
}

fn deviation_and_leak(ev: &Evolver, states: &[&WaveState], reach: f64) -> (f64, f64, f64) {
    let grid = ev.grid();
    let q = ev.background();
    let edge = grid.r_max() - CAUSAL_MARGIN_NODES * grid.dr();
    let (mut dev, mut leak, mut clearance) = (0.0f64, 0.0f64, 0.0f64);
    for s in states {
        let cone = reach + s.time.abs();
        let front = cone + 2.0 * grid.dr();
        for (i, &v) in s.field.iter().enumerate() {
            let r = grid.r(i);
            let d = match s.form {
                Form::Psi => (v - q[i]).abs(),
                Form::U => (v * r.powi(s.ell as i32)).abs(),
            };
            dev = dev.max(d);
            if r >= front && r <= edge {
                leak = leak.max(d);
            }
            if r > cone && r <= edge && d > 1e-10 {
                clearance = clearance.max((r - cone) / grid.dr());
            }
        }
    }
    (dev, leak, clearance)
}

pub struct EvolveOutcome {
    pub run: evolver::EvolveRun,
    pub summary: RelaxationSummary,
    pub profile: harmonic::HarmonicMapProfile,
    pub evolver: Evolver,
}

/// Evolves `Q + bump` for the given settings; snapshots are kept at the probe cadence
/// when `keep_snapshots` is set.
pub fn evolve_relaxation(p: &EvolveParams, keep_snapshots: bool) -> Result<EvolveOutcome> {
    let profile = harmonic::shoot(p.ell, p.degree)?;
    let grid = RadialGrid::new(p.rmax, p.npoints)?;
    let ev = Evolver::wave_map(p.form, grid, &profile)?;
    let bump = |a: f64| (a != 0.0).then(|| Bump::new(a, p.center, p.width));
    let pert = Perturbation { field: bump(p.amplitude), velocity: bump(p.velocity_amplitude) };
    let s0 = ev.make_initial_data(&pert)?;
    let mut radii = p.probe_radii.clone();
    if !radii.contains(&p.scattering_radius) {
        radii.insert(0, p.scattering_radius);
    }
    let opts = EvolveOptions {
        cfl: p.cfl,
        probes: ProbeSet { cadence: p.cadence, radii, keep_snapshots },
        r_interest: None,
    };
    let run = ev.evolve(&s0, p.t_final, &opts).map_err(|f| f.error)?;
    let core_at = |row: &evolver::LedgerRow| {
        row.local.iter().find(|l| l.radius == p.scattering_radius).map_or(0.0, |l| l.core.max(0.0).sqrt())
    };
    let first = &run.ledger.rows[0];
    let last = run.ledger.rows.last().unwrap_or(first);
    let target = p.degree as f64 * PI;
    let endpoint_deviation = run
        .ledger
        .rows
        .iter()
        .filter_map(|r| r.endpoint)
        .map(|e| (e - target).abs())
        .fold(0.0, f64::max);
    let core_initial = core_at(first);
    let core_final = core_at(last);
    let states: Vec<&WaveState> = run.snapshots.iter().chain(std::iter::once(&run.final_state)).collect();
    let (max_deviation, leak, leak_clearance_nodes) = deviation_and_leak(&ev, &states, pert.reach());
    let summary = RelaxationSummary {
        ell: p.ell,
        degree: p.degree,
        amplitude: p.amplitude,
        final_time: last.time,
        conservation_error: run.ledger.conservation_error(),
        core_initial,
        core_final,
        core_ratio: if core_initial > 0.0 { core_final / core_initial } else { 0.0 },
        endpoint_deviation,
        degree_conserved: endpoint_deviation <= 0.1,
        max_deviation,
        leak,
        leak_clearance_nodes,
    };
    Ok(EvolveOutcome { run, summary, profile, evolver: ev })
}

/// Projection-coefficient tracks of a run kept with snapshots.
pub fn coefficient_tracks(outcome: &EvolveOutcome, radii: &[f64]) -> Result<diagnostics::CoefficientTracks> {
    let u_states: Vec<WaveState> = match outcome.evolver.form() {
        Form::U => outcome.run.snapshots.clone(),
        Form::Psi => outcome
            .run
            .snapshots
            .iter()
            .map(|s| outcome.evolver.convert(s, Direction::PsiToU))
            .collect::<Result<_>>()?,
    };
    diagnostics::track_projection_coefficients(&u_states, radii)
}

fn checkpoint_name(t: f64) -> String {
    format!("checkpoints/t{t:010.4}.bin")
}

fn run_evolve(p: &EvolveParams, out: &mut Outputs) -> Result<()> {
    // scattering metrics always need the snapshots
    let outcome = evolve_relaxation(p, true)?;
    let run = &outcome.run;
    out.write("ledger.csv", run.ledger.to_csv().as_bytes())?;
    out.write("channels.csv", run.ledger.channel_csv().as_bytes())?;

    let metrics = diagnostics::scattering_metrics(&run.snapshots, &outcome.profile, p.scattering_radius)?;
    let mut csv = String::from("time,core,annulus,exterior,exterior_u\n");
    for m in &metrics {
        csv.push_str(&format!(
            "{:.6},{:.15e},{:.15e},{:.15e},{:.15e}\n",
            m.time, m.core, m.annulus, m.exterior, m.exterior_u
        ));
    }
    out.write("scattering.csv", csv.as_bytes())?;

    if !p.track_radii.is_empty() {
        let tracks = coefficient_tracks(&outcome, &p.track_radii)?;
        out.write("tracks.csv", tracks.to_csv().as_bytes())?;
    }

    if let Some(every) = p.checkpoint_every {
        let mut next = 0.0;
        for s in &run.snapshots {
            if s.time + 1e-9 >= next {
                out.write(&checkpoint_name(s.time), &evolver::checkpoint_bytes(s))?;
                next += every;
            }
        }
    }
    out.write(&checkpoint_name(run.final_state.time), &evolver::checkpoint_bytes(&run.final_state))?;
    if p.convergence_levels > 0 {
        let rows = grid_convergence(p, p.convergence_levels, p.convergence_time)?;
        let mut csv = String::from("npoints,dr,operator_error,operator_order,solution_error,solution_order\n");
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.10e}"));
        for c in &rows {
            csv.push_str(&format!(
                "{},{:.10e},{:.10e},{},{},{}\n",
                c.npoints,
                c.dr,
                c.operator_error,
                cell(c.operator_order),
                cell(c.solution_error),
                cell(c.solution_order)
            ));
        }
        out.write("convergence.csv", csv.as_bytes())?;
    }
    out.write("summary.json", &json(&outcome.summary)?)?;
    Ok(())
}

// ---------------------------------------------------------------- channels

/// Channel data for job `index` of a channel config in dimension `d`.
pub fn channel_data(p: &ChannelParams, d: u32, seed: u64, index: usize) -> Result<ChannelData> {
    Ok(match p.data {
        ChannelDataKind::EvenSeed => ChannelData::Seeds(SeedPair::even(PolyBump::new(1.0, p.center, p.width, p.power))),
        ChannelDataKind::OddSeed => ChannelData::Seeds(SeedPair::odd(PolyBump::new(1.0, p.center, p.width, p.power))),
        ChannelDataKind::BumpF => ChannelData::Sampled(RadialData::bumps(&[Bump::new(1.0, p.center, p.width)], &[])),
        ChannelDataKind::BumpG => ChannelData::Sampled(RadialData::bumps(&[], &[Bump::new(1.0, p.center, p.width)])),
        ChannelDataKind::Resonance => ChannelData::Sampled(RadialData::resonance(d as i64, p.radius, 1, false)?),
        ChannelDataKind::Random => {
            let mut rng = job_rng(seed, &[2, d as u64, index as u64]);
            ChannelData::Sampled(RadialData::random(&mut rng, p.radius, p.span))
        }
    })
}

pub fn channel_options(p: &ChannelParams) -> ChannelOptions {
    ChannelOptions {
        dr: p.dr,
        cadence: p.cadence,
        doubling: p.doubling,
        quad_points: p.quad_points,
        ..ChannelOptions::default()
    }
}

fn run_channels(p: &ChannelParams, seed: u64, out: &mut Outputs) -> Result<()> {
    let jobs: Vec<(u32, usize)> = p.dims.iter().flat_map(|&d| (0..p.count).map(move |i| (d, i))).collect();
    let opts = channel_options(p);
    let reports: Vec<ChannelReport> = jobs
        .par_iter()
        .map(|&(d, i)| channel_experiment(d as i64, p.radius, &channel_data(p, d, seed, i)?, p.horizon, &opts))
        .collect::<Result<_>>()?;
    let mut csv = String::from(
        "dim,index,total_norm_sq,perp_norm_sq,limit_plus,limit_minus,ratio,terminal_fraction,plateau_flagged\n",
    );
    for ((d, i), r) in jobs.iter().zip(&reports) {
        csv.push_str(&format!(
            "{d},{i},{:.15e},{:.15e},{:.15e},{:.15e},{},{:.6e},{}\n",
            r.total_norm_sq,
            r.perp_norm_sq,
            r.limit_plus,
            r.limit_minus,
            r.ratio.map_or(String::new(), |x| format!("{x:.15e}")),
            r.terminal_fraction(),
            r.plateau_flagged
        ));
    }
    out.write("channel_summary.csv", csv.as_bytes())?;
    out.write("channels.json", &json(&reports)?)?;
    Ok(())
}

// ---------------------------------------------------------------- spectral

fn run_spectral(p: &crate::config::SpectralParams, seed: u64, out: &mut Outputs) -> Result<()> {
    let opts = SpectralOptions { r_max: p.rmax, npoints: p.npoints, probes: p.probes, seed, ..Default::default() };
    let mut cases: Vec<(u32, Option<(u32, u32)>)> = p.free_dims.iter().map(|&d| (d, None)).collect();
    for &l in &p.ells {
        for &n in &p.degrees {
            cases.push((2 * l + 3, Some((l, n))));
        }
    }
    let checks: Vec<_> = cases
        .par_iter()
        .map(|&(d, ln)| match ln {
            Some((l, n)) => diagnostics::spectral_check(d, Some(&harmonic::shoot(l, n)?), &opts),
            None => diagnostics::spectral_check(d, None, &opts),
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("dim,ell,degree,smallest_eigenvalue,sturm_count_below,c1,c2\n");
    for c in &checks {
        let opt = |v: Option<u32>| v.map_or(String::new(), |x| x.to_string());
        csv.push_str(&format!(
            "{},{},{},{:.15e},{},{:.15e},{:.15e}\n",
            c.dim,
            opt(c.ell),
            opt(c.degree),
            c.smallest_eigenvalue,
            c.sturm_count_below,
            c.c1,
            c.c2
        ));
    }
    out.write("spectral_summary.csv", csv.as_bytes())?;
    out.write("spectral.json", &json(&checks)?)?;
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub ell: u32,
    pub degree: u32,
    pub amplitude: f64,
    pub cell_hash: String,
    pub summary: Option<RelaxationSummary>,
    pub error: Option<String>,
}

fn cell_hash(p: &EvolveParams) -> String {
    hex::encode(Sha256::digest(serde_json::to_string(p).unwrap_or_default().as_bytes()))
}

/// Runs every distinct `(ell, n, amplitude)` cell in parallel. A failing cell
/// is recorded and does not stop the others.
pub fn sweep_cells(p: &crate::config::SweepParams) -> Vec<(EvolveParams, Result<RelaxationSummary>)> {
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    for &ell in &p.ells {
        for &degree in &p.degrees {
            for &amplitude in &p.amplitudes {
                let cell = EvolveParams { ell, degree, amplitude, ..p.base.clone() };
                if seen.insert(cell_hash(&cell)) {
                    cells.push(cell);
                }
            }
        }
    }
    let work = || {
        cells
            .par_iter()
            .map(|c| (c.clone(), evolve_relaxation(c, false).map(|o| o.summary)))
            .collect::<Vec<_>>()
    };
    match p.threads.and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
        Some(pool) => pool.install(work),
        None => work(),
    }
}

fn run_sweep(p: &crate::config::SweepParams, out: &mut Outputs) -> Result<()> {
    let results = sweep_cells(p);
    let mut csv = String::from(
        "ell,degree,amplitude,cell,status,core_initial,core_final,core_ratio,conservation_error,degree_conserved,error\n",
    );
    let mut rows = Vec::with_capacity(results.len());
    for (cell, res) in results {
        let hash = cell_hash(&cell);
        match &res {
            Ok(s) => csv.push_str(&format!(
                "{},{},{},{},ok,{:.15e},{:.15e},{:.6e},{:.6e},{},\n",
                cell.ell,
                cell.degree,
                cell.amplitude,
                &hash[..12],
                s.core_initial,
                s.core_final,
                s.core_ratio,
                s.conservation_error,
                s.degree_conserved
            )),
            Err(e) => csv.push_str(&format!(
                "{},{},{},{},failed,,,,,,\"{}\"\n",
                cell.ell,
                cell.degree,
                cell.amplitude,
                &hash[..12],
                e.to_string().replace('"', "'")
            )),
        }
        rows.push(SweepRow {
            ell: cell.ell,
            degree: cell.degree,
            amplitude: cell.amplitude,
            cell_hash: hash,
            error: res.as_ref().err().map(|e| e.to_string()),
            summary: res.ok(),
        });
    }
    out.write("sweep.csv", csv.as_bytes())?;
    out.write("sweep.json", &json(&rows)?)?;
    Ok(())
}

// ---------------------------------------------------------------- projection

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionCheck {
    pub dim: u32,
    pub radius: f64,
    /// `||pi(pi u) - pi u|| / ||u||`, worst sample.
    pub idempotence: f64,
    /// `|<pi u, v> - <u, pi v>| / (||u|| ||v||)`.
    pub self_adjointness: f64,
    /// `| ||u||^2 - ||pi u||^2 - ||pi^perp u||^2 | / ||u||^2`.
    pub pythagoras: f64,
    /// `||pi^perp p|| / ||p||` for `p` in `P(R)`.
    pub annihilation: f64,
}

/// Random exterior data on `[R, R + 8]`: two bumps per component plus a
/// random element of `P(R)` carried with exact power tails.
pub fn random_exterior_data(
    rng: &mut impl Rng,
    d: u32,
    radius: f64,
    points: usize,
    with_bumps: bool,
) -> Result<ExteriorData> {
    let basis = build_basis(d as i64, radius)?;
    let span = 8.0;
    let pick = |rng: &mut dyn rand::RngCore| {
        let w = rng.gen_range(0.3..=1.5);
        let c = rng.gen_range(radius + w..=radius + span - w);
        Bump::new(rng.gen_range(-1.0..=1.0), c, w)
    };
    let (fb, gb): (Vec<Bump>, Vec<Bump>) = if with_bumps {
        (vec![pick(rng), pick(rng)], vec![pick(rng), pick(rng)])
    } else {
        (Vec::new(), Vec::new())
    };
    // basis elements scaled to unit norm, with random weights
    let lam: Vec<(f64, f64)> = (0..basis.ktilde)
        .map(|i| (rng.gen_range(-1.0..=1.0) / basis.gram_h1[i][i].sqrt(), basis.exponent(i + 1) as f64))
        .collect();
    let mu: Vec<(f64, f64)> = (0..basis.k)
        .map(|i| (rng.gen_range(-1.0..=1.0) / basis.gram_l2[i][i].sqrt(), basis.exponent(i + 1) as f64))
        .collect();
    let f_tail = PowerTail::new(lam);
    let g_tail = PowerTail::new(mu);
    let grid = RadialGrid::exterior(radius, radius + span, points)?;
    let u = ExteriorData::from_fns(
        d,
        grid,
        |r| fb.iter().map(|b| b.eval(r)).sum::<f64>() + f_tail.eval(r),
        |r| fb.iter().map(|b| b.deriv(r)).sum::<f64>() + f_tail.deriv(r),
        |r| gb.iter().map(|b| b.eval(r)).sum::<f64>() + g_tail.eval(r),
    )?;
    Ok(u.with_tail(f_tail, g_tail))
}

fn run_projection(p: &ProjectionParams, seed: u64, out: &mut Outputs) -> Result<()> {
    let mut jobs = Vec::new();
    for &d in &p.dims {
        for &r in &p.radii {
            jobs.push((d, r));
        }
    }
    let checks: Vec<ProjectionCheck> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(d, r))| {
            let mut rng = job_rng(seed, &[3, k as u64]);
            projection_check(&mut rng, d, r, p.samples, p.points)
        })
        .collect::<Result<_>>()?;
    out.write("projection.json", &json(&checks)?)?;
    Ok(())
}

fn difference(a: &ExteriorData, b: &ExteriorData) -> Result<ExteriorData> {
    let sub = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>();
    Ok(ExteriorData::with_derivative(a.dim, a.grid, sub(&a.f, &b.f), sub(a.f_r(), b.f_r()), sub(&a.g, &b.g))?
        .with_tail(a.f_tail.minus(&b.f_tail), a.g_tail.minus(&b.g_tail)))
}

/// Worst-case projection identities over `samples` random data.
pub fn projection_check(rng: &mut impl Rng, d: u32, radius: f64, samples: usize, points: usize) -> Result<ProjectionCheck> {
    let basis = build_basis(d as i64, radius)?;
    let mut chk = ProjectionCheck { dim: d, radius, idempotence: 0.0, self_adjointness: 0.0, pythagoras: 0.0, annihilation: 0.0 };
    for _ in 0..samples.max(1) {
        let u = random_exterior_data(rng, d, radius, points, true)?;
        let v = random_exterior_data(rng, d, radius, points, true)?;
        let nu = u.norm_sq()?;
        let nv = v.norm_sq()?;
        let (pu, perp_u) = apply_projection(&u, &project_coefficients(&u, &basis)?, &basis)?;
        let (pv, _) = apply_projection(&v, &project_coefficients(&v, &basis)?, &basis)?;
        let (ppu, _) = apply_projection(&pu, &project_coefficients(&pu, &basis)?, &basis)?;
        let idem = difference(&ppu, &pu)?.norm_sq()?.max(0.0).sqrt() / nu.sqrt();
        let sa = (pu.inner(&v)? - u.inner(&pv)?).abs() / (nu * nv).sqrt();
        let pyth = (nu - pu.norm_sq()? - perp_u.norm_sq()?).abs() / nu;
        chk.idempotence = chk.idempotence.max(idem);
        chk.self_adjointness = chk.self_adjointness.max(sa);
        chk.pythagoras = chk.pythagoras.max(pyth);
        if basis.k + basis.ktilde > 0 {
            let pr = random_exterior_data(rng, d, radius, points, false)?;
            let (_, perp) = apply_projection(&pr, &project_coefficients(&pr, &basis)?, &basis)?;
            let ann = perp.norm_sq()?.max(0.0).sqrt() / pr.norm_sq()?.sqrt();
            chk.annihilation = chk.annihilation.max(ann);
        }
    }
    Ok(chk)
}
