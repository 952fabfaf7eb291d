//! Line-based experiment configs: `key = value`, `[section]` headers that
//! prefix the keys below them, `#` comments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::evolver::{Form, CAUSAL_MARGIN_NODES, MAX_CFL};

pub const OUTPUT_ROOT_ENV: &str = "WAVELAB_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// `None` for command-line overrides and missing keys.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Parsed but unvalidated key/value pairs.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigIssue>> {
        let mut entries = BTreeMap::new();
        let mut issues = Vec::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                match rest.strip_suffix(']') {
                    Some(name) if !name.trim().is_empty() => section = name.trim().to_string(),
                    _ => issues.push(ConfigIssue { line: Some(line), message: format!("malformed section header `{content}`") }),
                }
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                issues.push(ConfigIssue { line: Some(line), message: format!("expected `key = value`, got `{content}`") });
                continue;
            };
            let k = k.trim();
            if k.is_empty() {
                issues.push(ConfigIssue { line: Some(line), message: "empty key".into() });
                continue;
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            let entry = Entry { value: v.trim().to_string(), line: Some(line) };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                issues.push(ConfigIssue {
                    line: Some(line),
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line.unwrap_or(0)),
                });
            }
        }
        if issues.is_empty() {
            Ok(Self { entries })
        } else {
            Err(issues)
        }
    }

    /// Applies a `key=value` override, replacing any value from the file.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigIssue> {
        let Some((k, v)) = assignment.split_once('=') else {
            return Err(ConfigIssue { line: None, message: format!("override `{assignment}` is not key=value") });
        };
        self.entries.insert(k.trim().to_string(), Entry { value: v.trim().to_string(), line: None });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    TabulateCoefficients,
    Shoot,
    Evolve,
    Channels,
    Spectral,
    Sweep,
    Projection,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::TabulateCoefficients,
        Kind::Shoot,
        Kind::Evolve,
        Kind::Channels,
        Kind::Spectral,
        Kind::Sweep,
        Kind::Projection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::TabulateCoefficients => "tabulate-coefficients",
            Kind::Shoot => "shoot",
            Kind::Evolve => "evolve",
            Kind::Channels => "channels",
            Kind::Spectral => "spectral",
            Kind::Sweep => "sweep",
            Kind::Projection => "projection",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabulateParams {
    pub dims: Vec<i64>,
    pub verify: bool,
    /// Random Cauchy matrices whose explicit inverse is checked exactly.
    pub cauchy_random: usize,
    pub cauchy_max_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootParams {
    /// `(ell, n)` pairs.
    pub cases: Vec<(u32, u32)>,
    pub s_max: f64,
    pub sample_step: f64,
    /// Write every `stride`-th profile sample.
    pub stride: usize,
    /// Also re-shoot at twice the horizon and over a wide bracket.
    pub checks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolveParams {
    pub ell: u32,
    pub degree: u32,
    pub form: Form,
    pub rmax: f64,
    pub npoints: usize,
    pub cfl: f64,
    pub t_final: f64,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub velocity_amplitude: f64,
    pub probe_radii: Vec<f64>,
    pub cadence: f64,
    /// Checkpoint interval; the final state is always written.
    pub checkpoint_every: Option<f64>,
    /// Radii for projection-coefficient tracks; empty disables them.
    pub track_radii: Vec<f64>,
    pub scattering_radius: f64,
    /// Number of refined grids for the operator convergence study; 0 skips it.
    pub convergence_levels: usize,
    /// Evolution time of the refinement runs.
    pub convergence_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelDataKind {
    /// Descent seed with `F = G`: data `(f, 0)`.
    EvenSeed,
    /// Descent seed with `G = -F`: data `(0, g)`.
    OddSeed,
    BumpF,
    BumpG,
    /// Smoothly switched-on `(r^{2-d}, 0)`.
    Resonance,
    Random,
}

impl ChannelDataKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "even-seed" => Self::EvenSeed,
            "odd-seed" => Self::OddSeed,
            "bump-f" => Self::BumpF,
            "bump-g" => Self::BumpG,
            "resonance" => Self::Resonance,
            "random" => Self::Random,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelParams {
    pub dims: Vec<u32>,
    pub radius: f64,
    pub horizon: f64,
    pub data: ChannelDataKind,
    pub count: usize,
    pub center: f64,
    pub width: f64,
    pub power: u32,
    pub span: f64,
    pub dr: f64,
    pub cadence: f64,
    pub doubling: bool,
    pub quad_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralParams {
    pub ells: Vec<u32>,
    pub degrees: Vec<u32>,
    /// Dimensions checked with `V = 0`.
    pub free_dims: Vec<u32>,
    pub rmax: f64,
    pub npoints: usize,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepParams {
    pub ells: Vec<u32>,
    pub degrees: Vec<u32>,
    pub amplitudes: Vec<f64>,
    /// Shared evolution settings; `ell`, `degree`, `amplitude` are replaced per cell.
    pub base: EvolveParams,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionParams {
    pub dims: Vec<u32>,
    pub radii: Vec<f64>,
    pub samples: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Params {
    TabulateCoefficients(TabulateParams),
    Shoot(ShootParams),
    Evolve(EvolveParams),
    Channels(ChannelParams),
    Spectral(SpectralParams),
    Sweep(SweepParams),
    Projection(ProjectionParams),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub params: Params,
}

impl ExperimentConfig {
    pub fn kind(&self) -> Kind {
        match self.params {
            Params::TabulateCoefficients(_) => Kind::TabulateCoefficients,
            Params::Shoot(_) => Kind::Shoot,
            Params::Evolve(_) => Kind::Evolve,
            Params::Channels(_) => Kind::Channels,
            Params::Spectral(_) => Kind::Spectral,
            Params::Sweep(_) => Kind::Sweep,
            Params::Projection(_) => Kind::Projection,
        }
    }

    /// sha256 of the resolved parameters and seed; the output location is not part of it.
    pub fn hash(&self) -> String {
        let body = serde_json::json!({ "seed": self.seed, "params": self.params });
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }
}

/// Typed access that records every problem instead of stopping at the first.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: BTreeSet<String>,
    issues: Vec<ConfigIssue>,
}

impl<'a> Reader<'a> {
    fn line(&self, key: &str) -> Option<usize> {
        self.raw.entries.get(key).and_then(|e| e.line)
    }

    fn fail(&mut self, key: &str, message: String) {
        let line = self.line(key);
        self.issues.push(ConfigIssue { line, message });
    }

    fn value(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.raw.get(key).map(str::to_string)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let v = self.value(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.fail(key, format!("`{key}` must be {what}, got `{v}`"));
                None
            }
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> f64 {
        let v = self.parsed::<f64>(key, "a number").unwrap_or(default);
        if !v.is_finite() {
            self.fail(key, format!("`{key}` must be finite"));
        }
        v
    }

    fn usize_or(&mut self, key: &str, default: usize) -> usize {
        self.parsed(key, "a non-negative integer").unwrap_or(default)
    }

    fn u32_req(&mut self, key: &str) -> u32 {
        if self.raw.get(key).is_none() {
            self.used.insert(key.to_string());
            self.issues.push(ConfigIssue { line: None, message: format!("missing required key `{key}`") });
            return 0;
        }
        self.parsed(key, "a non-negative integer").unwrap_or(0)
    }

    fn bool_or(&mut self, key: &str, default: bool) -> bool {
        match self.value(key).as_deref() {
            None => default,
            Some("true" | "yes" | "1") => true,
            Some("false" | "no" | "0") => false,
            Some(other) => {
                self.fail(key, format!("`{key}` must be true or false, got `{other}`"));
                default
            }
        }
    }

    /// Comma-separated list; `a..b` expands to the odd (`odd = true`) or all
    /// integers between `a` and `b`.
    fn list<T: std::str::FromStr + Clone>(&mut self, key: &str, default: &[T], what: &str) -> Vec<T> {
        let Some(v) = self.value(key) else { return default.to_vec() };
        let mut out = Vec::new();
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.fail(key, format!("`{key}` must be a list of {what}, bad item `{item}`"));
                    return default.to_vec();
                }
            }
        }
        if out.is_empty() {
            self.fail(key, format!("`{key}` must not be empty"));
        }
        out
    }

    fn int_range(&mut self, key: &str, default: &[i64], odd: bool) -> Vec<i64> {
        let Some(v) = self.raw.get(key).map(str::to_string) else {
            self.used.insert(key.to_string());
            return default.to_vec();
        };
        if let Some((a, b)) = v.split_once("..") {
            self.used.insert(key.to_string());
            match (a.trim().parse::<i64>(), b.trim().parse::<i64>()) {
                (Ok(a), Ok(b)) if a <= b => {
                    return (a..=b).filter(|x| !odd || x.rem_euclid(2) == 1).collect();
                }
                _ => {
                    self.fail(key, format!("`{key}` range `{v}` must be `a..b` with a <= b"));
                    return default.to_vec();
                }
            }
        }
        self.list(key, default, "integers")
    }

    fn check(&mut self, key: &str, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            self.fail(key, message());
        }
    }

    fn dims(&mut self, key: &str, default: &[i64]) -> Vec<i64> {
        let dims = self.int_range(key, default, true);
        for &d in &dims {
            self.check(key, d >= 3 && d % 2 == 1 && d <= 31, || format!("dimension {d} must be odd with 3 <= d <= 31"));
        }
        dims
    }

    fn ell(&mut self, key: &str, v: u32, max: u32) {
        self.check(key, v >= 1, || format!("ell must be >= 1 (got {v})"));
        self.check(key, v <= max, || format!("ell must be <= {max} (got {v})"));
    }

    fn degree(&mut self, key: &str, v: u32, max: u32) {
        self.check(key, v <= max, || format!("degree must be <= {max} (got {v})"));
    }

    fn cfl(&mut self) -> f64 {
        let cfl = self.f64_or("cfl", 0.5);
        self.check("cfl", cfl > 0.0 && cfl <= MAX_CFL, || {
            format!(
                "cfl = {cfl} is outside (0, {MAX_CFL}]: the time step is cfl * dr, and RK4 with the \
                 three-point radial operator is only kept stable (with margin) for dt <= {MAX_CFL} dr"
            )
        });
        cfl
    }
}

fn evolve_block(r: &mut Reader, with_cell: bool) -> EvolveParams {
    let (ell, degree) = if with_cell {
        (1, 0)
    } else {
        let ell = r.u32_req("ell");
        r.ell("ell", ell, 4);
        let degree = if r.raw.get("n").is_some() { r.u32_req("n") } else { r.u32_req("degree") };
        r.degree(if r.raw.get("n").is_some() { "n" } else { "degree" }, degree, 3);
        (ell, degree)
    };
    let form = match r.value("form").as_deref() {
        None | Some("psi") => Form::Psi,
        Some("u") => Form::U,
        Some(other) => {
            r.fail("form", format!("form must be `psi` or `u`, got `{other}`"));
            Form::Psi
        }
    };
    let rmax = r.f64_or("grid.rmax", 41.0);
    let npoints = r.usize_or("grid.npoints", 8001);
    r.check("grid.rmax", rmax > 1.0, || format!("grid.rmax must exceed 1 (got {rmax})"));
    r.check("grid.npoints", npoints >= crate::grid::MIN_POINTS, || {
        format!("grid.npoints must be at least {} (got {npoints})", crate::grid::MIN_POINTS)
    });
    let cfl = r.cfl();
    let t_final = r.f64_or("T", 30.0);
    r.check("T", t_final > 0.0, || format!("T must be positive (got {t_final})"));
    let amplitude = if with_cell { 0.0 } else { r.f64_or("perturbation.amplitude", 0.0) };
    let center = r.f64_or("perturbation.center", 3.0);
    let width = r.f64_or("perturbation.width", 1.0);
    let velocity_amplitude = r.f64_or("perturbation.velocity_amplitude", 0.0);
    r.check("perturbation.width", width > 0.0, || format!("perturbation.width must be positive (got {width})"));
    r.check("perturbation.center", center - width >= 1.0 && center + width < rmax, || {
        format!("perturbation support [{}, {}] must lie in [1, grid.rmax)", center - width, center + width)
    });
    let probe_radii = r.list("probes.radii", &[5.0], "numbers");
    for &p in &probe_radii {
        r.check("probes.radii", p >= 1.0 && p < rmax, || format!("probe radius {p} must lie in [1, grid.rmax)"));
    }
    let cadence = r.f64_or("probes.cadence", 1.0);
    r.check("probes.cadence", cadence > 0.0, || format!("probes.cadence must be positive (got {cadence})"));
    let checkpoint_every = r.parsed::<f64>("checkpoint.every", "a number");
    if let Some(c) = checkpoint_every {
        r.check("checkpoint.every", c > 0.0, || format!("checkpoint.every must be positive (got {c})"));
    }
    let track_radii = if r.raw.get("tracks.radii").is_some() { r.list("tracks.radii", &[], "numbers") } else { Vec::new() };
    let scattering_radius = r.f64_or("scattering.radius", 5.0);
    let convergence_levels = r.usize_or("convergence.levels", 0);
    r.check("convergence.levels", convergence_levels == 0 || (3..=6).contains(&convergence_levels), || {
        format!("convergence.levels must be 0 or between 3 and 6 (got {convergence_levels})")
    });
    let convergence_time = r.f64_or("convergence.time", 5.0_f64.min(t_final));
    r.check("convergence.time", convergence_time > 0.0 && convergence_time <= t_final, || {
        format!("convergence.time must be in (0, T] (got {convergence_time})")
    });
    if npoints >= 2 && rmax > 1.0 {
        let dr = (rmax - 1.0) / (npoints - 1) as f64;
        let reach = probe_radii.iter().copied().fold(scattering_radius, f64::max);
        let need = reach + t_final + CAUSAL_MARGIN_NODES * dr;
        r.check("grid.rmax", rmax >= need, || {
            format!("grid.rmax = {rmax} is too small: radius {reach} must stay causally isolated up to T, needs >= {need}")
        });
    }
    EvolveParams {
        ell,
        degree,
        form,
        rmax,
        npoints,
        cfl,
        t_final,
        amplitude,
        center,
        width,
        velocity_amplitude,
        probe_radii,
        cadence,
        checkpoint_every,
        track_radii,
        scattering_radius,
        convergence_levels,
        convergence_time,
    }
}

fn check_writable(dir: &Path) -> std::result::Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))?;
    let probe = dir.join(".wavelab-write-probe");
    std::fs::write(&probe, b"").map_err(|e| format!("output directory {} is not writable: {e}", dir.display()))?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

/// Resolves `output.dir` against the output root (the environment variable,
/// if set, else the working directory).
pub fn resolve_output(dir: &str) -> PathBuf {
    let p = PathBuf::from(dir);
    if p.is_absolute() {
        return p;
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(p),
        None => p,
    }
}

/// Validates a raw config into an experiment, or reports every violation.
pub fn validate(raw: &RawConfig) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    let mut r = Reader { raw, used: BTreeSet::new(), issues: Vec::new() };
    let kind_name = r.value("kind");
    let Some(kind) = kind_name.as_deref().and_then(Kind::from_name) else {
        let names: Vec<_> = Kind::ALL.iter().map(|k| k.name()).collect();
        let message = match kind_name {
            Some(k) => format!("unknown kind `{k}`; expected one of {}", names.join(", ")),
            None => format!("missing required key `kind` (one of {})", names.join(", ")),
        };
        r.fail("kind", message);
        return Err(r.issues);
    };
    let seed = r.parsed("seed", "a non-negative integer").unwrap_or(0u64);
    let out = r.value("output.dir").unwrap_or_else(|| format!("out/{}", kind.name()));
    let output_dir = resolve_output(&out);

    let params = match kind {
        Kind::TabulateCoefficients => {
            let dims = r.dims("dims", &(3..=15).step_by(2).collect::<Vec<_>>());
            let verify = r.bool_or("verify", true);
            let cauchy_random = r.usize_or("cauchy.random", 0);
            let cauchy_max_size = r.usize_or("cauchy.max_size", 6);
            r.check("cauchy.max_size", (1..=12).contains(&cauchy_max_size), || {
                format!("cauchy.max_size must be in 1..=12 (got {cauchy_max_size})")
            });
            Params::TabulateCoefficients(TabulateParams { dims, verify, cauchy_random, cauchy_max_size })
        }
        Kind::Shoot => {
            let cases = if raw.get("ells").is_some() || raw.get("degrees").is_some() {
                let ells: Vec<u32> = r.int_range("ells", &[1], false).into_iter().map(|v| v.clamp(0, 99) as u32).collect();
                let degrees: Vec<u32> =
                    r.int_range("degrees", &[1], false).into_iter().map(|v| v.clamp(0, 99) as u32).collect();
                for &l in &ells {
                    r.ell("ells", l, 8);
                }
                for &n in &degrees {
                    r.degree("degrees", n, 6);
                }
                ells.iter().flat_map(|&l| degrees.iter().map(move |&n| (l, n))).collect()
            } else {
                let ell = r.u32_req("ell");
                r.ell("ell", ell, 8);
                let key = if raw.get("degree").is_some() { "degree" } else { "n" };
                let n = r.u32_req(key);
                r.degree(key, n, 6);
                vec![(ell, n)]
            };
            let s_max = r.f64_or("s_max", crate::harmonic::DEFAULT_S_MAX);
            let sample_step = r.f64_or("sample_step", crate::harmonic::DEFAULT_SAMPLE_STEP);
            let stride = r.usize_or("stride", 1);
            let checks = r.bool_or("checks", false);
            r.check("s_max", s_max >= 5.0, || format!("s_max must be at least 5 (got {s_max})"));
            r.check("sample_step", sample_step > 0.0 && sample_step <= 0.01, || {
                format!("sample_step must be in (0, 0.01] (got {sample_step})")
            });
            r.check("stride", stride >= 1, || "stride must be at least 1".into());
            Params::Shoot(ShootParams { cases, s_max, sample_step, stride, checks })
        }
        Kind::Evolve => Params::Evolve(evolve_block(&mut r, false)),
        Kind::Channels => {
            let dims: Vec<u32> = r.dims("dims", &[3, 5, 7]).into_iter().map(|d| d.max(0) as u32).collect();
            let radius = r.f64_or("radius", 2.0);
            let horizon = r.f64_or("T", 20.0);
            let data = match r.value("data") {
                None => ChannelDataKind::Random,
                Some(s) => ChannelDataKind::parse(&s).unwrap_or_else(|| {
                    r.fail("data", format!(
                        "data must be one of even-seed, odd-seed, bump-f, bump-g, resonance, random; got `{s}`"
                    ));
                    ChannelDataKind::Random
                }),
            };
            let count = r.usize_or("count", 1);
            let center = r.f64_or("data.center", radius + 2.0);
            let width = r.f64_or("data.width", 1.0);
            let power = r.parsed("data.power", "a non-negative integer").unwrap_or(12u32);
            let span = r.f64_or("data.span", 6.0);
            let dr = r.f64_or("dr", 0.01);
            let cadence = r.f64_or("cadence", 0.5);
            let doubling = r.bool_or("doubling", false);
            let quad_points = r.usize_or("quad_points", 8001);
            r.check("radius", radius > 1.0, || format!("radius must exceed 1 (got {radius})"));
            r.check("T", horizon > 1.0, || format!("T must exceed the 1.0 plateau window (got {horizon})"));
            r.check("count", count >= 1, || "count must be at least 1".into());
            r.check("count", count == 1 || data == ChannelDataKind::Random, || {
                format!("count = {count} only makes sense for random data")
            });
            r.check("data.width", width > 0.0, || format!("data.width must be positive (got {width})"));
            r.check("data.center", center - width >= radius, || {
                format!("data support starts at {} inside radius {radius}", center - width)
            });
            r.check("data.span", span >= 1.0, || format!("data.span must be at least 1 (got {span})"));
            r.check("dr", dr > 0.0 && dr <= 0.1, || format!("dr must be in (0, 0.1] (got {dr})"));
            r.check("cadence", cadence > 0.0, || format!("cadence must be positive (got {cadence})"));
            r.check("quad_points", quad_points >= 101, || "quad_points must be at least 101".into());
            if matches!(data, ChannelDataKind::EvenSeed | ChannelDataKind::OddSeed) {
                let m = dims.iter().map(|d| (d.saturating_sub(3)) / 2).max().unwrap_or(0);
                r.check("data.power", power >= m + 4, || {
                    format!("data.power = {power} is too rough for d = {}: need >= {}", 2 * m + 3, m + 4)
                });
            }
            Params::Channels(ChannelParams {
                dims,
                radius,
                horizon,
                data,
                count,
                center,
                width,
                power,
                span,
                dr,
                cadence,
                doubling,
                quad_points,
            })
        }
        Kind::Spectral => {
            let ells = r.list("ells", &[1, 2, 3], "integers");
            for &l in &ells {
                r.ell("ells", l, 4);
            }
            let degrees = r.list("degrees", &[0, 1, 2], "integers");
            for &n in &degrees {
                r.degree("degrees", n, 3);
            }
            let free_dims: Vec<u32> = if raw.get("free_dims").is_some() {
                r.dims("free_dims", &[]).into_iter().map(|d| d.max(0) as u32).collect()
            } else {
                Vec::new()
            };
            let rmax = r.f64_or("grid.rmax", 41.0);
            let npoints = r.usize_or("grid.npoints", 4001);
            let probes = r.usize_or("probes", 100);
            r.check("grid.rmax", rmax > 2.0, || format!("grid.rmax must exceed 2 (got {rmax})"));
            r.check("grid.npoints", npoints >= crate::grid::MIN_POINTS, || "grid.npoints too small".into());
            Params::Spectral(SpectralParams { ells, degrees, free_dims, rmax, npoints, probes })
        }
        Kind::Sweep => {
            let ells = r.list("ells", &[1, 2], "integers");
            for &l in &ells {
                r.ell("ells", l, 4);
            }
            let degrees = r.list("degrees", &[0, 1], "integers");
            for &n in &degrees {
                r.degree("degrees", n, 3);
            }
            let amplitudes = r.list("amplitudes", &[0.3], "numbers");
            let base = evolve_block(&mut r, true);
            let threads = r.parsed::<usize>("threads", "a positive integer");
            if let Some(t) = threads {
                r.check("threads", t >= 1, || "threads must be at least 1".into());
            }
            Params::Sweep(SweepParams { ells, degrees, amplitudes, base, threads })
        }
        Kind::Projection => {
            let dims: Vec<u32> = r.dims("dims", &[3, 5, 7, 9, 11]).into_iter().map(|d| d.max(0) as u32).collect();
            let radii = r.list("radii", &[1.0, 2.0, 10.0], "numbers");
            for &x in &radii {
                r.check("radii", x >= 1.0, || format!("radius {x} must be >= 1"));
            }
            let samples = r.usize_or("samples", 5);
            let points = r.usize_or("points", 8001);
            r.check("points", points >= 1001, || "points must be at least 1001".into());
            Params::Projection(ProjectionParams { dims, radii, samples, points })
        }
    };

    let unknown: Vec<String> = raw.entries.keys().filter(|k| !r.used.contains(*k)).cloned().collect();
    for k in unknown {
        r.fail(&k, format!("unknown key `{k}` for kind {}", kind.name()));
    }
    if r.issues.is_empty() {
        if let Err(message) = check_writable(&output_dir) {
            r.fail("output.dir", message);
        }
    }
    if r.issues.is_empty() {
        Ok(ExperimentConfig { seed, output_dir, params })
    } else {
        r.issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
        Err(r.issues)
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    validate(&RawConfig::parse(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_dir(text: &str) -> String {
        let dir = std::env::temp_dir().join("wavelab-config-tests");
        format!("{text}\noutput.dir = {}\n", dir.display())
    }

    #[test]
    fn minimal_shoot_gets_defaults() {
        let c = parse_config(&with_dir("kind = shoot\nell = 1\nn = 1")).unwrap();
        let Params::Shoot(p) = c.params else { panic!() };
        assert_eq!((p.cases.clone(), p.stride), (vec![(1, 1)], 1));
        assert_eq!(p.s_max, crate::harmonic::DEFAULT_S_MAX);
    }

    #[test]
    fn ell_zero_rejected() {
        let e = parse_config(&with_dir("kind = shoot\nell = 0\nn = 1")).unwrap_err();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].line, Some(2));
        assert!(e[0].message.contains("ell must be >= 1"));
    }

    #[test]
    fn cfl_explained_and_all_issues_reported() {
        let text = with_dir("kind = evolve\nell = 2\ndegree = 1\ncfl = 1.5\nbogus = 3\n[grid]\nnpoints = 4");
        let e = parse_config(&text).unwrap_err();
        let msgs: Vec<String> = e.iter().map(|i| i.to_string()).collect();
        assert!(msgs.iter().any(|m| m.starts_with("line 4:") && m.contains("RK4")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.starts_with("line 5:") && m.contains("unknown key `bogus`")));
        assert!(msgs.iter().any(|m| m.starts_with("line 7:") && m.contains("npoints")));
    }

    #[test]
    fn sections_prefix_keys_and_overrides_win() {
        let mut raw = RawConfig::parse("kind = evolve\nell = 1\ndegree = 0\n[perturbation]\namplitude = 0.3\n").unwrap();
        assert_eq!(raw.get("perturbation.amplitude"), Some("0.3"));
        raw.set("perturbation.amplitude=0.1").unwrap();
        raw.set(&format!("output.dir={}", std::env::temp_dir().join("wavelab-config-tests").display())).unwrap();
        let c = validate(&raw).unwrap();
        let Params::Evolve(p) = c.params else { panic!() };
        assert_eq!(p.amplitude, 0.1);
    }

    #[test]
    fn ranges_and_syntax_errors() {
        let c = parse_config(&with_dir("kind = tabulate-coefficients\ndims = 3..9")).unwrap();
        let Params::TabulateCoefficients(p) = c.params else { panic!() };
        assert_eq!(p.dims, vec![3, 5, 7, 9]);
        let e = RawConfig::parse("kind = shoot\nnot a pair\n[broken\nell = 1\nell = 2").unwrap_err();
        assert_eq!(e.iter().map(|i| i.line.unwrap()).collect::<Vec<_>>(), vec![2, 3, 5]);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = parse_config(&with_dir("kind = shoot\nell = 1\nn = 1")).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        let c = parse_config(&with_dir("kind = shoot\nell = 1\nn = 2")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
