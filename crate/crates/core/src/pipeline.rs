//! Configuration, staged execution with a persistent cache, and the consolidated
//! hypothesis report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::{cache_key, Cache, CACHE_ENV};
use crate::dynamics::{self, DecayOptions, DecayReport, Modulation, SimConfig, Sponge};
use crate::error::{Error, Result};
use crate::fgr::{check_h7, fgr_gram, FgrGram, FgrOptions};
use crate::grid::{GridSpec, RadialGrid};
use crate::groundstate::{mass_slopes, solve_ground_state, vk_status, GroundState, SolverOptions};
use crate::linearization::{
    build_operators, check_assumptions, discrete_spectrum, pair_norm, InternalMode, Operators, Pair,
    SpectralOptions, SpectralReport, SweepPoint,
};
use crate::nonlinearity::NonlinearitySpec;
use crate::profile::{build_refined_profile, ProfileOptions, RefinedProfile};
use crate::resonance::{classify, ResonanceStructure};
use crate::status::Status;

pub const SCHEMA_VERSION: u32 = 1;
/// Bumped whenever a cached artifact changes meaning.
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ground,
    Spectrum,
    Resonance,
    Profile,
    Fgr,
    Simulate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ground,
        Stage::Spectrum,
        Stage::Resonance,
        Stage::Profile,
        Stage::Fgr,
        Stage::Simulate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ground => "ground",
            Stage::Spectrum => "spectrum",
            Stage::Resonance => "resonance",
            Stage::Profile => "profile",
            Stage::Fgr => "fgr",
            Stage::Simulate => "simulate",
        }
    }

    fn prerequisite(self) -> Option<Stage> {
        match self {
            Stage::Ground => None,
            Stage::Spectrum => Some(Stage::Ground),
            Stage::Resonance => Some(Stage::Spectrum),
            Stage::Profile => Some(Stage::Resonance),
            Stage::Fgr | Stage::Simulate => Some(Stage::Profile),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub omega: f64,
    /// Extra frequencies for the mass slope and eigenvalue continuity checks.
    #[serde(default)]
    pub sweep: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "R")]
    pub extent: f64,
    pub h: f64,
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_order() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tol_gs: f64,
    pub tol_eig: f64,
    pub tol_prof: f64,
    pub tol_mod: f64,
    pub tau_cls: f64,
    pub tau_res: f64,
    pub tau_fgr: f64,
    pub tau_edge: f64,
    pub tau_vk: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_gs: 1e-10,
            tol_eig: 1e-14,
            tol_prof: 1e-8,
            tol_mod: 1e-12,
            tau_cls: 1e-9,
            tau_res: 1e-6,
            tau_fgr: 1e-2,
            tau_edge: 1e-3,
            tau_vk: 1e-8,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("tol_gs", self.tol_gs),
            ("tol_eig", self.tol_eig),
            ("tol_prof", self.tol_prof),
            ("tol_mod", self.tol_mod),
            ("tau_cls", self.tau_cls),
            ("tau_res", self.tau_res),
            ("tau_fgr", self.tau_fgr),
            ("tau_edge", self.tau_edge),
            ("tau_vk", self.tau_vk),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Damping strength of the outer-layer sponge; 0 switches it off.
    #[serde(default)]
    pub sponge: f64,
    /// Initial amplitudes `[re, im]`, one per internal mode.
    pub amplitude: Vec<[f64; 2]>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub varpi: f64,
    #[serde(default = "default_transient")]
    pub transient: f64,
    #[serde(default = "default_windows")]
    pub windows: usize,
}

fn default_stride() -> usize {
    1
}
fn default_transient() -> f64 {
    0.1
}
fn default_windows() -> usize {
    20
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    pub dir: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub nonlinearity: NonlinearitySpec,
    pub dimension: usize,
    pub frequency: FrequencyConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub k_max: Option<u32>,
    pub stages: Vec<Stage>,
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Recorded in the report; every stage is deterministic.
    #[serde(default)]
    pub seed: u64,
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Field name quoted in a serde message such as "missing field `R`".
fn quoted(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().to_string();
            let mut key = if path == "." { String::new() } else { path };
            if message.starts_with("missing field") {
                if let Some(f) = quoted(&message) {
                    key = if key.is_empty() { f.to_string() } else { format!("{key}.{f}") };
                }
            }
            let message = match inner.span() {
                Some(span) => format!("{message} (line {})", line_of(text, span.start)),
                None => message,
            };
            config_error(if key.is_empty() { "<root>".to_string() } else { key }, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.tolerances.entries() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(format!("tolerances.{name}"), "must be positive"));
            }
        }
        if !(self.frequency.omega > 0.0) {
            return Err(config_error("frequency.omega", "must be positive"));
        }
        if let Some(w) = self.frequency.sweep.iter().find(|w| !(**w > 0.0)) {
            return Err(config_error("frequency.sweep", format!("frequency {w} is not positive")));
        }
        self.nonlinearity
            .validate()
            .map_err(|e| config_error("nonlinearity", e.to_string()))?;
        self.grid_spec()
            .and_then(RadialGrid::new)
            .map_err(|e| config_error("grid", e.to_string()))?;
        if self.stages.is_empty() {
            return Err(config_error("stages", "no stage requested"));
        }
        let runs = self.stage_plan();
        if runs.contains(&Stage::Simulate) {
            let Some(sim) = &self.simulation else {
                return Err(config_error("simulation", "required by the simulate stage"));
            };
            if !(sim.dt > 0.0 && sim.horizon >= sim.dt) {
                return Err(config_error("simulation.dt", "need 0 < dt <= horizon"));
            }
            if sim.stride == 0 {
                return Err(config_error("simulation.stride", "must be at least 1"));
            }
            if !(sim.sponge >= 0.0) {
                return Err(config_error("simulation.sponge", "must be non-negative"));
            }
            if !(sim.transient >= 0.0 && sim.transient < 1.0) {
                return Err(config_error("simulation.transient", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    fn grid_spec(&self) -> Result<GridSpec> {
        Ok(GridSpec {
            dimension: self.dimension,
            extent: self.grid.extent,
            h: self.grid.h,
            order: self.grid.order,
        })
    }

    /// Requested stages together with their prerequisites, in execution order.
    pub fn stage_plan(&self) -> Vec<Stage> {
        let mut set = BTreeSet::new();
        for &s in &self.stages {
            let mut cur = Some(s);
            while let Some(c) = cur {
                set.insert(c);
                cur = c.prerequisite();
            }
        }
        set.into_iter().collect()
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tolerances.tol_gs,
            ..SolverOptions::default()
        }
    }

    fn spectral_options(&self) -> SpectralOptions {
        SpectralOptions {
            eig_tol: self.tolerances.tol_eig,
            tau_edge: self.tolerances.tau_edge,
            ..SpectralOptions::default()
        }
    }

    fn profile_options(&self) -> ProfileOptions {
        ProfileOptions {
            tol: self.tolerances.tol_prof,
            tau_res: self.tolerances.tau_res,
            ..ProfileOptions::default()
        }
    }

    fn fgr_options(&self) -> FgrOptions {
        FgrOptions {
            tau_fgr: self.tolerances.tau_fgr,
            ..FgrOptions::default()
        }
    }
}

/// Where the cache lives: `RPL_CACHE_DIR`, then `output.cache`, then `<output>/cache`.
pub fn resolve_cache_dir(cfg: &PipelineConfig, base: &Path, env: Option<&str>) -> PathBuf {
    match (env, &cfg.output.cache) {
        (Some(e), _) if !e.is_empty() => PathBuf::from(e),
        (_, Some(p)) => base.join(p),
        _ => resolve_output_dir(cfg, base).join("cache"),
    }
}

pub fn resolve_output_dir(cfg: &PipelineConfig, base: &Path) -> PathBuf {
    base.join(cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("rpl-out")))
}

// ---- cached artifacts ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GroundRecord {
    phi: Vec<f64>,
    dphi: Vec<f64>,
    residual: f64,
    mass: f64,
    vk_slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModeRecord {
    lambda: f64,
    krein: f64,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpectrumRecord {
    report: SpectralReport,
    modes: Vec<ModeRecord>,
}

struct Context<'a> {
    cfg: &'a PipelineConfig,
    grid: Arc<RadialGrid>,
    cache: &'a Cache,
    events: std::sync::Mutex<Vec<CacheEvent>>,
}

impl Context<'_> {
    fn ground_key(&self, omega: f64) -> String {
        cache_key(&json!({
            "stage": "ground",
            "version": CACHE_VERSION,
            "nonlinearity": self.cfg.nonlinearity,
            "grid": self.grid.spec(),
            "omega": omega,
            "tol_gs": self.cfg.tolerances.tol_gs,
        }))
    }

    fn spectrum_key(&self, omega: f64) -> String {
        cache_key(&json!({
            "stage": "spectrum",
            "version": CACHE_VERSION,
            "ground": self.ground_key(omega),
            "options": self.cfg.spectral_options(),
        }))
    }

    fn fgr_key(&self) -> String {
        let p = self.cfg.profile_options();
        cache_key(&json!({
            "stage": "fgr",
            "version": CACHE_VERSION,
            "spectrum": self.spectrum_key(self.cfg.frequency.omega),
            "tau_cls": self.cfg.tolerances.tau_cls,
            "k_max": self.cfg.k_max,
            "profile": {"tol": p.tol, "tau_res": p.tau_res, "shift": p.shift, "max_refine": p.max_refine},
            "options": self.cfg.fgr_options(),
        }))
    }

    fn note(&self, stage: Stage, key: &str, hit: bool) {
        self.events.lock().expect("cache log").push(CacheEvent {
            stage: stage.name().to_string(),
            key: key.to_string(),
            hit,
        });
    }

    fn ground(&self, omega: f64) -> Result<GroundState> {
        let key = self.ground_key(omega);
        let (rec, hit) = self.cache.get_or_compute("ground", &key, || {
            let gs = solve_ground_state(&self.cfg.nonlinearity, omega, self.grid.clone(), None, self.cfg.solver_options())?;
            Ok(GroundRecord {
                phi: gs.phi,
                dphi: gs.dphi,
                residual: gs.residual,
                mass: gs.mass,
                vk_slope: gs.vk_slope,
            })
        })?;
        self.note(Stage::Ground, &key, hit);
        Ok(GroundState {
            omega,
            grid: self.grid.clone(),
            phi: rec.phi,
            dphi: rec.dphi,
            residual: rec.residual,
            mass: rec.mass,
            vk_slope: rec.vk_slope,
        })
    }

    fn spectrum(&self, gs: &GroundState, ops: &Operators) -> Result<(SpectralReport, Vec<InternalMode>)> {
        let key = self.spectrum_key(gs.omega);
        let (rec, hit) = self.cache.get_or_compute("spectrum", &key, || {
            let (report, modes) = discrete_spectrum(gs, ops, self.cfg.spectral_options())?;
            Ok(SpectrumRecord {
                report,
                modes: modes
                    .into_iter()
                    .map(|m| ModeRecord {
                        lambda: m.lambda,
                        krein: m.krein,
                        plus: m.xi.plus,
                        minus: m.xi.minus,
                    })
                    .collect(),
            })
        })?;
        self.note(Stage::Spectrum, &key, hit);
        let modes = rec
            .modes
            .into_iter()
            .enumerate()
            .map(|(index, m)| InternalMode {
                index,
                lambda: m.lambda,
                xi: Pair::new(m.plus, m.minus),
                krein: m.krein,
            })
            .collect();
        Ok((rec.report, modes))
    }
}

// ---- report ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEvent {
    pub stage: String,
    pub key: String,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub status: Status,
    pub evidence: BTreeMap<String, Value>,
}

impl Hypothesis {
    fn skipped(stage: Stage) -> Self {
        let mut evidence = BTreeMap::new();
        evidence.insert("not_evaluated".to_string(), json!(format!("stage {} did not run", stage.name())));
        Self {
            status: Status::Indeterminate,
            evidence,
        }
    }

    fn with(status: Status, evidence: Value) -> Self {
        let evidence = match evidence {
            Value::Object(m) => m.into_iter().collect(),
            other => BTreeMap::from([("value".to_string(), other)]),
        };
        Self { status, evidence }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Ok,
    Skipped,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonantIndex {
    pub index: String,
    pub degree: u32,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceNorm {
    pub index: String,
    pub frequency: f64,
    pub norm: f64,
    pub orthogonality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgrSummary {
    pub group: usize,
    pub threshold: f64,
    pub members: Vec<String>,
    pub gamma: Vec<Vec<f64>>,
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub extrapolation_change: f64,
    pub route_agreement: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    pub samples: usize,
    pub final_time: f64,
    pub q0_drift: f64,
    pub energy_drift: f64,
    pub final_amplitudes: Vec<f64>,
    pub final_varpi: f64,
    pub decay: Option<Value>,
    pub decay_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub schema_version: u32,
    pub seed: u64,
    pub omega: f64,
    pub dimension: usize,
    pub stages: BTreeMap<String, StageOutcome>,
    pub hypotheses: BTreeMap<String, Hypothesis>,
    /// Number of internal modes in the gap.
    pub modes: Option<usize>,
    pub lambdas: Vec<f64>,
    pub r_min: Vec<ResonantIndex>,
    pub sources: Vec<SourceNorm>,
    pub fgr: Vec<FgrSummary>,
    pub profile_residual: Option<f64>,
    pub dynamics: Option<DynamicsSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub timings: BTreeMap<String, f64>,
    pub cache_dir: PathBuf,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub cache_events: Vec<CacheEvent>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: AssumptionReport,
    pub meta: RunMeta,
    pub output_dir: PathBuf,
    /// True when some stage returned an error.
    pub failed: bool,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn columns_csv(names: &[String], r: &[f64], cols: &[&[f64]]) -> String {
    let mut out = String::from("r");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, x) in r.iter().enumerate() {
        out.push_str(&format!("{x:e}"));
        for c in cols {
            out.push_str(&format!(",{:e}", c[i]));
        }
        out.push('\n');
    }
    out
}

/// Reads the config at `path`, honouring `RPL_CACHE_DIR`.
pub fn run_pipeline(path: &Path) -> Result<PipelineOutcome> {
    let cfg = PipelineConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let env = std::env::var(CACHE_ENV).ok();
    let cache_dir = resolve_cache_dir(&cfg, &base, env.as_deref());
    let out = resolve_output_dir(&cfg, &base);
    run_config(&cfg, &out, &cache_dir)
}

/// Runs the stage plan, writing `report.json`, `run_meta.json` and the stage CSVs to `out`.
pub fn run_config(cfg: &PipelineConfig, out: &Path, cache_dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let cache = Cache::new(cache_dir);
    let grid = Arc::new(RadialGrid::new(cfg.grid_spec()?)?);
    let ctx = Context {
        cfg,
        grid: grid.clone(),
        cache: &cache,
        events: std::sync::Mutex::new(Vec::new()),
    };
    let plan = cfg.stage_plan();
    let omega = cfg.frequency.omega;
    let mut report = AssumptionReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        omega,
        dimension: cfg.dimension,
        stages: Stage::ALL.iter().map(|s| (s.name().to_string(), StageOutcome::Skipped)).collect(),
        hypotheses: BTreeMap::new(),
        modes: None,
        lambdas: Vec::new(),
        r_min: Vec::new(),
        sources: Vec::new(),
        fgr: Vec::new(),
        profile_residual: None,
        dynamics: None,
    };
    for (h, s) in [
        ("H1", Stage::Spectrum),
        ("H2", Stage::Ground),
        ("H3", Stage::Spectrum),
        ("H4", Stage::Spectrum),
        ("H5", Stage::Spectrum),
        ("H6", Stage::Resonance),
        ("H7", Stage::Fgr),
    ] {
        report.hypotheses.insert(h.to_string(), Hypothesis::skipped(s));
    }
    let mut timings = BTreeMap::new();
    let mut failed = false;

    let mut gs: Option<GroundState> = None;
    let mut ops: Option<Operators> = None;
    let mut spectrum: Option<(SpectralReport, Vec<InternalMode>)> = None;
    let mut rs: Option<ResonanceStructure> = None;
    let mut rp: Option<RefinedProfile> = None;

    for stage in plan {
        let start = Instant::now();
        let result: Result<()> = (|| match stage {
            Stage::Ground => {
                let g = ctx.ground(omega)?;
                let mut sweep: Vec<f64> = cfg.frequency.sweep.clone();
                sweep.push(omega);
                sweep.sort_by(f64::total_cmp);
                sweep.dedup();
                let mut evidence = json!({
                    "slope": g.vk_slope,
                    "mass": g.mass,
                    "residual": g.residual,
                    "tau_vk": cfg.tolerances.tau_vk,
                });
                let mut status = vk_status(g.vk_slope, cfg.tolerances.tau_vk);
                if sweep.len() >= 3 {
                    let states = sweep
                        .par_iter()
                        .map(|&w| if w == omega { Ok(g.clone()) } else { ctx.ground(w) })
                        .collect::<Result<Vec<_>>>()?;
                    let masses: Vec<f64> = states.iter().map(|s| s.mass).collect();
                    let slopes = mass_slopes(&sweep, &masses)?;
                    let at = sweep.iter().position(|&w| w == omega).expect("omega in sweep");
                    evidence["sweep"] = json!(sweep);
                    evidence["sweep_slopes"] = json!(slopes);
                    if vk_status(slopes[at], cfg.tolerances.tau_vk) != status {
                        status = Status::Indeterminate;
                    }
                }
                report.hypotheses.insert("H2".into(), Hypothesis::with(status, evidence));
                let csv = columns_csv(&["phi".into(), "dphi".into()], grid.r(), &[&g.phi, &g.dphi]);
                write_atomic(&out.join("ground.csv"), csv.as_bytes())?;
                ops = Some(build_operators(&g, &cfg.nonlinearity));
                gs = Some(g);
                Ok(())
            }
            Stage::Spectrum => {
                let g = gs.as_ref().expect("ground stage ran");
                let o = ops.as_ref().expect("operators built");
                let (mut rep, modes) = ctx.spectrum(g, o)?;
                let sweep: Vec<f64> = cfg.frequency.sweep.iter().copied().filter(|&w| w != omega).collect();
                if !sweep.is_empty() {
                    let mut points = sweep
                        .par_iter()
                        .map(|&w| {
                            let gw = ctx.ground(w)?;
                            let ow = build_operators(&gw, &cfg.nonlinearity);
                            let (r, _) = ctx.spectrum(&gw, &ow)?;
                            Ok(SweepPoint {
                                omega: w,
                                lambda: r.lambda,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    points.push(SweepPoint {
                        omega,
                        lambda: rep.lambda.clone(),
                    });
                    points.sort_by(|a, b| a.omega.total_cmp(&b.omega));
                    rep.lambda_sweep = points;
                    check_assumptions(&mut rep, cfg.spectral_options());
                }
                report.hypotheses.insert(
                    "H1".into(),
                    Hypothesis::with(
                        rep.h1,
                        json!({
                            "morse_index": rep.morse_index,
                            "lplus_kernel_dim": rep.lplus_kernel_dim,
                            "lminus_kernel_dim": rep.lminus_kernel_dim,
                            "lplus_low": rep.lplus_low,
                        }),
                    ),
                );
                report.hypotheses.insert(
                    "H3".into(),
                    Hypothesis::with(
                        rep.h3,
                        json!({
                            "edge_eigenvalues": rep.edge_eigenvalues,
                            "dist_to_edge": rep.dist_to_edge,
                            "edge_growth": rep.edge_growth,
                        }),
                    ),
                );
                report.hypotheses.insert(
                    "H4".into(),
                    Hypothesis::with(rep.h4, json!({ "advisory": rep.h4_advisory })),
                );
                report.hypotheses.insert(
                    "H5".into(),
                    Hypothesis::with(
                        rep.h5,
                        json!({
                            "modes": rep.n_modes,
                            "krein_index": rep.krein_index,
                            "lambda_sweep": rep.lambda_sweep,
                        }),
                    ),
                );
                report.modes = Some(rep.n_modes);
                report.lambdas = rep.lambda.clone();
                if !modes.is_empty() {
                    let mut names = Vec::new();
                    let mut cols: Vec<&[f64]> = Vec::new();
                    for m in &modes {
                        names.push(format!("xi{}_plus", m.index + 1));
                        names.push(format!("xi{}_minus", m.index + 1));
                        cols.push(&m.xi.plus);
                        cols.push(&m.xi.minus);
                    }
                    write_atomic(&out.join("modes.csv"), columns_csv(&names, grid.r(), &cols).as_bytes())?;
                }
                spectrum = Some((rep, modes));
                Ok(())
            }
            Stage::Resonance => {
                let (rep, _) = spectrum.as_ref().expect("spectrum stage ran");
                let mut r = classify(&rep.lambda, omega, cfg.tolerances.tau_cls)?;
                if let Some(k) = cfg.k_max {
                    if k < r.k_max {
                        return Err(config_error(
                            "k_max",
                            format!("{k} is below the largest minimal resonant degree {}", r.k_max),
                        ));
                    }
                    r.k_max = k;
                }
                report.hypotheses.insert(
                    "H6".into(),
                    Hypothesis::with(
                        r.h6,
                        json!({
                            "margin": r.margin,
                            "evidence": r.h6_evidence,
                            "ambiguous": r.ambiguous.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
                        }),
                    ),
                );
                report.r_min = r
                    .r_min
                    .iter()
                    .map(|m| ResonantIndex {
                        index: m.to_string(),
                        degree: m.norm(),
                        frequency: r.lam(m),
                    })
                    .collect();
                rs = Some(r);
                Ok(())
            }
            Stage::Profile => {
                let (rep, modes) = spectrum.as_ref().expect("spectrum stage ran");
                let r = rs.as_ref().expect("resonance stage ran");
                if rep.h1 != Status::Pass || r.h6 != Status::Pass {
                    return Err(Error::InvalidInput(format!(
                        "the profile needs H1 and H6 to pass (H1 {}, H6 {})",
                        rep.h1, r.h6
                    )));
                }
                let g = gs.as_ref().expect("ground stage ran");
                let o = ops.as_ref().expect("operators built");
                let p = build_refined_profile(g, o, modes, r, &cfg.nonlinearity, cfg.profile_options())?;
                report.sources = p
                    .sources
                    .iter()
                    .map(|s| SourceNorm {
                        index: s.index.to_string(),
                        frequency: s.frequency,
                        norm: pair_norm(&grid, &s.field),
                        orthogonality: s.orthogonality,
                    })
                    .collect();
                report.profile_residual = Some(p.series_residual);
                if !p.sources.is_empty() {
                    let mut names = Vec::new();
                    let mut cols: Vec<&[f64]> = Vec::new();
                    for s in &p.sources {
                        names.push(format!("G{}_plus", s.index));
                        names.push(format!("G{}_minus", s.index));
                        cols.push(&s.field.plus);
                        cols.push(&s.field.minus);
                    }
                    let names: Vec<String> = names.into_iter().map(|n| n.replace(',', ";")).collect();
                    write_atomic(&out.join("sources.csv"), columns_csv(&names, grid.r(), &cols).as_bytes())?;
                }
                rp = Some(p);
                Ok(())
            }
            Stage::Fgr => {
                let p = rp.as_ref().expect("profile stage ran");
                let r = rs.as_ref().expect("resonance stage ran");
                let o = ops.as_ref().expect("operators built");
                let key = ctx.fgr_key();
                let (grams, hit) = cache.get_or_compute::<Vec<FgrGram>, _>("fgr", &key, || {
                    r.groups
                        .iter()
                        .enumerate()
                        .map(|(i, grp)| fgr_gram(p, &o.hamiltonian, grp, i, cfg.fgr_options()))
                        .collect()
                })?;
                ctx.note(Stage::Fgr, &key, hit);
                report.fgr = grams
                    .iter()
                    .map(|g| FgrSummary {
                        group: g.group,
                        threshold: g.threshold,
                        members: g.members.iter().map(|m| m.to_string()).collect(),
                        gamma: g.gamma.clone(),
                        min_eigenvalue: g.min_eigenvalue,
                        trace: g.trace,
                        extrapolation_change: g.absorption.change,
                        route_agreement: g.route_agreement,
                        status: g.status,
                    })
                    .collect();
                let min = grams.iter().map(|g| g.min_eigenvalue).fold(f64::INFINITY, f64::min);
                report.hypotheses.insert(
                    "H7".into(),
                    Hypothesis::with(
                        check_h7(&grams),
                        json!({
                            "groups": grams.len(),
                            "min_eigenvalue": if grams.is_empty() { Value::Null } else { json!(min) },
                            "tau_fgr": cfg.tolerances.tau_fgr,
                        }),
                    ),
                );
                Ok(())
            }
            Stage::Simulate => {
                let p = rp.as_ref().expect("profile stage ran");
                let sim = cfg.simulation.as_ref().expect("validated");
                if sim.amplitude.len() != p.modes_count() {
                    return Err(config_error(
                        "simulation.amplitude",
                        format!("{} amplitudes for {} internal modes", sim.amplitude.len(), p.modes_count()),
                    ));
                }
                let z: Vec<Complex64> = sim.amplitude.iter().map(|a| Complex64::new(a[0], a[1])).collect();
                let u0 = dynamics::synthesize(
                    p,
                    &Modulation {
                        theta: sim.theta,
                        varpi: sim.varpi,
                        z,
                    },
                )?;
                let mut sc = SimConfig::new(grid.clone(), cfg.nonlinearity.clone(), sim.dt, sim.horizon);
                sc.stride = sim.stride;
                if sim.sponge > 0.0 {
                    sc.sponge = Some(Sponge::outer_fifth(grid.extent(), sim.sponge));
                }
                let ts = dynamics::run(&sc, p, u0)?;
                write_atomic(&out.join("timeseries.csv"), ts.to_csv().as_bytes())?;
                let decay: Result<DecayReport> = dynamics::fgr_decay_report(
                    &ts,
                    &p.lambdas,
                    DecayOptions {
                        transient: sim.transient,
                        windows: sim.windows,
                        ..DecayOptions::default()
                    },
                );
                let last = ts.samples.last().expect("at least the initial sample");
                report.dynamics = Some(DynamicsSummary {
                    samples: ts.samples.len(),
                    final_time: last.t,
                    q0_drift: ts.q0_drift,
                    energy_drift: ts.energy_drift,
                    final_amplitudes: last.z.iter().map(|v| v.norm()).collect(),
                    final_varpi: last.varpi,
                    decay: decay.as_ref().ok().map(serde_json::to_value).transpose()?,
                    decay_error: decay.err().map(|e| e.to_string()),
                });
                Ok(())
            }
        })();
        timings.insert(stage.name().to_string(), start.elapsed().as_secs_f64());
        let outcome = match result {
            Ok(()) => StageOutcome::Ok,
            Err(e) => {
                failed = true;
                StageOutcome::Error(
                    Error::Stage {
                        stage: stage.name().to_string(),
                        source: Box::new(e),
                    }
                    .to_string(),
                )
            }
        };
        let stop = matches!(outcome, StageOutcome::Error(_));
        report.stages.insert(stage.name().to_string(), outcome);
        if stop {
            break;
        }
    }

    let mut events = ctx.events.into_inner().expect("cache log");
    events.sort_by(|a, b| (&a.stage, &a.key).cmp(&(&b.stage, &b.key)));
    let meta = RunMeta {
        timings,
        cache_dir: cache_dir.to_path_buf(),
        cache_hits: cache.hits(),
        cache_misses: cache.misses(),
        cache_events: events,
    };
    write_atomic(&out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_atomic(&out.join("run_meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(PipelineOutcome {
        report,
        meta,
        output_dir: out.to_path_buf(),
        failed,
    })
}

/// Loads `report.json` from a run directory.
pub fn load_report(dir: &Path) -> Result<AssumptionReport> {
    let bytes = std::fs::read(dir.join("report.json"))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Plain-text digest of a report.
pub fn render_report(r: &AssumptionReport) -> String {
    let mut out = format!(
        "schema {}  d = {}  omega* = {}\n",
        r.schema_version, r.dimension, r.omega
    );
    for (name, outcome) in &r.stages {
        let s = match outcome {
            StageOutcome::Ok => "ok".to_string(),
            StageOutcome::Skipped => "skipped".to_string(),
            StageOutcome::Error(e) => format!("error: {e}"),
        };
        out.push_str(&format!("stage {name:<10} {s}\n"));
    }
    for (name, h) in &r.hypotheses {
        out.push_str(&format!("{name}  {}\n", h.status));
    }
    if let Some(n) = r.modes {
        out.push_str(&format!("internal modes: {n}  lambda = {:?}\n", r.lambdas));
    }
    for m in &r.r_min {
        out.push_str(&format!("R_min {}  degree {}  frequency {}\n", m.index, m.degree, m.frequency));
    }
    for s in &r.sources {
        out.push_str(&format!("source {}  norm {:e}\n", s.index, s.norm));
    }
    for g in &r.fgr {
        out.push_str(&format!(
            "gram {}  threshold {}  min eigenvalue {:e}  {}\n",
            g.group, g.threshold, g.min_eigenvalue, g.status
        ));
    }
    if let Some(d) = &r.dynamics {
        out.push_str(&format!(
            "dynamics: {} samples to t = {}, |z| = {:?}\n",
            d.samples, d.final_time, d.final_amplitudes
        ));
    }
    out
}
