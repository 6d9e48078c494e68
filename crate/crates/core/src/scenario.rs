//! Scenario files, the built-in examples, and the runner that writes
//! reports, masks and field dumps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{
    boundary_agreement_report, check_boundary_agreement, check_least_gradient, stability_run_data, AnalysisError,
    LeastGradientMode,
};
use crate::boundary::{make_boundary_data, BoundaryData, BoundaryError, BoundaryPiece, BoundarySpec};
use crate::dualnorm::{check_unrestricted, compute_lambda, compute_star_norm, DualNormError};
use crate::energy::{energy_pair, trace_boundary_measures, CellField, CellSet, EnergyReport};
use crate::mesh::{build_disk, build_grid_rectangle, load_graph, strip_density, DomainStats, MeshDomain, MeshError, Rect, Stencil};
use crate::mincut::{solve_dirichlet_leastgradient, solve_restricted, MincutError};
use crate::relaxed::{solve_relaxed, threshold_levels, RelaxedError, RelaxedOptions};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario '{0}' (not a built-in name or readable file)")]
    Unknown(String),
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Mincut(#[from] MincutError),
    #[error(transparent)]
    Relaxed(#[from] RelaxedError),
    #[error(transparent)]
    DualNorm(#[from] DualNormError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Mincut,
    Relaxed,
    Both,
    Lambda,
    Dirichlet,
    Stability,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Mincut => "mincut",
            SolverKind::Relaxed => "relaxed",
            SolverKind::Both => "both",
            SolverKind::Lambda => "lambda",
            SolverKind::Dirichlet => "dirichlet",
            SolverKind::Stability => "stability",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainShape {
    #[default]
    Rectangle,
    Disk,
    Graph,
}

/// Named cell densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    #[default]
    Uniform,
    /// 1/2 on `[-1/10, 1/10] × [-9/10, 9/10]`, 1 elsewhere.
    Strip,
}

impl Density {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::Strip => strip_density(x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default)]
    pub kind: DomainShape,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    /// Grid cells across the diameter of a disk.
    pub n: Option<usize>,
    /// `[x0, x1, y0, y1]`, the unit square by default.
    pub extent: Option<[f64; 4]>,
    pub center: Option<[f64; 2]>,
    pub radius: Option<f64>,
    #[serde(default = "default_stencil")]
    pub stencil: Stencil,
    /// Number of boundary segments M.
    pub boundary_segments: Option<usize>,
    #[serde(default)]
    pub weight: Density,
    /// Graph file, relative to the scenario file.
    pub path: Option<String>,
}

fn default_stencil() -> Stencil {
    Stencil::N16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub pieces: Vec<BoundaryPiece>,
    pub default: Option<f64>,
    #[serde(default = "yes")]
    pub rebalance: bool,
}

fn yes() -> bool {
    true
}

impl BoundaryConfig {
    pub fn spec(&self) -> BoundarySpec {
        BoundarySpec {
            pieces: self.pieces.clone(),
            default: self.default,
        }
    }
}

/// A planar region used to describe analytic sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Region {
    /// `{p : normal · p < offset}`.
    Halfplane { normal: [f64; 2], offset: f64 },
    Ball { center: [f64; 2], radius: f64 },
    All { regions: Vec<Region> },
    Any { regions: Vec<Region> },
    Not { region: Box<Region> },
    Empty,
    Full,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Halfplane { normal, offset } => normal[0] * x + normal[1] * y < *offset,
            Region::Ball { center, radius } => (x - center[0]).hypot(y - center[1]) < *radius,
            Region::All { regions } => regions.iter().all(|r| r.contains(x, y)),
            Region::Any { regions } => regions.iter().any(|r| r.contains(x, y)),
            Region::Not { region } => !region.contains(x, y),
            Region::Empty => false,
            Region::Full => true,
        }
    }

    pub fn cells(&self, domain: &MeshDomain) -> Result<CellSet, ScenarioError> {
        if domain.cells().iter().any(|c| c.centroid.is_none()) {
            return Err(ScenarioError::Invalid("regions need cell centroids".into()));
        }
        Ok(CellSet::from_centroids(domain, |x, y| self.contains(x, y)))
    }
}

/// Computed sets that a reference region can be compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetTarget {
    MinimalE1,
    MinimalE2,
    MaximalE1,
    MaximalE2,
    ThresholdE1,
    ThresholdE2,
    DirichletMinimal,
    DirichletMaximal,
    EPlus,
}

impl SetTarget {
    fn key(self) -> &'static str {
        match self {
            SetTarget::MinimalE1 => "minimal_e1",
            SetTarget::MinimalE2 => "minimal_e2",
            SetTarget::MaximalE1 => "maximal_e1",
            SetTarget::MaximalE2 => "maximal_e2",
            SetTarget::ThresholdE1 => "threshold_e1",
            SetTarget::ThresholdE2 => "threshold_e2",
            SetTarget::DirichletMinimal => "dirichlet_minimal",
            SetTarget::DirichletMaximal => "dirichlet_maximal",
            SetTarget::EPlus => "e_plus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub name: String,
    pub target: SetTarget,
    pub region: Region,
}

/// A two-valued competitor `χ_{E1} − χ_{E2}` evaluated with the mesh energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub name: String,
    pub e1: Region,
    pub e2: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constancy {
    pub name: String,
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementConfig {
    /// Margin from the ends of `{f = −1}`, in multiples of the cell size.
    #[serde(default = "three")]
    pub margin_cells: f64,
}

fn three() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub t1: f64,
    pub t2: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { t1: 0.5, t2: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    #[serde(default)]
    pub star_norm: bool,
    /// Extra multiples τ for which `λ(τ g)` is reported.
    #[serde(default)]
    pub scales: Vec<f64>,
    #[serde(default)]
    pub options: Option<RelaxedOptions>,
}

/// Boundary pieces with positive values select `fixed_in` collar cells,
/// negative values `fixed_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletConfig {
    pub collar: Vec<BoundaryPiece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityStep {
    pub pieces: Vec<BoundaryPiece>,
    pub default: Option<f64>,
    pub reference_e1: Option<Region>,
    pub reference_e2: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepBoundary {
    pub pieces: Vec<BoundaryPiece>,
    pub default: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub steps: Vec<StabilityStep>,
    pub limit: Option<StepBoundary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub value: f64,
    pub tol: f64,
    #[serde(default)]
    pub relative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "yes")]
    pub pgm: bool,
    #[serde(default = "yes")]
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { pgm: true, csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub solver: SolverKind,
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainConfig,
    pub boundary: Option<BoundaryConfig>,
    pub relaxed: Option<RelaxedOptions>,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub lambda: Option<LambdaConfig>,
    pub dirichlet: Option<DirichletConfig>,
    pub stability: Option<StabilityConfig>,
    pub agreement: Option<AgreementConfig>,
    #[serde(default)]
    pub references: Vec<Reference>,
    #[serde(default)]
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub constancy: Vec<Constancy>,
    #[serde(default)]
    pub expected: BTreeMap<String, Expected>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        toml::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))
    }
}

const BUILTINS: [(&str, &str); 9] = [
    ("ex-square-a05", include_str!("../scenarios/ex-square-a05.toml")),
    ("ex-square-a1", include_str!("../scenarios/ex-square-a1.toml")),
    ("ex-square-a2", include_str!("../scenarios/ex-square-a2.toml")),
    ("ex-rect-corner", include_str!("../scenarios/ex-rect-corner.toml")),
    ("ex-disk-three", include_str!("../scenarios/ex-disk-three.toml")),
    ("ex-disk-zero-data", include_str!("../scenarios/ex-disk-zero-data.toml")),
    ("ex-weighted-disk", include_str!("../scenarios/ex-weighted-disk.toml")),
    ("ex-stab-71", include_str!("../scenarios/ex-stab-71.toml")),
    ("ex-stab-73", include_str!("../scenarios/ex-stab-73.toml")),
];

pub fn list_scenarios() -> Vec<&'static str> {
    BUILTINS.iter().map(|(name, _)| *name).collect()
}

pub fn builtin(name: &str) -> Option<Scenario> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.parse().expect("built-in scenarios parse"))
}

/// A built-in name or a path to a TOML file.
pub fn resolve_scenario(name_or_path: &str) -> Result<Scenario, ScenarioError> {
    if let Some(s) = builtin(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if !path.is_file() {
        return Err(ScenarioError::Unknown(name_or_path.to_string()));
    }
    let mut s: Scenario = std::fs::read_to_string(path)?.parse()?;
    s.base_dir = path.parent().map(Path::to_path_buf);
    Ok(s)
}

impl Scenario {
    pub fn build_domain(&self) -> Result<MeshDomain, ScenarioError> {
        let d = &self.domain;
        let weight = d.weight;
        let missing = |what: &str| ScenarioError::Invalid(format!("domain.{what} is required for {:?}", d.kind));
        Ok(match d.kind {
            DomainShape::Rectangle => {
                let nx = d.nx.ok_or_else(|| missing("nx"))?;
                let ny = d.ny.unwrap_or(nx);
                let extent = match d.extent {
                    Some([x0, x1, y0, y1]) => Rect::new(x0, x1, y0, y1),
                    None => Rect::UNIT,
                };
                let m = d.boundary_segments.unwrap_or(8 * (nx + ny));
                build_grid_rectangle(nx, ny, extent, move |x, y| weight.eval(x, y), d.stencil, m)?
            }
            DomainShape::Disk => {
                let n = d.n.ok_or_else(|| missing("n"))?;
                let m = d.boundary_segments.unwrap_or(8 * n);
                build_disk(
                    n,
                    d.center.unwrap_or([0.0, 0.0]),
                    d.radius.unwrap_or(1.0),
                    move |x, y| weight.eval(x, y),
                    d.stencil,
                    m,
                )?
            }
            DomainShape::Graph => {
                let rel = d.path.as_ref().ok_or_else(|| missing("path"))?;
                let path = match &self.base_dir {
                    Some(dir) => dir.join(rel),
                    None => PathBuf::from(rel),
                };
                load_graph(path)?
            }
        })
    }

    fn boundary_data(&self, domain: &MeshDomain, balance_tol: Option<f64>) -> Result<BoundaryData, ScenarioError> {
        let cfg = self
            .boundary
            .as_ref()
            .ok_or_else(|| ScenarioError::Invalid(format!("solver {} needs a [boundary] table", self.solver)))?;
        let bd = make_boundary_data(domain, &cfg.spec())?;
        balance(domain, bd, cfg.rebalance, balance_tol)
    }
}

fn balance(domain: &MeshDomain, bd: BoundaryData, rebalance: bool, tol: Option<f64>) -> Result<BoundaryData, ScenarioError> {
    if rebalance {
        return Ok(bd.rebalance(domain)?);
    }
    let tol = tol.map_or(bd.default_tolerance(), |t| t * domain.boundary_measure());
    bd.validate_balance(tol)?;
    Ok(bd)
}

pub fn mesh_info(scenario: &Scenario) -> Result<DomainStats, ScenarioError> {
    Ok(scenario.build_domain()?.stats())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Relative balance tolerance used when data are not rebalanced.
    pub balance_tol: Option<f64>,
    pub solver: Option<SolverKind>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetSummary {
    pub cells: usize,
    pub measure: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedItem {
    pub metric: String,
    pub expected: f64,
    pub tol: f64,
    pub relative: bool,
    pub actual: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedCheck {
    pub passed: bool,
    pub items: Vec<ExpectedItem>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: Value,
    pub domain_stats: DomainStats,
    pub energies: BTreeMap<String, EnergyReport>,
    pub sets: BTreeMap<String, SetSummary>,
    pub diagnostics: BTreeMap<String, Value>,
    pub expected_check: Option<ExpectedCheck>,
}

impl Report {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.diagnostics.get("metrics")?.get(name)?.as_f64()
    }
}

/// Everything computed by one run, kept in memory for callers that need
/// more than the report.
pub struct RunOutcome {
    pub report: Report,
    pub domain: MeshDomain,
    pub sets: BTreeMap<String, CellSet>,
    pub field: Option<CellField>,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn expected_passed(&self) -> Option<bool> {
        self.report.expected_check.as_ref().map(|c| c.passed)
    }

    /// 0 on success, 2 when an expected value is missed.
    pub fn exit_code(&self) -> i32 {
        match self.expected_passed() {
            Some(false) => 2,
            _ => 0,
        }
    }
}

struct Collector<'a> {
    domain: &'a MeshDomain,
    energies: BTreeMap<String, EnergyReport>,
    sets: BTreeMap<String, CellSet>,
    metrics: BTreeMap<String, f64>,
    diagnostics: BTreeMap<String, Value>,
}

impl Collector<'_> {
    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn set(&mut self, name: &str, set: CellSet) {
        self.sets.insert(name.to_string(), set);
    }

    fn note(&mut self, name: &str, value: Value) {
        self.diagnostics.insert(name.to_string(), value);
    }

    fn fraction(&self, a: &CellSet, b: &CellSet) -> f64 {
        a.sym_diff_fraction(self.domain, b)
    }
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome, ScenarioError> {
    let solver = opts.solver.unwrap_or(scenario.solver);
    let seed = opts.seed.unwrap_or(scenario.seed);
    let domain = scenario.build_domain()?;
    log::info!("scenario {}: {} cells, solver {solver}", scenario.name, domain.num_cells());
    let mut c = Collector {
        domain: &domain,
        energies: BTreeMap::new(),
        sets: BTreeMap::new(),
        metrics: BTreeMap::new(),
        diagnostics: BTreeMap::new(),
    };
    let mut field = None;
    let h = domain.h().unwrap_or(0.0);

    let needs_data = matches!(
        solver,
        SolverKind::Mincut | SolverKind::Relaxed | SolverKind::Both | SolverKind::Lambda
    );
    let bd = if needs_data {
        Some(scenario.boundary_data(&domain, opts.balance_tol)?)
    } else {
        None
    };

    if let (Some(bd), true) = (&bd, matches!(solver, SolverKind::Mincut | SolverKind::Both)) {
        let sol = solve_restricted(&domain, bd)?;
        c.metric("total", sol.minimal.report.total);
        c.metric("plus_min", sol.plus.min_energy);
        c.metric("minus_min", sol.minus.min_energy);
        c.metric("maximal_total", sol.maximal.report.total);
        c.metric("resolution", sol.resolution());
        c.metric("e1_measure", sol.minimal.e1.measure(&domain));
        c.metric("e2_measure", sol.minimal.e2.measure(&domain));
        let diff = sol.minimal.e1.sym_diff_measure(&domain, &sol.maximal.e1)
            + sol.minimal.e2.sym_diff_measure(&domain, &sol.maximal.e2);
        c.metric("minimal_maximal_sym_diff", diff);
        let agreement = boundary_agreement_report(&domain, bd, &sol.minimal);
        c.metric("trace_minus_one", agreement.on_minus_one);
        c.metric("trace_plus_one", agreement.on_plus_one);
        c.metric("perimeter_e1", agreement.perimeter_e1);
        c.metric("inequality_slack", agreement.inequality_slack);
        c.metric("boundary_ratio", agreement.ratio);
        let lg = check_least_gradient(&domain, &sol.minimal.e1, LeastGradientMode::Random { samples: 2000, seed })?;
        c.metric("least_gradient_improvement", lg.improvement);
        c.note("least_gradient_checked", json!(lg.checked));
        if let Some(cfg) = scenario.agreement {
            let check = check_boundary_agreement(&domain, bd, &sol.minimal.e1, cfg.margin_cells * h)?;
            c.metric("agreement_failures", check.failures.len() as f64);
            c.note("agreement_checked", json!(check.checked));
        }
        c.note("warnings", json!(sol.warnings));
        c.note(
            "flow",
            json!({"plus": sol.plus.stats, "minus": sol.minus.stats}),
        );
        c.energies.insert("minimal".into(), sol.minimal.report);
        c.energies.insert("maximal".into(), sol.maximal.report);
        c.set("minimal_e1", sol.minimal.e1);
        c.set("minimal_e2", sol.minimal.e2);
        c.set("maximal_e1", sol.maximal.e1);
        c.set("maximal_e2", sol.maximal.e2);
    }

    if let (Some(bd), true) = (&bd, matches!(solver, SolverKind::Relaxed | SolverKind::Both)) {
        let ropts = scenario.relaxed.unwrap_or_default();
        let r = solve_relaxed(&domain, bd, &ropts)?;
        c.metric("relaxed_total", r.report.total);
        c.metric("relaxed_mesh_total", r.mesh_report.total);
        c.metric("relaxed_residual", r.residual);
        c.metric("relaxed_iterations", r.iterations as f64);
        c.note("relaxed_converged", json!(r.converged));
        let Thresholds { t1, t2 } = scenario.thresholds;
        let t = threshold_levels(&domain, bd, &r.field, t1, t2)?;
        c.metric("threshold_total", t.report.total);
        c.energies.insert("relaxed".into(), r.report);
        c.energies.insert("relaxed_mesh".into(), r.mesh_report);
        c.energies.insert("threshold".into(), t.report);
        c.set("threshold_e1", t.e1);
        c.set("threshold_e2", t.e2);
        field = Some(r.field);
    }

    if let (Some(bd), SolverKind::Lambda) = (&bd, solver) {
        let cfg = scenario.lambda.clone().unwrap_or_default();
        let lopts = cfg.options.unwrap_or_default();
        let verdict = check_unrestricted(&domain, bd, &lopts)?;
        c.metric("lambda", verdict.lambda);
        c.metric("set_min", verdict.min_set_energy);
        c.note("classification", json!(verdict.classification.to_string()));
        c.note("consistent", json!(verdict.consistent));
        let report = compute_lambda(&domain, bd, &lopts)?;
        c.metric("lambda_mean_residual", report.mean_residual);
        c.metric("lambda_pairing_residual", report.pairing_residual);
        c.metric("lambda_gap_estimate", report.gap_estimate);
        c.metric("lambda_iterations", report.iterations as f64);
        for tau in cfg.scales {
            let scaled = compute_lambda(&domain, &bd.scaled(&domain, tau), &lopts)?;
            c.metric(format!("lambda_scaled_{tau}"), scaled.lambda);
        }
        if cfg.star_norm {
            let s = compute_star_norm(&domain, bd, &lopts)?;
            c.metric("star_norm", s.star_norm);
        }
    }

    if solver == SolverKind::Dirichlet {
        let cfg = scenario
            .dirichlet
            .as_ref()
            .ok_or_else(|| ScenarioError::Invalid("solver dirichlet needs a [dirichlet] table".into()))?;
        let selector = make_boundary_data(&domain, &BoundarySpec::new(cfg.collar.clone()).with_default(0.0))?;
        let n = domain.num_cells();
        let (mut fixed_in, mut fixed_out) = (CellSet::empty(n), CellSet::empty(n));
        for (b, &v) in domain.boundary().iter().zip(selector.values()) {
            if v > 0.0 {
                fixed_in.insert(b.cell);
            } else if v < 0.0 {
                fixed_out.insert(b.cell);
            }
        }
        let r = solve_dirichlet_leastgradient(&domain, &fixed_in, &fixed_out)?;
        c.metric("dirichlet_perimeter", r.min_energy);
        c.metric("dirichlet_area", r.minimal_set.measure(&domain));
        c.metric("dirichlet_maximal_area", r.maximal_set.measure(&domain));
        c.set("dirichlet_minimal", r.minimal_set);
        c.set("dirichlet_maximal", r.maximal_set);
    }

    if solver == SolverKind::Stability {
        let cfg = scenario
            .stability
            .as_ref()
            .ok_or_else(|| ScenarioError::Invalid("solver stability needs a [stability] table".into()))?;
        let to_data = |pieces: &[BoundaryPiece], default: Option<f64>| -> Result<BoundaryData, ScenarioError> {
            let spec = BoundarySpec {
                pieces: pieces.to_vec(),
                default,
            };
            balance(&domain, make_boundary_data(&domain, &spec)?, true, None)
        };
        let data = cfg
            .steps
            .iter()
            .map(|s| to_data(&s.pieces, s.default))
            .collect::<Result<Vec<_>, _>>()?;
        let limit = cfg.limit.as_ref().map(|l| to_data(&l.pieces, l.default)).transpose()?;
        let run = stability_run_data(&domain, data, limit)?;
        for (k, (step, sol)) in cfg.steps.iter().zip(&run.solutions).enumerate() {
            let i = k + 1;
            c.metric(format!("step{i}_total"), sol.report.total);
            if let Some(r) = &step.reference_e1 {
                let f = c.fraction(&sol.e1, &r.cells(&domain)?);
                c.metric(format!("step{i}_e1_ref"), f);
            }
            if let Some(r) = &step.reference_e2 {
                let f = c.fraction(&sol.e2, &r.cells(&domain)?);
                c.metric(format!("step{i}_e2_ref"), f);
            }
            c.set(&format!("step{i}_e1"), sol.e1.clone());
            c.set(&format!("step{i}_e2"), sol.e2.clone());
        }
        if let Some(l) = &run.limit {
            c.metric("e_plus_energy", l.e_plus_energy);
            c.metric("limit_min_energy", l.limit_min_energy);
            c.metric("e_plus_vs_minimal", l.e_plus_vs_minimal_fraction);
            c.metric("limit_resolution", l.resolution);
            c.set("limit_e1", l.limit_solution.e1.clone());
            c.set("limit_e2", l.limit_solution.e2.clone());
        }
        c.note("stability", serde_json::to_value(&run).expect("stability run serializes"));
        c.set("e_plus", run.e_plus.clone());
        c.set("e_minus", run.e_minus.clone());
    }

    for r in &scenario.references {
        let Some(set) = c.sets.get(r.target.key()) else {
            log::warn!("reference {} targets {}, which this run does not compute", r.name, r.target.key());
            continue;
        };
        let f = c.fraction(set, &r.region.cells(&domain)?);
        c.metric(format!("ref_{}", r.name), f);
    }
    if !scenario.candidates.is_empty() {
        let cand_bd = match &bd {
            Some(bd) => bd.clone(),
            None => scenario.boundary_data(&domain, opts.balance_tol)?,
        };
        for cand in &scenario.candidates {
            let e1 = cand.e1.cells(&domain)?;
            let e2 = cand.e2.cells(&domain)?.intersection(&e1.complement());
            let report = energy_pair(&domain, &cand_bd, &e1, &e2);
            c.metric(format!("candidate_{}_energy", cand.name), report.total);
            c.energies.insert(format!("candidate_{}", cand.name), report);
        }
    }
    if !scenario.constancy.is_empty() {
        let u = match c.sets.get("minimal_e1").zip(c.sets.get("minimal_e2")) {
            Some((e1, e2)) => CellField::two_valued(e1, e2),
            None => return Err(ScenarioError::Invalid("constancy checks need a mincut solution".into())),
        };
        for k in &scenario.constancy {
            let cells = k.region.cells(&domain)?;
            c.metric(format!("const_{}", k.name), minority_fraction(&domain, &u, &cells));
        }
    }
    if let (Some(bd), Some(e1)) = (&bd, c.sets.get("minimal_e1")) {
        let m = trace_boundary_measures(&domain, bd, e1, 1e-9);
        c.note("trace_measures", json!(m));
    }

    let expected_check = if scenario.expected.is_empty() {
        None
    } else {
        let items: Vec<ExpectedItem> = scenario
            .expected
            .iter()
            .map(|(metric, e)| {
                let actual = c.metrics.get(metric).copied();
                let allowed = if e.relative { e.tol * e.value.abs() } else { e.tol };
                let passed = actual.is_some_and(|a| (a - e.value).abs() <= allowed);
                ExpectedItem {
                    metric: metric.clone(),
                    expected: e.value,
                    tol: e.tol,
                    relative: e.relative,
                    actual,
                    passed,
                }
            })
            .collect();
        Some(ExpectedCheck {
            passed: items.iter().all(|i| i.passed),
            items,
        })
    };

    let metrics = std::mem::take(&mut c.metrics);
    c.note("metrics", json!(metrics));
    let set_summaries = c
        .sets
        .iter()
        .map(|(k, s)| {
            (
                k.clone(),
                SetSummary {
                    cells: s.count(),
                    measure: s.measure(&domain),
                },
            )
        })
        .collect();
    let report = Report {
        scenario: json!({
            "name": scenario.name,
            "description": scenario.description,
            "solver": solver.to_string(),
            "seed": seed,
        }),
        domain_stats: domain.stats(),
        energies: c.energies,
        sets: set_summaries,
        diagnostics: c.diagnostics,
        expected_check,
    };
    let sets = c.sets;
    let mut outcome = RunOutcome {
        report,
        domain,
        sets,
        field,
        written: Vec::new(),
    };
    if let Some(dir) = &opts.out_dir {
        outcome.written = write_outputs(scenario, &outcome, dir)?;
    }
    Ok(outcome)
}

/// Measure of the cells in `region` whose value differs from the region's
/// majority value, relative to the region's measure.
fn minority_fraction(domain: &MeshDomain, u: &CellField, region: &CellSet) -> f64 {
    let mut by_value: BTreeMap<i64, f64> = BTreeMap::new();
    for c in region.indices() {
        *by_value.entry(u.values()[c].round() as i64).or_default() += domain.cells()[c].mu;
    }
    let total: f64 = by_value.values().sum();
    if total == 0.0 {
        return 0.0;
    }
    let majority = by_value.values().fold(0.0f64, |m, &v| m.max(v));
    (total - majority) / total
}

fn write_outputs(scenario: &Scenario, outcome: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report_path = dir.join(format!("{}.json", scenario.name));
    let text = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    std::fs::write(&report_path, text + "\n")?;
    written.push(report_path);
    if scenario.output.pgm && outcome.domain.grid().is_some() {
        for (name, set) in &outcome.sets {
            let path = dir.join(format!("{}_{name}.pgm", scenario.name));
            std::fs::write(&path, pgm_mask(&outcome.domain, set)?)?;
            written.push(path);
        }
    }
    if let (true, Some(field)) = (scenario.output.csv, &outcome.field) {
        let path = dir.join(format!("{}_field.csv", scenario.name));
        std::fs::write(&path, field_csv(&outcome.domain, field))?;
        written.push(path);
    }
    Ok(written)
}

/// Binary PGM over the bounding grid: 255 in the set, 0 outside it, 128 for
/// grid positions that are not cells. The top row comes first.
pub fn pgm_mask(domain: &MeshDomain, set: &CellSet) -> Result<Vec<u8>, ScenarioError> {
    let grid = domain
        .grid()
        .ok_or_else(|| ScenarioError::Invalid("masks need a grid-structured domain".into()))?;
    let mut out = format!("P5\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for j in (0..grid.ny).rev() {
        for i in 0..grid.nx {
            out.push(match grid.cell_at(i, j) {
                None => 128,
                Some(c) if set.contains(c) => 255,
                Some(_) => 0,
            });
        }
    }
    Ok(out)
}

pub fn field_csv(domain: &MeshDomain, field: &CellField) -> String {
    let mut out = String::from("cell,x,y,u\n");
    for (k, (cell, u)) in domain.cells().iter().zip(field.values()).enumerate() {
        let [x, y] = cell.centroid.unwrap_or([f64::NAN, f64::NAN]);
        out.push_str(&format!("{k},{x},{y},{u}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        assert_eq!(list_scenarios().len(), 9);
        for name in list_scenarios() {
            let s = builtin(name).unwrap();
            assert_eq!(s.name, name);
        }
        assert!(matches!(resolve_scenario("no-such-scenario"), Err(ScenarioError::Unknown(_))));
    }

    #[test]
    fn schema_errors_are_reported() {
        let bad = "name = 'x'\nsolver = 'mincut'\n[domain]\nkind = 'rectangle'\nnx = 4\nbogus = 1\n";
        assert!(matches!(bad.parse::<Scenario>(), Err(ScenarioError::Schema(_))));
        assert!(matches!("not toml [".parse::<Scenario>(), Err(ScenarioError::Schema(_))));
    }

    #[test]
    fn regions() {
        let r = Region::All {
            regions: vec![
                Region::Halfplane {
                    normal: [1.0, 0.0],
                    offset: 0.5,
                },
                Region::Not {
                    region: Box::new(Region::Ball {
                        center: [0.0, 0.0],
                        radius: 0.1,
                    }),
                },
            ],
        };
        assert!(r.contains(0.3, 0.0));
        assert!(!r.contains(0.6, 0.0));
        assert!(!r.contains(0.05, 0.0));
        assert!(!Region::Any { regions: vec![] }.contains(0.0, 0.0));
    }

    #[test]
    fn mesh_info_of_unit_square() {
        let text = "name = 'sq'\nsolver = 'mincut'\n[domain]\nnx = 64\nstencil = 'N4'\n";
        let s: Scenario = text.parse().unwrap();
        let stats = mesh_info(&s).unwrap();
        assert!((stats.total_mu - 1.0).abs() < 1e-12);
        assert_eq!(stats.cells, 4096);
    }

    #[test]
    fn small_run_writes_outputs() {
        let text = r#"
name = "tiny"
solver = "both"
[domain]
nx = 8
stencil = "N8"
[boundary]
default = 0.0
pieces = [
  { kind = "side", side = "bottom", from = 0.0, to = 1.0, value = -1.0 },
  { kind = "side", side = "top", from = 0.0, to = 1.0, value = 1.0 },
]
[relaxed]
max_iter = 2000
[expected]
total = { value = 0.0, tol = 1e-9 }
"#;
        let s: Scenario = text.parse().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario(
            &s,
            &RunOptions {
                out_dir: Some(dir.path().to_path_buf()),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(out.exit_code(), 0);
        assert!(dir.path().join("tiny.json").is_file());
        assert!(dir.path().join("tiny_field.csv").is_file());
        let mask = std::fs::read(dir.path().join("tiny_minimal_e1.pgm")).unwrap();
        assert!(mask.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(mask.len(), 11 + 64);
        let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("tiny.json")).unwrap()).unwrap();
        for key in ["scenario", "domain_stats", "energies", "sets", "diagnostics", "expected_check"] {
            assert!(report.get(key).is_some(), "{key}");
        }
    }
}
