//! Oracles and property checks for the set problems, boundary diagnostics,
//! and the stability experiment driver.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::boundary::{make_boundary_data, BoundaryData, BoundaryError, BoundarySpec};
use crate::energy::{
    energy, energy_pair, energy_set, perimeter, split_check, trace_boundary_measures, whole_space_perimeter_bound,
    CellField, CellSet,
};
use crate::mesh::{BoundaryFace, BoundaryPos, Cell, InteriorFace, MeshDomain, MeshError};
use crate::mincut::{solve_restricted, solve_set_problem, MincutError, Quantizer, Sign, Solution};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("brute force limited to {max} cells, domain has {got}")]
    TooManyCells { max: usize, got: usize },
    #[error("a stability run needs at least one boundary spec")]
    EmptySequence,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Mincut(#[from] MincutError),
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, checked: usize, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.to_string(),
            passed,
            checked,
            detail: detail.into(),
        }
    }
}

pub const BRUTE_FORCE_MAX_CELLS: usize = 20;

#[derive(Debug, Clone)]
pub struct BruteForce {
    pub min_quantized: i64,
    pub min_energy: f64,
    /// Every optimal set, in enumeration order.
    pub optimal: Vec<CellSet>,
}

/// Minimize `I(sign · χ_E)` by enumerating all subsets in Gray-code order,
/// with the same fixed-point arithmetic as the min-cut solver.
pub fn brute_force_min(domain: &MeshDomain, bd: &BoundaryData, sign: Sign) -> Result<BruteForce, AnalysisError> {
    let n = domain.num_cells();
    if n > BRUTE_FORCE_MAX_CELLS {
        return Err(AnalysisError::TooManyCells {
            max: BRUTE_FORCE_MAX_CELLS,
            got: n,
        });
    }
    let q = Quantizer::for_problem(domain, bd)?;
    let caps = q.face_capacities(domain);
    let terms = q.cell_terms(domain, bd, sign);
    let adj = domain.adjacency();
    let mut bits = 0u64;
    let mut value = 0i64;
    let mut best = 0i64;
    let mut optimal = vec![0u64];
    for step in 1u64..(1u64 << n) {
        let c = step.trailing_zeros() as usize;
        let adding = bits & (1 << c) == 0;
        let mut delta = terms[c];
        for &(nb, f) in &adj[c] {
            delta += if bits & (1 << nb) != 0 { -caps[f] } else { caps[f] };
        }
        if adding {
            value += delta;
            bits |= 1 << c;
        } else {
            value -= delta;
            bits &= !(1 << c);
        }
        if value < best {
            best = value;
            optimal.clear();
        }
        if value == best {
            optimal.push(bits);
        }
    }
    Ok(BruteForce {
        min_quantized: best,
        min_energy: q.to_energy(best),
        optimal: optimal.into_iter().map(|b| CellSet::from_bits(n, b)).collect(),
    })
}

/// Check that `S ∩ S'` and `S ∪ S'` are optimal whenever `S` and `S'` are.
pub fn check_lattice(
    domain: &MeshDomain,
    bd: &BoundaryData,
    sign: Sign,
    s: &CellSet,
    s2: &CellSet,
) -> Result<Verdict, AnalysisError> {
    let q = Quantizer::for_problem(domain, bd)?;
    let opt = solve_set_problem(domain, bd, sign)?.min_energy_quantized;
    let e = |set: &CellSet| q.set_energy(domain, bd, set, sign);
    let (a, b) = (e(s), e(s2));
    if a != opt || b != opt {
        return Err(AnalysisError::InvalidArgument(format!(
            "inputs are not optimal ({a}, {b} vs {opt})"
        )));
    }
    let (meet, join) = (e(&s.intersection(s2)), e(&s.union(s2)));
    Ok(Verdict::new(
        "lattice-closure",
        meet == opt && join == opt,
        2,
        format!("optimum {opt}, intersection {meet}, union {join} (quantized)"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeastGradientMode {
    Exhaustive,
    Random { samples: usize, seed: u64 },
}

pub const LEAST_GRADIENT_MAX_INTERIOR: usize = 16;

#[derive(Debug, Clone)]
pub struct LeastGradientVerdict {
    pub passed: bool,
    pub checked: usize,
    /// Largest perimeter decrease found, in energy units.
    pub improvement: f64,
    pub best_violation: Option<CellSet>,
}

/// Compare the perimeter of `E` with that of every (or randomly sampled) `F`
/// that differs from `E` only on cells owning no boundary face.
pub fn check_least_gradient(
    domain: &MeshDomain,
    set: &CellSet,
    mode: LeastGradientMode,
) -> Result<LeastGradientVerdict, AnalysisError> {
    let interior: Vec<usize> = (0..domain.num_cells()).filter(|&c| !domain.owns_boundary(c)).collect();
    let q = Quantizer::for_perimeter(domain)?;
    let caps = q.face_capacities(domain);
    let adj = domain.adjacency();
    let mut current = set.clone();
    // Perimeter change from toggling cell `c` in `current`.
    let toggle_delta = |current: &CellSet, c: usize| -> i64 {
        adj[c]
            .iter()
            .map(|&(nb, f)| if current.contains(nb) == current.contains(c) { caps[f] } else { -caps[f] })
            .sum()
    };
    let mut best: Option<(i64, CellSet)> = None;
    let mut record = |delta: i64, candidate: &CellSet| {
        if delta < 0 && best.as_ref().is_none_or(|b| delta < b.0) {
            best = Some((delta, candidate.clone()));
        }
    };
    let mut checked = 0;
    match mode {
        LeastGradientMode::Exhaustive => {
            let k = interior.len();
            if k > LEAST_GRADIENT_MAX_INTERIOR {
                return Err(AnalysisError::TooManyCells {
                    max: LEAST_GRADIENT_MAX_INTERIOR,
                    got: k,
                });
            }
            let mut delta = 0i64;
            for step in 1u64..(1u64 << k) {
                let c = interior[step.trailing_zeros() as usize];
                delta += toggle_delta(&current, c);
                toggle(&mut current, c);
                checked += 1;
                record(delta, &current);
            }
        }
        LeastGradientMode::Random { samples, seed } => {
            if interior.is_empty() {
                return Ok(LeastGradientVerdict {
                    passed: true,
                    checked: 0,
                    improvement: 0.0,
                    best_violation: None,
                });
            }
            let is_interior = CellSet::from_indices(domain.num_cells(), interior.iter().copied());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &c in &interior {
                record(toggle_delta(&current, c), &toggled(&current, c));
                checked += 1;
            }
            for _ in 0..samples {
                // Grow a random connected blob of interior cells and flip it.
                let size = rng.random_range(2..=12);
                let mut blob = vec![*interior.choose(&mut rng).expect("non-empty")];
                let mut delta = toggle_delta(&current, blob[0]);
                toggle(&mut current, blob[0]);
                while blob.len() < size {
                    let from = *blob.choose(&mut rng).expect("non-empty");
                    let options: Vec<usize> = adj[from]
                        .iter()
                        .map(|&(nb, _)| nb)
                        .filter(|&nb| is_interior.contains(nb) && !blob.contains(&nb))
                        .collect();
                    let Some(&next) = options.choose(&mut rng) else {
                        break;
                    };
                    delta += toggle_delta(&current, next);
                    toggle(&mut current, next);
                    blob.push(next);
                }
                record(delta, &current);
                checked += 1;
                for &c in &blob {
                    toggle(&mut current, c);
                }
            }
        }
    }
    Ok(match best {
        None => LeastGradientVerdict {
            passed: true,
            checked,
            improvement: 0.0,
            best_violation: None,
        },
        Some((delta, witness)) => LeastGradientVerdict {
            passed: false,
            checked,
            improvement: -q.to_energy(delta),
            best_violation: Some(witness),
        },
    })
}

fn toggle(set: &mut CellSet, c: usize) {
    if set.contains(c) {
        set.remove(c);
    } else {
        set.insert(c);
    }
}

fn toggled(set: &CellSet, c: usize) -> CellSet {
    let mut out = set.clone();
    toggle(&mut out, c);
    out
}

/// Boundary behaviour of `E1` for data with values in `{−1, 0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryAgreementReport {
    /// `P(Ω, ∂_{E1}Ω ∩ {f = −1})`.
    pub on_minus_one: f64,
    /// `P(Ω, ∂_{E1}Ω ∩ {f = 1})`.
    pub on_plus_one: f64,
    pub perimeter_e1: f64,
    /// `P(Ω, ∂_{E1}Ω ∩ {f=−1}) − P(E1, Ω) − P(Ω, ∂_{E1}Ω ∩ {f=1})`; nonnegative
    /// up to quantization for a solution.
    pub inequality_slack: f64,
    /// `P(Ω, ∂_{E1}Ω ∩ {f=1}) / P(Ω, ∂_{E1}Ω ∩ {f=−1})`, zero when undefined.
    pub ratio: f64,
}

pub fn boundary_agreement_report(domain: &MeshDomain, bd: &BoundaryData, solution: &Solution) -> BoundaryAgreementReport {
    let m = trace_boundary_measures(domain, bd, &solution.e1, 1e-9);
    let perimeter_e1 = perimeter(domain, &solution.e1);
    BoundaryAgreementReport {
        on_minus_one: m.on_minus_one,
        on_plus_one: m.on_plus_one,
        perimeter_e1,
        inequality_slack: m.on_minus_one - perimeter_e1 - m.on_plus_one,
        ratio: if m.on_minus_one > 0.0 { m.on_plus_one / m.on_minus_one } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementCheck {
    pub passed: bool,
    /// Faces with `f = −1` farther than the margin from `{f ≠ −1}`.
    pub checked: usize,
    /// Boundary face indices among those whose owner is not in `E1`.
    pub failures: Vec<usize>,
}

/// Every face with `f = −1` whose boundary distance to `{f ≠ −1}` exceeds
/// `margin` must be owned by a cell of `e1`.
pub fn check_boundary_agreement(
    domain: &MeshDomain,
    bd: &BoundaryData,
    e1: &CellSet,
    margin: f64,
) -> Result<AgreementCheck, AnalysisError> {
    let length = domain
        .boundary_length()
        .ok_or_else(|| AnalysisError::InvalidArgument("boundary has no arc-length parametrization".into()))?;
    let param = |b: &BoundaryFace| {
        b.pos
            .arc_param()
            .ok_or_else(|| AnalysisError::InvalidArgument("boundary face without position".into()))
    };
    let is_minus = |f: f64| (f + 1.0).abs() <= 1e-9;
    let mut others = Vec::new();
    for (b, &f) in domain.boundary().iter().zip(bd.values()) {
        if !is_minus(f) {
            others.push(param(b)?);
        }
    }
    others.sort_by(f64::total_cmp);
    let distance = |s: f64| -> f64 {
        if others.is_empty() {
            return f64::INFINITY;
        }
        let k = others.partition_point(|&t| t < s);
        let after = others[k % others.len()];
        let before = others[(k + others.len() - 1) % others.len()];
        let d1 = (after - s).rem_euclid(length);
        let d2 = (s - before).rem_euclid(length);
        d1.min(d2)
    };
    let mut checked = 0;
    let mut failures = Vec::new();
    for (k, (b, &f)) in domain.boundary().iter().zip(bd.values()).enumerate() {
        if is_minus(f) && distance(param(b)?) > margin {
            checked += 1;
            if !e1.contains(b.cell) {
                failures.push(k);
            }
        }
    }
    Ok(AgreementCheck {
        passed: failures.is_empty(),
        checked,
        failures,
    })
}

/// A sequence of data, their minimal solutions and the limit constructions.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityRun {
    #[serde(skip)]
    pub data: Vec<BoundaryData>,
    #[serde(skip)]
    pub solutions: Vec<Solution>,
    pub energies: Vec<f64>,
    /// `‖f_k − f_m‖_{L¹(∂Ω)}` for all pairs.
    pub distances: Vec<Vec<f64>>,
    /// `‖u_k − u_{k+1}‖_{L¹(Ω)}`.
    pub consecutive_l1: Vec<f64>,
    /// `µ(E1^k △ E1^{k+1}) / µ(Ω)`.
    pub consecutive_e1_fraction: Vec<f64>,
    #[serde(skip)]
    pub e_plus: CellSet,
    #[serde(skip)]
    pub e_minus: CellSet,
    pub limit: Option<LimitComparison>,
    /// Steps where `‖f_k − f_{k+1}‖ > 2^{−k}`.
    pub hypothesis_warnings: Vec<String>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitComparison {
    /// `I_{f∞}(χ_{E₊} − χ_{Ω∖E₊})`.
    pub e_plus_energy: f64,
    pub limit_min_energy: f64,
    pub resolution: f64,
    /// `µ(E₊ △ E1) / µ(Ω)` for the minimal `E1` of the limit data.
    pub e_plus_vs_minimal_fraction: f64,
    pub energy_matches: bool,
    #[serde(skip)]
    pub limit_solution: Solution,
}

/// Relative tolerance of the limit-energy comparison.
pub const LIMIT_ENERGY_TOLERANCE: f64 = 0.01;

/// Solve each data set of a sequence and test the stability estimates on
/// the computed prefix.
pub fn stability_run(
    domain: &MeshDomain,
    specs: &[BoundarySpec],
    limit_spec: Option<&BoundarySpec>,
) -> Result<StabilityRun, AnalysisError> {
    let data = specs
        .iter()
        .map(|s| Ok(make_boundary_data(domain, s)?.rebalance(domain)?))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let limit = match limit_spec {
        Some(s) => Some(make_boundary_data(domain, s)?.rebalance(domain)?),
        None => None,
    };
    stability_run_data(domain, data, limit)
}

pub fn stability_run_data(
    domain: &MeshDomain,
    data: Vec<BoundaryData>,
    limit: Option<BoundaryData>,
) -> Result<StabilityRun, AnalysisError> {
    if data.is_empty() {
        return Err(AnalysisError::EmptySequence);
    }
    let n = data.len();
    let total = domain.total_measure();
    let mut solutions = Vec::with_capacity(n);
    let mut energies = Vec::with_capacity(n);
    let mut slack = Vec::with_capacity(n);
    for (k, bd) in data.iter().enumerate() {
        let r = solve_restricted(domain, bd)?;
        log::info!("step {}: total {:.6}", k + 1, r.min_total());
        energies.push(r.min_total());
        slack.push(r.resolution());
        solutions.push(r.minimal);
    }
    let distances: Vec<Vec<f64>> = data
        .iter()
        .map(|a| data.iter().map(|b| a.l1_distance(domain, b)).collect())
        .collect();
    let fields: Vec<CellField> = solutions.iter().map(|s| CellField::two_valued(&s.e1, &s.e2)).collect();
    let consecutive_l1 = fields
        .windows(2)
        .map(|w| {
            domain
                .cells()
                .iter()
                .zip(w[0].values().iter().zip(w[1].values()))
                .map(|(c, (a, b))| c.mu * (a - b).abs())
                .sum()
        })
        .collect();
    let consecutive_e1_fraction = solutions
        .windows(2)
        .map(|w| w[0].e1.sym_diff_measure(domain, &w[1].e1) / total)
        .collect();

    let cells = domain.num_cells();
    let mut e_plus = CellSet::full(cells);
    let mut e_minus = CellSet::empty(cells);
    for start in 0..n {
        let tail = &solutions[start..];
        let union = tail.iter().fold(CellSet::empty(cells), |acc, s| acc.union(&s.e1));
        let meet = tail.iter().fold(CellSet::full(cells), |acc, s| acc.intersection(&s.e1));
        e_plus = e_plus.intersection(&union);
        e_minus = e_minus.union(&meet);
    }

    let mut hypothesis_warnings = Vec::new();
    for k in 0..n.saturating_sub(1) {
        let bound = 0.5f64.powi(k as i32 + 1);
        if distances[k][k + 1] > bound {
            hypothesis_warnings.push(format!(
                "‖f_{} − f_{}‖ = {:.4} exceeds 2^-{}",
                k + 1,
                k + 2,
                distances[k][k + 1],
                k + 1
            ));
        }
    }
    for w in &hypothesis_warnings {
        log::warn!("{w}");
    }

    let mut violations = Vec::new();
    for k in 0..n {
        for m in k + 1..n {
            let lhs = (energies[k] - energies[m]).abs();
            let rhs = distances[k][m] + slack[k] + slack[m];
            if lhs > rhs {
                violations.push(format!(
                    "perturbation bound fails for steps {} and {}: {lhs:.6} > {rhs:.6}",
                    k + 1,
                    m + 1
                ));
            }
        }
    }
    for last in 0..n {
        let q = Quantizer::for_problem(domain, &data[last])?;
        let own = q.set_energy(domain, &data[last], &solutions[last].e1, Sign::Plus);
        for first in 0..last {
            let union = solutions[first..=last]
                .iter()
                .fold(CellSet::empty(cells), |acc, s| acc.union(&s.e1));
            let excess_q = q.set_energy(domain, &data[last], &union, Sign::Plus) - own;
            let bound: f64 = 2.0 * (first..last).map(|j| distances[j][j + 1]).sum::<f64>();
            let excess = q.to_energy(excess_q);
            if excess_q < 0 || excess > bound + 2.0 * q.resolution(domain) {
                violations.push(format!(
                    "chain inequality fails for steps {}..={}: excess {excess:.6}, bound {bound:.6}",
                    first + 1,
                    last + 1
                ));
            }
        }
    }

    let limit = match limit {
        None => None,
        Some(f) => {
            let r = solve_restricted(domain, &f)?;
            let complement = e_plus.complement();
            let e_plus_energy = energy_pair(domain, &f, &e_plus, &complement).total;
            let limit_min_energy = r.min_total();
            let resolution = r.resolution();
            let energy_matches =
                (e_plus_energy - limit_min_energy).abs() <= resolution + LIMIT_ENERGY_TOLERANCE * limit_min_energy.abs();
            if !energy_matches {
                violations.push(format!(
                    "E₊ energy {e_plus_energy:.6} differs from the limit minimum {limit_min_energy:.6}"
                ));
            }
            Some(LimitComparison {
                e_plus_energy,
                limit_min_energy,
                resolution,
                e_plus_vs_minimal_fraction: e_plus.sym_diff_measure(domain, &r.minimal.e1) / total,
                energy_matches,
                limit_solution: r.minimal,
            })
        }
    };

    Ok(StabilityRun {
        data,
        solutions,
        energies,
        distances,
        consecutive_l1,
        consecutive_e1_fraction,
        e_plus,
        e_minus,
        limit,
        hypothesis_warnings,
        violations,
    })
}

/// Connected random graph with balanced data in `[−1, 1]`.
///
/// A random spanning tree is completed by extra edges with probability
/// `density`; about half of the cells own a boundary face.
pub fn random_instance(seed: u64, n_cells: usize, density: f64) -> Result<(MeshDomain, BoundaryData), AnalysisError> {
    if n_cells < 2 {
        return Err(AnalysisError::InvalidArgument("need at least two cells".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(AnalysisError::InvalidArgument(format!("density {density} not in [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<Cell> = (0..n_cells)
        .map(|_| Cell {
            mu: rng.random_range(0.5..2.0),
            centroid: None,
        })
        .collect();
    let mut faces = Vec::new();
    let mut linked = vec![vec![false; n_cells]; n_cells];
    for b in 1..n_cells {
        let a = rng.random_range(0..b);
        linked[a][b] = true;
        faces.push(InteriorFace {
            a,
            b,
            w: rng.random_range(0.1..2.0),
        });
    }
    for a in 0..n_cells {
        for b in a + 1..n_cells {
            if !linked[a][b] && rng.random_bool(density) {
                faces.push(InteriorFace {
                    a,
                    b,
                    w: rng.random_range(0.1..2.0),
                });
            }
        }
    }
    let mut owners: Vec<usize> = (0..n_cells).filter(|_| rng.random_bool(0.5)).collect();
    while owners.len() < 2 {
        let c = rng.random_range(0..n_cells);
        if !owners.contains(&c) {
            owners.push(c);
        }
    }
    let boundary: Vec<BoundaryFace> = owners
        .iter()
        .map(|&cell| BoundaryFace {
            cell,
            p: rng.random_range(0.1..1.5),
            pos: BoundaryPos::Free { s: None },
        })
        .collect();
    let domain = MeshDomain::from_parts(cells, faces, boundary)?;
    let mut values: Vec<f64> = (0..domain.boundary().len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    values[0] = rng.random_range(0.1..=1.0);
    values[1] = -rng.random_range(0.1..=1.0);
    let bd = BoundaryData::from_values(&domain, values)?.rebalance(&domain)?;
    Ok((domain, bd))
}

/// `I(χ_{E∩K}) + I(χ_{E∪K}) − I(χ_E) − I(χ_K)`, nonpositive up to rounding.
pub fn submodularity_defect(domain: &MeshDomain, bd: &BoundaryData, e: &CellSet, k: &CellSet) -> f64 {
    let i = |s: &CellSet| energy_set(domain, bd, s, 1.0).total;
    i(&e.intersection(k)) + i(&e.union(k)) - i(e) - i(k)
}

/// `|min I_f − min I_h| ≤ ‖f − h‖_{L¹(∂Ω)}` for the restricted minima.
pub fn check_perturbation(domain: &MeshDomain, f: &BoundaryData, h: &BoundaryData) -> Result<Verdict, AnalysisError> {
    let a = solve_restricted(domain, f)?;
    let b = solve_restricted(domain, h)?;
    let lhs = (a.min_total() - b.min_total()).abs();
    let rhs = f.l1_distance(domain, h);
    let slack = a.resolution() + b.resolution();
    Ok(Verdict::new(
        "perturbation-bound",
        lhs <= rhs + slack,
        1,
        format!("|Δ min| = {lhs:.3e}, ‖f − h‖ = {rhs:.3e}"),
    ))
}

/// The optimal family of `I(−χ_·)` is the family of complements of the
/// optimal sets of `I(χ_·)`.
pub fn check_complement_duality(domain: &MeshDomain, bd: &BoundaryData) -> Result<Verdict, AnalysisError> {
    let plus = brute_force_min(domain, bd, Sign::Plus)?;
    let minus = brute_force_min(domain, bd, Sign::Minus)?;
    let mut expected: Vec<CellSet> = plus.optimal.iter().map(CellSet::complement).collect();
    let mut got = minus.optimal.clone();
    let key = |s: &CellSet| s.indices().collect::<Vec<_>>();
    expected.sort_by_key(key);
    got.sort_by_key(key);
    Ok(Verdict::new(
        "complement-duality",
        expected == got,
        got.len(),
        format!("{} optimal sets for +, {} for −", plus.optimal.len(), minus.optimal.len()),
    ))
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> CellSet {
    CellSet::from_fn(n, |_| rng.random_bool(0.5))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Property suite on `instances` random graphs with at most `max_cells`
/// cells. One verdict per property.
pub fn run_oracle_suite(seed: u64, instances: usize, max_cells: usize) -> Result<Vec<Verdict>, AnalysisError> {
    if !(4..=BRUTE_FORCE_MAX_CELLS).contains(&max_cells) {
        return Err(AnalysisError::InvalidArgument(format!(
            "max_cells must lie in 4..={BRUTE_FORCE_MAX_CELLS}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures: Vec<Vec<String>> = vec![Vec::new(); 9];
    let mut counts = [0usize; 9];
    let mut fail = |slot: usize, msg: String| failures[slot].push(msg);
    for instance in 0..instances {
        let n = rng.random_range(4..=max_cells);
        let density = rng.random_range(0.1..0.6);
        let (domain, bd) = random_instance(rng.random(), n, density)?;
        let tag = format!("instance {instance} ({n} cells)");

        // 0: oracle equivalence, 1: lattice closure
        for sign in [Sign::Plus, Sign::Minus] {
            let cut = solve_set_problem(&domain, &bd, sign)?;
            let brute = brute_force_min(&domain, &bd, sign)?;
            counts[0] += 1;
            if cut.min_energy_quantized != brute.min_quantized {
                fail(0, format!("{tag}: mincut {} vs brute force {}", cut.min_energy_quantized, brute.min_quantized));
            }
            let q = Quantizer::for_problem(&domain, &bd)?;
            for s in &brute.optimal {
                counts[1] += 1;
                if !(cut.minimal_set.is_subset(s) && s.is_subset(&cut.maximal_set)) {
                    fail(1, format!("{tag}: optimal set outside [minimal, maximal]"));
                }
            }
            let pairs = brute.optimal.len().min(8);
            for a in &brute.optimal[..pairs] {
                for b in &brute.optimal[..pairs] {
                    counts[1] += 1;
                    let meet = q.set_energy(&domain, &bd, &a.intersection(b), sign);
                    let join = q.set_energy(&domain, &bd, &a.union(b), sign);
                    if meet != brute.min_quantized || join != brute.min_quantized {
                        fail(1, format!("{tag}: intersection or union not optimal"));
                    }
                }
            }
        }

        // 2: submodularity
        for _ in 0..3 {
            let (e, k) = (random_set(&mut rng, n), random_set(&mut rng, n));
            counts[2] += 1;
            let defect = submodularity_defect(&domain, &bd, &e, &k);
            if defect > 1e-12 {
                fail(2, format!("{tag}: submodularity defect {defect:e}"));
            }
        }

        // 3: splitting identity, 4: complement symmetry, 6: perimeter bound
        for _ in 0..3 {
            let u = CellField((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect());
            counts[3] += 1;
            let split = split_check(&domain, &bd, &u);
            if split.relative_defect() > 1e-12 {
                fail(3, format!("{tag}: splitting defect {:e}", split.relative_defect()));
            }
            let e = random_set(&mut rng, n);
            counts[4] += 1;
            let direct = energy_set(&domain, &bd, &e, 1.0).total;
            let flipped = energy_set(&domain, &bd, &e.complement(), -1.0).total;
            let scale = energy(&domain, &bd, &CellField::indicator(&e, 1.0)).tv_interior
                + domain.boundary_measure();
            if (direct - flipped).abs() > 1e-12 * scale {
                fail(4, format!("{tag}: complement symmetry {direct} vs {flipped}"));
            }
            counts[6] += 1;
            if let Err(err) = whole_space_perimeter_bound(&domain, &bd, &e) {
                fail(6, format!("{tag}: {err}"));
            }
        }
        if relative(energy_set(&domain, &bd, &CellSet::full(n), 1.0).total, 0.0) > 1e-12 {
            fail(4, format!("{tag}: rebalanced data not balanced"));
        }

        // 5: perturbation bound
        let h = perturbed(&domain, &bd, &mut rng)?;
        counts[5] += 1;
        let v = check_perturbation(&domain, &bd, &h)?;
        if !v.passed {
            fail(5, format!("{tag}: {}", v.detail));
        }

        // 7: chain inequality on a 4-term sequence
        let mut seq = vec![bd.clone()];
        for _ in 0..3 {
            let next = perturbed(&domain, seq.last().expect("non-empty"), &mut rng)?;
            seq.push(next);
        }
        counts[7] += 1;
        let run = stability_run_data(&domain, seq, None)?;
        for v in run.violations {
            fail(7, format!("{tag}: {v}"));
        }

        // 8: complement duality of the optimal families
        counts[8] += 1;
        let v = check_complement_duality(&domain, &bd)?;
        if !v.passed {
            fail(8, format!("{tag}: {}", v.detail));
        }
    }
    let names = [
        "oracle-equivalence",
        "lattice-closure",
        "submodularity",
        "splitting-identity",
        "complement-symmetry",
        "perturbation-bound",
        "whole-space-perimeter-bound",
        "chain-inequality",
        "complement-duality",
    ];
    Ok(names
        .iter()
        .zip(failures)
        .zip(counts)
        .map(|((name, fails), checked)| {
            let detail = match fails.first() {
                None => format!("{checked} checks passed"),
                Some(first) => format!("{} of {checked} failed; first: {first}", fails.len()),
            };
            Verdict::new(name, fails.is_empty(), checked, detail)
        })
        .collect())
}

/// Random balanced data near `bd`, values kept in `[−1, 1]`.
fn perturbed(domain: &MeshDomain, bd: &BoundaryData, rng: &mut ChaCha8Rng) -> Result<BoundaryData, AnalysisError> {
    let mut values: Vec<f64> = bd
        .values()
        .iter()
        .map(|v| (v + rng.random_range(-0.3..0.3)).clamp(-1.0, 1.0))
        .collect();
    if values.iter().all(|&v| v >= 0.0) {
        values[0] = -0.5;
    }
    if values.iter().all(|&v| v <= 0.0) {
        values[0] = 0.5;
    }
    Ok(BoundaryData::from_values(domain, values)?.rebalance(domain)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid_rectangle, Rect, Side, Stencil};

    fn path_graph() -> (MeshDomain, BoundaryData) {
        let text = r#"{"cells":[{"id":0,"mu":1.0},{"id":1,"mu":1.0}],
            "faces":[{"a":0,"b":1,"w":1.0}],
            "boundary":[{"cell":0,"p":1.0},{"cell":1,"p":1.0}]}"#;
        let d = MeshDomain::from_graph_json(text).unwrap();
        let bd = BoundaryData::from_values(&d, vec![-1.0, 1.0]).unwrap();
        (d, bd)
    }

    #[test]
    fn brute_force_on_two_cells() {
        let (d, bd) = path_graph();
        let r = brute_force_min(&d, &bd, Sign::Plus).unwrap();
        assert_eq!(r.min_quantized, 0);
        let mut sets: Vec<Vec<usize>> = r.optimal.iter().map(|s| s.indices().collect()).collect();
        sets.sort();
        assert_eq!(sets, vec![vec![], vec![0], vec![0, 1]]);
    }

    #[test]
    fn zero_data_family_is_empty_and_full() {
        let (d, _) = random_instance(7, 10, 0.3).unwrap();
        let bd = BoundaryData::zeros(&d);
        let r = brute_force_min(&d, &bd, Sign::Plus).unwrap();
        assert_eq!(r.min_quantized, 0);
        assert_eq!(r.optimal, vec![CellSet::empty(10), CellSet::full(10)]);
    }

    #[test]
    fn random_instances_are_deterministic_and_balanced() {
        let (d1, b1) = random_instance(42, 12, 0.3).unwrap();
        let (d2, b2) = random_instance(42, 12, 0.3).unwrap();
        assert_eq!(d1.faces(), d2.faces());
        assert_eq!(b1, b2);
        assert!(b1.residual().abs() < 1e-14);
        assert!(b1.within_unit_bound());
        assert!(brute_force_min(&random_instance(1, 21, 0.2).unwrap().0, &b1, Sign::Plus).is_err());
    }

    #[test]
    fn least_gradient_detects_islands() {
        let d = build_grid_rectangle(6, 6, Rect::UNIT, |_, _| 1.0, Stencil::N4, 24).unwrap();
        let n = d.num_cells();
        let empty = CellSet::empty(n);
        assert!(check_least_gradient(&d, &empty, LeastGradientMode::Exhaustive).unwrap().passed);
        let lower = CellSet::from_centroids(&d, |_, y| y < 0.5);
        assert!(check_least_gradient(&d, &lower, LeastGradientMode::Exhaustive).unwrap().passed);
        let island = d.grid().unwrap().cell_at(2, 4).unwrap();
        let mut bad = lower.clone();
        bad.insert(island);
        let v = check_least_gradient(&d, &bad, LeastGradientMode::Exhaustive).unwrap();
        assert!(!v.passed);
        assert_eq!(v.best_violation.unwrap(), lower);
        assert!((v.improvement - 4.0 / 6.0).abs() < 1e-9);
        let r = check_least_gradient(&d, &bad, LeastGradientMode::Random { samples: 50, seed: 3 }).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn constant_sequence_is_stable() {
        let d = build_grid_rectangle(8, 8, Rect::UNIT, |_, _| 1.0, Stencil::N8, 32).unwrap();
        let spec = BoundarySpec::new(vec![
            BoundarySpec::side(Side::Bottom, 0.25, 0.75, -1.0),
            BoundarySpec::side(Side::Top, 0.25, 0.75, 1.0),
        ])
        .with_default(0.0);
        let run = stability_run(&d, &[spec.clone(), spec.clone(), spec.clone()], Some(&spec)).unwrap();
        assert!(run.violations.is_empty(), "{:?}", run.violations);
        assert!(run.consecutive_l1.iter().all(|&x| x == 0.0));
        assert_eq!(run.e_plus, run.solutions[0].e1);
        assert_eq!(run.e_minus, run.solutions[0].e1);
        assert!(run.hypothesis_warnings.is_empty());
        let limit = run.limit.unwrap();
        assert!(limit.energy_matches);
    }

    #[test]
    fn oracle_suite_passes() {
        let verdicts = run_oracle_suite(11, 20, 12).unwrap();
        for v in &verdicts {
            assert!(v.passed, "{v:?}");
            assert!(v.checked > 0);
        }
    }
}
