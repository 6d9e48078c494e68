//! Exact minimization of `I_f(±χ_E)` over cell sets by minimum cut.
//!
//! Interior faces become symmetric arc pairs; each cell's boundary
//! coefficient `Σ_b sign·f_b p_b` becomes a terminal arc. The source side of
//! a minimum cut is an optimal set. All capacities are quantized to integers
//! so the family of optimal sets is computed exactly: the source-reachable
//! cells of the residual network form the smallest optimal set and the
//! complement of the sink-reaching cells forms the largest.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::boundary::BoundaryData;
use crate::energy::{energy_pair, CellSet, EnergyReport};
use crate::mesh::MeshDomain;

#[derive(Debug, Error)]
pub enum MincutError {
    #[error("capacity overflow while quantizing (total {0:e})")]
    CapacityOverflow(f64),
    #[error("minimal solution sets overlap in {0} cells; rebalance the boundary data")]
    NotDisjoint(usize),
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
    #[error("set length {got} does not match domain size {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

/// Which of `I(χ_E)` and `I(−χ_E)` is being minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

const MAX_CAPACITY: f64 = (1u64 << 48) as f64;
const MAX_TOTAL: f64 = (1u64 << 60) as f64;

/// Fixed-point scale shared by the min-cut solver and the brute-force oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    scale: f64,
}

impl Quantizer {
    /// Largest capacity maps to 2⁴⁸, unless the total would exceed 2⁶⁰.
    pub fn for_problem(domain: &MeshDomain, bd: &BoundaryData) -> Result<Self, MincutError> {
        let mut max = 0.0f64;
        let mut total = 0.0f64;
        for f in domain.faces() {
            max = max.max(f.w);
            total += f.w;
        }
        for (b, v) in domain.boundary().iter().zip(bd.values()) {
            let c = (v * b.p).abs();
            max = max.max(c);
            total += c;
        }
        Self::from_extent(max, total)
    }

    pub fn for_perimeter(domain: &MeshDomain) -> Result<Self, MincutError> {
        let max = domain.faces().iter().fold(0.0f64, |m, f| m.max(f.w));
        let total: f64 = domain.faces().iter().map(|f| f.w).sum();
        Self::from_extent(max, total)
    }

    fn from_extent(max: f64, total: f64) -> Result<Self, MincutError> {
        if !total.is_finite() {
            return Err(MincutError::CapacityOverflow(total));
        }
        if max == 0.0 {
            return Ok(Quantizer { scale: 1.0 });
        }
        let scale = (MAX_CAPACITY / max).min(MAX_TOTAL / total);
        Ok(Quantizer { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn quantize(&self, x: f64) -> i64 {
        (x * self.scale).round() as i64
    }

    pub fn to_energy(&self, q: i64) -> f64 {
        q as f64 / self.scale
    }

    pub fn face_capacities(&self, domain: &MeshDomain) -> Vec<i64> {
        domain.faces().iter().map(|f| self.quantize(f.w)).collect()
    }

    /// `Σ_{b owned by c} q(sign · f_b p_b)` per cell.
    pub fn cell_terms(&self, domain: &MeshDomain, bd: &BoundaryData, sign: Sign) -> Vec<i64> {
        let s = sign.value();
        let mut terms = vec![0i64; domain.num_cells()];
        for (b, v) in domain.boundary().iter().zip(bd.values()) {
            terms[b.cell] += self.quantize(s * v * b.p);
        }
        terms
    }

    /// Quantized `I(sign · χ_E)`.
    pub fn set_energy(&self, domain: &MeshDomain, bd: &BoundaryData, set: &CellSet, sign: Sign) -> i64 {
        let cut: i64 = domain
            .faces()
            .iter()
            .filter(|f| set.contains(f.a) != set.contains(f.b))
            .map(|f| self.quantize(f.w))
            .sum();
        let terms = self.cell_terms(domain, bd, sign);
        cut + set.indices().map(|c| terms[c]).sum::<i64>()
    }

    /// Bound on `|I − I_quantized / scale|` for any set.
    pub fn resolution(&self, domain: &MeshDomain) -> f64 {
        0.5 * (domain.faces().len() + domain.boundary().len()) as f64 / self.scale
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FlowStats {
    pub augmentations: u64,
    pub phases: u64,
    #[serde(skip)]
    pub runtime: Duration,
}

/// Residual network with Dinic's algorithm.
///
/// Arcs are stored in CSR order so that the result is deterministic for a
/// given edge list.
pub struct FlowNetwork {
    start: Vec<usize>,
    to: Vec<u32>,
    cap: Vec<i64>,
    rev: Vec<u32>,
}

impl FlowNetwork {
    /// Build from `(u, v, cap u→v, cap v→u)` pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize, i64, i64)]) -> Self {
        let mut degree = vec![0usize; n + 1];
        for &(u, v, _, _) in edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + degree[i];
        }
        let m = start[n];
        let mut fill = start.clone();
        let mut to = vec![0u32; m];
        let mut cap = vec![0i64; m];
        let mut rev = vec![0u32; m];
        for &(u, v, cuv, cvu) in edges {
            let a = fill[u];
            fill[u] += 1;
            let b = fill[v];
            fill[v] += 1;
            to[a] = v as u32;
            cap[a] = cuv;
            rev[a] = b as u32;
            to[b] = u as u32;
            cap[b] = cvu;
            rev[b] = a as u32;
        }
        FlowNetwork { start, to, cap, rev }
    }

    pub fn num_nodes(&self) -> usize {
        self.start.len() - 1
    }

    fn bfs_levels(&self, s: usize, level: &mut [i32], queue: &mut VecDeque<usize>) {
        level.fill(-1);
        level[s] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for a in self.start[u]..self.start[u + 1] {
                let v = self.to[a] as usize;
                if self.cap[a] > 0 && level[v] < 0 {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }

    /// Blocking flow on the level graph with an explicit path stack.
    fn blocking_flow(&mut self, s: usize, t: usize, level: &mut [i32], stats: &mut FlowStats) -> i64 {
        let mut it: Vec<usize> = self.start[..self.num_nodes()].to_vec();
        let mut path: Vec<usize> = Vec::new();
        let mut total = 0i64;
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().map(|&a| self.cap[a]).min().unwrap_or(0);
                for &a in &path {
                    self.cap[a] -= f;
                    self.cap[self.rev[a] as usize] += f;
                }
                total += f;
                stats.augmentations += 1;
                let k = path
                    .iter()
                    .position(|&a| self.cap[a] == 0)
                    .expect("bottleneck arc saturates");
                path.truncate(k);
                u = if k == 0 { s } else { self.to[path[k - 1]] as usize };
                continue;
            }
            let mut advanced = false;
            while it[u] < self.start[u + 1] {
                let a = it[u];
                let v = self.to[a] as usize;
                if self.cap[a] > 0 && level[v] == level[u] + 1 {
                    path.push(a);
                    u = v;
                    advanced = true;
                    break;
                }
                it[u] += 1;
            }
            if !advanced {
                if u == s {
                    break;
                }
                level[u] = -1;
                let a = path.pop().expect("non-source node has an incoming path arc");
                u = self.to[self.rev[a] as usize] as usize;
                it[u] += 1;
            }
        }
        total
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> (i64, FlowStats) {
        let started = Instant::now();
        let mut stats = FlowStats::default();
        let n = self.num_nodes();
        let mut level = vec![-1i32; n];
        let mut queue = VecDeque::with_capacity(n);
        let mut flow = 0i64;
        loop {
            self.bfs_levels(s, &mut level, &mut queue);
            if level[t] < 0 {
                break;
            }
            stats.phases += 1;
            flow += self.blocking_flow(s, t, &mut level, &mut stats);
        }
        stats.runtime = started.elapsed();
        (flow, stats)
    }

    /// Nodes reachable from `s` through arcs with positive residual capacity.
    pub fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.num_nodes()];
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            for a in self.start[u]..self.start[u + 1] {
                let v = self.to[a] as usize;
                if self.cap[a] > 0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Nodes that can reach `t` through arcs with positive residual capacity.
    pub fn reaching(&self, t: usize) -> Vec<bool> {
        let mut seen = vec![false; self.num_nodes()];
        let mut queue = VecDeque::from([t]);
        seen[t] = true;
        while let Some(v) = queue.pop_front() {
            for a in self.start[v]..self.start[v + 1] {
                let u = self.to[a] as usize;
                if !seen[u] && self.cap[self.rev[a] as usize] > 0 {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SetProblemResult {
    pub min_energy: f64,
    pub min_energy_quantized: i64,
    /// Worst-case gap between quantized and floating-point energies.
    pub resolution: f64,
    #[serde(skip)]
    pub minimal_set: CellSet,
    #[serde(skip)]
    pub maximal_set: CellSet,
    pub stats: FlowStats,
}

/// Solve the terminal-weighted cut problem
/// `min_E cut(E) + Σ_{c∈E} terms[c]` with `fixed_in ⊆ E`, `fixed_out ∩ E = ∅`.
fn solve_cut(
    n: usize,
    faces: impl Iterator<Item = (usize, usize, i64)>,
    terms: &[i64],
    forced: Option<(&CellSet, &CellSet, i64)>,
) -> Result<(i64, CellSet, CellSet, FlowStats), MincutError> {
    let (s, t) = (n, n + 1);
    let mut edges: Vec<(usize, usize, i64, i64)> = faces.map(|(a, b, w)| (a, b, w, w)).collect();
    let mut offset = 0i64;
    let mut source_total = 0i128;
    for (c, &v) in terms.iter().enumerate() {
        if v > 0 {
            edges.push((c, t, v, 0));
        } else if v < 0 {
            edges.push((s, c, -v, 0));
            offset += -v;
            source_total += (-v) as i128;
        }
    }
    if let Some((fin, fout, inf)) = forced {
        for c in fin.indices() {
            edges.push((s, c, inf, 0));
            source_total += inf as i128;
        }
        for c in fout.indices() {
            edges.push((c, t, inf, 0));
        }
    }
    if source_total > (i64::MAX / 2) as i128 {
        return Err(MincutError::CapacityOverflow(source_total as f64));
    }
    let mut net = FlowNetwork::from_edges(n + 2, &edges);
    let (flow, stats) = net.max_flow(s, t);
    let from_source = net.reachable_from(s);
    let to_sink = net.reaching(t);
    let minimal = CellSet::from_fn(n, |c| from_source[c]);
    let maximal = CellSet::from_fn(n, |c| !to_sink[c]);
    Ok((flow - offset, minimal, maximal, stats))
}

/// Minimize `I(sign · χ_E)` over all cell sets.
pub fn solve_set_problem(
    domain: &MeshDomain,
    bd: &BoundaryData,
    sign: Sign,
) -> Result<SetProblemResult, MincutError> {
    let q = Quantizer::for_problem(domain, bd)?;
    let caps = q.face_capacities(domain);
    let terms = q.cell_terms(domain, bd, sign);
    let faces = domain.faces().iter().zip(&caps).map(|(f, &c)| (f.a, f.b, c));
    let (min_q, minimal_set, maximal_set, stats) = solve_cut(domain.num_cells(), faces, &terms, None)?;
    Ok(SetProblemResult {
        min_energy: q.to_energy(min_q),
        min_energy_quantized: min_q,
        resolution: q.resolution(domain),
        minimal_set,
        maximal_set,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionKind {
    Minimal,
    Maximal,
    Plain,
}

/// A two-valued solution `χ_{E1} − χ_{E2}` with disjoint sets.
#[derive(Debug, Clone)]
pub struct Solution {
    pub e1: CellSet,
    pub e2: CellSet,
    pub report: EnergyReport,
    pub kind: SolutionKind,
}

impl Solution {
    pub fn new(domain: &MeshDomain, bd: &BoundaryData, e1: CellSet, e2: CellSet, kind: SolutionKind) -> Self {
        let report = energy_pair(domain, bd, &e1, &e2);
        Solution { e1, e2, report, kind }
    }
}

#[derive(Debug, Clone)]
pub struct RestrictedSolution {
    /// `(min E1, min E2)`: the unique minimal solution.
    pub minimal: Solution,
    /// `(max E1, Ω ∖ max E1)`: the solution with the largest `E1`.
    pub maximal: Solution,
    pub plus: SetProblemResult,
    pub minus: SetProblemResult,
    pub warnings: Vec<String>,
}

impl RestrictedSolution {
    /// Sum of the two set minima.
    pub fn min_total(&self) -> f64 {
        self.plus.min_energy + self.minus.min_energy
    }

    pub fn resolution(&self) -> f64 {
        self.plus.resolution + self.minus.resolution
    }
}

/// Solve the restricted Neumann problem `min { I(u) : −1 ≤ u ≤ 1 }` through
/// its two set problems.
pub fn solve_restricted(domain: &MeshDomain, bd: &BoundaryData) -> Result<RestrictedSolution, MincutError> {
    let mut warnings = Vec::new();
    if !bd.within_unit_bound() {
        let msg = format!(
            "boundary data exceed 1 in magnitude (sup {}); a continuum solution may not exist",
            bd.sup_norm()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let (plus, minus) = std::thread::scope(|scope| {
        let minus = scope.spawn(|| solve_set_problem(domain, bd, Sign::Minus));
        let plus = solve_set_problem(domain, bd, Sign::Plus);
        (plus, minus.join().expect("set problem thread panicked"))
    });
    let (plus, minus) = (plus?, minus?);
    let overlap = plus.minimal_set.intersection(&minus.minimal_set).count();
    if overlap > 0 {
        return Err(MincutError::NotDisjoint(overlap));
    }
    let minimal = Solution::new(
        domain,
        bd,
        plus.minimal_set.clone(),
        minus.minimal_set.clone(),
        SolutionKind::Minimal,
    );
    let maximal = Solution::new(
        domain,
        bd,
        plus.maximal_set.clone(),
        plus.maximal_set.complement(),
        SolutionKind::Maximal,
    );
    Ok(RestrictedSolution {
        minimal,
        maximal,
        plus,
        minus,
        warnings,
    })
}

/// Least-perimeter set `E` with `fixed_in ⊆ E` and `E ∩ fixed_out = ∅`.
pub fn solve_dirichlet_leastgradient(
    domain: &MeshDomain,
    fixed_in: &CellSet,
    fixed_out: &CellSet,
) -> Result<SetProblemResult, MincutError> {
    let n = domain.num_cells();
    for s in [fixed_in, fixed_out] {
        if s.len() != n {
            return Err(MincutError::SizeMismatch {
                expected: n,
                got: s.len(),
            });
        }
    }
    let clash = fixed_in.intersection(fixed_out).count();
    if clash > 0 {
        return Err(MincutError::Infeasible(format!(
            "{clash} cells are both forced in and forced out"
        )));
    }
    let q = Quantizer::for_perimeter(domain)?;
    let caps = q.face_capacities(domain);
    let inf = caps.iter().sum::<i64>() + 1;
    let faces = domain.faces().iter().zip(&caps).map(|(f, &c)| (f.a, f.b, c));
    let terms = vec![0i64; n];
    let (min_q, minimal_set, maximal_set, stats) =
        solve_cut(n, faces, &terms, Some((fixed_in, fixed_out, inf)))?;
    if min_q >= inf {
        return Err(MincutError::Infeasible("no finite cut separates the constraints".into()));
    }
    Ok(SetProblemResult {
        min_energy: q.to_energy(min_q),
        min_energy_quantized: min_q,
        resolution: q.resolution(domain),
        minimal_set,
        maximal_set,
        stats,
    })
}
