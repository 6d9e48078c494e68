//! Convex relaxation of the restricted problem, solved by a first-order
//! primal–dual method, and level-set thresholding of its solutions.
//!
//! The relaxed energy uses an isotropic total variation built from forward
//! differences, `Σ_i ω_i |(h_y ∂_x u, h_x ∂_y u)_i|`, so it is independent of
//! the mesh stencil. Thresholded sets are evaluated with the mesh energy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::BoundaryData;
use crate::energy::{energy, energy_pair, CellField, EnergyReport};
use crate::mesh::MeshDomain;
use crate::mincut::{Solution, SolutionKind};

#[derive(Debug, Error)]
pub enum RelaxedError {
    #[error("the relaxed solver needs a grid-structured domain")]
    NotGridStructured,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("field value {value} at cell {cell} lies outside [-1, 1]")]
    OutOfBox { cell: usize, value: f64 },
    #[error("field has {got} values, domain has {expected} cells")]
    SizeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxedOptions {
    pub max_iter: usize,
    /// Bound on the largest primal or dual update in one iteration.
    pub tol: f64,
    /// Ratio τ/σ of the primal and dual step sizes.
    pub step_ratio: f64,
}

impl Default for RelaxedOptions {
    fn default() -> Self {
        RelaxedOptions {
            max_iter: 50_000,
            tol: 1e-8,
            step_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxedResult {
    #[serde(skip)]
    pub field: CellField,
    /// Energy with the isotropic total variation minimized by the solver.
    pub report: EnergyReport,
    /// Energy of the same field under the mesh stencil.
    pub mesh_report: EnergyReport,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

const NONE: usize = usize::MAX;

/// Forward-difference gradient on the grid cells of a domain.
pub struct GridGradient {
    right: Vec<usize>,
    up: Vec<usize>,
    ax: Vec<f64>,
    ay: Vec<f64>,
}

impl GridGradient {
    pub fn new(domain: &MeshDomain) -> Result<Self, RelaxedError> {
        let grid = domain.grid().ok_or(RelaxedError::NotGridStructured)?;
        let n = domain.num_cells();
        let (mut right, mut up) = (vec![NONE; n], vec![NONE; n]);
        let (mut ax, mut ay) = (vec![0.0; n], vec![0.0; n]);
        for (c, cell) in domain.cells().iter().enumerate() {
            let (i, j) = grid.coords(c);
            right[c] = grid.cell_at(i + 1, j).unwrap_or(NONE);
            up[c] = grid.cell_at(i, j + 1).unwrap_or(NONE);
            let density = cell.mu / (grid.hx * grid.hy);
            ax[c] = density * grid.hy;
            ay[c] = density * grid.hx;
        }
        Ok(GridGradient { right, up, ax, ay })
    }

    pub fn len(&self) -> usize {
        self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.right.is_empty()
    }

    /// Weighted gradient of `u` at cell `c`.
    fn at(&self, u: &[f64], c: usize) -> (f64, f64) {
        let gx = if self.right[c] == NONE { 0.0 } else { self.ax[c] * (u[self.right[c]] - u[c]) };
        let gy = if self.up[c] == NONE { 0.0 } else { self.ay[c] * (u[self.up[c]] - u[c]) };
        (gx, gy)
    }

    pub fn apply(&self, u: &[f64], out: &mut [(f64, f64)]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.at(u, c);
        }
    }

    pub fn apply_adjoint(&self, p: &[(f64, f64)], out: &mut [f64]) {
        out.fill(0.0);
        for (c, &(px, py)) in p.iter().enumerate() {
            if self.right[c] != NONE {
                out[c] -= self.ax[c] * px;
                out[self.right[c]] += self.ax[c] * px;
            }
            if self.up[c] != NONE {
                out[c] -= self.ay[c] * py;
                out[self.up[c]] += self.ay[c] * py;
            }
        }
    }

    pub fn total_variation(&self, u: &[f64]) -> f64 {
        (0..self.len())
            .map(|c| {
                let (gx, gy) = self.at(u, c);
                gx.hypot(gy)
            })
            .sum()
    }

    /// Operator norm estimate by power iteration on `KᵀK`.
    /// Upper bound on the operator norm, `‖K‖² ≤ 4 (max a_x² + max a_y²)`.
    pub fn norm_bound(&self) -> f64 {
        let max_sq = |a: &[f64]| a.iter().fold(0.0f64, |m, &x| m.max(x * x));
        (4.0 * (max_sq(&self.ax) + max_sq(&self.ay))).sqrt()
    }

    pub fn norm_estimate(&self, iterations: usize) -> f64 {
        let n = self.len();
        let mut u: Vec<f64> = (0..n).map(|c| if c % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let mut g = vec![(0.0, 0.0); n];
        let mut v = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            u.iter_mut().for_each(|x| *x /= norm);
            self.apply(&u, &mut g);
            self.apply_adjoint(&g, &mut v);
            lambda = v.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
            std::mem::swap(&mut u, &mut v);
        }
        lambda.max(0.0).sqrt()
    }
}

/// Isotropic relaxed energy of a field.
pub fn relaxed_energy(domain: &MeshDomain, bd: &BoundaryData, u: &CellField) -> Result<EnergyReport, RelaxedError> {
    let k = GridGradient::new(domain)?;
    let c = bd.cell_coefficients(domain);
    let boundary: f64 = c.iter().zip(u.values()).map(|(a, b)| a * b).sum();
    Ok(EnergyReport::new(k.total_variation(u.values()), boundary))
}

/// Minimize `TV_iso(u) + Σ_i c_i u_i` over `−1 ≤ u ≤ 1`, where `c_i` is the
/// boundary pairing of cell `i`.
pub fn solve_relaxed(
    domain: &MeshDomain,
    bd: &BoundaryData,
    opts: &RelaxedOptions,
) -> Result<RelaxedResult, RelaxedError> {
    if !(opts.tol > 0.0) || !(opts.step_ratio > 0.0) || opts.max_iter == 0 {
        return Err(RelaxedError::InvalidOption(format!("{opts:?}")));
    }
    let k = GridGradient::new(domain)?;
    let n = k.len();
    let c = bd.cell_coefficients(domain);
    let norm = k.norm_bound();
    let (tau, sigma) = if norm > 0.0 {
        let r = opts.step_ratio.sqrt();
        (0.99 * r / norm, 0.99 / (r * norm))
    } else {
        (1.0, 1.0)
    };
    let evaluate = |u: &[f64]| k.total_variation(u) + c.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();

    let mut u = vec![0.0; n];
    let mut u_bar = u.clone();
    let mut p = vec![(0.0, 0.0); n];
    let mut ku = vec![(0.0, 0.0); n];
    let mut ktp = vec![0.0; n];
    let mut best = (evaluate(&u), u.clone());
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        k.apply(&u_bar, &mut ku);
        let mut dual_change = 0.0f64;
        for (pi, &(gx, gy)) in p.iter_mut().zip(&ku) {
            let (qx, qy) = (pi.0 + sigma * gx, pi.1 + sigma * gy);
            let scale = qx.hypot(qy).max(1.0);
            let next = (qx / scale, qy / scale);
            dual_change = dual_change.max((next.0 - pi.0).abs()).max((next.1 - pi.1).abs());
            *pi = next;
        }
        k.apply_adjoint(&p, &mut ktp);
        let mut primal_change = 0.0f64;
        for i in 0..n {
            let next = (u[i] - tau * (ktp[i] + c[i])).clamp(-1.0, 1.0);
            primal_change = primal_change.max((next - u[i]).abs());
            u_bar[i] = 2.0 * next - u[i];
            u[i] = next;
        }
        residual = primal_change.max(dual_change);
        if iterations % 25 == 0 || residual <= opts.tol {
            let e = evaluate(&u);
            if e < best.0 {
                best = (e, u.clone());
            }
        }
        if residual <= opts.tol {
            break;
        }
    }
    let converged = residual <= opts.tol;
    if !converged {
        log::warn!("relaxed solver stopped after {iterations} iterations (residual {residual:e})");
    }
    let field = CellField(best.1);
    let report = EnergyReport::new(k.total_variation(field.values()), best.0 - k.total_variation(field.values()));
    let mesh_report = energy(domain, bd, &field);
    Ok(RelaxedResult {
        field,
        report,
        mesh_report,
        iterations,
        residual,
        converged,
    })
}

fn check_field(domain: &MeshDomain, field: &CellField) -> Result<(), RelaxedError> {
    if field.len() != domain.num_cells() {
        return Err(RelaxedError::SizeMismatch {
            expected: domain.num_cells(),
            got: field.len(),
        });
    }
    match field.values().iter().position(|v| !(-1.0..=1.0).contains(v)) {
        Some(cell) => Err(RelaxedError::OutOfBox {
            cell,
            value: field.values()[cell],
        }),
        None => Ok(()),
    }
}

/// `E1 = {u > t1}`, `E2 = {u < −t2}` with the mesh energy of the pair.
pub fn threshold_levels(
    domain: &MeshDomain,
    bd: &BoundaryData,
    field: &CellField,
    t1: f64,
    t2: f64,
) -> Result<Solution, RelaxedError> {
    check_field(domain, field)?;
    for t in [t1, t2] {
        if !(t > 0.0 && t < 1.0) {
            return Err(RelaxedError::InvalidOption(format!("threshold {t} not in (0, 1)")));
        }
    }
    let e1 = field.superlevel(t1);
    let e2 = field.sublevel(-t2);
    let report = energy_pair(domain, bd, &e1, &e2);
    Ok(Solution {
        e1,
        e2,
        report,
        kind: SolutionKind::Plain,
    })
}

/// Midpoints `(k + 1/2)/m` of a uniform partition of `(0, 1)`.
pub fn midpoint_levels(m: usize) -> Vec<f64> {
    (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect()
}

/// Best thresholded pair over `levels × levels`.
pub fn best_threshold(
    domain: &MeshDomain,
    bd: &BoundaryData,
    field: &CellField,
    levels: &[f64],
) -> Result<(f64, f64, Solution), RelaxedError> {
    let mut best: Option<(f64, f64, Solution)> = None;
    for &t1 in levels {
        for &t2 in levels {
            let s = threshold_levels(domain, bd, field, t1, t2)?;
            if best.as_ref().is_none_or(|b| s.report.total < b.2.report.total) {
                best = Some((t1, t2, s));
            }
        }
    }
    best.ok_or_else(|| RelaxedError::InvalidOption("no threshold levels".into()))
}
