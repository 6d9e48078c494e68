//! Threshold constants for the unrestricted problem.
//!
//! `λ(g)` is the least total variation of a field with zero domain mean and
//! unit boundary pairing with `g`; `‖f‖_*` is the reciprocal of the least
//! total variation of a field with zero boundary mean and unit pairing with
//! `f`. Both are computed by a primal–dual iteration on the mesh total
//! variation with an exact projection onto the two affine constraints.

use serde::Serialize;
use thiserror::Error;

use crate::boundary::BoundaryData;
use crate::energy::{total_variation, CellField};
use crate::mesh::MeshDomain;
use crate::mincut::{solve_set_problem, MincutError, Sign};
use crate::relaxed::RelaxedOptions;

#[derive(Debug, Error)]
pub enum DualNormError {
    #[error("boundary data vanish identically; the constraint set is empty")]
    ZeroData,
    #[error("constraint rows are linearly dependent (relative Gram determinant {0:e})")]
    SingularGram(f64),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Mincut(#[from] MincutError),
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaReport {
    pub lambda: f64,
    #[serde(skip)]
    pub minimizer: CellField,
    /// `Σ u_i µ_i` at the minimizer.
    pub mean_residual: f64,
    /// `Σ Tu_b g_b p_b − 1` at the minimizer.
    pub pairing_residual: f64,
    /// Difference between `λ` and a dual lower estimate.
    pub gap_estimate: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualNormReport {
    pub star_norm: f64,
    /// Boundary-mean-zero field of unit total variation attaining the norm.
    #[serde(skip)]
    pub witness: CellField,
    pub min_tv: f64,
    pub mean_residual: f64,
    /// Pairing of the witness with `f`, minus the norm.
    pub pairing_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    ZeroIsMinimal,
    UnboundedBelow,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::ZeroIsMinimal => "zero-is-minimal",
            Classification::UnboundedBelow => "unbounded-below",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnrestrictedVerdict {
    pub lambda: f64,
    pub min_set_energy: f64,
    pub resolution: f64,
    pub classification: Classification,
    /// Whether `λ` and the set minimum agree on the side of the threshold.
    pub consistent: bool,
}

struct ConstrainedTv {
    u: Vec<f64>,
    tv: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
}

/// Minimize the mesh total variation over `{u : ⟨a1, u⟩ = 0, ⟨a2, u⟩ = 1}`.
fn min_tv_affine(domain: &MeshDomain, a1: &[f64], a2: &[f64], opts: &RelaxedOptions) -> Result<ConstrainedTv, DualNormError> {
    if !(opts.tol > 0.0) || !(opts.step_ratio > 0.0) || opts.max_iter == 0 {
        return Err(DualNormError::InvalidOption(format!("{opts:?}")));
    }
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let (g11, g12, g22) = (dot(a1, a1), dot(a1, a2), dot(a2, a2));
    let det = g11 * g22 - g12 * g12;
    let relative = det / (g11 * g22);
    if !(relative > 1e-12) {
        return Err(DualNormError::SingularGram(relative));
    }
    // Projection onto the affine set: u − Aᵀ G⁻¹ (A u − b).
    let project = |u: &mut [f64]| {
        let r1 = dot(a1, u);
        let r2 = dot(a2, u) - 1.0;
        let y1 = (g22 * r1 - g12 * r2) / det;
        let y2 = (g11 * r2 - g12 * r1) / det;
        for ((x, p), q) in u.iter_mut().zip(a1).zip(a2) {
            *x -= y1 * p + y2 * q;
        }
    };
    let faces = domain.faces();
    let n = domain.num_cells();
    let apply = |u: &[f64], out: &mut [f64]| {
        for (o, f) in out.iter_mut().zip(faces) {
            *o = f.w * (u[f.a] - u[f.b]);
        }
    };
    let adjoint = |p: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for (&pf, f) in p.iter().zip(faces) {
            out[f.a] += f.w * pf;
            out[f.b] -= f.w * pf;
        }
    };
    // ‖K‖² is the top eigenvalue of the w²-weighted Laplacian, at most
    // max over faces of d_a + d_b.
    let mut degree = vec![0.0; n];
    for f in faces {
        degree[f.a] += f.w * f.w;
        degree[f.b] += f.w * f.w;
    }
    let norm = faces
        .iter()
        .fold(0.0f64, |m, f| m.max(degree[f.a] + degree[f.b]))
        .sqrt();
    let r = opts.step_ratio.sqrt();
    let (tau, sigma) = if norm > 0.0 {
        (0.99 * r / norm, 0.99 / (r * norm))
    } else {
        (1.0, 1.0)
    };

    let mut u = vec![0.0; n];
    project(&mut u);
    let mut u_bar = u.clone();
    let mut p = vec![0.0; faces.len()];
    let mut ku = vec![0.0; faces.len()];
    let mut ktp = vec![0.0; n];
    let mut best = (total_variation(domain, &CellField(u.clone())), u.clone());
    let mut iterations = 0;
    let mut converged = false;
    let mut next = vec![0.0; n];
    while iterations < opts.max_iter {
        iterations += 1;
        apply(&u_bar, &mut ku);
        let mut change = 0.0f64;
        for (pf, g) in p.iter_mut().zip(&ku) {
            let q = (*pf + sigma * g).clamp(-1.0, 1.0);
            change = change.max((q - *pf).abs());
            *pf = q;
        }
        adjoint(&p, &mut ktp);
        for i in 0..n {
            next[i] = u[i] - tau * ktp[i];
        }
        project(&mut next);
        for i in 0..n {
            change = change.max((next[i] - u[i]).abs());
            u_bar[i] = 2.0 * next[i] - u[i];
        }
        std::mem::swap(&mut u, &mut next);
        if iterations % 25 == 0 || change <= opts.tol {
            apply(&u, &mut ku);
            let tv: f64 = ku.iter().map(|x| x.abs()).sum();
            if tv < best.0 {
                best = (tv, u.clone());
            }
        }
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("constrained total variation stopped after {iterations} iterations");
    }
    // Dual estimate: fit Kᵀp ≈ y1 a1 + y2 a2; the value y2 bounds the
    // minimum from below when the fit is exact.
    adjoint(&p, &mut ktp);
    let (b1, b2) = (dot(a1, &ktp), dot(a2, &ktp));
    let y2 = (g11 * b2 - g12 * b1) / det;
    Ok(ConstrainedTv {
        tv: best.0,
        gap: (best.0 - y2).abs(),
        u: best.1,
        iterations,
        converged,
    })
}

fn normalized(g: &BoundaryData) -> Result<(f64, Vec<f64>), DualNormError> {
    let scale = g.sup_norm();
    if scale == 0.0 || g.is_zero() {
        return Err(DualNormError::ZeroData);
    }
    Ok((scale, g.values().iter().map(|v| v / scale).collect()))
}

fn pairing_coefficients(domain: &MeshDomain, values: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; domain.num_cells()];
    for (b, v) in domain.boundary().iter().zip(values) {
        c[b.cell] += v * b.p;
    }
    c
}

/// `λ(g) = inf { TV(u) : Σ u_i µ_i = 0, Σ Tu_b g_b p_b = 1 }`.
///
/// The data are normalized to unit sup norm before solving, so the exact
/// scaling `λ(τ g) = λ(g)/τ` of the discrete program carries over to the
/// computed values.
pub fn compute_lambda(domain: &MeshDomain, g: &BoundaryData, opts: &RelaxedOptions) -> Result<LambdaReport, DualNormError> {
    let (scale, unit) = normalized(g)?;
    let mu: Vec<f64> = domain.cells().iter().map(|c| c.mu).collect();
    let c = pairing_coefficients(domain, &unit);
    let sol = min_tv_affine(domain, &mu, &c, opts)?;
    let minimizer = CellField(sol.u.iter().map(|x| x / scale).collect());
    let mean_residual = mu.iter().zip(minimizer.values()).map(|(a, b)| a * b).sum();
    let pairing_residual = pairing_coefficients(domain, g.values())
        .iter()
        .zip(minimizer.values())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        - 1.0;
    Ok(LambdaReport {
        lambda: sol.tv / scale,
        minimizer,
        mean_residual,
        pairing_residual,
        gap_estimate: sol.gap / scale,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// `‖f‖_* = sup { Σ Tw_b f_b p_b / TV(w) : Σ Tw_b p_b = 0 }`.
pub fn compute_star_norm(domain: &MeshDomain, f: &BoundaryData, opts: &RelaxedOptions) -> Result<DualNormReport, DualNormError> {
    let (scale, unit) = normalized(f)?;
    let ones = vec![1.0; domain.boundary().len()];
    let mass = pairing_coefficients(domain, &ones);
    let c = pairing_coefficients(domain, &unit);
    let sol = min_tv_affine(domain, &mass, &c, opts)?;
    let min_tv = sol.tv / scale;
    let witness = CellField(sol.u.iter().map(|x| x / sol.tv).collect());
    let mean_residual = mass.iter().zip(witness.values()).map(|(a, b)| a * b).sum();
    let pairing = pairing_coefficients(domain, f.values())
        .iter()
        .zip(witness.values())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let pairing_residual = pairing - 1.0 / min_tv;
    Ok(DualNormReport {
        star_norm: 1.0 / min_tv,
        witness,
        min_tv,
        mean_residual,
        pairing_residual,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Classify the unrestricted problem for data `g` by comparing `λ(g)` with
/// the exact set minimum of `I_{−g}`.
pub fn check_unrestricted(domain: &MeshDomain, g: &BoundaryData, opts: &RelaxedOptions) -> Result<UnrestrictedVerdict, DualNormError> {
    let lambda = compute_lambda(domain, g, opts)?;
    let sets = solve_set_problem(domain, g, Sign::Minus)?;
    let slack = sets.resolution;
    let classification = if sets.min_energy < -slack {
        Classification::UnboundedBelow
    } else {
        Classification::ZeroIsMinimal
    };
    let margin = lambda.gap_estimate.max(1e-3 * lambda.lambda);
    let consistent = match classification {
        Classification::UnboundedBelow => lambda.lambda < 1.0 + margin,
        Classification::ZeroIsMinimal => lambda.lambda > 1.0 - margin,
    };
    Ok(UnrestrictedVerdict {
        lambda: lambda.lambda,
        min_set_energy: sets.min_energy,
        resolution: slack,
        classification,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{make_boundary_data, BoundarySpec};
    use crate::mesh::{build_grid_rectangle, Rect, Side, Stencil};

    fn square(n: usize, a: f64) -> (MeshDomain, BoundaryData) {
        let d = build_grid_rectangle(n, n, Rect::UNIT, |_, _| 1.0, Stencil::N8, 8 * n).unwrap();
        let spec = BoundarySpec::new(vec![
            BoundarySpec::side(Side::Bottom, 0.0, 1.0, -a),
            BoundarySpec::side(Side::Top, 0.0, 1.0, a),
        ])
        .with_default(0.0);
        (d.clone(), make_boundary_data(&d, &spec).unwrap())
    }

    #[test]
    fn lambda_of_top_bottom_data() {
        let (d, g) = square(24, 1.0);
        let r = compute_lambda(&d, &g, &RelaxedOptions::default()).unwrap();
        assert!((r.lambda - 1.0).abs() < 0.05, "{r:?}");
        assert!(r.mean_residual.abs() < 1e-10);
        assert!(r.pairing_residual.abs() < 1e-10);
        let (_, g2) = square(24, 2.0);
        let r2 = compute_lambda(&d, &g2, &RelaxedOptions::default()).unwrap();
        assert!((r2.lambda - r.lambda / 2.0).abs() < 1e-9 * r.lambda);
    }

    #[test]
    fn star_norm_of_top_bottom_data() {
        let (d, f) = square(24, 1.0);
        let r = compute_star_norm(&d, &f, &RelaxedOptions::default()).unwrap();
        assert!((r.star_norm - 1.0).abs() < 0.05, "{r:?}");
        assert!((total_variation(&d, &r.witness) - 1.0).abs() < 1e-9);
        assert!(r.mean_residual.abs() < 1e-10);
    }

    #[test]
    fn zero_data_is_infeasible() {
        let (d, _) = square(8, 1.0);
        let g = BoundaryData::zeros(&d);
        assert!(matches!(
            compute_lambda(&d, &g, &RelaxedOptions::default()),
            Err(DualNormError::ZeroData)
        ));
    }

    #[test]
    fn classification_follows_the_threshold() {
        let (d, g) = square(16, 0.5);
        let v = check_unrestricted(&d, &g, &RelaxedOptions::default()).unwrap();
        assert_eq!(v.classification, Classification::ZeroIsMinimal);
        assert!(v.min_set_energy.abs() <= v.resolution);
        assert!(v.consistent && (v.lambda - 2.0).abs() < 0.1);
        let (d, g) = square(16, 2.0);
        let v = check_unrestricted(&d, &g, &RelaxedOptions::default()).unwrap();
        assert_eq!(v.classification, Classification::UnboundedBelow);
        assert!(v.consistent && (v.lambda - 0.5).abs() < 0.025);
    }
}
