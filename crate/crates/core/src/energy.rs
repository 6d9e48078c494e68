//! The Neumann functional `I(u) = ‖Du‖(Ω) + Σ_b Tu_b f_b p_b` and the
//! perimeter/trace quantities built from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::BoundaryData;
use crate::mesh::MeshDomain;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("whole-space perimeter bound violated: {lhs} > {rhs}")]
    PerimeterBound { lhs: f64, rhs: f64 },
    #[error("boundary data exceed 1 in magnitude (sup {0})")]
    DataTooLarge(f64),
}

/// Indicator of a subset of the domain's cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellSet(Vec<bool>);

impl CellSet {
    pub fn empty(n: usize) -> Self {
        CellSet(vec![false; n])
    }

    pub fn full(n: usize) -> Self {
        CellSet(vec![true; n])
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> bool) -> Self {
        CellSet((0..n).map(f).collect())
    }

    pub fn from_bits(n: usize, bits: u64) -> Self {
        Self::from_fn(n, |i| bits >> i & 1 == 1)
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(n);
        for i in indices {
            s.0[i] = true;
        }
        s
    }

    /// Cells whose centroid satisfies `pred`; cells without geometry are excluded.
    pub fn from_centroids(domain: &MeshDomain, mut pred: impl FnMut(f64, f64) -> bool) -> Self {
        Self::from_fn(domain.num_cells(), |i| {
            domain.centroid(i).is_some_and(|c| pred(c[0], c[1]))
        })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn insert(&mut self, i: usize) {
        self.0[i] = true;
    }

    pub fn remove(&mut self, i: usize) {
        self.0[i] = false;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn complement(&self) -> Self {
        CellSet(self.0.iter().map(|b| !b).collect())
    }

    pub fn union(&self, other: &CellSet) -> Self {
        CellSet(self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect())
    }

    pub fn intersection(&self, other: &CellSet) -> Self {
        CellSet(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect())
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| !a || *b)
    }

    pub fn is_disjoint(&self, other: &CellSet) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| !(*a && *b))
    }

    pub fn measure(&self, domain: &MeshDomain) -> f64 {
        self.indices().fold(0.0, |m, i| m + domain.cells()[i].mu)
    }

    /// `µ(self △ other)`.
    pub fn sym_diff_measure(&self, domain: &MeshDomain, other: &CellSet) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .zip(domain.cells())
            .filter(|((a, b), _)| a != b)
            .fold(0.0, |m, (_, c)| m + c.mu)
    }

    /// `µ(self △ other) / µ(Ω)`.
    pub fn sym_diff_fraction(&self, domain: &MeshDomain, other: &CellSet) -> f64 {
        self.sym_diff_measure(domain, other) / domain.total_measure()
    }
}

/// Real-valued function on cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField(pub Vec<f64>);

impl CellField {
    pub fn constant(n: usize, c: f64) -> Self {
        CellField(vec![c; n])
    }

    /// `sign · χ_E`.
    pub fn indicator(set: &CellSet, sign: f64) -> Self {
        CellField(set.0.iter().map(|&b| if b { sign } else { 0.0 }).collect())
    }

    /// `χ_{E1} − χ_{E2}`.
    pub fn two_valued(e1: &CellSet, e2: &CellSet) -> Self {
        CellField(
            e1.0.iter()
                .zip(&e2.0)
                .map(|(&a, &b)| (a as i32 - b as i32) as f64)
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `u_+ = max(u, 0)`.
    pub fn positive_part(&self) -> Self {
        CellField(self.0.iter().map(|&v| v.max(0.0)).collect())
    }

    /// `u_- = max(−u, 0)`.
    pub fn negative_part(&self) -> Self {
        CellField(self.0.iter().map(|&v| (-v).max(0.0)).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        CellField(self.0.iter().map(|v| s * v).collect())
    }

    pub fn superlevel(&self, t: f64) -> CellSet {
        CellSet(self.0.iter().map(|&v| v > t).collect())
    }

    pub fn sublevel(&self, t: f64) -> CellSet {
        CellSet(self.0.iter().map(|&v| v < t).collect())
    }
}

/// Boundary values of a cell field, one per boundary face.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub tv_interior: f64,
    pub boundary_term: f64,
    pub total: f64,
}

impl EnergyReport {
    pub fn new(tv_interior: f64, boundary_term: f64) -> Self {
        EnergyReport {
            tv_interior,
            boundary_term,
            total: tv_interior + boundary_term,
        }
    }
}

/// Trace by the owner-cell rule: `Tu_b = u_{c(b)}`.
pub fn trace(domain: &MeshDomain, u: &CellField) -> BoundaryField {
    BoundaryField(domain.boundary().iter().map(|b| u.0[b.cell]).collect())
}

pub fn total_variation(domain: &MeshDomain, u: &CellField) -> f64 {
    domain
        .faces()
        .iter()
        .map(|f| f.w * (u.0[f.a] - u.0[f.b]).abs())
        .sum()
}

pub fn energy(domain: &MeshDomain, bd: &BoundaryData, u: &CellField) -> EnergyReport {
    let tv = total_variation(domain, u);
    let boundary_term = domain
        .boundary()
        .iter()
        .zip(bd.values())
        .map(|(b, f)| f * u.0[b.cell] * b.p)
        .sum();
    EnergyReport::new(tv, boundary_term)
}

/// Energy of `sign · χ_E`.
pub fn energy_set(domain: &MeshDomain, bd: &BoundaryData, set: &CellSet, sign: f64) -> EnergyReport {
    energy(domain, bd, &CellField::indicator(set, sign))
}

/// Energy of `χ_{E1} − χ_{E2}`.
pub fn energy_pair(domain: &MeshDomain, bd: &BoundaryData, e1: &CellSet, e2: &CellSet) -> EnergyReport {
    energy(domain, bd, &CellField::two_valued(e1, e2))
}

/// Weighted cut `P(E, Ω)`.
pub fn perimeter(domain: &MeshDomain, set: &CellSet) -> f64 {
    domain
        .faces()
        .iter()
        .filter(|f| set.0[f.a] != set.0[f.b])
        .map(|f| f.w)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitCheck {
    pub full: EnergyReport,
    pub positive: EnergyReport,
    pub negative: EnergyReport,
}

impl SplitCheck {
    /// `|I(u) − I(u_+) − I(−u_−)|` relative to the size of the terms.
    pub fn relative_defect(&self) -> f64 {
        let scale = self.positive.tv_interior
            + self.negative.tv_interior
            + self.positive.boundary_term.abs()
            + self.negative.boundary_term.abs();
        let defect = (self.full.total - self.positive.total - self.negative.total).abs();
        if scale == 0.0 {
            defect
        } else {
            defect / scale
        }
    }
}

/// `(I(u), I(u_+), I(−u_−))`.
pub fn split_check(domain: &MeshDomain, bd: &BoundaryData, u: &CellField) -> SplitCheck {
    SplitCheck {
        full: energy(domain, bd, u),
        positive: energy(domain, bd, &u.positive_part()),
        negative: energy(domain, bd, &u.negative_part().scaled(-1.0)),
    }
}

/// Boundary measure of `∂_EΩ` (faces whose owner lies in `E`), split by the
/// sign class of `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceMeasures {
    pub on_minus_one: f64,
    pub on_plus_one: f64,
    pub total: f64,
}

pub fn trace_boundary_measures(
    domain: &MeshDomain,
    bd: &BoundaryData,
    set: &CellSet,
    tol: f64,
) -> TraceMeasures {
    let mut m = TraceMeasures {
        on_minus_one: 0.0,
        on_plus_one: 0.0,
        total: 0.0,
    };
    for (b, &f) in domain.boundary().iter().zip(bd.values()) {
        if !set.0[b.cell] {
            continue;
        }
        m.total += b.p;
        if (f + 1.0).abs() <= tol {
            m.on_minus_one += b.p;
        } else if (f - 1.0).abs() <= tol {
            m.on_plus_one += b.p;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerimeterBound {
    /// `P(E, X) = P(E, Ω) + P(Ω, ∂_EΩ)`.
    pub lhs: f64,
    /// `I(χ_E) + 2 P(Ω, X)`.
    pub rhs: f64,
}

/// Check `P(E, X) ≤ I(χ_E) + 2 P(Ω, X)`.
pub fn whole_space_perimeter_bound(
    domain: &MeshDomain,
    bd: &BoundaryData,
    set: &CellSet,
) -> Result<PerimeterBound, EnergyError> {
    if !bd.within_unit_bound() {
        return Err(EnergyError::DataTooLarge(bd.sup_norm()));
    }
    let trace_mass: f64 = domain
        .boundary()
        .iter()
        .filter(|b| set.0[b.cell])
        .map(|b| b.p)
        .sum();
    let lhs = perimeter(domain, set) + trace_mass;
    let rhs = energy_set(domain, bd, set, 1.0).total + 2.0 * domain.boundary_measure();
    let slack = 1e-12 * (lhs.abs() + rhs.abs());
    if lhs > rhs + slack {
        return Err(EnergyError::PerimeterBound { lhs, rhs });
    }
    Ok(PerimeterBound { lhs, rhs })
}

/// `∫₀¹ I(χ_{u>t}) dt + ∫₀¹ I(−χ_{u<−t}) dt`, evaluated exactly as a sum over
/// the distinct values of `u`. Requires values in `[-1, 1]`.
pub fn coarea_energy(domain: &MeshDomain, bd: &BoundaryData, u: &CellField) -> f64 {
    let mut levels: Vec<f64> = u.0.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut total = 0.0;
    for pair in levels.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let up = u.superlevel(lo);
        let down = u.sublevel(-lo);
        total += (hi - lo)
            * (energy_set(domain, bd, &up, 1.0).total + energy_set(domain, bd, &down, -1.0).total);
    }
    total
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::boundary::{make_boundary_data, BoundarySpec};
    use crate::mesh::{build_disk, build_grid_rectangle, Rect, Side, Stencil};

    fn square(n: usize, stencil: Stencil) -> MeshDomain {
        build_grid_rectangle(n, n, Rect::UNIT, |_, _| 1.0, stencil, 4 * n).unwrap()
    }

    fn top_bottom(d: &MeshDomain, a: f64) -> BoundaryData {
        let spec = BoundarySpec::new(vec![
            BoundarySpec::side(Side::Bottom, 0.0, 1.0, -a),
            BoundarySpec::side(Side::Top, 0.0, 1.0, a),
        ])
        .with_default(0.0);
        make_boundary_data(d, &spec).unwrap()
    }

    fn middle_thirds(d: &MeshDomain, a: f64) -> BoundaryData {
        let spec = BoundarySpec::new(vec![
            BoundarySpec::side(Side::Bottom, 1.0 / 3.0, 2.0 / 3.0, -a),
            BoundarySpec::side(Side::Top, 1.0 / 3.0, 2.0 / 3.0, a),
        ])
        .with_default(0.0);
        make_boundary_data(d, &spec).unwrap()
    }

    #[test]
    fn trace_of_constants_and_indicators() {
        let d = square(8, Stencil::N4);
        let t = trace(&d, &CellField::constant(d.num_cells(), 0.3));
        assert!(t.0.iter().all(|&v| v == 0.3));
        let lower = CellSet::from_centroids(&d, |_, y| y < 0.5);
        let t = trace(&d, &CellField::indicator(&lower, 1.0));
        for (b, v) in d.boundary().iter().zip(&t.0) {
            match b.pos {
                crate::mesh::BoundaryPos::Side { side: Side::Bottom, .. } => assert_eq!(*v, 1.0),
                crate::mesh::BoundaryPos::Side { side: Side::Top, .. } => assert_eq!(*v, 0.0),
                _ => assert!(*v == 0.0 || *v == 1.0),
            }
        }
    }

    #[test]
    fn constants_have_zero_energy_for_balanced_data() {
        let d = square(16, Stencil::N8);
        let bd = top_bottom(&d, 0.7);
        let r = energy(&d, &bd, &CellField::constant(d.num_cells(), -0.4));
        assert!(r.total.abs() <= 1e-12 * 0.4 * d.boundary_measure());
        assert_eq!(r.total, r.tv_interior + r.boundary_term);
    }

    #[test]
    fn nonuniqueness_competitor_has_zero_energy() {
        let d = square(64, Stencil::N4);
        let bd = top_bottom(&d, 1.0);
        let lower = CellSet::from_centroids(&d, |_, y| y < 0.5);
        let r = energy_pair(&d, &bd, &lower, &lower.complement());
        assert!((r.tv_interior - 2.0).abs() < 1e-12);
        assert!((r.boundary_term + 2.0).abs() < 1e-12);
        assert!(r.total.abs() < 1e-12);
    }

    #[test]
    fn nonexistence_strip_competitor() {
        let n = 64;
        let h = 1.0 / n as f64;
        let d = square(n, Stencil::N4);
        let bd = middle_thirds(&d, 2.0);
        // One-cell strips under the middle thirds, aligned to whole cells.
        let bottom = CellSet::from_centroids(&d, |x, y| y < h && x > 1.0 / 3.0 && x < 2.0 / 3.0);
        let top = CellSet::from_centroids(&d, |x, y| y > 1.0 - h && x > 1.0 / 3.0 && x < 2.0 / 3.0);
        let r = energy_pair(&d, &bd, &bottom, &top);
        // Each strip: perimeter len + 2h, boundary gain 2·len, where len is
        // the covered length (22 cells of width 1/64 here).
        let len = bottom.count() as f64 * h;
        assert_eq!(bottom.count(), 22);
        let expected = 2.0 * (len + 2.0 * h - 2.0 * len);
        assert!((r.total - expected).abs() < 1e-12, "{} vs {expected}", r.total);
        assert!((r.total - (-2.0 / 3.0 + 4.0 / 64.0)).abs() < 2.0 * h);
    }

    #[test]
    fn empty_and_full_sets() {
        let d = square(8, Stencil::N16);
        let bd = top_bottom(&d, 0.5);
        let n = d.num_cells();
        assert_eq!(energy_set(&d, &bd, &CellSet::empty(n), 1.0).total, 0.0);
        assert!(energy_set(&d, &bd, &CellSet::full(n), 1.0).total.abs() < 1e-15);
        assert_eq!(perimeter(&d, &CellSet::empty(n)), 0.0);
    }

    #[test]
    fn axis_aligned_half_square_perimeter_is_exact() {
        for stencil in [Stencil::N4, Stencil::N8, Stencil::N16] {
            let d = square(32, stencil);
            let lower = CellSet::from_centroids(&d, |_, y| y < 0.5);
            assert!((perimeter(&d, &lower) - 1.0).abs() < 1e-12, "{stencil}");
            let left = CellSet::from_centroids(&d, |x, _| x < 0.25);
            assert!((perimeter(&d, &left) - 1.0).abs() < 1e-12, "{stencil}");
        }
    }

    #[test]
    fn disk_chord() {
        let d = build_disk(256, [0.0, 0.0], 1.0, |_, _| 1.0, Stencil::N16, 2048).unwrap();
        let spec = BoundarySpec::new(vec![
            BoundarySpec::arc(-PI / 3.0, PI / 3.0, 1.0),
            BoundarySpec::arc(2.0 * PI / 3.0, 4.0 * PI / 3.0, -1.0),
        ])
        .with_default(0.0);
        let bd = make_boundary_data(&d, &spec).unwrap();
        let left = CellSet::from_centroids(&d, |x, _| x < -0.5);
        assert!((perimeter(&d, &left) - 3f64.sqrt()).abs() < 0.02);
        let r = energy_set(&d, &bd, &left, 1.0);
        assert!((r.total - (3f64.sqrt() - 2.0 * PI / 3.0)).abs() < 0.03);
    }

    #[test]
    fn split_for_nonnegative_and_two_valued_fields() {
        let d = square(8, Stencil::N8);
        let bd = top_bottom(&d, 0.9);
        let u = CellField((0..d.num_cells()).map(|i| (i % 5) as f64 / 5.0).collect());
        let s = split_check(&d, &bd, &u);
        assert_eq!(s.negative.total, 0.0);
        let e1 = CellSet::from_centroids(&d, |_, y| y < 0.3);
        let e2 = CellSet::from_centroids(&d, |_, y| y > 0.6);
        let s = split_check(&d, &bd, &CellField::two_valued(&e1, &e2));
        assert_eq!(s.positive, energy_set(&d, &bd, &e1, 1.0));
        assert!(s.relative_defect() < 1e-12);
    }

    #[test]
    fn perimeter_bound_trivial_cases() {
        let d = square(8, Stencil::N4);
        let bd = top_bottom(&d, 1.0);
        let n = d.num_cells();
        let b = whole_space_perimeter_bound(&d, &bd, &CellSet::empty(n)).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert!((b.rhs - 8.0).abs() < 1e-12);
        let b = whole_space_perimeter_bound(&d, &bd, &CellSet::full(n)).unwrap();
        assert!((b.lhs - 4.0).abs() < 1e-12);
        let big = top_bottom(&d, 2.0);
        assert!(whole_space_perimeter_bound(&d, &big, &CellSet::empty(n)).is_err());
    }

    #[test]
    fn trace_measures_of_empty_set() {
        let d = square(8, Stencil::N4);
        let bd = top_bottom(&d, 1.0);
        let m = trace_boundary_measures(&d, &bd, &CellSet::empty(d.num_cells()), 0.0);
        assert_eq!((m.on_minus_one, m.on_plus_one, m.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn coarea_matches_energy_on_step_field() {
        let d = square(8, Stencil::N16);
        let bd = top_bottom(&d, 0.8);
        let u = CellField(
            (0..d.num_cells())
                .map(|i| [-1.0, -0.25, 0.0, 0.5, 1.0][i % 5])
                .collect(),
        );
        let direct = energy(&d, &bd, &u).total;
        let layered = coarea_energy(&d, &bd, &u);
        assert!((direct - layered).abs() < 1e-12 * (1.0 + direct.abs()));
    }
}
