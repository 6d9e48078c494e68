//! Boundary data `f` on the boundary faces of a [`MeshDomain`].

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{BoundaryPos, MeshDomain, Side};

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("boundary spec does not cover boundary face {face}")]
    Uncovered { face: usize },
    #[error("boundary data imbalance: residual {residual:e} exceeds tolerance {tol:e}")]
    Imbalance { residual: f64, tol: f64 },
    #[error("single-signed nonzero data cannot be balanced")]
    SingleSigned,
    #[error("invalid boundary spec: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} boundary values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One clause of a piecewise boundary function.
///
/// Arcs use angles in radians measured counter-clockwise from the positive
/// x-axis and cover `[from_angle, to_angle)` modulo 2π. Sides cover
/// `[from, to)` in the coordinate running along the side (x for top and
/// bottom, y for left and right).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryPiece {
    Arc {
        from_angle: f64,
        to_angle: f64,
        value: f64,
    },
    Side {
        side: Side,
        from: f64,
        to: f64,
        value: f64,
    },
}

impl BoundaryPiece {
    pub fn value(&self) -> f64 {
        match *self {
            BoundaryPiece::Arc { value, .. } | BoundaryPiece::Side { value, .. } => value,
        }
    }

    fn contains(&self, pos: &BoundaryPos) -> bool {
        match (*self, *pos) {
            (
                BoundaryPiece::Arc {
                    from_angle,
                    to_angle,
                    ..
                },
                BoundaryPos::Arc { angle, .. },
            ) => (angle - from_angle).rem_euclid(TAU) < to_angle - from_angle,
            (BoundaryPiece::Side { side, from, to, .. }, BoundaryPos::Side { side: s, coord, .. }) => {
                side == s && coord >= from && coord < to
            }
            _ => false,
        }
    }
}

/// Piecewise description of `f` on the continuum boundary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundarySpec {
    #[serde(default)]
    pub pieces: Vec<BoundaryPiece>,
    /// Value on positions no piece covers. Without it, uncovered faces are an error.
    #[serde(default)]
    pub default: Option<f64>,
}

impl BoundarySpec {
    pub fn new(pieces: Vec<BoundaryPiece>) -> Self {
        BoundarySpec {
            pieces,
            default: None,
        }
    }

    pub fn with_default(mut self, value: f64) -> Self {
        self.default = Some(value);
        self
    }

    pub fn arc(from_angle: f64, to_angle: f64, value: f64) -> BoundaryPiece {
        BoundaryPiece::Arc {
            from_angle,
            to_angle,
            value,
        }
    }

    pub fn side(side: Side, from: f64, to: f64, value: f64) -> BoundaryPiece {
        BoundaryPiece::Side {
            side,
            from,
            to,
            value,
        }
    }

    /// Pieces must be finite, non-empty and pairwise non-overlapping.
    pub fn validate(&self) -> Result<(), BoundaryError> {
        if let Some(d) = self.default {
            if !d.is_finite() {
                return Err(BoundaryError::InvalidSpec("default value is not finite".into()));
            }
        }
        for p in &self.pieces {
            if !p.value().is_finite() {
                return Err(BoundaryError::InvalidSpec(format!("non-finite value in {p:?}")));
            }
            match *p {
                BoundaryPiece::Arc {
                    from_angle,
                    to_angle,
                    ..
                } => {
                    let span = to_angle - from_angle;
                    if !(span > 0.0 && span <= TAU + 1e-12) {
                        return Err(BoundaryError::InvalidSpec(format!(
                            "arc [{from_angle}, {to_angle}) has invalid span"
                        )));
                    }
                }
                BoundaryPiece::Side { from, to, .. } => {
                    if !(to > from) {
                        return Err(BoundaryError::InvalidSpec(format!(
                            "side interval [{from}, {to}) is empty"
                        )));
                    }
                }
            }
        }
        for (i, a) in self.pieces.iter().enumerate() {
            for b in &self.pieces[i + 1..] {
                if overlaps(a, b) {
                    return Err(BoundaryError::InvalidSpec(format!(
                        "pieces {a:?} and {b:?} overlap"
                    )));
                }
            }
        }
        Ok(())
    }

    fn value_at(&self, pos: &BoundaryPos) -> Option<f64> {
        self.pieces
            .iter()
            .find(|p| p.contains(pos))
            .map(BoundaryPiece::value)
            .or(self.default)
    }
}

fn overlaps(a: &BoundaryPiece, b: &BoundaryPiece) -> bool {
    match (*a, *b) {
        (
            BoundaryPiece::Arc {
                from_angle: fa,
                to_angle: ta,
                ..
            },
            BoundaryPiece::Arc {
                from_angle: fb,
                to_angle: tb,
                ..
            },
        ) => {
            let eps = 1e-12;
            (fb - fa).rem_euclid(TAU) < (ta - fa) - eps || (fa - fb).rem_euclid(TAU) < (tb - fb) - eps
        }
        (
            BoundaryPiece::Side {
                side: sa,
                from: fa,
                to: ta,
                ..
            },
            BoundaryPiece::Side {
                side: sb,
                from: fb,
                to: tb,
                ..
            },
        ) => sa == sb && fa.max(fb) < ta.min(tb),
        _ => false,
    }
}

/// Values `f_b` per boundary face, with the balance residual `Σ f_b p_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    values: Vec<f64>,
    residual: f64,
    scale: f64,
}

impl BoundaryData {
    pub fn from_values(domain: &MeshDomain, values: Vec<f64>) -> Result<Self, BoundaryError> {
        let expected = domain.boundary().len();
        if values.len() != expected {
            return Err(BoundaryError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(BoundaryError::InvalidSpec(format!("non-finite boundary value {v}")));
        }
        let residual = domain
            .boundary()
            .iter()
            .zip(&values)
            .map(|(b, f)| f * b.p)
            .sum();
        Ok(BoundaryData {
            values,
            residual,
            scale: domain.boundary_measure(),
        })
    }

    pub fn zeros(domain: &MeshDomain) -> Self {
        Self::from_values(domain, vec![0.0; domain.boundary().len()]).expect("zeros are valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Whether `‖f‖_∞ ≤ 1`, the data class of the restricted problem.
    pub fn within_unit_bound(&self) -> bool {
        self.sup_norm() <= 1.0
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Default balance tolerance `1e-12 · Σ p_b`.
    pub fn default_tolerance(&self) -> f64 {
        1e-12 * self.scale
    }

    pub fn validate_balance(&self, tol: f64) -> Result<f64, BoundaryError> {
        if self.residual.abs() > tol {
            Err(BoundaryError::Imbalance {
                residual: self.residual,
                tol,
            })
        } else {
            Ok(self.residual)
        }
    }

    /// Scale down the heavier signed part so the residual vanishes.
    ///
    /// Magnitudes never increase. Data already balanced to rounding level are
    /// returned unchanged, which makes the operation idempotent.
    pub fn rebalance(&self, domain: &MeshDomain) -> Result<Self, BoundaryError> {
        let mut pos = 0.0;
        let mut neg = 0.0;
        let mut abs = 0.0;
        for (b, &f) in domain.boundary().iter().zip(&self.values) {
            if f > 0.0 {
                pos += f * b.p;
            } else {
                neg -= f * b.p;
            }
            abs += f.abs() * b.p;
        }
        if self.residual.abs() <= 8.0 * f64::EPSILON * abs {
            return Ok(self.clone());
        }
        if pos == 0.0 || neg == 0.0 {
            return Err(BoundaryError::SingleSigned);
        }
        let values = if pos > neg {
            let ratio = neg / pos;
            self.values
                .iter()
                .map(|&f| if f > 0.0 { f * ratio } else { f })
                .collect()
        } else {
            let ratio = pos / neg;
            self.values
                .iter()
                .map(|&f| if f < 0.0 { f * ratio } else { f })
                .collect()
        };
        Self::from_values(domain, values)
    }

    pub fn scaled(&self, domain: &MeshDomain, tau: f64) -> Self {
        Self::from_values(domain, self.values.iter().map(|f| tau * f).collect())
            .expect("scaling preserves shape")
    }

    pub fn negated(&self, domain: &MeshDomain) -> Self {
        self.scaled(domain, -1.0)
    }

    /// `‖f − h‖_{L¹(∂Ω)} = Σ |f_b − h_b| p_b`.
    pub fn l1_distance(&self, domain: &MeshDomain, other: &BoundaryData) -> f64 {
        domain
            .boundary()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(b, (f, h))| (f - h).abs() * b.p)
            .sum()
    }

    /// Per-cell sums `Σ_{b owned by c} f_b p_b`.
    pub fn cell_coefficients(&self, domain: &MeshDomain) -> Vec<f64> {
        let mut c = vec![0.0; domain.num_cells()];
        for (b, f) in domain.boundary().iter().zip(&self.values) {
            c[b.cell] += f * b.p;
        }
        c
    }
}

/// Sample `spec` at every boundary face of `domain`.
pub fn make_boundary_data(
    domain: &MeshDomain,
    spec: &BoundarySpec,
) -> Result<BoundaryData, BoundaryError> {
    spec.validate()?;
    let values = domain
        .boundary()
        .iter()
        .enumerate()
        .map(|(face, b)| spec.value_at(&b.pos).ok_or(BoundaryError::Uncovered { face }))
        .collect::<Result<Vec<_>, _>>()?;
    BoundaryData::from_values(domain, values)
}
