//! Weighted-graph discretizations of planar domains.
//!
//! A [`MeshDomain`] is a finite stand-in for a metric measure domain: cells
//! carry measure, interior faces carry the perimeter weight of the cut
//! between two cells, and boundary faces carry the boundary measure sampled
//! from the continuum curve. Grid builders attach geometry (centroids, grid
//! indices, boundary positions) so that boundary data can be specified by
//! side or by angle.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("non-positive weight {value} at {context}")]
    NonPositiveWeight { value: f64, context: String },
    #[error("degenerate extent")]
    DegenerateExtent,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cell adjacency graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("duplicate interior face between cells {0} and {1}")]
    DuplicateFace(usize, usize),
    #[error("face references missing cell {0}")]
    MissingCell(usize),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Neighbourhood system used for interior faces of grid meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stencil {
    N4,
    N8,
    N16,
}

impl Stencil {
    /// Half of the neighbourhood: one representative per undirected direction.
    pub fn directions(self) -> &'static [(i64, i64)] {
        const N4: [(i64, i64); 2] = [(1, 0), (0, 1)];
        const N8: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];
        const N16: [(i64, i64); 8] = [
            (1, 0),
            (0, 1),
            (1, 1),
            (1, -1),
            (2, 1),
            (1, 2),
            (2, -1),
            (1, -2),
        ];
        match self {
            Stencil::N4 => &N4,
            Stencil::N8 => &N8,
            Stencil::N16 => &N16,
        }
    }

    /// Cauchy–Crofton edge weights for square cells of unit size.
    ///
    /// Each direction `e` gets `Δφ_e / (2|e|)` where `Δφ_e` is the angular
    /// measure of the directions it represents. The whole family is then
    /// rescaled so that an axis-aligned line is measured exactly.
    pub fn crofton_factors(self) -> Vec<((i64, i64), f64)> {
        let dirs = self.directions();
        let mut angles: Vec<(f64, usize)> = dirs
            .iter()
            .enumerate()
            .map(|(k, &(p, q))| {
                let mut a = (q as f64).atan2(p as f64);
                if a < 0.0 {
                    a += PI;
                }
                (a, k)
            })
            .collect();
        angles.sort_by(|a, b| a.0.total_cmp(&b.0));
        let m = angles.len();
        let mut dphi = vec![0.0; m];
        for idx in 0..m {
            let prev = if idx == 0 {
                angles[m - 1].0 - PI
            } else {
                angles[idx - 1].0
            };
            let next = if idx + 1 == m {
                angles[0].0 + PI
            } else {
                angles[idx + 1].0
            };
            dphi[angles[idx].1] = 0.5 * (next - prev);
        }
        let raw: Vec<f64> = dirs
            .iter()
            .zip(&dphi)
            .map(|(&(p, q), d)| d / (2.0 * ((p * p + q * q) as f64).sqrt()))
            .collect();
        // A horizontal line of unit length is crossed by |q|/h edges of
        // direction (p, q) per cell column.
        let horizontal: f64 = dirs
            .iter()
            .zip(&raw)
            .map(|(&(_, q), w)| w * q.abs() as f64)
            .sum();
        dirs.iter()
            .zip(raw)
            .map(|(&d, w)| (d, w / horizontal))
            .collect()
    }
}

impl fmt::Display for Stencil {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stencil::N4 => "N4",
            Stencil::N8 => "N8",
            Stencil::N16 => "N16",
        };
        f.write_str(s)
    }
}

impl FromStr for Stencil {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "N4" => Ok(Stencil::N4),
            "N8" => Ok(Stencil::N8),
            "N16" => Ok(Stencil::N16),
            other => Err(MeshError::InvalidParameter(format!("unknown stencil {other}"))),
        }
    }
}

/// Side of an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DomainKind {
    Rectangle(Rect),
    Disk { center: [f64; 2], radius: f64 },
    Graph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub mu: f64,
    pub centroid: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorFace {
    pub a: usize,
    pub b: usize,
    pub w: f64,
}

/// Where a boundary face sits on the continuum boundary.
///
/// `s` is the arc-length parameter measured along the boundary curve
/// (unweighted), used for boundary distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryPos {
    Free { s: Option<f64> },
    Side { side: Side, coord: f64, s: f64 },
    Arc { angle: f64, s: f64 },
}

impl BoundaryPos {
    pub fn arc_param(&self) -> Option<f64> {
        match *self {
            BoundaryPos::Free { s } => s,
            BoundaryPos::Side { s, .. } | BoundaryPos::Arc { s, .. } => Some(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub p: f64,
    pub pos: BoundaryPos,
}

/// Grid layout shared by the rectangle and disk builders.
#[derive(Debug, Clone, PartialEq)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 2],
    pub hx: f64,
    pub hy: f64,
    slots: Vec<Option<usize>>,
    coords: Vec<(usize, usize)>,
}

impl GridInfo {
    pub fn cell_at(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.nx && j < self.ny {
            self.slots[j * self.nx + i]
        } else {
            None
        }
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        self.coords[cell]
    }

    fn index_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.hx).floor() as i64,
            ((y - self.origin[1]) / self.hy).floor() as i64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainStats {
    pub kind: String,
    pub cells: usize,
    pub interior_faces: usize,
    pub boundary_faces: usize,
    pub total_mu: f64,
    pub total_p: f64,
    pub h: Option<f64>,
    pub stencil: Option<String>,
}

/// Finite weighted-graph surrogate for a domain. Immutable once built.
#[derive(Debug, Clone)]
pub struct MeshDomain {
    cells: Vec<Cell>,
    faces: Vec<InteriorFace>,
    boundary: Vec<BoundaryFace>,
    stencil: Option<Stencil>,
    kind: DomainKind,
    grid: Option<GridInfo>,
    boundary_length: Option<f64>,
    owned: Vec<Vec<usize>>,
}

impl MeshDomain {
    /// Assemble a domain from raw parts and validate every invariant.
    pub fn from_parts(
        cells: Vec<Cell>,
        faces: Vec<InteriorFace>,
        boundary: Vec<BoundaryFace>,
    ) -> Result<Self, MeshError> {
        Self::assemble(cells, faces, boundary, None, DomainKind::Graph, None, None)
    }

    fn assemble(
        cells: Vec<Cell>,
        faces: Vec<InteriorFace>,
        boundary: Vec<BoundaryFace>,
        stencil: Option<Stencil>,
        kind: DomainKind,
        grid: Option<GridInfo>,
        boundary_length: Option<f64>,
    ) -> Result<Self, MeshError> {
        let mut owned = vec![Vec::new(); cells.len()];
        for (k, b) in boundary.iter().enumerate() {
            if b.cell >= cells.len() {
                return Err(MeshError::MissingCell(b.cell));
            }
            owned[b.cell].push(k);
        }
        let domain = MeshDomain {
            cells,
            faces,
            boundary,
            stencil,
            kind,
            grid,
            boundary_length,
            owned,
        };
        domain.validate()?;
        Ok(domain)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.cells.is_empty() {
            return Err(MeshError::InvalidParameter("domain has no cells".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if !(c.mu > 0.0 && c.mu.is_finite()) {
                return Err(MeshError::NonPositiveWeight {
                    value: c.mu,
                    context: format!("measure of cell {i}"),
                });
            }
        }
        let mut seen = HashSet::with_capacity(self.faces.len());
        for f in &self.faces {
            let n = self.cells.len();
            if f.a >= n {
                return Err(MeshError::MissingCell(f.a));
            }
            if f.b >= n {
                return Err(MeshError::MissingCell(f.b));
            }
            if f.a == f.b {
                return Err(MeshError::Schema(format!("self-loop face on cell {}", f.a)));
            }
            if !(f.w > 0.0 && f.w.is_finite()) {
                return Err(MeshError::NonPositiveWeight {
                    value: f.w,
                    context: format!("face ({}, {})", f.a, f.b),
                });
            }
            if !seen.insert((f.a.min(f.b), f.a.max(f.b))) {
                return Err(MeshError::DuplicateFace(f.a, f.b));
            }
        }
        for (k, b) in self.boundary.iter().enumerate() {
            if b.cell >= self.cells.len() {
                return Err(MeshError::MissingCell(b.cell));
            }
            if !(b.p > 0.0 && b.p.is_finite()) {
                return Err(MeshError::NonPositiveWeight {
                    value: b.p,
                    context: format!("boundary face {k}"),
                });
            }
        }
        let components = self.component_count();
        if components != 1 {
            return Err(MeshError::Disconnected { components });
        }
        Ok(())
    }

    fn component_count(&self) -> usize {
        let n = self.cells.len();
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &(u, _) in &adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        components
    }

    /// Neighbour lists `(cell, face index)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.cells.len()];
        for (k, f) in self.faces.iter().enumerate() {
            adj[f.a].push((f.b, k));
            adj[f.b].push((f.a, k));
        }
        adj
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn faces(&self) -> &[InteriorFace] {
        &self.faces
    }

    pub fn boundary(&self) -> &[BoundaryFace] {
        &self.boundary
    }

    /// Boundary faces owned by `cell`.
    pub fn owned_faces(&self, cell: usize) -> &[usize] {
        &self.owned[cell]
    }

    pub fn owns_boundary(&self, cell: usize) -> bool {
        !self.owned[cell].is_empty()
    }

    pub fn stencil(&self) -> Option<Stencil> {
        self.stencil
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn grid(&self) -> Option<&GridInfo> {
        self.grid.as_ref()
    }

    /// Unweighted length of the continuum boundary curve, when known.
    pub fn boundary_length(&self) -> Option<f64> {
        self.boundary_length
    }

    /// Mesh spacing (grid meshes only).
    pub fn h(&self) -> Option<f64> {
        self.grid.as_ref().map(|g| g.hx.max(g.hy))
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.mu).sum()
    }

    pub fn boundary_measure(&self) -> f64 {
        self.boundary.iter().map(|b| b.p).sum()
    }

    pub fn centroid(&self, cell: usize) -> Option<[f64; 2]> {
        self.cells[cell].centroid
    }

    pub fn stats(&self) -> DomainStats {
        let kind = match self.kind {
            DomainKind::Rectangle(_) => "rectangle",
            DomainKind::Disk { .. } => "disk",
            DomainKind::Graph => "graph",
        };
        DomainStats {
            kind: kind.to_string(),
            cells: self.cells.len(),
            interior_faces: self.faces.len(),
            boundary_faces: self.boundary.len(),
            total_mu: self.total_measure(),
            total_p: self.boundary_measure(),
            h: self.h(),
            stencil: self.stencil.map(|s| s.to_string()),
        }
    }

    /// Serialize to the JSON graph schema. Geometry other than the boundary
    /// arc parameter is dropped.
    pub fn to_graph_json(&self) -> String {
        let doc = GraphDoc {
            cells: self
                .cells
                .iter()
                .enumerate()
                .map(|(id, c)| GraphCell { id, mu: c.mu })
                .collect(),
            faces: self
                .faces
                .iter()
                .map(|f| GraphFace {
                    a: f.a,
                    b: f.b,
                    w: f.w,
                })
                .collect(),
            boundary: self
                .boundary
                .iter()
                .map(|b| GraphBoundary {
                    cell: b.cell,
                    p: b.p,
                    pos: b.pos.arc_param(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("graph document is always serializable")
    }

    pub fn from_graph_json(text: &str) -> Result<Self, MeshError> {
        let doc: GraphDoc =
            serde_json::from_str(text).map_err(|e| MeshError::Schema(e.to_string()))?;
        let mut index = std::collections::HashMap::with_capacity(doc.cells.len());
        for (k, c) in doc.cells.iter().enumerate() {
            if index.insert(c.id, k).is_some() {
                return Err(MeshError::Schema(format!("duplicate cell id {}", c.id)));
            }
        }
        let lookup = |id: usize| index.get(&id).copied().ok_or(MeshError::MissingCell(id));
        let cells = doc
            .cells
            .iter()
            .map(|c| Cell {
                mu: c.mu,
                centroid: None,
            })
            .collect();
        let faces = doc
            .faces
            .iter()
            .map(|f| {
                Ok(InteriorFace {
                    a: lookup(f.a)?,
                    b: lookup(f.b)?,
                    w: f.w,
                })
            })
            .collect::<Result<_, MeshError>>()?;
        let boundary = doc
            .boundary
            .iter()
            .map(|b| {
                Ok(BoundaryFace {
                    cell: lookup(b.cell)?,
                    p: b.p,
                    pos: BoundaryPos::Free { s: b.pos },
                })
            })
            .collect::<Result<_, MeshError>>()?;
        Self::from_parts(cells, faces, boundary)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    cells: Vec<GraphCell>,
    faces: Vec<GraphFace>,
    boundary: Vec<GraphBoundary>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphCell {
    id: usize,
    mu: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFace {
    a: usize,
    b: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphBoundary {
    cell: usize,
    p: f64,
    #[serde(default)]
    pos: Option<f64>,
}

/// Read a domain from a file in the JSON graph schema.
pub fn load_graph(path: impl AsRef<Path>) -> Result<MeshDomain, MeshError> {
    let text = std::fs::read_to_string(path)?;
    MeshDomain::from_graph_json(&text)
}

/// Density of the weighted-disk example: 1/2 on the closed strip
/// `[-1/10, 1/10] × [-9/10, 9/10]`, 1 elsewhere.
pub fn strip_density(x: f64, y: f64) -> f64 {
    if x.abs() <= 0.1 && y.abs() <= 0.9 {
        0.5
    } else {
        1.0
    }
}

fn sample_weight<W: Fn(f64, f64) -> f64>(weight: &W, x: f64, y: f64, what: &str) -> Result<f64, MeshError> {
    let w = weight(x, y);
    if w > 0.0 && w.is_finite() {
        Ok(w)
    } else {
        Err(MeshError::NonPositiveWeight {
            value: w,
            context: format!("{what} ({x}, {y})"),
        })
    }
}

/// Interior faces for cells laid out on `grid`, using the stencil's
/// direction set. N8/N16 require square cells.
fn grid_faces<W: Fn(f64, f64) -> f64>(
    grid: &GridInfo,
    centroids: &[[f64; 2]],
    stencil: Stencil,
    weight: &W,
) -> Result<Vec<InteriorFace>, MeshError> {
    let (hx, hy) = (grid.hx, grid.hy);
    let factors: Vec<((i64, i64), f64)> = match stencil {
        Stencil::N4 => vec![((1, 0), hy), ((0, 1), hx)],
        _ => {
            if (hx - hy).abs() > 1e-12 * hx.max(hy) {
                return Err(MeshError::InvalidParameter(format!(
                    "stencil {stencil} requires square cells (hx={hx}, hy={hy})"
                )));
            }
            stencil
                .crofton_factors()
                .into_iter()
                .map(|(d, f)| (d, f * hx))
                .collect()
        }
    };
    let at = |i: i64, j: i64| -> Option<usize> {
        if i < 0 || j < 0 {
            None
        } else {
            grid.cell_at(i as usize, j as usize)
        }
    };
    let midpoint_weight = |a: usize, b: usize| {
        let mx = 0.5 * (centroids[a][0] + centroids[b][0]);
        let my = 0.5 * (centroids[a][1] + centroids[b][1]);
        sample_weight(weight, mx, my, "face midpoint")
    };
    let mut faces = Vec::new();
    let mut index = HashMap::new();
    for (a, &(i, j)) in grid.coords.iter().enumerate() {
        for &((p, q), geo) in &factors {
            if let Some(b) = at(i as i64 + p, j as i64 + q) {
                let w = midpoint_weight(a, b)?;
                index.insert((a.min(b), a.max(b)), faces.len());
                faces.push(InteriorFace { a, b, w: geo * w });
            }
        }
    }
    // A slanted edge with an endpoint outside the domain is replaced by its
    // two axis staircases at half weight each; the steps that stay inside
    // the domain keep lines ending on a wall at their full length.
    for &(i, j) in &grid.coords {
        let (i, j) = (i as i64, j as i64);
        for &((p, q), geo) in &factors {
            if p == 0 || q == 0 {
                continue;
            }
            for (p, q) in [(p, q), (-p, -q)] {
                if at(i + p, j + q).is_some() {
                    continue;
                }
                let (sx, sy) = (p.signum(), q.signum());
                let mut steps = Vec::new();
                for row in [j, j + q] {
                    steps.extend((0..p.abs()).map(|k| ((i + k * sx, row), (i + (k + 1) * sx, row))));
                }
                for col in [i, i + p] {
                    steps.extend((0..q.abs()).map(|k| ((col, j + k * sy), (col, j + (k + 1) * sy))));
                }
                for ((ui, uj), (vi, vj)) in steps {
                    if let (Some(u), Some(v)) = (at(ui, uj), at(vi, vj)) {
                        let f = index[&(u.min(v), u.max(v))];
                        faces[f].w += 0.5 * geo * midpoint_weight(u, v)?;
                    }
                }
            }
        }
    }
    Ok(faces)
}

/// Uniform grid over a rectangle.
///
/// The boundary is cut into `m` equal-length segments (further split at
/// corners), each owned by the boundary cell containing its midpoint.
pub fn build_grid_rectangle<W: Fn(f64, f64) -> f64>(
    nx: usize,
    ny: usize,
    extent: Rect,
    weight: W,
    stencil: Stencil,
    m: usize,
) -> Result<MeshDomain, MeshError> {
    if nx < 2 || ny < 2 {
        return Err(MeshError::InvalidParameter(format!("grid {nx}x{ny} is too small")));
    }
    let (width, height) = (extent.width(), extent.height());
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(MeshError::DegenerateExtent);
    }
    if m < 2 * (nx + ny) {
        return Err(MeshError::InvalidParameter(format!(
            "{m} boundary segments is fewer than 2(nx+ny) = {}",
            2 * (nx + ny)
        )));
    }
    let hx = width / nx as f64;
    let hy = height / ny as f64;
    let mut cells = Vec::with_capacity(nx * ny);
    let mut centroids = Vec::with_capacity(nx * ny);
    let mut coords = Vec::with_capacity(nx * ny);
    let mut slots = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = [extent.x0 + (i as f64 + 0.5) * hx, extent.y0 + (j as f64 + 0.5) * hy];
            let w = sample_weight(&weight, c[0], c[1], "cell centroid")?;
            slots.push(Some(cells.len()));
            coords.push((i, j));
            centroids.push(c);
            cells.push(Cell {
                mu: hx * hy * w,
                centroid: Some(c),
            });
        }
    }
    let grid = GridInfo {
        nx,
        ny,
        origin: [extent.x0, extent.y0],
        hx,
        hy,
        slots,
        coords,
    };
    let faces = grid_faces(&grid, &centroids, stencil, &weight)?;

    // Counter-clockwise walk starting at the lower-left corner.
    let perimeter = 2.0 * (width + height);
    let corners = [0.0, width, width + height, 2.0 * width + height, perimeter];
    let sides = [Side::Bottom, Side::Right, Side::Top, Side::Left];
    let point_at = |s: f64| -> (Side, f64, f64, f64) {
        if s < corners[1] {
            (Side::Bottom, extent.x0 + s, extent.y0, extent.x0 + s)
        } else if s < corners[2] {
            let t = s - corners[1];
            (Side::Right, extent.x1, extent.y0 + t, extent.y0 + t)
        } else if s < corners[3] {
            let t = s - corners[2];
            (Side::Top, extent.x1 - t, extent.y1, extent.x1 - t)
        } else {
            let t = s - corners[3];
            (Side::Left, extent.x0, extent.y1 - t, extent.y1 - t)
        }
    };
    let seg = perimeter / m as f64;
    let snap = 1e-12 * perimeter;
    let mut boundary = Vec::with_capacity(m + 4);
    for k in 0..m {
        let start = k as f64 * seg;
        let end = if k + 1 == m { perimeter } else { (k + 1) as f64 * seg };
        let mut cuts = vec![start];
        for &c in &corners[1..4] {
            if c > start + snap && c < end - snap {
                cuts.push(c);
            }
        }
        cuts.push(end);
        for piece in cuts.windows(2) {
            let (a, b) = (piece[0], piece[1]);
            let mid = 0.5 * (a + b);
            let (side, x, y, coord) = point_at(mid);
            debug_assert!(sides.contains(&side));
            let w = sample_weight(&weight, x, y, "boundary segment midpoint")?;
            let i = (((x - extent.x0) / hx).floor() as i64).clamp(0, nx as i64 - 1) as usize;
            let j = (((y - extent.y0) / hy).floor() as i64).clamp(0, ny as i64 - 1) as usize;
            boundary.push(BoundaryFace {
                cell: grid.cell_at(i, j).expect("rectangle grids are full"),
                p: (b - a) * w,
                pos: BoundaryPos::Side { side, coord, s: mid },
            });
        }
    }
    MeshDomain::assemble(
        cells,
        faces,
        boundary,
        Some(stencil),
        DomainKind::Rectangle(extent),
        Some(grid),
        Some(perimeter),
    )
}

/// Grid cells of the bounding square whose centroids lie in the open disk.
///
/// The circle is sampled in `m` equal arcs; each arc is owned by the domain
/// cell with the nearest centroid.
pub fn build_disk<W: Fn(f64, f64) -> f64>(
    n: usize,
    center: [f64; 2],
    radius: f64,
    weight: W,
    stencil: Stencil,
    m: usize,
) -> Result<MeshDomain, MeshError> {
    if n < 8 {
        return Err(MeshError::InvalidParameter(format!("disk needs n >= 8 cells across, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(MeshError::DegenerateExtent);
    }
    if m < n {
        return Err(MeshError::InvalidParameter(format!(
            "{m} boundary segments is fewer than n = {n}"
        )));
    }
    let h = 2.0 * radius / n as f64;
    let origin = [center[0] - radius, center[1] - radius];
    let mut cells = Vec::new();
    let mut centroids = Vec::new();
    let mut coords = Vec::new();
    let mut slots = vec![None; n * n];
    for j in 0..n {
        for i in 0..n {
            let c = [origin[0] + (i as f64 + 0.5) * h, origin[1] + (j as f64 + 0.5) * h];
            let (dx, dy) = (c[0] - center[0], c[1] - center[1]);
            if dx * dx + dy * dy >= radius * radius {
                continue;
            }
            let w = sample_weight(&weight, c[0], c[1], "cell centroid")?;
            slots[j * n + i] = Some(cells.len());
            coords.push((i, j));
            centroids.push(c);
            cells.push(Cell {
                mu: h * h * w,
                centroid: Some(c),
            });
        }
    }
    let grid = GridInfo {
        nx: n,
        ny: n,
        origin,
        hx: h,
        hy: h,
        slots,
        coords,
    };
    let faces = grid_faces(&grid, &centroids, stencil, &weight)?;

    let dtheta = 2.0 * PI / m as f64;
    let mut boundary = Vec::with_capacity(m);
    for k in 0..m {
        let angle = (k as f64 + 0.5) * dtheta;
        let (x, y) = (center[0] + radius * angle.cos(), center[1] + radius * angle.sin());
        let w = sample_weight(&weight, x, y, "boundary arc midpoint")?;
        let owner = nearest_cell(&grid, &centroids, x, y)
            .ok_or_else(|| MeshError::InvalidParameter("no cell near the boundary".into()))?;
        boundary.push(BoundaryFace {
            cell: owner,
            p: radius * dtheta * w,
            pos: BoundaryPos::Arc {
                angle,
                s: radius * angle,
            },
        });
    }
    MeshDomain::assemble(
        cells,
        faces,
        boundary,
        Some(stencil),
        DomainKind::Disk { center, radius },
        Some(grid),
        Some(2.0 * PI * radius),
    )
}

/// Nearest domain cell by centroid distance; ties go to the lower id.
fn nearest_cell(grid: &GridInfo, centroids: &[[f64; 2]], x: f64, y: f64) -> Option<usize> {
    let (ci, cj) = grid.index_of(x, y);
    let h = grid.hx.max(grid.hy);
    let mut best: Option<(f64, usize)> = None;
    let max_r = grid.nx.max(grid.ny) as i64;
    let mut r = 1;
    while r <= max_r {
        for j in (cj - r)..=(cj + r) {
            for i in (ci - r)..=(ci + r) {
                if i < 0 || j < 0 {
                    continue;
                }
                if let Some(c) = grid.cell_at(i as usize, j as usize) {
                    let d = (centroids[c][0] - x).powi(2) + (centroids[c][1] - y).powi(2);
                    if best.is_none_or(|(bd, bc)| d < bd || (d == bd && c < bc)) {
                        best = Some((d, c));
                    }
                }
            }
        }
        // Any cell outside the searched window is at least r·h away.
        if let Some((d, _)) = best {
            if d.sqrt() <= (r as f64) * h {
                break;
            }
        }
        r += 1;
    }
    best.map(|(_, c)| c)
}
