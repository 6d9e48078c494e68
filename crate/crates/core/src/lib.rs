//! Restricted total variation problems with Neumann data on weighted grids,
//! disks and graphs.
//!
//! The exact solver reduces the problem to two minimum cuts. A primal-dual
//! solver, dual-norm computations and a set of checks serve as independent
//! cross-checks. Scenarios describe complete runs in TOML.

pub mod analysis;
pub mod boundary;
pub mod dualnorm;
pub mod energy;
pub mod mesh;
pub mod mincut;
pub mod relaxed;
pub mod scenario;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mesh.md")]
    mod mesh {}
    #[doc = include_str!("../../../book/src/boundary.md")]
    mod boundary {}
    #[doc = include_str!("../../../book/src/energy.md")]
    mod energy {}
    #[doc = include_str!("../../../book/src/mincut.md")]
    mod mincut {}
    #[doc = include_str!("../../../book/src/relaxed.md")]
    mod relaxed {}
    #[doc = include_str!("../../../book/src/dualnorm.md")]
    mod dualnorm {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
