//! Poisson solver on pixel-based polygonal approximations of smooth curved
//! domains.
//!
//! The discretization is an order-`k` enhanced virtual element method on a
//! polygonal tessellation obtained by agglomerating pixels of a fine
//! structured grid, with Dirichlet conditions imposed weakly on the true
//! curved boundary through Nitsche terms plus a Taylor-series boundary
//! correction. Degrees of freedom that are invisible to the element
//! projectors ("lazy" DOFs on macro edges) are eliminated exactly by static
//! condensation. A tensor finite element baseline on the raw pixel grid is
//! included for comparison.

pub mod agglomeration;
pub mod assembly;
pub mod condensation;
pub mod errors;
pub mod fem;
pub mod geometry;
pub mod pixelmesh;
pub mod quadrature;
pub mod solver;
pub mod vemspace;

pub use geometry::{ImplicitDomain, ManufacturedCase};
pub use pixelmesh::PixelGrid;
pub use agglomeration::PolyMesh;
