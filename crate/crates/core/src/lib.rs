//! Exact and numerical checks for the building blocks of a four-variable
//! automorphic kernel identity over `Q`: exponential sums over residue rings,
//! unramified local zeta integrals, lattice Poisson summation, an archimedean
//! integral transform and the truncated geometric side.

pub mod arch;
pub mod error;
pub mod expsum;
pub mod geometry;
pub mod global;
pub mod localzeta;
pub mod ring;
pub mod sum;

pub use error::{Error, Result};

/// Points, matrices and group elements over `Q`, as used for exact geometry.
pub type RatMat2 = geometry::Mat2<num_rational::BigRational>;
pub type RatVPoint = geometry::VPoint<num_rational::BigRational>;
pub type RatWPoint = geometry::WPoint<num_rational::BigRational>;
pub type RatGroupElem = geometry::GroupElem<num_rational::BigRational>;
/// Real points, the arguments of the archimedean transform.
pub type RealMat2 = geometry::Mat2<f64>;
pub type RealVPoint = geometry::VPoint<f64>;
