//! Self-supervised correspondence models for statistical shape modeling.
//!
//! A network maps an unordered point cloud to an ordered set of `M`
//! correspondence points, each a convex combination of the input points
//! weighted by a learned row-stochastic correspondence map. The crate also
//! carries everything around that network: mesh and point I/O, rigid
//! alignment, corruption protocols, the Chamfer / mapping-error objective,
//! surface-sampling metrics (CD, EMD, P2F), PCA shape statistics and a
//! synthetic cohort generator.

pub mod corruption;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod rng;
pub mod ssm;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud, TriangleMesh};
