pub mod cli;
pub mod deform;
pub mod error;
pub mod eval;
pub mod geom;
pub mod loss;
pub mod meshio;
pub mod optim;
pub mod pdm;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Result};
pub use geom::{grid_node_position, trilinear_sample, Deformation, Direction, GridField, Point3, PointCloud, RngSeed, TriMesh};
