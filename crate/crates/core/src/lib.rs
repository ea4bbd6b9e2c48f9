//! Simulation and numerical geometry for spatially independent martingales:
//! fractal percolation and other subdivision cascades, Poissonian cutouts,
//! intersection masses against planes, algebraic curves and self-similar
//! measures, and estimators for dimensions, Fourier decay and convolutions.

pub mod analysis;
pub mod curve;
pub mod cutout;
pub mod density;
pub mod error;
pub mod experiment;
pub mod families;
pub mod geom;
pub mod intersect;
pub mod model;
pub mod raster;
pub mod rng;
pub mod snowflake;
pub mod subdivision;

pub use density::Density;
pub use error::{Error, Result};
pub use model::{ModelSpec, Realization};
pub use rng::SeedPath;
