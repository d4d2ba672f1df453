//! RIS-assisted 3D direction-of-arrival estimation toolkit.
//!
//! The crate simulates a reflective surface with a configurable phase
//! schedule, synthesizes multi-snapshot sensor observations, estimates
//! azimuth/elevation angles by joint sparse recovery with off-grid
//! refinement, optimizes the phase schedule by block-coordinate Riemannian
//! ascent, and evaluates everything against the Cramér–Rao lower bound.

pub mod beamformer;
pub mod config;
pub mod crlb;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod geometry;
pub mod output;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{AngleAxis, AngleGrid, AnglePair, ArrayGeometry, Dictionary, C64};
