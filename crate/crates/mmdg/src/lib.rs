//! Velocity-based moving-mesh interior-penalty DG for 2D linear
//! advection-diffusion on the unit square.
//!
//! The advection field V is split into a mesh velocity Ṽ, carried by a flow
//! map integrated per quadrature point, and the remaining advection V − Ṽ,
//! which is upwinded on the static reference mesh.

// Index loops mirror the quadrature formulas; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod app;
pub mod basis;
pub mod config;
pub mod discretization;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod flowmap;
pub mod forms;
pub mod mesh;
pub mod output;
pub mod probes;
pub mod quadrature;
pub mod scenarios;
pub mod time;
pub mod velocity;

pub use discretization::{DGField, Discretization};
pub use error::{Error, Result};
pub use flowmap::FlowState;
pub use mesh::{BoundaryTag, Mesh};
pub use velocity::VelocityModel;
