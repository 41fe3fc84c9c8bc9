//! Differentiable projective-dynamics simulation of soft bodies.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod calibrate;
pub mod constitutive;
pub mod damplab;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod sparse;

pub use constitutive::{ActuationSignal, FiberMode, Material, MuscleFiber, SoftBody};
pub use dynamics::{EdgeLoad, ForceSpec, Simulator, SolverConfig, State, Trajectory};
pub use error::{Error, Result};
pub use mesh::{build_hex_box, build_tet_box, Axis, ElementKind, FaceSide, Mesh, RestShape};
