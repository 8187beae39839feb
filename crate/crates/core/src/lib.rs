//! Dynamics, control, simulation and verification for a plate suspended by
//! three cable-tethered quadrotors, carrying a free-rolling ball on top.
//!
//! The plant is an underactuated multibody system evolving on
//! `SO(3) x R^3` (plate) `x R^2` (ball) `x (S^2 x SO(3))^3` (tethers and
//! quadrotors). The controller stack decouples the ball-and-plate subsystem
//! from the quadrotors through the tether tensions, partially feedback
//! linearizes the plate translation and rotation, allocates the required
//! wrench to the three tethers with a minimum-norm solve, aligns each tether
//! with its desired tension direction, and finally synthesizes per-quadrotor
//! thrust and body moment with a fast inner attitude loop.
//!
//! Modules:
//! - [`geom`]: SO(3) / S^2 primitives (hat, vee, exponential map, attitude errors)
//! - [`model`]: parameters, state, energies, full and decoupled equations of motion
//! - [`control`]: the complete control pipeline
//! - [`sim`]: manifold-preserving fixed-step integration and trajectory recording
//! - [`verify`]: Lyapunov monitors, gain-condition certificates, dynamics oracles
//! - [`sampling`]: seeded random states and gains for randomized checks

pub mod control;
pub mod geom;
pub mod model;
pub mod sampling;
pub mod sim;
pub mod verify;

pub use control::{compute_controls, ControlError, ControlTrace, ControllerMemory, Gains};
pub use geom::{Rotation, SkewMat, UnitVec, Vec2, Vec3};
pub use model::{
    Accelerations, ControlInput, ModelError, QuadrotorParams, SystemParams, SystemState,
    TensionSet, TetherState,
};
pub use sim::{IntegratorConfig, Mode, Scenario, SimError, SimOutcome, SimResult, Trajectory};
pub use verify::{GainCertificate, LyapunovSample, VerifyError};
