//! Dynamics, equilibrium analysis and model-based control of planar soft
//! robots described by piecewise constant curvature.

pub mod analysis;
pub mod cc;
pub mod chain;
pub mod control;
pub mod error;
pub mod model;
pub mod numerics;
pub mod rigid;
pub mod sim;

pub use analysis::{classify_stability, solve_equilibrium, EquilibriumReport, Verdict};
pub use cc::{CcSegment, Gravity, SegmentParams};
pub use chain::{ActuationPattern, Actuator, ChainParams, Discretization, PccChain, Wrench2D};
pub use error::{Error, Result};
pub use model::{BackbonePoint, DynamicsTerms, PlanarPose, PotentialEnergy, RobotState, SoftRobot};
pub use rigid::LumpedRigid;
pub use sim::{
    simulate, ConstantInput, Controller, Energy, ExternalContact, Simulator, Trajectory,
};
