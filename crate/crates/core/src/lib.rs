//! Planning, control and simulation of planar flywheel-assisted somersaults.
//!
//! The pipeline runs a jump optimization on a reduced template model
//! ([`fslip`], [`trajopt`]), tracks it on an articulated planar robot
//! ([`robot`]) with a torque-only task-space QP ([`tsc`]), steers the flight
//! phase by trading momentum with the flywheel ([`flight`]), and replans the
//! landing from the measured touch-down state ([`pipeline`]).

pub mod flight;
pub mod fslip;
pub mod jet;
pub mod nlp;
pub mod pipeline;
pub mod robot;
pub mod trajopt;
pub mod tsc;

mod clock;
