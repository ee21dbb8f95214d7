//! Simulation stack for a six-actuator tactile hand with compliant four-bar
//! fingers: linkage kinematics, brushed-DC motor plant, cascaded multi-rate
//! motor control, barometric taxel calibration, grasp execution, the serial
//! command/telemetry protocol and an experiment harness.

pub mod kinematics;
pub mod control;
pub mod plant;
pub mod tactile;
pub mod grasp;
pub mod protocol;
pub mod harness;
