//! Guaranteed-cost synchronization toolkit for high-order linear multiagent
//! networks: designs dynamic output-feedback protocol gains under a given
//! cost budget, certifies candidate gains through LMI analysis criteria, and
//! validates designs by closed-loop simulation with quadratic cost
//! integration.

pub mod cli;
pub mod lmi;
pub mod numkit;
pub mod sim;
pub mod synthesis;
pub mod topology;
