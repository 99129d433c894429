//! Planar push prediction with an analytical contact model corrected by a
//! learned network, plus online adaptation of the analytical parameters.

pub mod checkpoint;
pub mod data;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod physics;
pub mod pipeline;
pub mod simulator;
