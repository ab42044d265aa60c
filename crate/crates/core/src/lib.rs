//! Analytic and Monte-Carlo models of two-tier cellular networks with static
//! and vehicle-mounted base stations, plus a deployment-cost optimizer.

pub mod analytic;
pub mod backhaul;
pub mod geometry;
pub mod numerics;
pub mod optimizer;
pub mod scenario;
pub mod simulator;
pub mod stats;
