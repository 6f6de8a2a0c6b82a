pub mod analytic;
pub mod ctmc;
pub mod fd;
pub mod model;
pub mod payoff;
pub mod qvi;
pub mod rng;
pub mod simulate;
pub mod strategies;
