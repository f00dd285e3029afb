//! Controller synthesis and value learning for a linear system driven by an
//! exogenous linear Markov process.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod envmodel;
pub mod experiment;
pub mod linalg;
pub mod linctl;
pub mod lsvi;
pub mod oracle;
pub mod plot;
pub mod rng;
