//! Monte-Carlo and finite-volume Fokker-Planck solvers for diffusions whose
//! paths are reset when they reach the boundary of their domain.

pub mod cli;
pub mod fpk;
pub mod model;
pub mod scenarios;
pub mod simulate;
pub mod validate;
