pub mod classical;
pub mod error;
pub mod generalized;
pub mod laplace;
pub mod levy;
pub mod parallel;
pub mod potential;
pub mod quad;
pub mod simulate;
pub mod stats;
pub mod volterra;
