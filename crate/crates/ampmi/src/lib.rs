//! Amplitude (classical) mutual information of quantum-state families:
//! exact closed forms for stabilizer and Gaussian states, sampling-based
//! estimators, and empirical capacity sweeps for autoregressive models.

pub mod arnn;
pub mod families;
pub mod fermion;
pub mod gf2;
pub mod infotheory;
pub mod skewlinalg;
pub mod stabilizer;
pub mod tfim;
