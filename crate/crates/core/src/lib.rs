//! Disordered transverse-field Ising models on diluted Chimera graphs:
//! path-integral Monte Carlo, exact small-system references, Griffiths-phase
//! observables and analysis, and a quantum-annealer sampling model.

pub mod analysis;
pub mod annealer;
pub mod error;
pub mod lattice;
pub mod observables;
pub mod oracle;
pub mod qmc;
pub mod rng;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
