//! driftlab: a numerical laboratory for action drift in a priori unstable
//! Hamiltonian systems.
//!
//! The crate builds, verifies and chains the classical ingredients of the
//! diffusion mechanism for a pendulum-rotator system with a small
//! time-periodic coupling:
//!
//! * [`model`] - the Hamiltonian family, its Lagrangian and vector field;
//! * [`integrate`] - fixed-step order-6 propagation and action quadrature;
//! * [`pendulum`] - the closed-form unperturbed separatrix;
//! * [`melnikov`] - splitting integrals along the separatrix, their residue
//!   closed form, and critical-point analysis on the section `q = 1/2`;
//! * [`manifolds`] - numerically shot generating functions of the whisker
//!   manifolds, splitting functions, heteroclinic links, transition chains;
//! * [`bessi`] - the discrete action functional over a chain schedule, its
//!   local minimization, and extraction of genuine drifting orbits;
//! * [`experiments`] - reproducible drift runs, time-scaling fits and the
//!   gap-width report.

pub mod bessi;
pub mod error;
pub mod experiments;
pub mod fd;
pub mod integrate;
pub mod lbfgs;
pub mod manifolds;
pub mod melnikov;
pub mod model;
pub mod pendulum;
pub mod quad;

pub use error::{Error, Result};
pub use model::{ModelParams, Perturbation, PhasePoint};

/// Deterministic splitmix64 stream; used for restart jitter and test points.
#[derive(Debug, Clone)]
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
