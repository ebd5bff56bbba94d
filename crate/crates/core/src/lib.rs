//! Integrable N-body systems generated by the sl(2,R) Poisson coalgebra and
//! its non-standard deformation, with numerical certification of their
//! integrability.
//!
//! * [`bracket_engine`]: dual-number derivatives, canonical and Lie-Poisson brackets.
//! * [`coalgebra`]: realizations, K-functions, the coproduct expression engine.
//! * [`systems`]: Hamiltonians and integral families (oscillator chains, Gaudin magnets).
//! * [`verify`]: certification suites producing [`verify::VerificationReport`]s.
//! * [`dynamics`]: implicit-midpoint and RK4 flows with invariant drift monitoring.
//! * [`cli`]: the `coalgebra` command-line front end.

pub mod bracket_engine;
pub mod cli;
pub mod coalgebra;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod systems;
pub mod verify;

pub use bracket_engine::{Field, PhasePoint, SpinChainState};
pub use dual::{Dual, Scalar};
pub use error::{Error, Result};
