//! Numerical toolkit for explosion-time distributions of diffusions.
//!
//! The library estimates tail probabilities U(t, x) of the explosion time of
//! a diffusion, and discounted terminal averages weighted by a potential,
//! by Monte Carlo simulation and by finite-difference solves of the
//! associated Cauchy problem on growing truncated domains, together with
//! verification tools (martingale checks, pathwise residuals, a Feller
//! boundary test, and continuity-modulus bounds).

pub mod cli;
pub mod error;
pub mod expr;
pub mod feller;
pub mod mc;
pub mod model;
pub mod numerics;
pub mod oracles;
pub mod pde;
pub mod rng;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
