//! Initial doubled-phase-space points for the state of well 1.
//!
//! Coherent states map onto a single deterministic point. Fock states use
//! the positive-P construction built from the Husimi function of `|N⟩`: a
//! radius `|μ|²` drawn from `Gamma(N+1, 1)` with uniform phase, plus a unit
//! complex Gaussian `δ` entering `α` and `α⁺` with opposite signs. The
//! resulting ensemble reproduces every normally ordered moment of `|N⟩`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

use crate::model::{ChainConfig, PhasePoint, StateKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("mean atom number must be finite and ≥ 0 (got {0})")]
    NegativeAtoms(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Fock(u64),
    Coherent(f64),
}

impl InitialState {
    /// The state of well 1 described by a validated config.
    pub fn from_config(config: &ChainConfig) -> Self {
        match config.initial_state {
            StateKind::Fock => InitialState::Fock(config.atoms as u64),
            StateKind::Coherent => InitialState::Coherent(config.atoms),
        }
    }

    pub fn mean_atoms(&self) -> f64 {
        match *self {
            InitialState::Fock(n) => n as f64,
            InitialState::Coherent(n) => n,
        }
    }

    /// `V(N̂)` of the state: 0 for Fock, `N` for coherent.
    pub fn number_variance(&self) -> f64 {
        match *self {
            InitialState::Fock(_) => 0.0,
            InitialState::Coherent(n) => n,
        }
    }

    /// Draws `(α, α⁺)` for one trajectory.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Complex64, Complex64) {
        match *self {
            InitialState::Fock(n) => sample_fock(n, rng),
            InitialState::Coherent(n) => {
                sample_coherent(n).expect("coherent amplitude validated by ChainConfig")
            }
        }
    }
}

/// Coherent state with real amplitude `√N`. Consumes no randomness.
pub fn sample_coherent(atoms: f64) -> Result<(Complex64, Complex64), SamplerError> {
    if !(atoms.is_finite() && atoms >= 0.0) {
        return Err(SamplerError::NegativeAtoms(atoms));
    }
    let a = Complex64::new(atoms.sqrt(), 0.0);
    Ok((a, a))
}

/// Fock state `|N⟩`.
///
/// Every call consumes exactly `N + 1` exponential, one uniform and two
/// standard-normal variates. The Gamma radius is the sum of `N + 1` unit
/// exponentials, which is exact for every integer shape including `N = 0`.
pub fn sample_fock<R: Rng + ?Sized>(atoms: u64, rng: &mut R) -> (Complex64, Complex64) {
    let radius_sq: f64 = (0..=atoms).map(|_| rng.sample::<f64, _>(Exp1)).sum();
    let phase = TAU * rng.random::<f64>();
    let mu = Complex64::from_polar(radius_sq.sqrt(), phase);
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let delta = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
    (mu + delta, (mu - delta).conj())
}

/// Initial point of the whole chain: well 1 from `state`, all others vacuum.
pub fn sample_chain<R: Rng + ?Sized>(wells: usize, state: &InitialState, rng: &mut R) -> PhasePoint {
    let mut point = PhasePoint::vacuum(wells);
    let (a, ap) = state.sample(rng);
    point.alpha[0] = a;
    point.alpha_plus[0] = ap;
    point
}
