//! Closed-form dynamics of the non-interacting (χ = 0) two- and three-well
//! chains with only well 1 initially occupied.
//!
//! Without interactions the Heisenberg equations are linear, so every mode
//! operator is `a_j(t) = u_j(t) a_1(0) + (terms in initially empty wells)`.
//! Normally ordered moments then only involve the initial mean `n0` and
//! number variance `v0` of well 1:
//!
//! - `⟨a_i† a_j⟩ = u_i* u_j n0`
//! - `⟨a_i† a_j† a_i a_j⟩ = |u_i|² |u_j|² (v0 + n0² − n0)`
//!
//! Populations, variances and ξ are also provided as explicit trigonometric
//! closed forms; Σ and ζ are always evaluated from the moments above. Well
//! indices are zero-based.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("no analytic solution for {0} wells (only 2 or 3)")]
    UnsupportedWells(usize),
    #[error("unsupported well pair ({0}, {1})")]
    BadPair(usize, usize),
    #[error("initial moments must be finite and ≥ 0 (n0 = {n0}, v0 = {v0})")]
    BadMoments { n0: f64, v0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticInput {
    pub wells: usize,
    pub coupling: f64,
    pub t: f64,
    /// `⟨N̂₁(0)⟩`
    pub n0: f64,
    /// `V(N̂₁(0))`
    pub v0: f64,
}

impl AnalyticInput {
    pub fn new(wells: usize, coupling: f64, t: f64, n0: f64, v0: f64) -> Self {
        Self { wells, coupling, t, n0, v0 }
    }

    /// Fock state in well 1: `v0 = 0`.
    pub fn fock(wells: usize, coupling: f64, t: f64, n0: f64) -> Self {
        Self::new(wells, coupling, t, n0, 0.0)
    }

    /// Coherent state in well 1: `v0 = n0`.
    pub fn coherent(wells: usize, coupling: f64, t: f64, n0: f64) -> Self {
        Self::new(wells, coupling, t, n0, n0)
    }

    pub fn at(self, t: f64) -> Self {
        Self { t, ..self }
    }

    /// Three-well oscillation frequency `Ω = √2 J`.
    pub fn omega(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.coupling
    }

    fn check(&self) -> Result<(), AnalyticError> {
        if !(2..=3).contains(&self.wells) {
            return Err(AnalyticError::UnsupportedWells(self.wells));
        }
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.n0) && ok(self.v0)) {
            return Err(AnalyticError::BadMoments { n0: self.n0, v0: self.v0 });
        }
        Ok(())
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<(), AnalyticError> {
        self.check()?;
        if i == j || i >= self.wells || j >= self.wells {
            return Err(AnalyticError::BadPair(i, j));
        }
        Ok(())
    }

    /// `⟨a_1†² a_1²⟩` at `t = 0`.
    fn pair_moment0(&self) -> f64 {
        self.v0 + self.n0 * self.n0 - self.n0
    }
}

/// Coefficients `u_j(t)` of `a_1(0)` in `a_j(t)`.
pub fn mode_amplitudes(input: &AnalyticInput) -> Result<Vec<Complex64>, AnalyticError> {
    input.check()?;
    let i = Complex64::i();
    Ok(match input.wells {
        2 => {
            let (s, c) = (input.coupling * input.t).sin_cos();
            vec![Complex64::from(c), -i * s]
        }
        _ => {
            let (s, c) = (input.omega() * input.t).sin_cos();
            vec![
                Complex64::from(0.5 * (c + 1.0)),
                -i * std::f64::consts::FRAC_1_SQRT_2 * s,
                Complex64::from(0.5 * (c - 1.0)),
            ]
        }
    })
}

/// `⟨N̂_j(t)⟩` for every well.
pub fn populations(input: &AnalyticInput) -> Result<Vec<f64>, AnalyticError> {
    input.check()?;
    let n0 = input.n0;
    Ok(match input.wells {
        2 => {
            let (s, c) = (input.coupling * input.t).sin_cos();
            vec![n0 * c * c, n0 * s * s]
        }
        _ => {
            let (s, c) = (input.omega() * input.t).sin_cos();
            vec![0.25 * (c + 1.0).powi(2) * n0, 0.5 * s * s * n0, 0.25 * (c - 1.0).powi(2) * n0]
        }
    })
}

/// `V(N̂_j(t))` for every well.
pub fn variances(input: &AnalyticInput) -> Result<Vec<f64>, AnalyticError> {
    input.check()?;
    let (n0, v0) = (input.n0, input.v0);
    Ok(match input.wells {
        2 => {
            let jt = input.coupling * input.t;
            let (s, c) = jt.sin_cos();
            let s2 = (2.0 * jt).sin().powi(2);
            vec![v0 * c.powi(4) + 0.25 * n0 * s2, v0 * s.powi(4) + 0.25 * n0 * s2]
        }
        _ => {
            let (s, c) = (input.omega() * input.t).sin_cos();
            let s2 = s * s;
            vec![
                (1.0 + c).powi(4) * v0 / 16.0 + 0.125 * s2 * (0.5 * s2 + (1.0 + c).powi(2)) * n0,
                0.25 * s2 * s2 * v0 + 0.5 * s2 * (1.0 - 0.5 * s2) * n0,
                // Well 3 fills completely at Ωt = π, so its variance must
                // return to v0 there: the n0 coefficient is |u₃|²(1 − |u₃|²).
                (c - 1.0).powi(4) / 16.0 * (v0 - n0) + 0.25 * (c - 1.0).powi(2) * n0,
            ]
        }
    })
}

/// Hillery-Zubairy entanglement correlation `ξ_ij`.
pub fn xi(input: &AnalyticInput, i: usize, j: usize) -> Result<f64, AnalyticError> {
    input.check_pair(i, j)?;
    let excess = input.n0 - input.v0;
    let (i, j) = (i.min(j), i.max(j));
    Ok(match (input.wells, i, j) {
        (2, _, _) => 0.25 * (2.0 * input.coupling * input.t).sin().powi(2) * excess,
        (3, 0, 1) => {
            let (s, c) = (input.omega() * input.t).sin_cos();
            0.125 * s * s * (1.0 + c).powi(2) * excess
        }
        (3, 0, 2) => (input.omega() * input.t).sin().powi(4) / 16.0 * excess,
        _ => Moments::new(input)?.xi(i, j),
    })
}

/// EPR-steering correlation `Σ_ij = ξ_ij − ½⟨N̂_j⟩`; positive values
/// violate `|⟨a_i a_j†⟩|² ≤ ⟨(N̂_i + ½) N̂_j⟩`.
pub fn sigma(input: &AnalyticInput, i: usize, j: usize) -> Result<f64, AnalyticError> {
    input.check_pair(i, j)?;
    Ok(Moments::new(input)?.sigma(i, j))
}

/// Bell correlation `ζ_ij = |⟨a_i a_j†⟩|² − ⟨(N̂_i + ½)(N̂_j + ½)⟩`.
pub fn zeta(input: &AnalyticInput, i: usize, j: usize) -> Result<f64, AnalyticError> {
    input.check_pair(i, j)?;
    Ok(Moments::new(input)?.zeta(i, j))
}

/// Normally ordered moments at time `t`, assembled from the mode amplitudes.
#[derive(Debug, Clone)]
pub struct Moments {
    amplitudes: Vec<Complex64>,
    n0: f64,
    pair0: f64,
}

impl Moments {
    pub fn new(input: &AnalyticInput) -> Result<Self, AnalyticError> {
        Ok(Self { amplitudes: mode_amplitudes(input)?, n0: input.n0, pair0: input.pair_moment0() })
    }

    /// `⟨a_i† a_j⟩`
    pub fn hop(&self, i: usize, j: usize) -> Complex64 {
        self.amplitudes[i].conj() * self.amplitudes[j] * self.n0
    }

    pub fn population(&self, j: usize) -> f64 {
        self.hop(j, j).re
    }

    /// `⟨N̂_i N̂_j⟩` for `i ≠ j`.
    pub fn cross_number(&self, i: usize, j: usize) -> f64 {
        self.amplitudes[i].norm_sqr() * self.amplitudes[j].norm_sqr() * self.pair0
    }

    pub fn variance(&self, j: usize) -> f64 {
        let w = self.amplitudes[j].norm_sqr();
        w * w * self.pair0 + w * self.n0 - (w * self.n0).powi(2)
    }

    /// `⟨a_i† a_j⟩⟨a_i a_j†⟩`; note `⟨a_i a_j†⟩ = ⟨a_j† a_i⟩` for `i ≠ j`.
    fn hz_product(&self, i: usize, j: usize) -> f64 {
        (self.hop(i, j) * self.hop(j, i)).re
    }

    pub fn xi(&self, i: usize, j: usize) -> f64 {
        self.hz_product(i, j) - self.cross_number(i, j)
    }

    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        self.xi(i, j) - 0.5 * self.population(j)
    }

    pub fn zeta(&self, i: usize, j: usize) -> f64 {
        self.xi(i, j) - 0.5 * (self.population(i) + self.population(j)) - 0.25
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairWitness {
    pub i: usize,
    pub j: usize,
    pub xi: f64,
    pub sigma_ij: f64,
    pub sigma_ji: f64,
    pub zeta: f64,
}

/// All observables at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessTable {
    pub populations: Vec<f64>,
    pub variances: Vec<f64>,
    pub pairs: Vec<PairWitness>,
}

pub fn witness_table(input: &AnalyticInput, pairs: &[(usize, usize)]) -> Result<WitnessTable, AnalyticError> {
    let pairs = pairs
        .iter()
        .map(|&(i, j)| {
            Ok(PairWitness {
                i,
                j,
                xi: xi(input, i, j)?,
                sigma_ij: sigma(input, i, j)?,
                sigma_ji: sigma(input, j, i)?,
                zeta: zeta(input, i, j)?,
            })
        })
        .collect::<Result<_, AnalyticError>>()?;
    Ok(WitnessTable { populations: populations(input)?, variances: variances(input)?, pairs })
}
