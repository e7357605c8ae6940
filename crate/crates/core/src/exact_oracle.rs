//! Exact Schrödinger propagation in the fixed-N Fock basis.
//!
//! Only Fock initial states with every atom in well 1 are supported, so the
//! dynamics stays inside one number sector. The state is advanced with a
//! truncated Taylor series of `exp(−iHh)` on sub-steps short enough that
//! `‖H‖h ≤ ½`; the norm is checked after every sample interval.

use std::collections::HashMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::estimators::{CorrelationSeries, EstimatorError, Layout, MomentRecord};
use crate::model::{ChainConfig, ConfigError, StateKind};

pub const DEFAULT_MAX_DIMENSION: usize = 200_000;

/// Allowed drift of `‖ψ‖` away from 1.
pub const NORM_TOLERANCE: f64 = 1e-10;

const MAX_STEP_NORM: f64 = 0.5;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("wells must be ≥ 2 (got {0})")]
    TooFewWells(usize),
    #[error("basis dimension {dimension} exceeds the limit of {limit}")]
    TooLarge { dimension: u128, limit: usize },
    #[error("the exact oracle needs a Fock initial state")]
    NotFock,
    #[error("norm drifted to {norm} at t = {t}")]
    NormDrift { t: f64, norm: f64 },
    #[error("sample times must be finite, ≥ 0 and non-decreasing")]
    BadTimes,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// `C(N + M − 1, M − 1)`, saturating.
pub fn sector_dimension(wells: usize, atoms: u64) -> u128 {
    let k = wells.saturating_sub(1) as u128;
    let n = atoms as u128 + k;
    let mut d: u128 = 1;
    for i in 0..k {
        d = match d.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    d
}

/// All occupations `(n_1, …, n_M)` with `Σ n_j = N`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct FockBasis {
    wells: usize,
    atoms: u64,
    occupations: Vec<u32>,
    index: HashMap<Vec<u32>, usize>,
}

impl FockBasis {
    pub fn new(wells: usize, atoms: u64) -> Result<Self, OracleError> {
        Self::with_limit(wells, atoms, DEFAULT_MAX_DIMENSION)
    }

    pub fn with_limit(wells: usize, atoms: u64, limit: usize) -> Result<Self, OracleError> {
        if wells < 2 {
            return Err(OracleError::TooFewWells(wells));
        }
        let dimension = sector_dimension(wells, atoms);
        if dimension > limit as u128 {
            return Err(OracleError::TooLarge { dimension, limit });
        }
        let dim = dimension as usize;
        let mut occupations = Vec::with_capacity(dim * wells);
        let mut current = vec![0u32; wells];
        fill(&mut current, 0, atoms as u32, &mut occupations);
        let index = occupations.chunks(wells).enumerate().map(|(k, s)| (s.to_vec(), k)).collect();
        Ok(Self { wells, atoms, occupations, index })
    }

    pub fn wells(&self) -> usize {
        self.wells
    }

    pub fn atoms(&self) -> u64 {
        self.atoms
    }

    pub fn dimension(&self) -> usize {
        self.occupations.len() / self.wells
    }

    pub fn state(&self, k: usize) -> &[u32] {
        &self.occupations[k * self.wells..(k + 1) * self.wells]
    }

    pub fn states(&self) -> impl Iterator<Item = &[u32]> {
        self.occupations.chunks(self.wells)
    }

    pub fn index_of(&self, occupation: &[u32]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// `|N, 0, …, 0⟩`.
    pub fn first_well_state(&self) -> usize {
        self.dimension() - 1
    }
}

fn fill(current: &mut [u32], well: usize, left: u32, out: &mut Vec<u32>) {
    if well + 1 == current.len() {
        current[well] = left;
        out.extend_from_slice(current);
        return;
    }
    for n in 0..=left {
        current[well] = n;
        fill(current, well + 1, left - n, out);
    }
}

/// Real symmetric `H/ħ` in compressed-row form.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

/// `H = χ Σ_j a_j†²a_j² + J Σ_j (a_j†a_{j+1} + a_{j+1}†a_j)`.
pub fn build_hamiltonian(basis: &FockBasis, coupling: f64, nonlinearity: f64) -> Hamiltonian {
    let m = basis.wells();
    let dim = basis.dimension();
    let mut row_start = Vec::with_capacity(dim + 1);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    let mut moved = vec![0u32; m];
    row_start.push(0);
    for (row, n) in basis.states().enumerate() {
        let diag: f64 = n.iter().map(|&k| nonlinearity * k as f64 * (k as f64 - 1.0)).sum();
        if diag != 0.0 {
            cols.push(row);
            values.push(diag);
        }
        for j in 0..m - 1 {
            for (to, from) in [(j, j + 1), (j + 1, j)] {
                if n[from] == 0 || coupling == 0.0 {
                    continue;
                }
                moved.copy_from_slice(n);
                moved[from] -= 1;
                moved[to] += 1;
                let col = basis.index_of(&moved).expect("hop stays in the sector");
                cols.push(col);
                values.push(coupling * ((n[to] as f64 + 1.0) * n[from] as f64).sqrt());
            }
        }
        row_start.push(cols.len());
    }
    Hamiltonian { dim, row_start, cols, values }
}

impl Hamiltonian {
    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (row, out) in y.iter_mut().enumerate() {
            let mut acc = Complex64::default();
            for k in self.row_start[row]..self.row_start[row + 1] {
                acc += x[self.cols[k]] * self.values[k];
            }
            *out = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.dim]; self.dim];
        for (row, line) in dense.iter_mut().enumerate() {
            for k in self.row_start[row]..self.row_start[row + 1] {
                line[self.cols[k]] += self.values[k];
            }
        }
        dense
    }

    /// Largest absolute row sum; bounds the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|row| self.values[self.row_start[row]..self.row_start[row + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut h_psi = vec![Complex64::default(); self.dim];
        self.apply(psi, &mut h_psi);
        psi.iter().zip(&h_psi).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// Normally ordered moments of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationSet {
    pub t: f64,
    pub populations: Vec<f64>,
    /// `⟨a_i†a_j⟩`.
    pub hopping: Vec<Vec<Complex64>>,
    /// `⟨a_i†a_i a_j†a_j⟩`.
    pub number_products: Vec<Vec<f64>>,
    /// `⟨a_j†²a_j²⟩`.
    pub pair_moments: Vec<f64>,
    pub energy: f64,
    pub norm: f64,
}

impl ExpectationSet {
    fn measure(basis: &FockBasis, h: &Hamiltonian, psi: &[Complex64], t: f64) -> Self {
        let m = basis.wells();
        let mut populations = vec![0.0; m];
        let mut number_products = vec![vec![0.0; m]; m];
        let mut pair_moments = vec![0.0; m];
        let mut hopping = vec![vec![Complex64::default(); m]; m];
        let mut moved = vec![0u32; m];
        let mut norm_sq = 0.0;
        for (k, n) in basis.states().enumerate() {
            let c = psi[k];
            let p = c.norm_sqr();
            norm_sq += p;
            for i in 0..m {
                let ni = n[i] as f64;
                populations[i] += p * ni;
                pair_moments[i] += p * ni * (ni - 1.0);
                for j in 0..m {
                    number_products[i][j] += p * ni * n[j] as f64;
                    if i == j || n[j] == 0 {
                        continue;
                    }
                    moved.copy_from_slice(n);
                    moved[j] -= 1;
                    moved[i] += 1;
                    let target = basis.index_of(&moved).expect("hop stays in the sector");
                    hopping[i][j] += psi[target].conj() * c * ((ni + 1.0) * n[j] as f64).sqrt();
                }
            }
        }
        for (j, pop) in populations.iter().enumerate() {
            hopping[j][j] = Complex64::new(*pop, 0.0);
        }
        Self { t, populations, hopping, number_products, pair_moments, energy: h.expectation(psi), norm: norm_sq.sqrt() }
    }

    /// Values in the slots of `layout`, matching what the stochastic
    /// products average to.
    pub fn moment_values(&self, layout: &Layout) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); layout.len()];
        for j in 0..layout.wells {
            out[layout.number(j)] = Complex64::new(self.populations[j], 0.0);
            out[layout.pair_moment(j)] = Complex64::new(self.pair_moments[j], 0.0);
        }
        for (k, &(i, j)) in layout.pairs.iter().enumerate() {
            out[layout.hop(k)] = self.hopping[i][j];
            out[layout.hop_rev(k)] = self.hopping[j][i];
            out[layout.cross(k)] = Complex64::new(self.number_products[i][j], 0.0);
        }
        out
    }

    pub fn to_record(&self, layout: &Layout) -> MomentRecord {
        MomentRecord::from_exact(layout.clone(), &self.moment_values(layout))
    }
}

/// `ψ ← exp(−iHh) ψ` by Taylor series; requires `‖H‖h ≤ ½`.
fn taylor_step(h: &Hamiltonian, dt: f64, psi: &mut [Complex64], term: &mut Vec<Complex64>, next: &mut Vec<Complex64>) {
    term.copy_from_slice(psi);
    for k in 1..=60 {
        h.apply(term, next);
        let factor = Complex64::new(0.0, -dt / k as f64);
        let mut size = 0.0f64;
        for (t, n) in term.iter_mut().zip(next.iter()) {
            *t = n * factor;
            size = size.max(t.norm_sqr());
        }
        for (p, t) in psi.iter_mut().zip(term.iter()) {
            *p += t;
        }
        if size.sqrt() < 1e-17 {
            break;
        }
    }
}

/// Propagates `|N, 0, …, 0⟩` and measures at each of `times`.
pub fn evolve(basis: &FockBasis, h: &Hamiltonian, times: &[f64]) -> Result<Vec<ExpectationSet>, OracleError> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OracleError::BadTimes);
    }
    let dim = basis.dimension();
    let mut psi = vec![Complex64::default(); dim];
    psi[basis.first_well_state()] = Complex64::new(1.0, 0.0);
    let mut term = vec![Complex64::default(); dim];
    let mut next = vec![Complex64::default(); dim];
    let max_step = MAX_STEP_NORM / h.norm_bound().max(f64::MIN_POSITIVE);

    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let span = t - now;
        if span > 0.0 {
            let n_sub = (span / max_step).ceil().max(1.0) as usize;
            let sub = span / n_sub as f64;
            for _ in 0..n_sub {
                taylor_step(h, sub, &mut psi, &mut term, &mut next);
            }
            now = t;
        }
        let set = ExpectationSet::measure(basis, h, &psi, t);
        if (set.norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(OracleError::NormDrift { t, norm: set.norm });
        }
        out.push(set);
    }
    Ok(out)
}

/// Runs the oracle on the sample grid of a Fock configuration.
pub fn run_oracle(config: &ChainConfig) -> Result<Vec<ExpectationSet>, OracleError> {
    let config = config.clone().validate()?;
    if config.initial_state != StateKind::Fock {
        return Err(OracleError::NotFock);
    }
    let basis = FockBasis::new(config.wells, config.atoms as u64)?;
    let h = build_hamiltonian(&basis, config.coupling, config.nonlinearity);
    evolve(&basis, &h, &config.sample_times())
}

/// Witness series from exact moments; every error bar is zero.
pub fn oracle_series(config: &ChainConfig, sets: &[ExpectationSet]) -> Result<CorrelationSeries, OracleError> {
    let layout = Layout::new(config.wells, config.pairs());
    let records: Vec<_> = sets.iter().map(|s| s.to_record(&layout)).collect();
    let times = sets.iter().map(|s| s.t).collect();
    Ok(CorrelationSeries::from_records(times, &records)?)
}
