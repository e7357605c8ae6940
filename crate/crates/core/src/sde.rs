//! Positive-P Itô equations for the M-well chain and the ensemble runner.
//!
//! For well `j` with nearest neighbours `j ± 1` (dropped at the chain ends):
//!
//! ```text
//! dα_j  = [−2iχ α_j⁺ α_j²  − iJ (α_{j−1}  + α_{j+1}) ] dt + √(−2iχ α_j²)  dW_j
//! dα_j⁺ = [+2iχ α_j⁺² α_j  + iJ (α⁺_{j−1} + α⁺_{j+1})] dt + √(+2iχ α_j⁺²) dW_j⁺
//! ```
//!
//! with `2M` independent real Wiener increments. Each trajectory draws its
//! random numbers from its own ChaCha stream keyed by `(seed, index)`, and
//! trajectories are grouped into fixed batches that are reduced in index
//! order, so results are bit-identical for any number of workers.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{CorrelationSeries, EstimatorError, Layout, MomentRecord, MomentSums, DEFAULT_BATCHES};
use crate::model::{ChainConfig, ConfigError, PhasePoint};
use crate::sampler::{sample_chain, InitialState};

/// Largest tolerated fraction of diverged trajectories.
pub const MAX_DIVERGED_FRACTION: f64 = 1e-3;

pub const DEFAULT_MIDPOINT_ITERATIONS: u32 = 3;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(
        "{diverged} of {n_traj} trajectories diverged (first at t = {first_time}); \
         the positive-P equations are unstable in this regime"
    )]
    Divergence { diverged: usize, n_traj: usize, first_time: f64 },
    #[error("could not start worker pool: {0}")]
    Workers(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Fixed-step discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `x ← x + a(x)·dt + b(x)·η√dt`.
    EulerMaruyama,
    /// Drift at the fixed-point midpoint `x̄ = x + ½(a(x̄)dt + b(x)η√dt)`,
    /// iterated a fixed number of times; `x ← 2x̄ − x`. The noise amplitude
    /// stays at its start-of-step value, which keeps the Itô meaning.
    Midpoint { iterations: u32 },
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme::Midpoint { iterations: DEFAULT_MIDPOINT_ITERATIONS }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::EulerMaruyama => f.write_str("em"),
            Scheme::Midpoint { iterations } if *iterations == DEFAULT_MIDPOINT_ITERATIONS => f.write_str("midpoint"),
            Scheme::Midpoint { iterations } => write!(f, "midpoint:{iterations}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "em" => Ok(Scheme::EulerMaruyama),
            "midpoint" => Ok(Scheme::default()),
            _ => match s.strip_prefix("midpoint:").map(str::parse::<u32>) {
                Some(Ok(iterations)) if iterations >= 1 => Ok(Scheme::Midpoint { iterations }),
                _ => Err(format!("unknown scheme `{s}` (expected em, midpoint or midpoint:<iterations>)")),
            },
        }
    }
}

/// Which square root multiplies each noise. Observables do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseBranch {
    #[default]
    Principal,
    Negated,
}

/// Drift and noise amplitudes of one state, both ordered
/// `(α_1 … α_M, α_1⁺ … α_M⁺)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    pub drift: Vec<Complex64>,
    pub noise_amp: Vec<Complex64>,
}

#[inline]
fn times_i(z: Complex64) -> Complex64 {
    Complex64::new(-z.im, z.re)
}

/// Principal square root of `w²` given `w` (one of `±w`).
#[inline]
fn principal(w: Complex64) -> Complex64 {
    if w.re > 0.0 || (w.re == 0.0 && w.im >= 0.0) {
        w
    } else {
        -w
    }
}

/// Right-hand side of the chain equations.
#[derive(Debug, Clone)]
pub struct ChainDynamics {
    wells: usize,
    coupling: f64,
    nonlinearity: f64,
    /// `√(−2iχ)`; the noise on `α_j` is `±√(−2iχ)·α_j`.
    root: Complex64,
    branch: NoiseBranch,
}

impl ChainDynamics {
    pub fn new(config: &ChainConfig) -> Self {
        let chi = config.nonlinearity;
        Self {
            wells: config.wells,
            coupling: config.coupling,
            nonlinearity: chi,
            root: Complex64::new(0.0, -2.0 * chi).sqrt(),
            branch: NoiseBranch::Principal,
        }
    }

    pub fn with_branch(mut self, branch: NoiseBranch) -> Self {
        self.branch = branch;
        self
    }

    #[inline]
    pub fn drift_into(&self, a: &[Complex64], ap: &[Complex64], da: &mut [Complex64], dap: &mut [Complex64]) {
        let m = self.wells;
        let (a, ap, da, dap) = (&a[..m], &ap[..m], &mut da[..m], &mut dap[..m]);
        let two_chi = 2.0 * self.nonlinearity;
        let j_c = self.coupling;
        let zero = Complex64::default();
        let (mut left, mut left_p) = (zero, zero);
        for j in 0..m {
            let (right, right_p) = if j + 1 < m { (a[j + 1], ap[j + 1]) } else { (zero, zero) };
            let n = ap[j] * a[j] * two_chi;
            da[j] = -times_i(a[j] * n + (left + right) * j_c);
            dap[j] = times_i(ap[j] * n + (left_p + right_p) * j_c);
            left = a[j];
            left_p = ap[j];
        }
    }

    #[inline]
    pub fn noise_into(&self, a: &[Complex64], ap: &[Complex64], ba: &mut [Complex64], bap: &mut [Complex64]) {
        let sign = match self.branch {
            NoiseBranch::Principal => 1.0,
            NoiseBranch::Negated => -1.0,
        };
        let root_plus = self.root.conj();
        for j in 0..self.wells {
            ba[j] = principal(self.root * a[j]) * sign;
            bap[j] = principal(root_plus * ap[j]) * sign;
        }
    }

    /// Deterministic increments per unit time.
    pub fn drift(&self, state: &PhasePoint) -> Vec<Complex64> {
        let m = self.wells;
        let mut out = vec![Complex64::default(); 2 * m];
        let (da, dap) = out.split_at_mut(m);
        self.drift_into(&state.alpha, &state.alpha_plus, da, dap);
        out
    }

    /// Noise amplitudes `b_k`, with `dZ_k = b_k η_k √dt`.
    pub fn noise_amplitudes(&self, state: &PhasePoint) -> Vec<Complex64> {
        let m = self.wells;
        let mut out = vec![Complex64::default(); 2 * m];
        let (ba, bap) = out.split_at_mut(m);
        self.noise_into(&state.alpha, &state.alpha_plus, ba, bap);
        out
    }

    pub fn drift_diffusion(&self, state: &PhasePoint) -> DriftDiffusion {
        DriftDiffusion { drift: self.drift(state), noise_amp: self.noise_amplitudes(state) }
    }
}

/// Advances single trajectories; owns its scratch space.
#[derive(Debug, Clone)]
pub struct Stepper {
    dynamics: ChainDynamics,
    scheme: Scheme,
    dt: f64,
    sqrt_dt: f64,
    /// `|α_j|²|α_j⁺|²` above this flags divergence.
    threshold_sq: f64,
    start_a: Vec<Complex64>,
    start_ap: Vec<Complex64>,
    da: Vec<Complex64>,
    dap: Vec<Complex64>,
    inc_a: Vec<Complex64>,
    inc_ap: Vec<Complex64>,
}

impl Stepper {
    pub fn new(dynamics: ChainDynamics, scheme: Scheme, dt: f64, divergence_threshold: f64) -> Self {
        let m = dynamics.wells;
        let z = vec![Complex64::default(); m];
        Self {
            dynamics,
            scheme,
            dt,
            sqrt_dt: dt.sqrt(),
            threshold_sq: divergence_threshold * divergence_threshold,
            start_a: z.clone(),
            start_ap: z.clone(),
            da: z.clone(),
            dap: z.clone(),
            inc_a: z.clone(),
            inc_ap: z,
        }
    }

    pub fn from_config(config: &ChainConfig, scheme: Scheme) -> Self {
        Self::new(ChainDynamics::new(config), scheme, config.dt, config.divergence_threshold)
    }

    /// Writes `b(x)·η·√dt` into the increment buffers. Always consumes `2M`
    /// standard normals, even when χ = 0 makes the noise vanish.
    fn noise_increment<R: Rng + ?Sized>(&mut self, a: &[Complex64], ap: &[Complex64], rng: &mut R) {
        self.dynamics.noise_into(a, ap, &mut self.inc_a, &mut self.inc_ap);
        for b in self.inc_a.iter_mut() {
            let eta: f64 = rng.sample(StandardNormal);
            *b *= eta * self.sqrt_dt;
        }
        for b in self.inc_ap.iter_mut() {
            let eta: f64 = rng.sample(StandardNormal);
            *b *= eta * self.sqrt_dt;
        }
    }

    /// One step. A non-finite or over-threshold result marks the state as
    /// diverged; diverged states are left untouched.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut PhasePoint, rng: &mut R) {
        if state.diverged {
            return;
        }
        let dt = self.dt;
        match self.scheme {
            Scheme::EulerMaruyama => {
                self.noise_increment(&state.alpha, &state.alpha_plus, rng);
                self.dynamics.drift_into(&state.alpha, &state.alpha_plus, &mut self.da, &mut self.dap);
                for j in 0..state.alpha.len() {
                    state.alpha[j] += self.da[j] * dt + self.inc_a[j];
                    state.alpha_plus[j] += self.dap[j] * dt + self.inc_ap[j];
                }
            }
            Scheme::Midpoint { iterations } => {
                self.start_a.copy_from_slice(&state.alpha);
                self.start_ap.copy_from_slice(&state.alpha_plus);
                let (sa, sap) = (std::mem::take(&mut self.start_a), std::mem::take(&mut self.start_ap));
                self.noise_increment(&sa, &sap, rng);
                let half = 0.5 * dt;
                for _ in 0..iterations.max(1) {
                    self.dynamics.drift_into(&state.alpha, &state.alpha_plus, &mut self.da, &mut self.dap);
                    for j in 0..sa.len() {
                        state.alpha[j] = sa[j] + self.da[j] * half + self.inc_a[j] * 0.5;
                        state.alpha_plus[j] = sap[j] + self.dap[j] * half + self.inc_ap[j] * 0.5;
                    }
                }
                for j in 0..sa.len() {
                    state.alpha[j] = state.alpha[j] * 2.0 - sa[j];
                    state.alpha_plus[j] = state.alpha_plus[j] * 2.0 - sap[j];
                }
                self.start_a = sa;
                self.start_ap = sap;
            }
        }
        if self.blew_up(state) {
            state.diverged = true;
        }
    }

    fn blew_up(&self, state: &PhasePoint) -> bool {
        state.alpha.iter().zip(&state.alpha_plus).any(|(a, ap)| {
            let w = a.norm_sqr() * ap.norm_sqr();
            !(w <= self.threshold_sq) || !(a.re.is_finite() && a.im.is_finite() && ap.re.is_finite() && ap.im.is_finite())
        })
    }
}

/// Random stream of trajectory `index`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub scheme: Scheme,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub batches: usize,
    pub branch: NoiseBranch,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { scheme: Scheme::default(), workers: None, batches: DEFAULT_BATCHES, branch: NoiseBranch::Principal }
    }
}

impl RunOptions {
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self { scheme, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub moments: Vec<MomentRecord>,
    pub n_traj: usize,
    pub n_diverged: usize,
    pub n_traj_effective: usize,
}

impl EnsembleResult {
    pub fn series(&self) -> Result<CorrelationSeries, EstimatorError> {
        CorrelationSeries::from_records(self.times.clone(), &self.moments)
    }
}

struct BatchOutput {
    samples: Vec<MomentSums>,
    diverged: usize,
    first_divergence: Option<f64>,
}

fn run_batch(config: &ChainConfig, options: &RunOptions, layout: &Layout, range: std::ops::Range<usize>) -> BatchOutput {
    let n_samples = config.n_samples();
    let mut samples = vec![MomentSums::new(layout); n_samples];
    let mut products = vec![Complex64::default(); layout.len()];
    let initial = InitialState::from_config(config);
    let dynamics = ChainDynamics::new(config).with_branch(options.branch);
    let mut stepper = Stepper::new(dynamics, options.scheme, config.dt, config.divergence_threshold);
    let stride = config.sample_every;
    let mut diverged = 0;
    let mut first_divergence: Option<f64> = None;

    for index in range {
        let mut rng = trajectory_rng(config.seed, index as u64);
        let mut state = sample_chain(config.wells, &initial, &mut rng);
        layout.products(&state, &mut products);
        samples[0].add_products(&products);
        'samples: for (k, sums) in samples.iter_mut().enumerate().skip(1) {
            for s in 0..stride {
                stepper.step(&mut state, &mut rng);
                if state.diverged {
                    diverged += 1;
                    let t = ((k - 1) * stride + s + 1) as f64 * config.dt;
                    first_divergence = Some(first_divergence.map_or(t, |f| f.min(t)));
                    break 'samples;
                }
            }
            layout.products(&state, &mut products);
            sums.add_products(&products);
        }
    }
    BatchOutput { samples, diverged, first_divergence }
}

/// Integrates `n_traj` trajectories and accumulates moments at every sample
/// time. Diverged trajectories are dropped from all later samples; more
/// than [`MAX_DIVERGED_FRACTION`] of them fails the run.
pub fn run_ensemble(config: &ChainConfig, options: &RunOptions) -> Result<EnsembleResult, EnsembleError> {
    let config = config.clone().validate()?;
    let layout = Layout::new(config.wells, config.pairs());
    let n = config.n_traj;
    let n_batches = options.batches.clamp(1, n);
    let ranges: Vec<_> = (0..n_batches).map(|b| (b * n / n_batches)..((b + 1) * n / n_batches)).collect();

    let work = || -> Vec<BatchOutput> {
        ranges.par_iter().map(|r| run_batch(&config, options, &layout, r.clone())).collect()
    };
    let outputs = match options.workers {
        None => work(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| EnsembleError::Workers(e.to_string()))?
            .install(work),
    };

    let n_diverged: usize = outputs.iter().map(|o| o.diverged).sum();
    if n_diverged as f64 > MAX_DIVERGED_FRACTION * n as f64 {
        let first_time = outputs.iter().filter_map(|o| o.first_divergence).fold(f64::INFINITY, f64::min);
        return Err(EnsembleError::Divergence { diverged: n_diverged, n_traj: n, first_time });
    }

    let n_samples = config.n_samples();
    let mut per_batch: Vec<std::vec::IntoIter<MomentSums>> = outputs.into_iter().map(|o| o.samples.into_iter()).collect();
    let moments = (0..n_samples)
        .map(|_| {
            let batches = per_batch.iter_mut().map(|it| it.next().expect("one entry per sample")).collect();
            MomentRecord::from_batches(layout.clone(), batches)
        })
        .collect();

    Ok(EnsembleResult { times: config.sample_times(), moments, n_traj: n, n_diverged, n_traj_effective: n - n_diverged })
}
