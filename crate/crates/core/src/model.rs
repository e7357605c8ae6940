//! Simulation parameters and the doubled-phase-space state shared by every
//! other module.
//!
//! A [`ChainConfig`] describes one linear chain of `wells` sites with
//! nearest-neighbour tunnelling `coupling` and on-site interaction
//! `nonlinearity`. Only the first well is populated at `t = 0`; every other
//! well starts in the vacuum.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of time samples requested when `sample_every` is left on automatic.
pub const DEFAULT_MIN_SAMPLES: usize = 500;

/// Default step is this many units of `1/J`.
pub const DEFAULT_DT_IN_INVERSE_J: f64 = 1e-3;

/// Default guard on `|α_j|·|α_j⁺|` in units of the initial atom number.
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("wells must be ≥ 2 (got {0})")]
    TooFewWells(usize),
    #[error("coupling must be finite and > 0 (got {0})")]
    BadCoupling(f64),
    #[error("nonlinearity must be finite and ≥ 0 (got {0})")]
    BadNonlinearity(f64),
    #[error("atoms must be finite and ≥ 0 (got {0})")]
    BadAtoms(f64),
    #[error("a Fock initial state needs an integer atom number (got {0})")]
    NonIntegerFock(f64),
    #[error("t_max must be finite and ≥ 0 (got {0})")]
    BadTimeSpan(f64),
    #[error("dt must be finite and > 0 (got {0})")]
    BadStep(f64),
    #[error("n_traj must be ≥ 1")]
    NoTrajectories,
    #[error("divergence_threshold must be finite and > 0 (got {0})")]
    BadThreshold(f64),
    #[error("unparseable config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
}

/// Quantum state of the first well at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Fock,
    Coherent,
}

/// Physical and numerical parameters of one simulation.
///
/// Times are in units of the inverse energies `1/J`, `1/χ` (ħ = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub wells: usize,
    pub coupling: f64,
    pub nonlinearity: f64,
    /// Mean atom number of well 1 at `t = 0`.
    pub atoms: f64,
    pub initial_state: StateKind,
    pub t_max: f64,
    pub dt: f64,
    /// Steps between recorded samples; `0` means "pick so that at least
    /// [`DEFAULT_MIN_SAMPLES`] intervals are recorded" and is resolved by
    /// [`ChainConfig::validate`].
    pub sample_every: usize,
    pub n_traj: usize,
    #[serde(with = "wide_u64")]
    pub seed: u64,
    pub divergence_threshold: f64,
    /// Track every pair `i < j` instead of `(1, j)` plus `(2, 3)`.
    pub all_pairs: bool,
}

impl ChainConfig {
    /// A configuration with the default numerics (`dt = 10⁻³/J`, automatic
    /// sampling, one trajectory, seed 0, χ = 0, J = 1).
    pub fn new(wells: usize, initial_state: StateKind, atoms: f64, t_max: f64) -> Self {
        Self {
            wells,
            coupling: 1.0,
            nonlinearity: 0.0,
            atoms,
            initial_state,
            t_max,
            dt: DEFAULT_DT_IN_INVERSE_J,
            sample_every: 0,
            n_traj: 1,
            seed: 0,
            divergence_threshold: DEFAULT_DIVERGENCE_FACTOR * atoms.max(1.0),
            all_pairs: false,
        }
    }

    /// Checks every parameter and resolves automatic fields.
    pub fn validate(mut self) -> Result<Self, ConfigError> {
        if self.wells < 2 {
            return Err(ConfigError::TooFewWells(self.wells));
        }
        if !(self.coupling.is_finite() && self.coupling > 0.0) {
            return Err(ConfigError::BadCoupling(self.coupling));
        }
        if !(self.nonlinearity.is_finite() && self.nonlinearity >= 0.0) {
            return Err(ConfigError::BadNonlinearity(self.nonlinearity));
        }
        if !(self.atoms.is_finite() && self.atoms >= 0.0) {
            return Err(ConfigError::BadAtoms(self.atoms));
        }
        if self.initial_state == StateKind::Fock && self.atoms.fract() != 0.0 {
            return Err(ConfigError::NonIntegerFock(self.atoms));
        }
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return Err(ConfigError::BadTimeSpan(self.t_max));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ConfigError::BadStep(self.dt));
        }
        if self.n_traj < 1 {
            return Err(ConfigError::NoTrajectories);
        }
        if !(self.divergence_threshold.is_finite() && self.divergence_threshold > 0.0) {
            return Err(ConfigError::BadThreshold(self.divergence_threshold));
        }
        if self.sample_every == 0 {
            self.sample_every = (self.n_steps() / DEFAULT_MIN_SAMPLES).max(1);
        }
        Ok(self)
    }

    /// Integration steps covering `[0, t_max]`.
    pub fn n_steps(&self) -> usize {
        // Tolerate t_max/dt landing a hair below an integer.
        ((self.t_max / self.dt) * (1.0 + 1e-12)).floor() as usize
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps() / self.sample_every.max(1) + 1
    }

    /// Sample times `k · sample_every · dt`, all `≤ t_max`.
    pub fn sample_times(&self) -> Vec<f64> {
        let stride = self.sample_every.max(1) as f64 * self.dt;
        (0..self.n_samples()).map(|k| k as f64 * stride).collect()
    }

    /// Tracked well pairs `(i, j)`, zero-based with `i < j`, in
    /// lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        tracked_pairs(self.wells, self.all_pairs)
    }

    /// Per-step noise amplitude vanishes identically without interactions.
    pub fn is_linear(&self) -> bool {
        self.nonlinearity == 0.0
    }

    /// Parses a TOML document and applies `key=value` overrides.
    ///
    /// Absent optional fields take their defaults; unknown keys are
    /// rejected. The result is validated.
    pub fn from_toml_str(doc: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = doc.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| ConfigError::Override(item.clone()))?;
            table.insert(key.to_string(), parse_override_value(value));
        }
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        raw.resolve().validate()
    }

    /// Serializes every field, so the document reproduces this config exactly.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config fields are all TOML-representable")
    }
}

/// Default pair set: `(1, j)` for every `j`, plus `(2, 3)`.
pub fn tracked_pairs(wells: usize, all_pairs: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..wells {
        for j in i + 1..wells {
            if all_pairs || i == 0 || (i, j) == (1, 2) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn parse_override_value(value: &str) -> toml::Value {
    let probe = format!("v = {value}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        // Bare words such as `fock` are taken as strings.
        Err(_) => toml::Value::String(value.to_string()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    wells: usize,
    #[serde(default)]
    coupling: Option<f64>,
    #[serde(default)]
    nonlinearity: Option<f64>,
    atoms: f64,
    initial_state: StateKind,
    t_max: f64,
    #[serde(default)]
    dt: Option<f64>,
    #[serde(default)]
    sample_every: Option<usize>,
    #[serde(default)]
    n_traj: Option<usize>,
    #[serde(default, with = "wide_u64::option")]
    seed: Option<u64>,
    #[serde(default)]
    divergence_threshold: Option<f64>,
    #[serde(default)]
    all_pairs: Option<bool>,
}

impl RawConfig {
    fn resolve(self) -> ChainConfig {
        let coupling = self.coupling.unwrap_or(1.0);
        let mut cfg = ChainConfig::new(self.wells, self.initial_state, self.atoms, self.t_max);
        cfg.coupling = coupling;
        cfg.nonlinearity = self.nonlinearity.unwrap_or(0.0);
        cfg.dt = self.dt.unwrap_or(DEFAULT_DT_IN_INVERSE_J / coupling.abs().max(f64::MIN_POSITIVE));
        cfg.sample_every = self.sample_every.unwrap_or(0);
        cfg.n_traj = self.n_traj.unwrap_or(1);
        cfg.seed = self.seed.unwrap_or(0);
        if let Some(thr) = self.divergence_threshold {
            cfg.divergence_threshold = thr;
        }
        cfg.all_pairs = self.all_pairs.unwrap_or(false);
        cfg
    }
}

/// TOML integers are signed 64-bit; seeds above `i64::MAX` are written as
/// decimal strings.
mod wide_u64 {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    struct WideVisitor;

    impl Visitor<'_> for WideVisitor {
        type Value = u64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a non-negative integer or a decimal string")
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
            u64::try_from(v).map_err(|_| E::custom("seed must be non-negative"))
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
            Ok(v)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
            v.trim().parse().map_err(E::custom)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        d.deserialize_any(WideVisitor)
    }

    pub mod option {
        use serde::Deserializer;

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
            super::deserialize(d).map(Some)
        }
    }
}

/// One trajectory's point in the doubled phase space.
///
/// `alpha_plus[j]` is an independent variable; it equals `alpha[j].conj()`
/// only on average.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub alpha: Vec<Complex64>,
    pub alpha_plus: Vec<Complex64>,
    pub diverged: bool,
}

impl PhasePoint {
    pub fn vacuum(wells: usize) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        Self { alpha: vec![zero; wells], alpha_plus: vec![zero; wells], diverged: false }
    }

    pub fn wells(&self) -> usize {
        self.alpha.len()
    }

    /// `α_j⁺ α_j`, the sample of the population of well `j`.
    pub fn number(&self, j: usize) -> Complex64 {
        self.alpha_plus[j] * self.alpha[j]
    }

    pub fn total_number(&self) -> Complex64 {
        self.alpha_plus.iter().zip(&self.alpha).map(|(p, a)| p * a).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.alpha_plus).all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn baseline() -> ChainConfig {
        let mut c = ChainConfig::new(2, StateKind::Fock, 200.0, 10.0);
        c.dt = 1e-3;
        c
    }

    #[test]
    fn baseline_two_well_is_valid() {
        let c = baseline().validate().unwrap();
        assert_eq!(c.n_steps(), 10_000);
        assert_eq!(c.sample_every, 20);
        assert_eq!(c.n_samples(), 501);
        let t = c.sample_times();
        assert_eq!(t[0], 0.0);
        assert!(*t.last().unwrap() <= c.t_max);
    }

    #[test]
    fn single_well_is_rejected() {
        let mut c = baseline();
        c.wells = 1;
        let err = c.validate().unwrap_err();
        assert_eq!(err, ConfigError::TooFewWells(1));
        assert!(err.to_string().contains("wells must be ≥ 2"));
    }

    #[test]
    fn four_wells_with_interactions_is_valid() {
        let mut c = ChainConfig::new(4, StateKind::Fock, 200.0, 10.0);
        c.nonlinearity = 1e-3;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut c = baseline();
        c.dt = 0.0;
        assert!(matches!(c.validate(), Err(ConfigError::BadStep(_))));
        let mut c = baseline();
        c.n_traj = 0;
        assert_eq!(c.validate(), Err(ConfigError::NoTrajectories));
        let mut c = baseline();
        c.nonlinearity = -1e-3;
        assert!(matches!(c.validate(), Err(ConfigError::BadNonlinearity(_))));
        let mut c = baseline();
        c.atoms = 200.5;
        assert!(matches!(c.clone().validate(), Err(ConfigError::NonIntegerFock(_))));
        c.initial_state = StateKind::Coherent;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn pair_sets() {
        assert_eq!(tracked_pairs(2, false), vec![(0, 1)]);
        assert_eq!(tracked_pairs(3, false), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(tracked_pairs(4, false), vec![(0, 1), (0, 2), (0, 3), (1, 2)]);
        assert_eq!(tracked_pairs(4, true).len(), 6);
    }

    #[test]
    fn toml_defaults_and_overrides() {
        let doc = "wells = 3\natoms = 200\ninitial_state = \"fock\"\nt_max = 5.0\ncoupling = 2.0\n";
        let c = ChainConfig::from_toml_str(doc, &["n_traj=40".into(), "initial_state=coherent".into()]).unwrap();
        assert_eq!(c.n_traj, 40);
        assert_eq!(c.initial_state, StateKind::Coherent);
        assert_eq!(c.dt, 5e-4);
        assert_eq!(c.divergence_threshold, 2e8);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let doc = "wells = 2\natoms = 1\ninitial_state = \"fock\"\nt_max = 1.0\nfoo = 3\n";
        assert!(matches!(ChainConfig::from_toml_str(doc, &[]), Err(ConfigError::Parse(_))));
        let doc = "wells = 2\natoms = 1\ninitial_state = \"fock\"\nt_max = 1.0\n";
        assert!(matches!(ChainConfig::from_toml_str(doc, &["bar=1".into()]), Err(ConfigError::Parse(_))));
        assert!(matches!(ChainConfig::from_toml_str(doc, &["=1".into()]), Err(ConfigError::Override(_))));
    }

    #[test]
    fn large_seeds_survive_toml() {
        let mut c = baseline();
        c.seed = u64::MAX - 3;
        let c = c.validate().unwrap();
        let back = ChainConfig::from_toml_str(&c.to_toml_string(), &[]).unwrap();
        assert_eq!(back, c);
    }

    fn arb_config() -> impl Strategy<Value = ChainConfig> {
        (
            2usize..8,
            1e-6f64..1e3,
            prop_oneof![Just(0.0), 0.0f64..1.0],
            0u32..100_000,
            any::<bool>(),
            0.0f64..100.0,
            1e-6f64..1.0,
            0usize..50,
            1usize..1_000_000,
            any::<u64>(),
            any::<bool>(),
        )
            .prop_map(|(wells, j, chi, n, fock, t_max, dt, every, n_traj, seed, all)| {
                let kind = if fock { StateKind::Fock } else { StateKind::Coherent };
                let atoms = if fock { n as f64 } else { n as f64 * 0.37 };
                let mut c = ChainConfig::new(wells, kind, atoms, t_max);
                c.coupling = j;
                c.nonlinearity = chi;
                c.dt = dt;
                c.sample_every = every;
                c.n_traj = n_traj;
                c.seed = seed;
                c.all_pairs = all;
                c
            })
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(c in arb_config()) {
            let once = c.validate().unwrap();
            prop_assert_eq!(once.clone().validate().unwrap(), once);
        }

        #[test]
        fn toml_round_trip_is_exact(c in arb_config()) {
            let c = c.validate().unwrap();
            let back = ChainConfig::from_toml_str(&c.to_toml_string(), &[]).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
