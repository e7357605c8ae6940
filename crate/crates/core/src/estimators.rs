//! Phase-space moment accumulation and the witnesses built from it.
//!
//! Ensemble averages of positive-P variables are normally ordered operator
//! moments, e.g. `E[α_i⁺ α_j] → ⟨a_i† a_j⟩`. A [`MomentRecord`] keeps
//! compensated complex sums of every product the witnesses need, split into
//! batches so standard errors come from batch means. Real parts are only
//! taken in [`finalize`]; imaginary parts are kept as a convergence
//! diagnostic.

use num_complex::Complex64;
use thiserror::Error;

use crate::model::PhasePoint;

pub const DEFAULT_BATCHES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("no trajectories accumulated")]
    Empty,
    #[error("records have different layouts")]
    LayoutMismatch,
}

/// Kahan-compensated complex sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: Complex64,
    carry: Complex64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, x: Complex64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(-other.carry);
    }

    pub fn value(&self) -> Complex64 {
        self.sum - self.carry
    }
}

/// Which products are stored, and where.
///
/// Per well `j`: `α_j⁺α_j` and `α_j⁺²α_j²`. Per pair `(i, j)`:
/// `α_i⁺α_j`, `α_iα_j⁺` and `α_i⁺α_iα_j⁺α_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub wells: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl Layout {
    pub fn new(wells: usize, pairs: Vec<(usize, usize)>) -> Self {
        debug_assert!(pairs.iter().all(|&(i, j)| i < j && j < wells));
        Self { wells, pairs }
    }

    pub fn len(&self) -> usize {
        2 * self.wells + 3 * self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn number(&self, j: usize) -> usize {
        j
    }

    pub fn pair_moment(&self, j: usize) -> usize {
        self.wells + j
    }

    pub fn hop(&self, k: usize) -> usize {
        2 * self.wells + 3 * k
    }

    pub fn hop_rev(&self, k: usize) -> usize {
        2 * self.wells + 3 * k + 1
    }

    pub fn cross(&self, k: usize) -> usize {
        2 * self.wells + 3 * k + 2
    }

    /// Evaluates every stored product for one phase-space point.
    pub fn products(&self, state: &PhasePoint, out: &mut [Complex64]) {
        let (a, ap) = (&state.alpha, &state.alpha_plus);
        for j in 0..self.wells {
            let n = ap[j] * a[j];
            out[self.number(j)] = n;
            out[self.pair_moment(j)] = n * n;
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            out[self.hop(k)] = ap[i] * a[j];
            out[self.hop_rev(k)] = a[i] * ap[j];
            out[self.cross(k)] = out[self.number(i)] * out[self.number(j)];
        }
    }
}

/// Sums of all stored products over a set of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSums {
    pub count: u64,
    sums: Vec<KahanSum>,
}

impl MomentSums {
    pub fn new(layout: &Layout) -> Self {
        Self { count: 0, sums: vec![KahanSum::default(); layout.len()] }
    }

    /// Adds one trajectory's products (as produced by [`Layout::products`]).
    #[inline]
    pub fn add_products(&mut self, products: &[Complex64]) {
        for (s, &p) in self.sums.iter_mut().zip(products) {
            s.add(p);
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &MomentSums) {
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            s.merge(o);
        }
        self.count += other.count;
    }

    fn mean(&self, k: usize) -> Complex64 {
        self.sums[k].value() / self.count as f64
    }

    fn means(&self) -> Vec<Complex64> {
        (0..self.sums.len()).map(|k| self.mean(k)).collect()
    }
}

/// Moment accumulators for one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    layout: Layout,
    total: MomentSums,
    batches: Vec<MomentSums>,
    current: usize,
    scratch: Vec<Complex64>,
}

impl MomentRecord {
    pub fn new(layout: Layout, n_batches: usize) -> Self {
        let n_batches = n_batches.max(1);
        Self {
            total: MomentSums::new(&layout),
            batches: vec![MomentSums::new(&layout); n_batches],
            current: 0,
            scratch: vec![Complex64::default(); layout.len()],
            layout,
        }
    }

    /// Assembles a record from per-batch sums; the total is merged in batch
    /// order so the result does not depend on how batches were scheduled.
    pub fn from_batches(layout: Layout, batches: Vec<MomentSums>) -> Self {
        let mut total = MomentSums::new(&layout);
        for b in &batches {
            total.merge(b);
        }
        Self { total, batches, current: 0, scratch: vec![Complex64::default(); layout.len()], layout }
    }

    /// A single-"trajectory" record holding exactly known moments, used to
    /// push exact expectations through the same estimator formulas.
    ///
    /// `values` follow the [`Layout`] ordering.
    pub fn from_exact(layout: Layout, values: &[Complex64]) -> Self {
        assert_eq!(values.len(), layout.len());
        let mut sums = MomentSums::new(&layout);
        sums.add_products(values);
        Self::from_batches(layout, vec![sums])
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn count(&self) -> u64 {
        self.total.count
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn batch_counts(&self) -> Vec<u64> {
        self.batches.iter().map(|b| b.count).collect()
    }

    /// Routes subsequent [`accumulate`](Self::accumulate) calls to batch `b`.
    pub fn set_batch(&mut self, b: usize) {
        assert!(b < self.batches.len(), "batch {b} out of range");
        self.current = b;
    }

    pub fn accumulate(&mut self, state: &PhasePoint) {
        self.layout.products(state, &mut self.scratch);
        self.total.add_products(&self.scratch);
        self.batches[self.current].add_products(&self.scratch);
    }

    /// Batch-wise sum of two records over the same layout.
    pub fn merge(&mut self, other: &MomentRecord) -> Result<(), EstimatorError> {
        if self.layout != other.layout || self.batches.len() != other.batches.len() {
            return Err(EstimatorError::LayoutMismatch);
        }
        self.total.merge(&other.total);
        for (a, b) in self.batches.iter_mut().zip(&other.batches) {
            a.merge(b);
        }
        Ok(())
    }

    /// Mean of every stored product, in [`Layout`] order.
    pub fn means(&self) -> Result<Vec<Complex64>, EstimatorError> {
        if self.total.count == 0 {
            return Err(EstimatorError::Empty);
        }
        Ok(self.total.means())
    }
}

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub value: f64,
    pub err: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, err: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub i: usize,
    pub j: usize,
    pub xi: Estimate,
    pub sigma_ij: Estimate,
    pub sigma_ji: Estimate,
    pub zeta: Estimate,
}

/// All observables at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    pub populations: Vec<Estimate>,
    pub variances: Vec<Estimate>,
    pub pairs: Vec<PairEstimate>,
    /// Trajectories that contributed.
    pub count: u64,
    /// Largest entry of [`imaginary_residual`].
    pub max_imag_residual: f64,
}

/// Observables along the sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries {
    pub wells: usize,
    pub pairs: Vec<(usize, usize)>,
    pub times: Vec<f64>,
    pub rows: Vec<Observables>,
}

impl CorrelationSeries {
    pub fn from_records(times: Vec<f64>, records: &[MomentRecord]) -> Result<Self, EstimatorError> {
        let first = records.first().ok_or(EstimatorError::Empty)?;
        let rows = records.iter().map(finalize).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { wells: first.layout.wells, pairs: first.layout.pairs.clone(), times, rows })
    }

    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (i, j))
    }
}

/// Linear functional `Σ_k Re(c_k · m_k)` of the means: the first-order
/// expansion of an observable around the ensemble means.
struct Linear(Vec<(usize, Complex64)>);

impl Linear {
    fn eval(&self, means: &[Complex64]) -> f64 {
        self.0.iter().map(|&(k, c)| (c * means[k]).re).sum()
    }
}

/// Batch-means standard error of a linear functional.
struct BatchErrors {
    batch_means: Vec<Vec<Complex64>>,
    weights: Vec<f64>,
}

impl BatchErrors {
    fn new(record: &MomentRecord) -> Self {
        let total = record.total.count as f64;
        let filled: Vec<&MomentSums> = record.batches.iter().filter(|b| b.count > 0).collect();
        Self {
            batch_means: filled.iter().map(|b| b.means()).collect(),
            weights: filled.iter().map(|b| b.count as f64 / total).collect(),
        }
    }

    fn stderr(&self, f: &Linear) -> f64 {
        let b = self.weights.len();
        if b < 2 {
            return 0.0;
        }
        let vals: Vec<f64> = self.batch_means.iter().map(|m| f.eval(m)).collect();
        let centre: f64 = vals.iter().zip(&self.weights).map(|(v, w)| v * w).sum();
        let ss: f64 = vals.iter().zip(&self.weights).map(|(v, w)| (w * (v - centre)).powi(2)).sum();
        (ss * b as f64 / (b as f64 - 1.0)).sqrt()
    }
}

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

/// Turns a record into populations, variances and pair witnesses.
///
/// With `E[·]` the ensemble mean:
/// - `⟨N̂_j⟩ = Re E[α_j⁺α_j]`
/// - `V(N̂_j) = Re(E[α_j⁺²α_j²] + E[α_j⁺α_j]) − (Re E[α_j⁺α_j])²`
/// - `ξ_ij = Re(E[α_i⁺α_j] E[α_iα_j⁺]) − Re E[α_i⁺α_iα_j⁺α_j]`
/// - `Σ_ij = ξ_ij − ½⟨N̂_j⟩`
/// - `ζ_ij = ξ_ij − ½(⟨N̂_i⟩ + ⟨N̂_j⟩) − ¼`
///
/// Errors propagate through the first-order expansion of each formula,
/// evaluated on batch means.
pub fn finalize(record: &MomentRecord) -> Result<Observables, EstimatorError> {
    let m = record.means()?;
    let lay = &record.layout;
    let errs = BatchErrors::new(record);
    let est = |value: f64, grad: Linear| Estimate { value, err: errs.stderr(&grad) };

    let populations: Vec<Estimate> =
        (0..lay.wells).map(|j| est(m[lay.number(j)].re, Linear(vec![(lay.number(j), ONE)]))).collect();

    let variances = (0..lay.wells)
        .map(|j| {
            let (p, q) = (m[lay.number(j)], m[lay.pair_moment(j)]);
            let value = (q + p).re - p.re * p.re;
            let grad = Linear(vec![(lay.pair_moment(j), ONE), (lay.number(j), Complex64::from(1.0 - 2.0 * p.re))]);
            est(value, grad)
        })
        .collect();

    let pairs = lay
        .pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let (a, b, c) = (m[lay.hop(k)], m[lay.hop_rev(k)], m[lay.cross(k)]);
            let xi_value = (a * b).re - c.re;
            let xi_grad = vec![(lay.hop(k), b), (lay.hop_rev(k), a), (lay.cross(k), -ONE)];
            let with = |extra: &[(usize, f64)]| {
                let mut g = xi_grad.clone();
                g.extend(extra.iter().map(|&(idx, w)| (idx, Complex64::from(w))));
                Linear(g)
            };
            let (ni, nj) = (m[lay.number(i)].re, m[lay.number(j)].re);
            PairEstimate {
                i,
                j,
                xi: est(xi_value, with(&[])),
                sigma_ij: est(xi_value - 0.5 * nj, with(&[(lay.number(j), -0.5)])),
                sigma_ji: est(xi_value - 0.5 * ni, with(&[(lay.number(i), -0.5)])),
                zeta: est(
                    xi_value - 0.5 * (ni + nj) - 0.25,
                    with(&[(lay.number(i), -0.5), (lay.number(j), -0.5)]),
                ),
            }
        })
        .collect();

    let max_imag_residual = residuals(record, &m, &errs).into_iter().map(|r| r.value).fold(0.0, f64::max);

    Ok(Observables { populations, variances, pairs, count: record.count(), max_imag_residual })
}

/// `⟨Σ_j N̂_j⟩` with its standard error.
pub fn total_number(record: &MomentRecord) -> Result<Estimate, EstimatorError> {
    let m = record.means()?;
    let lay = &record.layout;
    let f = Linear((0..lay.wells).map(|j| (lay.number(j), ONE)).collect());
    Ok(Estimate { value: f.eval(&m), err: BatchErrors::new(record).stderr(&f) })
}

/// Size of an imaginary part that should vanish, in standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub name: String,
    pub value: f64,
}

/// `|Im|` of every physically real expectation in units of its standard
/// error, plus the mismatch between `E[α_i⁺α_j]` and `E[α_iα_j⁺]*`.
///
/// A residual whose standard error is zero is reported as 0 when the
/// imaginary part also vanishes and as infinity otherwise.
pub fn imaginary_residual(record: &MomentRecord) -> Result<Vec<Residual>, EstimatorError> {
    let m = record.means()?;
    Ok(residuals(record, &m, &BatchErrors::new(record)))
}

fn residuals(record: &MomentRecord, m: &[Complex64], errs: &BatchErrors) -> Vec<Residual> {
    let lay = &record.layout;
    let mut out = Vec::new();
    let mut push = |name: String, f: Linear, scale: f64| {
        let im = f.eval(m).abs();
        let se = errs.stderr(&f);
        let value = if se > 0.0 {
            im / se
        } else if im <= 1e-12 * scale.max(1.0) {
            0.0
        } else {
            f64::INFINITY
        };
        out.push(Residual { name, value });
    };
    for j in 0..lay.wells {
        let (p, q) = (lay.number(j), lay.pair_moment(j));
        push(format!("N{}", j + 1), Linear(vec![(p, MINUS_I)]), m[p].norm());
        push(format!("pair{}", j + 1), Linear(vec![(q, MINUS_I)]), m[q].norm());
    }
    for (k, &(i, j)) in lay.pairs.iter().enumerate() {
        let (a, b, c) = (lay.hop(k), lay.hop_rev(k), lay.cross(k));
        let tag = format!("{}_{}", i + 1, j + 1);
        push(format!("NN{tag}"), Linear(vec![(c, MINUS_I)]), m[c].norm());
        let scale = m[a].norm() + m[b].norm();
        push(format!("hop{tag}_re"), Linear(vec![(a, ONE), (b, -ONE)]), scale);
        push(format!("hop{tag}_im"), Linear(vec![(a, MINUS_I), (b, MINUS_I)]), scale);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{self, AnalyticInput};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn classical(alpha: &[Complex64]) -> PhasePoint {
        PhasePoint { alpha: alpha.to_vec(), alpha_plus: alpha.iter().map(|a| a.conj()).collect(), diverged: false }
    }

    #[test]
    fn total_number_is_sum_of_populations() {
        let layout = Layout::new(3, vec![(0, 1)]);
        let mut rec = MomentRecord::new(layout, 4);
        for k in 0..40 {
            rec.set_batch(k % 4);
            let x = k as f64 * 0.1;
            rec.accumulate(&classical(&[c(x, 0.0), c(1.0 - x, 0.5), c(0.2, x)]));
        }
        let obs = finalize(&rec).unwrap();
        let total = total_number(&rec).unwrap();
        let sum: f64 = obs.populations.iter().map(|e| e.value).sum();
        assert!((total.value - sum).abs() < 1e-12);
        assert!(total.err > 0.0);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut k = KahanSum::default();
        k.add(c(1e16, 0.0));
        for _ in 0..1000 {
            k.add(c(1.0, -1.0));
        }
        k.add(c(-1e16, 0.0));
        assert_eq!(k.value(), c(1000.0, -1000.0));
    }

    #[test]
    fn accumulate_classical_point() {
        let layout = Layout::new(2, vec![(0, 1)]);
        let mut r = MomentRecord::new(layout, 1);
        r.accumulate(&classical(&[c(2.0, 0.0), c(0.0, 0.0)]));
        let m = r.means().unwrap();
        assert_eq!(m[0], c(4.0, 0.0));
        assert_eq!(m[2], c(16.0, 0.0));
    }

    #[test]
    fn accumulation_is_linear() {
        let layout = Layout::new(3, vec![(0, 1), (0, 2), (1, 2)]);
        let p = PhasePoint {
            alpha: vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.1, -0.7)],
            alpha_plus: vec![c(0.9, -2.1), c(-0.4, -0.2), c(0.3, 0.5)],
            diverged: false,
        };
        let mut once = MomentRecord::new(layout.clone(), 1);
        once.accumulate(&p);
        let mut twice = MomentRecord::new(layout, 1);
        twice.accumulate(&p);
        twice.accumulate(&p);
        assert_eq!(twice.count(), 2);
        for (a, b) in once.total.sums.iter().zip(&twice.total.sums) {
            assert_eq!(a.value() * 2.0, b.value());
        }
    }

    /// Exact moments of two independent single-mode states with
    /// `⟨a⟩`, `⟨N̂⟩` and `⟨a†²a²⟩` given per mode.
    fn independent(modes: [(Complex64, f64, f64); 2]) -> MomentRecord {
        let layout = Layout::new(2, vec![(0, 1)]);
        let [(a0, n0, q0), (a1, n1, q1)] = modes;
        let values = vec![
            c(n0, 0.0),
            c(n1, 0.0),
            c(q0, 0.0),
            c(q1, 0.0),
            a0.conj() * a1,
            a0 * a1.conj(),
            c(n0 * n1, 0.0),
        ];
        MomentRecord::from_exact(layout, &values)
    }

    #[test]
    fn coherent_pair_saturates_hillery_zubairy() {
        let (a, b) = (c(3.0, 1.0), c(-2.0, 0.5));
        let r = independent([(a, a.norm_sqr(), a.norm_sqr().powi(2)), (b, b.norm_sqr(), b.norm_sqr().powi(2))]);
        let o = finalize(&r).unwrap();
        assert!(o.pairs[0].xi.value.abs() < 1e-12);
        assert!(o.variances.iter().zip([a, b]).all(|(v, z)| (v.value - z.norm_sqr()).abs() < 1e-12));
    }

    #[test]
    fn fock_pair_gives_negative_xi() {
        let (ni, nj) = (7.0, 3.0);
        let zero = c(0.0, 0.0);
        let r = independent([(zero, ni, ni * (ni - 1.0)), (zero, nj, nj * (nj - 1.0))]);
        let o = finalize(&r).unwrap();
        assert_eq!(o.pairs[0].xi.value, -ni * nj);
        assert_eq!(o.variances[0].value, 0.0);
        assert_eq!(o.pairs[0].xi.err, 0.0);
    }

    #[test]
    fn exact_analytic_moments_reproduce_closed_forms() {
        for wells in [2usize, 3] {
            let pairs = crate::model::tracked_pairs(wells, true);
            let layout = Layout::new(wells, pairs.clone());
            for k in 0..=60 {
                let t = 0.17 * k as f64;
                for v0 in [0.0, 4.0, 9.0] {
                    let inp = AnalyticInput::new(wells, 1.0, t, 4.0, v0);
                    let mo = analytic::Moments::new(&inp).unwrap();
                    let mut values = vec![Complex64::default(); layout.len()];
                    for j in 0..wells {
                        values[layout.number(j)] = c(mo.population(j), 0.0);
                        let n = mo.population(j);
                        values[layout.pair_moment(j)] = c(mo.variance(j) + n * n - n, 0.0);
                    }
                    for (q, &(i, j)) in pairs.iter().enumerate() {
                        values[layout.hop(q)] = mo.hop(i, j);
                        values[layout.hop_rev(q)] = mo.hop(j, i);
                        values[layout.cross(q)] = c(mo.cross_number(i, j), 0.0);
                    }
                    let o = finalize(&MomentRecord::from_exact(layout.clone(), &values)).unwrap();
                    let table = analytic::witness_table(&inp, &pairs).unwrap();
                    for j in 0..wells {
                        assert!((o.populations[j].value - table.populations[j]).abs() < 1e-10);
                        assert!((o.variances[j].value - table.variances[j]).abs() < 1e-10);
                    }
                    for (e, w) in o.pairs.iter().zip(&table.pairs) {
                        assert!((e.xi.value - w.xi).abs() < 1e-10);
                        assert!((e.sigma_ij.value - w.sigma_ij).abs() < 1e-10);
                        assert!((e.sigma_ji.value - w.sigma_ji).abs() < 1e-10);
                        assert!((e.zeta.value - w.zeta).abs() < 1e-10);
                    }
                    assert_eq!(o.max_imag_residual, 0.0);
                }
            }
        }
    }

    #[test]
    fn batch_errors_match_iid_formula_for_populations() {
        // 100 batches of 1 trajectory: batch-means stderr equals the usual
        // sample standard error of the mean.
        let layout = Layout::new(2, vec![(0, 1)]);
        let mut r = MomentRecord::new(layout, 100);
        let xs: Vec<f64> = (0..100).map(|k| ((k * 37) % 17) as f64 * 0.3).collect();
        for (b, x) in xs.iter().enumerate() {
            r.set_batch(b);
            r.accumulate(&classical(&[c(x.sqrt(), 0.0), c(0.0, 0.0)]));
        }
        let o = finalize(&r).unwrap();
        let mean = xs.iter().sum::<f64>() / 100.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0;
        assert!((o.populations[0].value - mean).abs() < 1e-12);
        assert!((o.populations[0].err - (var / 100.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_record_is_an_error() {
        let r = MomentRecord::new(Layout::new(2, vec![(0, 1)]), 4);
        assert_eq!(finalize(&r), Err(EstimatorError::Empty));
        assert!(imaginary_residual(&r).is_err());
    }

    #[test]
    fn merge_rejects_other_layouts() {
        let mut a = MomentRecord::new(Layout::new(2, vec![(0, 1)]), 4);
        let b = MomentRecord::new(Layout::new(3, vec![(0, 1)]), 4);
        assert_eq!(a.merge(&b), Err(EstimatorError::LayoutMismatch));
    }

    #[test]
    fn deterministic_classical_record_has_no_residual() {
        let layout = Layout::new(2, vec![(0, 1)]);
        let mut r = MomentRecord::new(layout, 1);
        r.accumulate(&classical(&[c(1.2, -0.4), c(0.3, 2.0)]));
        assert!(imaginary_residual(&r).unwrap().iter().all(|x| x.value == 0.0));
    }

    fn arb_point() -> impl Strategy<Value = PhasePoint> {
        proptest::collection::vec(-3.0f64..3.0, 12).prop_map(|v| PhasePoint {
            alpha: (0..3).map(|k| c(v[2 * k], v[2 * k + 1])).collect(),
            alpha_plus: (0..3).map(|k| c(v[6 + 2 * k], v[7 + 2 * k])).collect(),
            diverged: false,
        })
    }

    proptest! {
        #[test]
        fn merge_equals_union(
            pts in proptest::collection::vec((arb_point(), 0usize..5), 2..40),
            split in 0usize..40,
        ) {
            let layout = Layout::new(3, vec![(0, 1), (0, 2), (1, 2)]);
            let split = split.min(pts.len());
            let mut a = MomentRecord::new(layout.clone(), 5);
            let mut b = MomentRecord::new(layout.clone(), 5);
            let mut all = MomentRecord::new(layout, 5);
            for (n, (p, batch)) in pts.iter().enumerate() {
                let target = if n < split { &mut a } else { &mut b };
                target.set_batch(*batch);
                target.accumulate(p);
                all.set_batch(*batch);
                all.accumulate(p);
            }
            a.merge(&b).unwrap();
            prop_assert_eq!(a.count(), all.count());
            prop_assert_eq!(a.batch_counts(), all.batch_counts());
            let (fa, fu) = (finalize(&a).unwrap(), finalize(&all).unwrap());
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + y.abs());
            for (x, y) in fa.pairs.iter().zip(&fu.pairs) {
                prop_assert!(close(x.xi.value, y.xi.value));
                prop_assert!(close(x.xi.err, y.xi.err));
                prop_assert!(close(x.sigma_ji.value, y.sigma_ji.value));
                prop_assert!(close(x.zeta.err, y.zeta.err));
            }
            for (x, y) in fa.variances.iter().zip(&fu.variances) {
                prop_assert!(close(x.value, y.value) && close(x.err, y.err));
            }
        }
    }
}
