//! Dense row-major matrices, named parameter storage with gradient slots,
//! a seeded counter-based RNG, and a central-difference gradient checker.
//!
//! Every trainable operation in the crate supplies its own analytic backward
//! pass; [`finite_diff_check`] is the oracle those passes are tested against.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied inside [`stable_log`].
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    /// Stacks equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape(format!("ragged rows: {} vs {}", r.len(), cols)));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Entries drawn from uniform(-bound, bound).
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y` for a vector `y` of length `rows`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), &mut out);
            }
        }
        out
    }

    /// `self += alpha · u vᵀ`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let s = alpha * ur;
            if s != 0.0 {
                axpy(s, v, self.row_mut(r));
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorize without reassociation
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `ln(max(x, 1e-12))`.
pub fn stable_log(x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::NegativeProbability);
    }
    if x.is_nan() {
        return Err(Error::NonFiniteInput);
    }
    Ok(clamped_ln(x))
}

#[inline]
pub(crate) fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

/// Derivative of [`clamped_ln`]; zero on the clamped branch.
#[inline]
pub(crate) fn clamped_ln_grad(x: f64) -> f64 {
    if x > LOG_EPS {
        1.0 / x
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices, each paired with a same-shape gradient slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Matrix::zeros(r, c));
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    /// Borrow a parameter and its gradient slot at the same time.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&Matrix, &mut Matrix) {
        (&self.values[id.0], &mut self.grads[id.0])
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Matrix], &mut [Matrix]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    /// Euclidean norm over every gradient entry; non-finite when any entry is.
    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self.grads.iter().map(|g| dot(&g.data, &g.data)).sum();
        if sq.is_finite() || self.first_non_finite_grad().is_some() {
            return sq.sqrt();
        }
        // squares overflowed; rescale by the largest magnitude
        let scale = self
            .grads
            .iter()
            .flat_map(|g| g.data.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let sq: f64 = self
            .grads
            .iter()
            .flat_map(|g| g.data.iter())
            .map(|x| (x / scale).powi(2))
            .sum();
        scale * sq.sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn first_non_finite_grad(&self) -> Option<&str> {
        self.grads
            .iter()
            .position(|g| !g.is_finite())
            .map(|i| self.names[i].as_str())
    }

    pub fn first_non_finite_value(&self) -> Option<&str> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| self.names[i].as_str())
    }
}

/// `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Affine {
    /// Weights uniform in ±1/√fan_in, zero bias.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add(
            format!("{prefix}.weight"),
            Matrix::uniform(out_dim, in_dim, bound, rng),
        )?;
        let bias = store.add(format!("{prefix}.bias"), Matrix::zeros(1, out_dim))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Rebind to parameters already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let weight = lookup(store, &format!("{prefix}.weight"))?;
        let bias = lookup(store, &format!("{prefix}.bias"))?;
        let (out_dim, in_dim) = store.value(weight).shape();
        if store.value(bias).shape() != (1, out_dim) {
            return Err(Error::Shape(format!("{prefix}.bias")));
        }
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "affine expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut y = store.value(self.weight).matvec(x);
        axpy(1.0, store.value(self.bias).data(), &mut y);
        Ok(y)
    }

    /// Accumulates weight and bias gradients and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let (w, gw) = store.value_and_grad_mut(self.weight);
        gw.add_outer(1.0, dy, x);
        let dx = w.matvec_t(dy);
        axpy(1.0, dy, store.grad_mut(self.bias).data_mut());
        dx
    }
}

pub(crate) fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

// ---------------------------------------------------------------------------
// RNG

/// Serializable position of a [`SeededRng`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

/// Seeded ChaCha8 generator. Independent substreams share the seed and differ
/// in the ChaCha stream id.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn derive(&self, stream: u64) -> Self {
        Self::substream(self.seed, stream)
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut rng = Self::substream(state.seed, state.stream);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in (0, 1).
    pub fn open01(&mut self) -> f64 {
        self.inner.sample(Open01)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in the inclusive range.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

// ---------------------------------------------------------------------------
// Finite differences

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Check a seeded sample of at most this many entries per parameter;
    /// `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(step: f64, tol: f64) -> Self {
        Self {
            step,
            tol,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<EntryMismatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.failures.is_empty())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central-difference check of every parameter entry against the analytic
/// gradients already stored in `params`.
pub fn finite_diff_check<F>(f: F, params: &ParamStore, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    finite_diff_check_with(f, params, &GradCheckOptions::new(step, tol))
}

pub fn finite_diff_check_with<F>(
    mut f: F,
    params: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&opts.step) {
        return Err(Error::Config(format!(
            "finite-difference step {} outside [1e-6, 1e-3]",
            opts.step
        )));
    }
    let mut work = params.clone();
    let mut sampler = SeededRng::new(opts.seed);
    let mut report = GradCheckReport {
        tol: opts.tol,
        params: Vec::with_capacity(params.len()),
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let v = f(store)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::ObjectiveNotFinite)
        }
    };
    eval(&work)?;

    for id in params.ids() {
        let n = params.value(id).data().len();
        let mut entries: Vec<usize> = (0..n).collect();
        if let Some(limit) = opts.max_entries_per_param {
            if limit < n {
                sampler.shuffle(&mut entries);
                entries.truncate(limit);
                entries.sort_unstable();
            }
        }
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            checked: entries.len(),
            max_rel_error: 0.0,
            failures: Vec::new(),
        };
        for idx in entries {
            let orig = params.value(id).data()[idx];
            work.value_mut(id).data_mut()[idx] = orig + opts.step;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[idx] = orig - opts.step;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[idx] = orig;

            let numeric = (up - down) / (2.0 * opts.step);
            let analytic = params.grad(id).data()[idx];
            let rel = relative_error(analytic, numeric);
            check.max_rel_error = check.max_rel_error.max(rel);
            if rel > opts.tol {
                check.failures.push(EntryMismatch {
                    index: idx,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[1000.0, 1000.0]).unwrap(), vec![0.5, 0.5]);
        // e^0.4 / (e^0.4 + e^0.1)
        let direct = 0.4f64.exp() / (0.4f64.exp() + 0.1f64.exp());
        let s = softmax(&[0.4, 0.1]).unwrap();
        assert!((s[0] - direct).abs() < 1e-15);
        assert!((s[0] - 0.574443).abs() < 1e-6);
        assert!((s[1] - 0.425557).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax(&[]), Err(Error::EmptyVector)));
        assert_eq!(softmax(&[]).unwrap_err().to_string(), "empty vector");
    }

    #[test]
    fn stable_log_examples() {
        assert_eq!(stable_log(1.0).unwrap(), 0.0);
        assert!((stable_log(0.0).unwrap() - (-27.631021115928547)).abs() < 1e-12);
        assert!((stable_log(0.5).unwrap() + 0.693147).abs() < 1e-6);
        assert_eq!(stable_log(-0.1).unwrap_err().to_string(), "negative probability");
    }

    proptest! {
        #[test]
        fn softmax_is_probability_vector(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let p = softmax(&v).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] < v[j] {
                        prop_assert!(p[i] <= p[j]);
                    }
                }
            }
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-50f64..50.0, 1..10), c in -100f64..100.0) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rng_reproducible_and_resumable() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let xs: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);

        let state = a.state();
        let mut c = SeededRng::from_state(&state);
        for _ in 0..50 {
            assert_eq!(a.normal().to_bits(), c.normal().to_bits());
        }

        let mut s1 = SeededRng::substream(42, 1);
        let mut s2 = SeededRng::substream(42, 2);
        assert_ne!(s1.next_u64(), s2.next_u64());

        let json = serde_json::to_string(&state).unwrap();
        let back: RngState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
    }

    fn single_scalar(theta: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("theta", Matrix::row_vector(vec![theta])).unwrap();
        store
    }

    #[test]
    fn gradcheck_quadratic() {
        let mut store = single_scalar(3.0);
        let id = store.id("theta").unwrap();
        store.grad_mut(id).data_mut()[0] = 6.0;
        let report = finite_diff_check(
            |s| Ok(s.value(id).data()[0].powi(2)),
            &store,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-9);
    }

    #[test]
    fn gradcheck_constant_and_wrong_gradient() {
        let store = single_scalar(1.5);
        let report = finite_diff_check(|_| Ok(7.0), &store, 1e-5, 0.0).unwrap();
        assert!(report.passed());

        let mut wrong = single_scalar(2.0);
        let id = wrong.id("theta").unwrap();
        wrong.grad_mut(id).data_mut()[0] = 1.0;
        let report =
            finite_diff_check(|s| Ok(s.value(id).data()[0].powi(2)), &wrong, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
        assert_eq!(report.params[0].failures.len(), 1);
    }

    #[test]
    fn gradcheck_rejects_non_finite_and_bad_step() {
        let store = single_scalar(1.0);
        let err = finite_diff_check(|_| Ok(f64::NAN), &store, 1e-5, 1e-4).unwrap_err();
        assert_eq!(err.to_string(), "objective not finite");
        assert!(finite_diff_check(|_| Ok(0.0), &store, 1e-1, 1e-4).is_err());
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(3);
        let mut store = ParamStore::new();
        let layer = Affine::register(&mut store, "lin", 5, 3, &mut rng).unwrap();
        let bias = store.value_mut(layer.bias);
        for (i, b) in bias.data_mut().iter_mut().enumerate() {
            *b = 0.1 * i as f64;
        }
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let c: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let objective = |s: &ParamStore| -> Result<f64> {
            let y = layer.forward(s, &x)?;
            Ok(y.iter().zip(&c).map(|(a, b)| (a * b).sin()).sum())
        };
        let y = layer.forward(&store, &x).unwrap();
        let dy: Vec<f64> = y.iter().zip(&c).map(|(a, b)| b * (a * b).cos()).collect();
        layer.backward(&mut store, &x, &dy);
        let report = finite_diff_check(objective, &store, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn matrix_helpers() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        let stacked = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(stacked.row(1), &[3.0, 4.0]);
    }
}
