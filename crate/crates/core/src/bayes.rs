//! Grid posterior kept in log space.
//!
//! The belief stores the normalized log prior and the cumulative
//! log-likelihood of every grid model, and `log_post = prior + cum_loglik -
//! log_norm`. Weights more than 700 nats below the maximum (relative size
//! under 1e-304) are set to zero; keeping them would only add subnormal
//! numbers, which are very slow to compute with.
//!
//! For discrete consequences the log-likelihood of a model is a count-weighted
//! sum of cached table rows. Only the models in a window around the maximum
//! are accumulated at every step. The others are brought up to date from the
//! row counts whenever an upper bound on their log joint weight gets within
//! the cutoff of the maximum. Every accessor returns current values.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Consequence, Environment, ModelGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const UNDERFLOW_NATS: f64 = 700.0;
/// How far below the cutoff the tracked window reaches.
const WINDOW_MARGIN_NATS: f64 = 300.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", into = "BeliefData<T>", from = "BeliefData<T>")]
pub struct Belief<T> {
    log_prior: Vec<T>,
    /// Exact inside `window`; outside it, missing the `pending` rows.
    cum_loglik: Vec<T>,
    cum_loglik_true: T,
    t: u64,
    /// Log of the normalizing constant of `prior * likelihood`.
    log_norm: T,
    weights: Vec<T>,
    /// Inclusive index range holding every positive weight.
    active: (usize, usize),
    /// `log_prior + cum_loglik`, maintained inside `window`.
    log_joint: Vec<T>,
    /// Inclusive index range updated at every step.
    window: (usize, usize),
    /// Per table row, observations not yet added outside `window`.
    pending: Vec<u64>,
    /// Upper bound on the log joint weight of any model outside `window`.
    outside_bound: T,
    /// Step count at which the window is re-centred regardless of the bound.
    next_rescan: u64,
    table: Option<Arc<[T]>>,
    scratch: Vec<T>,
}

/// Serialized form of a [`Belief`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct BeliefData<T> {
    #[serde(with = "log_values")]
    log_prior: Vec<T>,
    #[serde(with = "log_values")]
    cum_loglik: Vec<T>,
    cum_loglik_true: T,
    t: u64,
}

/// Log weights may be `-inf`, which JSON cannot hold as a number; those are written as strings.
mod log_values {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<T: Scalar, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| {
            let x = x.f64();
            if x.is_finite() {
                Value::Finite(x)
            } else {
                Value::Text(x.to_string())
            }
        }))
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<Vec<T>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Finite(x) => Ok(T::lit(x)),
                Value::Text(t) => t.parse::<f64>().map(T::lit).map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

impl<T: Scalar> From<Belief<T>> for BeliefData<T> {
    fn from(b: Belief<T>) -> Self {
        Self { cum_loglik: b.cum_loglik(), log_prior: b.log_prior, cum_loglik_true: b.cum_loglik_true, t: b.t }
    }
}

impl<T: Scalar> From<BeliefData<T>> for Belief<T> {
    fn from(d: BeliefData<T>) -> Self {
        let n = d.log_prior.len();
        let mut b = Belief::empty(d.log_prior, d.cum_loglik);
        b.cum_loglik_true = d.cum_loglik_true;
        b.t = d.t;
        b.log_joint = vec![T::zero(); n];
        b.normalize();
        b
    }
}

impl<T: Scalar> PartialEq for Belief<T> {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.cum_loglik_true == other.cum_loglik_true
            && self.log_prior == other.log_prior
            && self.weights == other.weights
            && self.cum_loglik() == other.cum_loglik()
    }
}

/// Adds `row` to both `cum` and `joint`, returning the new maximum of `joint`.
fn accumulate<T: Scalar>(cum: &mut [T], joint: &mut [T], row: &[T]) -> T {
    let mut lanes = [T::neg_infinity(); 4];
    let n = row.len() - row.len() % 4;
    for ((c, a), l) in cum[..n].chunks_exact_mut(4).zip(joint[..n].chunks_exact_mut(4)).zip(row[..n].chunks_exact(4)) {
        for k in 0..4 {
            c[k] += l[k];
            a[k] += l[k];
            lanes[k] = if a[k] > lanes[k] { a[k] } else { lanes[k] };
        }
    }
    let mut m = lanes[0].max(lanes[1]).max(lanes[2].max(lanes[3]));
    for i in n..row.len() {
        cum[i] += row[i];
        joint[i] += row[i];
        m = m.max(joint[i]);
    }
    m
}

fn max_of<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().fold(T::neg_infinity(), |m, a| if a > m { a } else { m })
}

/// Prior belief on the grid.
pub fn init_belief<T: Scalar>(grid: &ModelGrid<T>) -> Belief<T> {
    Belief::from_log_prior(&grid.log_prior)
}

/// Functional form of [`Belief::update`].
pub fn update_belief<T: Scalar>(env: &Environment<T>, belief: &Belief<T>, x: usize, y: &Consequence<T>) -> Result<Belief<T>> {
    let mut next = belief.clone();
    next.update(env, x, y)?;
    Ok(next)
}

/// `(cum_loglik_true - cum_loglik[i]) / t`.
pub fn log_likelihood_avg<T: Scalar>(belief: &Belief<T>, i: usize) -> Result<T> {
    belief.log_likelihood_avg(i)
}

impl<T: Scalar> Belief<T> {
    fn empty(log_prior: Vec<T>, cum_loglik: Vec<T>) -> Self {
        let n = log_prior.len();
        Self {
            log_prior,
            cum_loglik,
            cum_loglik_true: T::zero(),
            t: 0,
            log_norm: T::zero(),
            weights: vec![T::zero(); n],
            active: (0, n.saturating_sub(1)),
            log_joint: vec![T::zero(); n],
            window: (0, n.saturating_sub(1)),
            pending: Vec::new(),
            outside_bound: T::neg_infinity(),
            next_rescan: 0,
            table: None,
            scratch: Vec::new(),
        }
    }

    /// Belief with the given (unnormalized) log prior.
    pub fn from_log_prior(log_prior: &[T]) -> Self {
        let mut b = Self::empty(log_prior.to_vec(), vec![T::zero(); log_prior.len()]);
        b.normalize();
        let norm = b.log_norm;
        b.log_prior.iter_mut().for_each(|p| *p -= norm);
        b.log_joint.iter_mut().for_each(|a| *a -= norm);
        b.outside_bound -= norm;
        b.log_norm = T::zero();
        b
    }

    /// Belief with the given prior weights (zero weights allowed here).
    pub fn from_weights(weights: &[T]) -> Self {
        let logs: Vec<T> = weights.iter().map(|w| w.ln()).collect();
        Self::from_log_prior(&logs)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    fn in_window(&self, i: usize) -> bool {
        (self.window.0..=self.window.1).contains(&i)
    }

    /// Cumulative log-likelihood of model `i`.
    fn cum_at(&self, i: usize) -> T {
        let mut c = self.cum_loglik[i];
        if let (false, Some(table)) = (self.in_window(i), &self.table) {
            let n = self.len();
            for (r, &k) in self.pending.iter().enumerate() {
                if k > 0 {
                    c += T::count(k as usize) * table[r * n + i];
                }
            }
        }
        c
    }

    /// Log posterior weights.
    pub fn log_post(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.log_prior[i] + self.cum_at(i) - self.log_norm).collect()
    }

    pub fn log_prior(&self) -> &[T] {
        &self.log_prior
    }

    pub fn cum_loglik(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.cum_at(i)).collect()
    }

    pub fn cum_loglik_true(&self) -> T {
        self.cum_loglik_true
    }

    /// Inclusive index range outside which every weight is zero.
    pub fn active_range(&self) -> std::ops::RangeInclusive<usize> {
        self.active.0..=self.active.1
    }

    /// Adds the pending rows to every model outside the window.
    fn fold_pending(&mut self) {
        let Some(table) = &self.table else { return };
        let n = self.cum_loglik.len();
        let (lo, hi) = self.window;
        for (r, k) in self.pending.iter_mut().enumerate() {
            if *k > 0 {
                let kk = T::count(*k as usize);
                let row = &table[r * n..(r + 1) * n];
                for i in (0..lo).chain(hi + 1..n) {
                    self.cum_loglik[i] += kk * row[i];
                }
                *k = 0;
            }
        }
    }

    /// Brings every model up to date and re-centres the window; returns the maximum.
    fn rescan(&mut self) -> T {
        self.fold_pending();
        let n = self.len();
        for ((a, &p), &c) in self.log_joint.iter_mut().zip(&self.log_prior).zip(&self.cum_loglik) {
            *a = p + c;
        }
        let m = max_of(&self.log_joint);
        let floor = m - T::lit(UNDERFLOW_NATS + WINDOW_MARGIN_NATS);
        let first = self.log_joint.iter().position(|&a| a > floor).unwrap_or(0);
        let last = self.log_joint.iter().rposition(|&a| a > floor).unwrap_or(n.saturating_sub(1));
        self.window = (first, last);
        self.outside_bound = max_of(&self.log_joint[..first]).max(max_of(&self.log_joint[(last + 1).min(n)..]));
        m
    }

    /// Recomputes weights from `log_joint` given its maximum `m` over all models.
    fn normalize_window(&mut self, m: T) {
        let cut = m - T::lit(UNDERFLOW_NATS);
        let (lo, hi) = self.window;
        let joint = &self.log_joint[lo..=hi];
        let (Some(first), Some(last)) = (joint.iter().position(|&a| a > cut), joint.iter().rposition(|&a| a > cut)) else {
            self.weights.iter_mut().for_each(|w| *w = T::zero());
            self.active = (0, 0);
            self.log_norm = m;
            return;
        };
        let (first, last) = (first + lo, last + lo);
        let (old_lo, old_hi) = self.active;
        self.weights[old_lo.min(first)..first].fill(T::zero());
        if old_hi > last {
            self.weights[last + 1..=old_hi].fill(T::zero());
        }
        let mut s = T::zero();
        for (w, &a) in self.weights[first..=last].iter_mut().zip(&self.log_joint[first..=last]) {
            let e = if a > cut { (a - m).exp() } else { T::zero() };
            *w = e;
            s += e;
        }
        for w in &mut self.weights[first..=last] {
            *w /= s;
        }
        self.log_norm = m + s.ln();
        self.active = (first, last);
    }

    fn normalize(&mut self) {
        if self.is_empty() {
            return;
        }
        self.active = (0, self.len() - 1);
        let m = self.rescan();
        self.normalize_window(m);
    }

    /// Bayes update after observing `y` under action `x`.
    pub fn update(&mut self, env: &Environment<T>, x: usize, y: &Consequence<T>) -> Result<()> {
        let n = self.len();
        if n != env.n_models() {
            return Err(Error::GridMismatch { belief: n, grid: env.n_models() });
        }
        env.check_action(x)?;
        let truth = env.truth_loglik(x, y)?;
        let r = env.loglik_row_index(x, y);
        let mut scratch = std::mem::take(&mut self.scratch);
        let row: &[T] = match r {
            Some(r) => {
                let table = env.loglik_table();
                if !self.table.as_ref().is_some_and(|t| Arc::ptr_eq(t, table)) {
                    self.fold_pending();
                    self.table = Some(Arc::clone(table));
                    self.pending = vec![0; table.len() / n];
                }
                &table[r * n..(r + 1) * n]
            }
            None => {
                if self.window != (0, n - 1) {
                    self.fold_pending();
                    self.window = (0, n - 1);
                    self.rescan();
                    self.window = (0, n - 1);
                    self.outside_bound = T::neg_infinity();
                }
                scratch.clear();
                scratch.resize(n, T::zero());
                env.accumulate_loglik(x, y, &mut scratch)?;
                &scratch
            }
        };
        // Some model keeps positive mass; checking the current support first is enough almost always.
        let (lo, hi) = self.active;
        let alive = (lo..=hi).any(|i| self.weights[i] > T::zero() && row[i] > T::neg_infinity())
            || (0..n).any(|i| self.log_prior[i] + self.cum_at(i) + row[i] > T::neg_infinity());
        if !alive {
            self.scratch = scratch;
            return Err(Error::ZeroLikelihood);
        }
        if let Some(r) = r {
            self.pending[r] += 1;
            self.outside_bound += env.loglik_row_max(r);
        }
        let (wlo, whi) = self.window;
        let mut m = accumulate(&mut self.cum_loglik[wlo..=whi], &mut self.log_joint[wlo..=whi], &row[wlo..=whi]);
        self.scratch = scratch;
        // Also re-centre now and then so the window follows the concentrating posterior.
        if self.outside_bound > m - T::lit(UNDERFLOW_NATS) || self.t >= self.next_rescan {
            m = self.rescan();
            self.next_rescan = self.t + (self.t / 8).max(64);
        }
        self.cum_loglik_true += truth;
        self.t += 1;
        self.normalize_window(m);
        Ok(())
    }

    pub fn log_likelihood_avg(&self, i: usize) -> Result<T> {
        if self.t == 0 {
            return Err(Error::NoObservations);
        }
        Ok((self.cum_loglik_true - self.cum_at(i)) / T::count(self.t as usize))
    }

    /// Posterior mean of the parameter vector.
    pub fn mean(&self, env: &Environment<T>) -> Vec<T> {
        let points = &env.models().points;
        let mut m = vec![T::zero(); env.models().dim()];
        for i in self.active_range() {
            let w = self.weights[i];
            if w > T::zero() {
                for (acc, &p) in m.iter_mut().zip(&points[i]) {
                    *acc += w * p;
                }
            }
        }
        m
    }

    /// Predictive pmf `sum_i mu_i q_i(. | x)` for discrete consequences.
    pub fn predictive(&self, env: &Environment<T>, x: usize) -> Vec<T> {
        (0..env.n_labels())
            .map(|y| {
                self.active_range()
                    .filter(|&i| self.weights[i] > T::zero())
                    .map(|i| self.weights[i] * env.model_pmf(i, x, y))
                    .sum()
            })
            .collect()
    }

    /// Posterior recomputed from scratch out of prior and cumulative likelihoods.
    pub fn recomputed_log_post(&self) -> Vec<T> {
        let a: Vec<T> = self.log_prior.iter().zip(self.cum_loglik()).map(|(&p, c)| p + c).collect();
        let m = max_of(&a);
        let s: T = a.iter().map(|&v| (v - m).exp()).sum();
        a.iter().map(|&v| v - m - s.ln()).collect()
    }
}
