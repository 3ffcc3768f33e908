//! Discounted dynamic programming on a discretized belief simplex.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simplex::{lattice3_index, lattice_points, ActionSet};

const MAX_ITERATIONS: usize = 200_000;

/// Value function and optimal action sets on a belief lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValueFunction<T> {
    pub beta: T,
    pub resolution: usize,
    pub tie_tol: T,
    /// Lattice beliefs over the model grid.
    pub grid: Vec<Vec<T>>,
    pub values: Vec<T>,
    pub policy_sets: Vec<ActionSet>,
    pub iterations: usize,
}

/// Barycentric interpolation stencil of `belief` on the lattice.
fn stencil<T: Scalar>(n_models: usize, resolution: usize, belief: &[T]) -> Vec<(usize, T)> {
    let r = T::count(resolution);
    let clamp = |v: T| v.max(T::zero()).min(T::one());
    match n_models {
        1 => vec![(0, T::one())],
        2 => {
            let u = clamp(belief[0]) * r;
            let i = num_traits::clamp(u.floor().to_usize().unwrap_or(0), 0, resolution.saturating_sub(1));
            let f = u - T::count(i);
            vec![(resolution - i, T::one() - f), (resolution - i - 1, f)]
        }
        _ => {
            let u = clamp(belief[0]) * r;
            let v = clamp(belief[1]) * r;
            let i = u.floor().to_usize().unwrap_or(0).min(resolution);
            let j = v.floor().to_usize().unwrap_or(0).min(resolution - i);
            let (fu, fv) = (u - T::count(i), v - T::count(j));
            let idx = |a: usize, b: usize| lattice3_index(resolution, a, b);
            if i + j >= resolution {
                vec![(idx(i, j), T::one())]
            } else if fu + fv <= T::one() {
                vec![(idx(i, j), T::one() - fu - fv), (idx(i + 1, j), fu), (idx(i, j + 1), fv)]
            } else {
                vec![
                    (idx(i + 1, j + 1), fu + fv - T::one()),
                    (idx(i + 1, j), T::one() - fv),
                    (idx(i, j + 1), T::one() - fu),
                ]
            }
        }
    }
}

/// Expected immediate payoff of each action under `belief`.
pub(crate) fn immediate<T: Scalar>(env: &Environment<T>, belief: &[T], x: usize) -> T {
    let mut acc = T::zero();
    for (i, &w) in belief.iter().enumerate() {
        if w > T::zero() {
            acc += w * env.payoff_model(i, x);
        }
    }
    acc
}

/// Predictive probabilities and posterior beliefs after playing `x`.
fn transitions<T: Scalar>(env: &Environment<T>, belief: &[T], x: usize) -> Vec<(T, Vec<T>)> {
    let mut out = Vec::new();
    for y in 0..env.n_labels() {
        let joint: Vec<T> = belief.iter().enumerate().map(|(i, &w)| w * env.model_pmf(i, x, y)).collect();
        let p: T = joint.iter().copied().sum();
        if p > T::zero() {
            out.push((p, joint.into_iter().map(|j| j / p).collect()));
        }
    }
    out
}

fn argmax_set<T: Scalar>(q: &[T], tie_tol: T) -> ActionSet {
    let best = q.iter().copied().fold(T::neg_infinity(), T::max);
    ActionSet::from_indices(q.iter().enumerate().filter(|(_, v)| **v >= best - tie_tol).map(|(x, _)| x))
}

/// Value iteration for `W(mu) = max_x sum_y Qbar_mu(y|x) [pi(x,y) + beta W(B(x,y,mu))]`.
///
/// Iterates until the sup-norm change `d` satisfies `d * beta / (1 - beta) < tol`,
/// which bounds the distance to the fixed point by `tol`.
pub fn solve_bellman<T: Scalar>(env: &Environment<T>, beta: T, resolution: usize, tol: T) -> Result<ValueFunction<T>> {
    let n = env.n_models();
    if n > 3 {
        return Err(Error::UnsupportedSize(format!("{n} models; belief lattices support at most 3")));
    }
    if !env.is_discrete() {
        return Err(Error::UnsupportedSize("dynamic programming needs discrete consequences".into()));
    }
    if !(beta >= T::zero() && beta < T::one()) || resolution == 0 || !(tol > T::zero()) {
        return Err(Error::InvalidArgument("need 0 <= beta < 1, resolution >= 1, tol > 0".into()));
    }
    let resolution = if n == 1 { 1 } else { resolution };
    let grid: Vec<Vec<T>> = if n == 1 { vec![vec![T::one()]] } else { lattice_points(n, resolution) };
    let nx = env.n_actions();
    let tie_tol = T::lit(crate::policy::DEFAULT_TIE_TOL);

    // Per lattice point and action: immediate payoff and (probability, stencil) pairs.
    type Trans<T> = Vec<(T, Vec<(usize, T)>)>;
    let mut imm = vec![T::zero(); grid.len() * nx];
    let mut trans: Vec<Trans<T>> = Vec::with_capacity(grid.len() * nx);
    for (p, mu) in grid.iter().enumerate() {
        for x in 0..nx {
            imm[p * nx + x] = immediate(env, mu, x);
            trans.push(
                transitions(env, mu, x)
                    .into_iter()
                    .map(|(prob, post)| (prob, stencil(n, resolution, &post)))
                    .collect(),
            );
        }
    }

    let factor = if beta > T::zero() { beta / (T::one() - beta) } else { T::zero() };
    let mut values = vec![T::zero(); grid.len()];
    let mut next = values.clone();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut diff = T::zero();
        for p in 0..grid.len() {
            let mut best = T::neg_infinity();
            for x in 0..nx {
                let q = imm[p * nx + x] + beta * continuation(&trans[p * nx + x], &values);
                best = best.max(q);
            }
            diff = diff.max((best - values[p]).abs());
            next[p] = best;
        }
        std::mem::swap(&mut values, &mut next);
        if diff * factor < tol {
            break;
        }
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NonConvergence { iterations, last_change: diff.f64() });
        }
    }

    let policy_sets = (0..grid.len())
        .map(|p| {
            let q: Vec<T> = (0..nx)
                .map(|x| imm[p * nx + x] + beta * continuation(&trans[p * nx + x], &values))
                .collect();
            argmax_set(&q, tie_tol)
        })
        .collect();
    Ok(ValueFunction { beta, resolution, tie_tol, grid, values, policy_sets, iterations })
}

fn continuation<T: Scalar>(trans: &[(T, Vec<(usize, T)>)], values: &[T]) -> T {
    let mut c = T::zero();
    for (prob, st) in trans {
        let mut w = T::zero();
        for &(k, a) in st {
            w += a * values[k];
        }
        c += *prob * w;
    }
    c
}

impl<T: Scalar> ValueFunction<T> {
    fn n_models(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    /// Interpolated value at an arbitrary belief.
    pub fn value_at(&self, belief: &[T]) -> T {
        stencil(self.n_models(), self.resolution, belief)
            .into_iter()
            .map(|(k, a)| a * self.values[k])
            .sum()
    }

    /// Action values at an arbitrary belief.
    pub fn q_values(&self, env: &Environment<T>, belief: &[T]) -> Vec<T> {
        (0..env.n_actions())
            .map(|x| {
                let cont: T = transitions(env, belief, x)
                    .into_iter()
                    .map(|(p, post)| p * self.value_at(&post))
                    .sum();
                immediate(env, belief, x) + self.beta * cont
            })
            .collect()
    }

    /// Optimal actions at an arbitrary belief.
    pub fn actions_at(&self, env: &Environment<T>, belief: &[T]) -> ActionSet {
        argmax_set(&self.q_values(env, belief), self.tie_tol)
    }
}
