//! Kullback–Leibler divergence between the truth and the model family, and
//! the closest-model correspondence.
//!
//! `K(theta, sigma)` is linear in `sigma`, so for grid models it is assembled
//! from the environment's cached `K(theta_i, delta_x)` table. Pure-action
//! divergences may be infinite (a model ruling out a consequence the truth
//! produces); such models simply never minimize.

use serde::{Deserialize, Serialize};

use crate::bayes::Belief;
use crate::env::{ConsequenceModel, Environment, FamilyKind, ModelDomain};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simplex::ActionDist;

/// Default tolerance (nats) for treating two divergences as tied.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// Threshold for the numerical second-order condition at interior minima.
pub const CURVATURE_THRESHOLD: f64 = 1e-8;

/// Sub-grid minimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Refined<T> {
    pub theta: Vec<T>,
    pub k: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KldResult<T> {
    /// Minimum over the grid.
    pub k_star: T,
    /// Grid indices within the tie tolerance of `k_star`, ascending.
    pub minimizers: Vec<usize>,
    pub values: Option<Vec<T>>,
    /// Present for continuum grids of the built-in smooth families.
    pub refined: Option<Refined<T>>,
}

/// A member of the closest-model set: a grid point or a refined parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum ModelPoint<T> {
    Grid(usize),
    Param(Vec<T>),
}

impl<T: Scalar> ModelPoint<T> {
    pub fn theta<'a>(&'a self, env: &'a Environment<T>) -> &'a [T] {
        match self {
            ModelPoint::Grid(i) => &env.models().points[*i],
            ModelPoint::Param(p) => p,
        }
    }
}

fn check_sigma<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>) -> Result<()> {
    if sigma.len() != env.n_actions() {
        return Err(Error::InvalidDistribution(format!(
            "{} weights for {} actions",
            sigma.len(),
            env.n_actions()
        )));
    }
    Ok(())
}

/// `K(theta, sigma)` in nats.
pub fn kl_divergence<T: Scalar>(env: &Environment<T>, theta: &[T], sigma: &ActionDist<T>) -> Result<T> {
    check_sigma(env, sigma)?;
    let grid = env.models();
    if theta.len() != grid.dim() {
        return Err(Error::Domain(format!("parameter has dimension {}", theta.len())));
    }
    let value = match env.family() {
        FamilyKind::DiscreteTable => {
            let i = grid
                .points
                .iter()
                .position(|p| p.as_slice() == theta)
                .ok_or_else(|| Error::Domain("not a tabulated model".into()))?;
            weighted(sigma, |x| env.kl_pure(i, x))
        }
        family => {
            let inside = match grid.domain {
                ModelDomain::Finite => {
                    family != FamilyKind::BernoulliCommon || (theta[0] >= T::zero() && theta[0] <= T::one())
                }
                _ => grid.contains(theta),
            };
            if !inside {
                return Err(Error::Domain(format!("{theta:?}")));
            }
            weighted(sigma, |x| env.kl_param_pure(theta, x))
        }
    };
    if value.is_infinite() {
        return Err(Error::Support(format!("{theta:?}")));
    }
    Ok(value)
}

#[inline]
fn weighted<T: Scalar>(sigma: &ActionDist<T>, k: impl Fn(usize) -> T) -> T {
    let mut total = T::zero();
    for (x, &w) in sigma.weights().iter().enumerate() {
        if w > T::zero() {
            total += w * k(x);
        }
    }
    total
}

/// `K(theta_i, sigma)` for every grid point (possibly infinite).
pub fn kl_values<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>) -> Vec<T> {
    (0..env.n_models()).map(|i| weighted(sigma, |x| env.kl_pure(i, x))).collect()
}

/// Scans the grid for `K*(sigma)` and the tie set.
pub fn minimize_kld<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>, tie_tol: T) -> Result<KldResult<T>> {
    check_sigma(env, sigma)?;
    let values = kl_values(env, sigma);
    let (best, k_star) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::infinity()), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if !k_star.is_finite() {
        return Err(Error::Support("every model rules out an observed consequence".into()));
    }
    let minimizers: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v <= k_star + tie_tol)
        .map(|(i, _)| i)
        .collect();
    let refined = refine(env, sigma, &values, best);
    Ok(KldResult { k_star, minimizers, values: Some(values), refined })
}

/// Projection of the action-weighted Gaussian mean onto the domain.
fn gaussian_minimizer<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>) -> Vec<T> {
    let ConsequenceModel::GaussianIso { dim, means } = env.truth() else {
        unreachable!("gaussian family validated against gaussian truth")
    };
    let mut m = vec![T::zero(); *dim];
    for (x, &w) in sigma.weights().iter().enumerate() {
        if w > T::zero() {
            for (acc, &v) in m.iter_mut().zip(&means[x]) {
                *acc += w * v;
            }
        }
    }
    env.models().project(&m)
}

fn refine<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>, values: &[T], best: usize) -> Option<Refined<T>> {
    let grid = env.models();
    if !grid.is_continuum() {
        return None;
    }
    if env.family() == FamilyKind::GaussianCommonMean {
        let theta = gaussian_minimizer(env, sigma);
        let k = weighted(sigma, |x| env.kl_param_pure(&theta, x));
        return Some(Refined { theta, k });
    }
    if grid.dim() != 1 {
        return None;
    }
    let n = grid.len();
    let at = |i: usize| grid.points[i][0];
    if best == 0 || best + 1 >= n || !values[best - 1].is_finite() || !values[best + 1].is_finite() {
        return Some(Refined { theta: vec![at(best)], k: values[best] });
    }
    let (x0, x1, x2) = (at(best - 1), at(best), at(best + 1));
    let (k0, k1, k2) = (values[best - 1], values[best], values[best + 1]);
    let num = (x1 - x0) * (x1 - x0) * (k1 - k2) - (x1 - x2) * (x1 - x2) * (k1 - k0);
    let den = (x1 - x0) * (k1 - k2) - (x1 - x2) * (k1 - k0);
    if !(den.abs() > T::zero()) {
        return Some(Refined { theta: vec![x1], k: k1 });
    }
    let vertex = x1 - T::lit(0.5) * num / den;
    let (lo, hi) = if x0 < x2 { (x0, x2) } else { (x2, x0) };
    let theta = vertex.max(lo).min(hi);
    let k = weighted(sigma, |x| env.kl_param_pure(&[theta], x));
    if k.is_finite() && k <= k1 {
        Some(Refined { theta: vec![theta], k })
    } else {
        Some(Refined { theta: vec![x1], k: k1 })
    }
}

/// Checks that ties only involve consecutive grid indices (1-d grids).
fn contiguous(minimizers: &[usize]) -> Result<()> {
    for w in minimizers.windows(2) {
        if w[1] != w[0] + 1 {
            return Err(Error::NonUniqueMinimizer { first: w[0], second: w[1] });
        }
    }
    Ok(())
}

/// The unique refined closest model `theta(sigma)` of a 1-d family.
pub fn closest_model<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>) -> Result<T> {
    if env.models().dim() != 1 {
        return Err(Error::UnsupportedSize("closest_model needs a one-dimensional grid".into()));
    }
    Ok(closest_point(env, sigma)?[0])
}

/// The unique closest parameter in any dimension.
pub fn closest_point<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>) -> Result<Vec<T>> {
    if env.family() == FamilyKind::GaussianCommonMean && env.models().is_continuum() {
        check_sigma(env, sigma)?;
        return Ok(gaussian_minimizer(env, sigma));
    }
    let res = minimize_kld(env, sigma, T::lit(DEFAULT_TIE_TOL))?;
    match res.refined {
        Some(r) => {
            contiguous(&res.minimizers)?;
            Ok(r.theta)
        }
        None if res.minimizers.len() == 1 => Ok(env.models().points[res.minimizers[0]].clone()),
        None => Err(Error::NonUniqueMinimizer { first: res.minimizers[0], second: res.minimizers[1] }),
    }
}

/// The closest-model set used by the limit dynamic: the refined minimizer when
/// the grid samples a smooth continuum, otherwise the tied grid points.
pub fn closest_models<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>, tie_tol: T) -> Result<Vec<ModelPoint<T>>> {
    if env.family() == FamilyKind::GaussianCommonMean && env.models().is_continuum() {
        check_sigma(env, sigma)?;
        return Ok(vec![ModelPoint::Param(gaussian_minimizer(env, sigma))]);
    }
    let res = minimize_kld(env, sigma, tie_tol)?;
    match res.refined {
        Some(r) if contiguous(&res.minimizers).is_ok() => Ok(vec![ModelPoint::Param(r.theta)]),
        _ => Ok(res.minimizers.into_iter().map(ModelPoint::Grid).collect()),
    }
}

/// `theta(delta_x)` for every action (1-d families).
pub fn pure_action_models<T: Scalar>(env: &Environment<T>) -> Result<Vec<T>> {
    (0..env.n_actions())
        .map(|x| closest_model(env, &ActionDist::vertex(env.n_actions(), x)))
        .collect()
}

/// Posterior-weighted excess divergence `sum_i mu_i (K(theta_i, sigma) - K*(sigma))`.
pub fn weighted_kl_gap<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>, belief: &Belief<T>) -> Result<T> {
    if belief.len() != env.n_models() {
        return Err(Error::GridMismatch { belief: belief.len(), grid: env.n_models() });
    }
    check_sigma(env, sigma)?;
    let values = kl_values(env, sigma);
    let k_star = values.iter().copied().fold(T::infinity(), T::min);
    let mut gap = T::zero();
    for (&w, &v) in belief.weights().iter().zip(&values) {
        if w > T::zero() {
            gap += w * (v - k_star);
        }
    }
    Ok(gap)
}

/// Central second difference of `K(., sigma)` at the refined interior minimizer
/// of a 1-d family, and whether it clears [`CURVATURE_THRESHOLD`].
/// Returns `None` at the domain boundary or for non-parametric families.
pub fn curvature_check<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>) -> Result<Option<(T, bool)>> {
    let grid = env.models();
    if grid.dim() != 1 || env.family() == FamilyKind::DiscreteTable || grid.len() < 3 {
        return Ok(None);
    }
    let theta = closest_model(env, sigma)?;
    let h = (grid.points[1][0] - grid.points[0][0]).abs();
    let (lo, hi) = match &grid.domain {
        ModelDomain::Box { lo, hi } => (lo[0], hi[0]),
        _ => (T::neg_infinity(), T::infinity()),
    };
    if theta - h < lo || theta + h > hi {
        return Ok(None);
    }
    let k = |t: T| weighted(sigma, |x| env.kl_param_pure(&[t], x));
    let second = (k(theta + h) - T::lit(2.0) * k(theta) + k(theta - h)) / (h * h);
    Ok(Some((second, second > T::lit(CURVATURE_THRESHOLD))))
}
