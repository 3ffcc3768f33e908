//! Equilibria of the limit inclusion and their stability.
//!
//! A mixed action `sigma` is an equilibrium when it lies in the convex hull of
//! the actions the policy prescribes at its closest models. That residual is
//! discontinuous at most equilibria, because the action set is multivalued
//! only on boundaries. The search therefore scans a smoothed residual that
//! pools the action sets over a small stencil ball. It then shrinks the ball
//! while moving toward the best nearby point.

mod berk_nash;
mod line;
mod stability;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::inclusion::{di_actions, perturbed_actions};
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::simplex::{euclid, hull_distance, lattice_counts, ActionDist};

pub use berk_nash::{berk_nash_residual, check_weak_identification, IdentificationWitness, WeakIdentification};
pub use line::{
    build_staircase, classify_model, equilibrium_models, step_structure, FixedPointCase, Level, ModelClass, Staircase,
    StaircasePoint, StepStructure,
};
pub use stability::{
    test_attracting, test_repelling, test_robust_attracting, AttractSettings, Basin, CertificateParameters, RepelSettings,
    RobustSettings, SampleEvidence, StabilityCertificate, TargetSet, Verdict,
};

/// Default equilibrium tolerance in simplex distance.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;

/// Stencil radius at which refinement stops.
pub const REFINE_FLOOR: f64 = 1e-11;

/// Largest action count the lattice search accepts.
pub const MAX_SEARCH_ACTIONS: usize = 4;

/// Distance from `sigma` to the hull of the actions prescribed at `sigma`.
pub fn equilibrium_residual<T: Scalar>(env: &Environment<T>, policy: &Policy<T>, sigma: &ActionDist<T>) -> Result<T> {
    let set = di_actions(env, policy, sigma)?;
    Ok(hull_distance(sigma.weights(), set))
}

/// Residual against the action sets pooled over the stencil of radius `radius`.
pub fn smoothed_residual<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    sigma: &ActionDist<T>,
    radius: T,
) -> Result<T> {
    let set = perturbed_actions(env, policy, sigma, radius)?;
    Ok(hull_distance(sigma.weights(), set))
}

/// Residual that also accepts points within rounding of a boundary equilibrium.
pub(crate) fn near_residual<T: Scalar>(env: &Environment<T>, policy: &Policy<T>, sigma: &ActionDist<T>) -> Result<T> {
    let exact = equilibrium_residual(env, policy, sigma)?;
    Ok(exact.min(smoothed_residual(env, policy, sigma, T::lit(REFINE_FLOOR))?))
}

/// An equilibrium, or a connected set of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Equilibrium<T> {
    pub sigma: ActionDist<T>,
    /// Smoothed residual at the finest radius (exact residual for lattice hits).
    pub residual: T,
    /// Lattice points of the connected set when `sigma` is not isolated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuum: Option<Vec<ActionDist<T>>>,
}

impl<T: Scalar> Equilibrium<T> {
    pub fn is_continuum(&self) -> bool {
        self.continuum.is_some()
    }
}

/// Unit directions `(e_i - e_j)/√2` tangent to the simplex.
fn tangent_directions<T: Scalar>(n: usize) -> Vec<Vec<T>> {
    let r = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut dirs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut d = vec![T::zero(); n];
                d[i] = r;
                d[j] = -r;
                dirs.push(d);
            }
        }
    }
    dirs
}

fn moved<T: Scalar>(x: &[T], d: &[T], h: T) -> ActionDist<T> {
    let v: Vec<T> = x.iter().zip(d).map(|(&a, &b)| a + h * b).collect();
    ActionDist::project(&v)
}

/// Pattern search on the smoothed residual with a halving radius.
fn refine<T: Scalar>(env: &Environment<T>, policy: &Policy<T>, start: &ActionDist<T>, radius: T) -> Result<(ActionDist<T>, T)> {
    let dirs = tangent_directions::<T>(env.n_actions());
    let mut offsets: Vec<Vec<T>> = vec![vec![T::zero(); env.n_actions()]];
    for d in &dirs {
        offsets.push(d.clone());
        offsets.push(d.iter().map(|&v| v + v).collect());
        for e in &dirs {
            offsets.push(d.iter().zip(e).map(|(&a, &b)| a + b).collect());
        }
    }
    let floor = T::lit(REFINE_FLOOR);
    let mut x = start.clone();
    let mut h = radius;
    while h > floor {
        let half = h * T::lit(0.5);
        let mut best = (T::infinity(), x.clone());
        for off in &offsets {
            let c = moved(x.weights(), off, half);
            let r = smoothed_residual(env, policy, &c, half)?;
            if r < best.0 {
                best = (r, c);
            }
        }
        x = best.1;
        h = half;
    }
    let r = smoothed_residual(env, policy, &x, floor)?;
    Ok((x, r))
}

/// Equilibria found by scanning the barycentric lattice of the given resolution.
///
/// Lattice points whose smoothed residual is at most twice the lattice step
/// are grouped into connected clusters. A cluster holding several exact
/// equilibria is reported as a continuum. A cluster holding one exact lattice
/// equilibrium reports that point. Any other cluster is refined from each of
/// its local minima. Results closer than `2 / resolution` must coincide,
/// otherwise the resolution is too coarse to separate them.
pub fn find_equilibria<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    resolution: usize,
    tol: T,
) -> Result<Vec<Equilibrium<T>>> {
    let n = env.n_actions();
    if n > MAX_SEARCH_ACTIONS {
        return Err(Error::UnsupportedSize(format!("lattice search handles at most {MAX_SEARCH_ACTIONS} actions")));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let step = T::one() / T::count(resolution);
    let counts = lattice_counts(n, resolution);
    let point = |c: &[usize]| ActionDist::from_raw(c.iter().map(|&k| T::count(k) * step).collect());
    let scores: Vec<(T, T)> = counts
        .par_iter()
        .map(|c| {
            let p = point(c);
            Ok((smoothed_residual(env, policy, &p, step)?, equilibrium_residual(env, policy, &p)?))
        })
        .collect::<Result<_>>()?;
    let threshold = step + step;
    let index: HashMap<&[usize], usize> = counts.iter().enumerate().map(|(i, c)| (c.as_slice(), i)).collect();
    let neighbours = |i: usize| -> Vec<usize> {
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && counts[i][b] > 0 {
                    let mut c = counts[i].clone();
                    c[a] += 1;
                    c[b] -= 1;
                    if let Some(&j) = index.get(c.as_slice()) {
                        out.push(j);
                    }
                }
            }
        }
        out
    };
    let candidate: Vec<bool> = scores.iter().map(|s| s.0 <= threshold).collect();
    let mut cluster_of = vec![usize::MAX; counts.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..counts.len() {
        if !candidate[start] || cluster_of[start] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![start];
        cluster_of[start] = id;
        let mut k = 0;
        while k < members.len() {
            for j in neighbours(members[k]) {
                if candidate[j] && cluster_of[j] == usize::MAX {
                    cluster_of[j] = id;
                    members.push(j);
                }
            }
            k += 1;
        }
        clusters.push(members);
    }

    let mut found: Vec<Equilibrium<T>> = Vec::new();
    let mut starts: Vec<usize> = Vec::new();
    for members in &clusters {
        let exact: Vec<usize> = members.iter().copied().filter(|&i| scores[i].1 <= tol).collect();
        match exact.len() {
            0 => starts.extend(
                members
                    .iter()
                    .copied()
                    .filter(|&i| neighbours(i).iter().all(|&j| !candidate[j] || scores[j].0 >= scores[i].0)),
            ),
            1 => found.push(Equilibrium { sigma: point(&counts[exact[0]]), residual: scores[exact[0]].1, continuum: None }),
            _ => {
                let pts: Vec<ActionDist<T>> = exact.iter().map(|&i| point(&counts[i])).collect();
                let mut centroid = vec![T::zero(); n];
                for p in &pts {
                    for (c, &w) in centroid.iter_mut().zip(p.weights()) {
                        *c += w / T::count(pts.len());
                    }
                }
                let rep = pts
                    .iter()
                    .min_by(|a, b| {
                        euclid(a.weights(), &centroid)
                            .partial_cmp(&euclid(b.weights(), &centroid))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .cloned()
                    .expect("nonempty");
                found.push(Equilibrium { sigma: rep, residual: T::zero(), continuum: Some(pts) });
            }
        }
    }
    let refined: Vec<(ActionDist<T>, T)> = starts
        .par_iter()
        .map(|&i| refine(env, policy, &point(&counts[i]), step))
        .collect::<Result<_>>()?;
    for (sigma, residual) in refined {
        if residual <= tol {
            found.push(Equilibrium { sigma, residual, continuum: None });
        }
    }
    dedupe(found, threshold, tol)
}

/// Merges equal results; distinct results closer than `sep` are ambiguous.
fn dedupe<T: Scalar>(found: Vec<Equilibrium<T>>, sep: T, tol: T) -> Result<Vec<Equilibrium<T>>> {
    let mut out: Vec<Equilibrium<T>> = Vec::new();
    let same = tol.max(T::lit(1e-7));
    'next: for e in found {
        for kept in &mut out {
            let d = kept.sigma.distance(&e.sigma);
            if d <= same {
                if e.residual < kept.residual && kept.continuum.is_none() {
                    *kept = e;
                }
                continue 'next;
            }
            let in_set = |set: &Option<Vec<ActionDist<T>>>, p: &ActionDist<T>| {
                set.as_ref().is_some_and(|pts| pts.iter().any(|q| q.distance(p) <= sep))
            };
            if in_set(&kept.continuum, &e.sigma) || in_set(&e.continuum, &kept.sigma) {
                continue 'next;
            }
            if d < sep {
                return Err(Error::ResolutionTooCoarse(format!(
                    "equilibria {:?} and {:?} are closer than the lattice separates",
                    kept.sigma.weights(),
                    e.sigma.weights()
                )));
            }
        }
        out.push(e);
    }
    out.sort_by(|a, b| {
        a.sigma
            .weights()
            .iter()
            .map(|v| v.f64())
            .collect::<Vec<_>>()
            .partial_cmp(&b.sigma.weights().iter().map(|v| v.f64()).collect::<Vec<_>>())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn setup(name: &str) -> (Environment<f64>, Policy<f64>) {
        let env = presets::environment(name).unwrap();
        let pol = presets::policy(&env, name).unwrap();
        (env, pol)
    }

    #[test]
    fn residual_examples() {
        let (env, pol) = setup("negative-reinforcement");
        let half = ActionDist::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(equilibrium_residual(&env, &pol, &half).unwrap(), 0.0);
        let corner = ActionDist::vertex(2, 0);
        assert!((equilibrium_residual(&env, &pol, &corner).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let (env, pol) = setup("triangle");
        assert_eq!(equilibrium_residual(&env, &pol, &ActionDist::uniform(3)).unwrap(), 0.0);
    }

    #[test]
    fn unique_equilibria() {
        let (env, pol) = setup("negative-reinforcement");
        for res in [20, 21] {
            let eq = find_equilibria(&env, &pol, res, EQUILIBRIUM_TOL).unwrap();
            assert_eq!(eq.len(), 1, "{eq:?}");
            assert!((eq[0].sigma.get(0) - 0.5).abs() < 1e-7, "{eq:?}");
        }
        let (env, pol) = setup("triangle");
        for res in [30, 31] {
            let eq = find_equilibria(&env, &pol, res, EQUILIBRIUM_TOL).unwrap();
            assert_eq!(eq.len(), 1, "{eq:?}");
            assert!(eq[0].sigma.distance(&ActionDist::uniform(3)) < 1e-7);
            assert!(!eq[0].is_continuum());
        }
    }

    #[test]
    fn redundant_action_continuum() {
        let (env, pol) = setup("redundant-action");
        let eq = find_equilibria(&env, &pol, 12, EQUILIBRIUM_TOL).unwrap();
        assert_eq!(eq.len(), 1, "{eq:?}");
        let set = eq[0].continuum.as_ref().expect("continuum");
        assert_eq!(set.len(), 5);
        for p in set {
            assert!((p.get(0) - 1.0 / 3.0).abs() < 1e-12 && (p.get(1) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_equilibria() {
        let (env, pol) = setup("one-dimensional");
        let eq = find_equilibria(&env, &pol, 20, EQUILIBRIUM_TOL).unwrap();
        let got: Vec<f64> = eq.iter().map(|e| e.sigma.get(1)).collect();
        assert_eq!(got.len(), 3, "{got:?}");
        for (g, want) in got.iter().zip([2.0 / 3.0, 1.0 / 3.0, 0.0]) {
            assert!((g - want).abs() < 1e-7, "{got:?}");
        }
    }

    #[test]
    fn zero_resolution_rejected() {
        let (env, pol) = setup("triangle");
        assert!(matches!(find_equilibria(&env, &pol, 0, 1e-6), Err(Error::InvalidArgument(_))));
    }
}
