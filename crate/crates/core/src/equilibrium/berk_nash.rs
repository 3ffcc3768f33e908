use serde::{Deserialize, Serialize};

use crate::env::{ConsequenceModel, Environment, FamilyKind};
use crate::error::{Error, Result};
use crate::kld::{closest_models, ModelPoint};
use crate::policy::DEFAULT_TIE_TOL;
use crate::scalar::Scalar;
use crate::simplex::{euclid, hull_distance, lattice_points, ActionDist, ActionSet};

/// Largest belief lattice scanned by [`berk_nash_residual`].
const MAX_BELIEFS: usize = 2_000_000;

/// A pair of closest models that the agent could tell apart on its own path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IdentificationWitness<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub action: usize,
    /// Total variation between the two consequence distributions under `action`.
    pub distance: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WeakIdentification<T> {
    pub identified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<IdentificationWitness<T>>,
}

fn grid_index<T: Scalar>(env: &Environment<T>, m: &ModelPoint<T>) -> Option<usize> {
    match m {
        ModelPoint::Grid(i) => Some(*i),
        ModelPoint::Param(p) => env.models().points.iter().position(|q| q.as_slice() == p.as_slice()),
    }
}

/// Total variation between the consequence laws of two models under `x`.
fn total_variation<T: Scalar>(env: &Environment<T>, a: &ModelPoint<T>, b: &ModelPoint<T>, x: usize) -> Result<T> {
    let (ta, tb) = (a.theta(env), b.theta(env));
    match env.family() {
        FamilyKind::BernoulliCommon => Ok((ta[0] - tb[0]).abs()),
        FamilyKind::GaussianCommonMean => {
            let d = euclid(ta, tb).f64();
            Ok(T::lit(libm::erf(d / (2.0 * std::f64::consts::SQRT_2))))
        }
        FamilyKind::DiscreteTable => {
            let (Some(i), Some(j)) = (grid_index(env, a), grid_index(env, b)) else {
                return Err(Error::InvalidArgument("table models are only defined on the grid".into()));
            };
            let labels = match env.truth() {
                ConsequenceModel::Discrete { support, .. } => support.len(),
                ConsequenceModel::GaussianIso { .. } => 0,
            };
            let gap: T = (0..labels).map(|y| (env.model_pmf(i, x, y) - env.model_pmf(j, x, y)).abs()).sum();
            Ok(gap * T::lit(0.5))
        }
    }
}

/// Whether all closest models to `sigma` agree, within `tol` in total
/// variation, on every action `sigma` plays.
pub fn check_weak_identification<T: Scalar>(
    env: &Environment<T>,
    sigma: &ActionDist<T>,
    tol: T,
) -> Result<WeakIdentification<T>> {
    let models = closest_models(env, sigma, T::lit(DEFAULT_TIE_TOL))?;
    let support = sigma.support();
    for (k, a) in models.iter().enumerate() {
        for b in &models[k + 1..] {
            for x in support.iter() {
                let distance = total_variation(env, a, b, x)?;
                if distance > tol {
                    return Ok(WeakIdentification {
                        identified: false,
                        witness: Some(IdentificationWitness {
                            first: a.theta(env).to_vec(),
                            second: b.theta(env).to_vec(),
                            action: x,
                            distance,
                        }),
                    });
                }
            }
        }
    }
    Ok(WeakIdentification { identified: true, witness: None })
}

/// Smallest distance from `sigma` to the hull of the myopic best replies to
/// some belief over its closest models, scanning beliefs on a lattice.
pub fn berk_nash_residual<T: Scalar>(env: &Environment<T>, sigma: &ActionDist<T>, belief_resolution: usize) -> Result<T> {
    if belief_resolution == 0 {
        return Err(Error::InvalidArgument("belief resolution must be positive".into()));
    }
    let models = closest_models(env, sigma, T::lit(DEFAULT_TIE_TOL))?;
    let nx = env.n_actions();
    let payoffs: Vec<Vec<T>> = models
        .iter()
        .map(|m| {
            (0..nx)
                .map(|x| match m {
                    ModelPoint::Grid(i) => env.payoff_model(*i, x),
                    ModelPoint::Param(p) => env.expected_payoff_param(p, x),
                })
                .collect()
        })
        .collect();
    if payoffs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("payoffs are not defined at every closest model".into()));
    }
    let beliefs: Vec<Vec<T>> = if models.len() == 1 {
        vec![vec![T::one()]]
    } else {
        let mut count = 1f64;
        for k in 1..models.len() {
            count *= (belief_resolution + k) as f64 / k as f64;
        }
        if count > MAX_BELIEFS as f64 {
            return Err(Error::UnsupportedSize(format!("{} closest models at resolution {belief_resolution}", models.len())));
        }
        lattice_points(models.len(), belief_resolution)
    };
    let tie = T::lit(DEFAULT_TIE_TOL);
    let mut best = T::infinity();
    for mu in &beliefs {
        let values: Vec<T> = (0..nx).map(|x| mu.iter().zip(&payoffs).map(|(&w, p)| w * p[x]).sum()).collect();
        let top = values.iter().copied().fold(T::neg_infinity(), T::max);
        let set = ActionSet::from_indices((0..nx).filter(|&x| values[x] >= top - tie));
        best = best.min(hull_distance(sigma.weights(), set));
        if best == T::zero() {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{EnvironmentDoc, GridDoc, ModelsDoc, PayoffDoc, PriorDoc, TruthDoc};
    use crate::presets;

    fn tied_table() -> Environment<f64> {
        EnvironmentDoc {
            actions: vec!["a".into(), "b".into()],
            truth: TruthDoc::Discrete {
                support: vec!["0".into(), "1".into()],
                pmf: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            },
            payoff: PayoffDoc { table: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), affine: None },
            models: ModelsDoc {
                family_kind: FamilyKind::DiscreteTable,
                grid: GridDoc::Points(vec![vec![0.0], vec![1.0]]),
                prior: PriorDoc::default(),
                table: Some(vec![vec![vec![0.3, 0.7], vec![0.5, 0.5]], vec![vec![0.7, 0.3], vec![0.5, 0.5]]]),
                domain: None,
            },
            policy: None,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn singleton_closest_set_is_identified() {
        let env: Environment<f64> = presets::environment("negative-reinforcement").unwrap();
        for s in [0.0, 0.3, 0.5, 1.0] {
            let sigma = ActionDist::new(vec![s, 1.0 - s]).unwrap();
            let w = check_weak_identification(&env, &sigma, 1e-9).unwrap();
            assert!(w.identified && w.witness.is_none());
        }
    }

    #[test]
    fn symmetric_tie_is_not_identified() {
        let env = tied_table();
        let sigma = ActionDist::new(vec![0.5, 0.5]).unwrap();
        let w = check_weak_identification(&env, &sigma, 1e-6).unwrap();
        assert!(!w.identified);
        let wit = w.witness.unwrap();
        assert_eq!(wit.action, 0);
        assert!((wit.distance - 0.4).abs() < 1e-12);
        // Only action b played: both models agree there.
        let only_b = ActionDist::vertex(2, 1);
        assert!(check_weak_identification(&env, &only_b, 1e-6).unwrap().identified);
    }

    #[test]
    fn gaussian_total_variation() {
        let env: Environment<f64> = presets::environment("one-dimensional").unwrap();
        let a = ModelPoint::Param(vec![0.0]);
        let b = ModelPoint::Param(vec![1.0]);
        // 2 Phi(1/2) - 1 for unit variance.
        let tv = total_variation(&env, &a, &b, 0).unwrap();
        assert!((tv - 0.382_924_922_548_026).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let env: Environment<f64> = presets::environment("negative-reinforcement").unwrap();
        let half = ActionDist::uniform(2);
        assert!(berk_nash_residual(&env, &half, 200).unwrap() <= 1e-12);
        let corner = ActionDist::vertex(2, 0);
        assert!((berk_nash_residual(&env, &corner, 200).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let tied = tied_table();
        assert!(berk_nash_residual(&tied, &half, 200).unwrap() <= 1e-12);
        assert!(matches!(berk_nash_residual(&env, &half, 0), Err(Error::InvalidArgument(_))));
    }
}
