//! Policy correspondences from beliefs to action sets, and tie-breaking.
//!
//! Table policies are defined on parameters, so a posterior is reduced to its
//! mean parameter before the lookup. Myopic and dynamic-programming policies
//! use the full posterior.

pub mod bellman;
pub mod table;

use crate::bayes::Belief;
use crate::env::{Environment, ModelDomain};
use crate::error::{Error, Result};
use crate::kld::ModelPoint;
use crate::rng::RandomState;
use crate::scalar::Scalar;
use crate::simplex::ActionSet;

pub use bellman::{solve_bellman, ValueFunction};
pub use table::{Region, Table1D, TableSimplex};

/// Default payoff tolerance for myopic ties.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum PolicySpec<T> {
    Myopic { tie_tol: T },
    Table1D(Table1D<T>),
    TableSimplex(TableSimplex<T>),
    Bellman { beta: T, resolution: usize, tol: T },
}

impl<T: Scalar> PolicySpec<T> {
    pub fn myopic() -> Self {
        PolicySpec::Myopic { tie_tol: T::lit(DEFAULT_TIE_TOL) }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PolicySpec::Myopic { .. } => "myopic",
            PolicySpec::Table1D(_) => "table_1d",
            PolicySpec::TableSimplex(_) => "table_simplex",
            PolicySpec::Bellman { .. } => "bellman",
        }
    }
}

/// A policy ready for evaluation (dynamic programs solved once up front).
#[derive(Clone, Debug)]
pub struct Policy<T> {
    spec: PolicySpec<T>,
    value: Option<ValueFunction<T>>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(env: &Environment<T>, spec: PolicySpec<T>) -> Result<Self> {
        let nx = env.n_actions();
        let value = match &spec {
            PolicySpec::Myopic { tie_tol } => {
                if !(*tie_tol >= T::zero()) {
                    return Err(Error::InvalidArgument("tie tolerance must be nonnegative".into()));
                }
                None
            }
            PolicySpec::Table1D(t) => {
                if env.models().dim() != 1 {
                    return Err(Error::UnsupportedBeliefReduction(
                        "interval tables need one-dimensional parameters".into(),
                    ));
                }
                if t.max_action() >= nx {
                    return Err(Error::UnknownAction(format!("#{}", t.max_action())));
                }
                None
            }
            PolicySpec::TableSimplex(t) => {
                if !matches!(env.models().domain, ModelDomain::Simplex) || env.models().dim() != 3 {
                    return Err(Error::UnsupportedBeliefReduction(
                        "simplex tables need models on the 2-simplex".into(),
                    ));
                }
                if t.max_action() >= nx {
                    return Err(Error::UnknownAction(format!("#{}", t.max_action())));
                }
                None
            }
            PolicySpec::Bellman { beta, resolution, tol } => Some(solve_bellman(env, *beta, *resolution, *tol)?),
        };
        Ok(Self { spec, value })
    }

    pub fn spec(&self) -> &PolicySpec<T> {
        &self.spec
    }

    pub fn value_function(&self) -> Option<&ValueFunction<T>> {
        self.value.as_ref()
    }

    /// Whether the policy is defined through a parameter table.
    pub fn is_table(&self) -> bool {
        matches!(self.spec, PolicySpec::Table1D(_) | PolicySpec::TableSimplex(_))
    }

    /// `F(mu)` for a posterior.
    pub fn actions(&self, env: &Environment<T>, belief: &Belief<T>) -> Result<ActionSet> {
        if belief.len() != env.n_models() {
            return Err(Error::GridMismatch { belief: belief.len(), grid: env.n_models() });
        }
        Ok(match &self.spec {
            PolicySpec::Myopic { tie_tol } => myopic_actions(env, belief, *tie_tol),
            PolicySpec::Table1D(t) => t.at(belief.mean(env)[0]),
            PolicySpec::TableSimplex(t) => t.at(&belief.mean(env)),
            PolicySpec::Bellman { .. } => self.value.as_ref().expect("solved").actions_at(env, belief.weights()),
        })
    }

    /// `F(delta_theta)` for a degenerate belief on one model.
    pub fn actions_at_point(&self, env: &Environment<T>, m: &ModelPoint<T>) -> Result<ActionSet> {
        Ok(match &self.spec {
            PolicySpec::Myopic { tie_tol } => myopic_actions_at(env, m, *tie_tol),
            PolicySpec::Table1D(t) => t.at(m.theta(env)[0]),
            PolicySpec::TableSimplex(t) => t.at(m.theta(env)),
            PolicySpec::Bellman { .. } => {
                let i = nearest_grid_point(env, m);
                let mut w = vec![T::zero(); env.n_models()];
                w[i] = T::one();
                self.value.as_ref().expect("solved").actions_at(env, &w)
            }
        })
    }

    /// Union of `F(delta_theta)` over a set of models.
    pub fn actions_on_set(&self, env: &Environment<T>, models: &[ModelPoint<T>]) -> Result<ActionSet> {
        let mut set = ActionSet::EMPTY;
        for m in models {
            set = set.union(self.actions_at_point(env, m)?);
        }
        Ok(set)
    }
}

fn nearest_grid_point<T: Scalar>(env: &Environment<T>, m: &ModelPoint<T>) -> usize {
    match m {
        ModelPoint::Grid(i) => *i,
        ModelPoint::Param(p) => env
            .models()
            .points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, crate::simplex::euclid(p, q)))
            .fold((0, T::infinity()), |acc, c| if c.1 < acc.1 { c } else { acc })
            .0,
    }
}

fn argmax_within<T: Scalar>(values: impl Iterator<Item = T> + Clone, tie_tol: T) -> ActionSet {
    let best = values.clone().fold(T::neg_infinity(), T::max);
    ActionSet::from_indices(values.enumerate().filter(|(_, v)| *v >= best - tie_tol).map(|(x, _)| x))
}

/// Actions maximizing expected payoff under the posterior predictive.
pub fn myopic_actions<T: Scalar>(env: &Environment<T>, belief: &Belief<T>, tie_tol: T) -> ActionSet {
    let w = belief.weights();
    let values: Vec<T> = (0..env.n_actions())
        .map(|x| {
            let mut acc = T::zero();
            for i in belief.active_range() {
                if w[i] > T::zero() {
                    acc += w[i] * env.payoff_model(i, x);
                }
            }
            acc
        })
        .collect();
    argmax_within(values.into_iter(), tie_tol)
}

/// Myopic actions when one model is held with certainty.
pub fn myopic_actions_at<T: Scalar>(env: &Environment<T>, m: &ModelPoint<T>, tie_tol: T) -> ActionSet {
    let values: Vec<T> = (0..env.n_actions())
        .map(|x| match m {
            ModelPoint::Grid(i) => env.payoff_model(*i, x),
            ModelPoint::Param(p) => env.expected_payoff_param(p, x),
        })
        .collect();
    argmax_within(values.into_iter(), tie_tol)
}

/// `F(mu)` for a prepared policy.
pub fn policy_actions<T: Scalar>(env: &Environment<T>, policy: &Policy<T>, belief: &Belief<T>) -> Result<ActionSet> {
    policy.actions(env, belief)
}

/// How a single action is picked from a set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionRule {
    Lexicographic,
    UniformRandom,
    StickyPrevious(Option<usize>),
}

pub fn select_action(set: ActionSet, rule: SelectionRule, rng: &mut RandomState) -> Result<usize> {
    let first = set.first().ok_or(Error::EmptyActionSet)?;
    if set.len() == 1 {
        return Ok(first);
    }
    Ok(match rule {
        SelectionRule::Lexicographic => first,
        SelectionRule::UniformRandom => set.iter().nth(rng.below(set.len())).expect("index below size"),
        SelectionRule::StickyPrevious(Some(prev)) if set.contains(prev) => prev,
        SelectionRule::StickyPrevious(_) => first,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ConsequenceModel, EnvironmentSpec, FamilyKind, ModelGrid, Payoff};
    use crate::presets;
    use proptest::prelude::*;

    fn ex1() -> Environment<f64> {
        presets::environment("negative-reinforcement").unwrap()
    }

    /// Point-mass belief at the grid point closest to `theta`.
    fn belief_at(env: &Environment<f64>, theta: f64) -> Belief<f64> {
        let mut w = vec![0.0; env.n_models()];
        let i = env
            .models()
            .points
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1[0] - theta).abs().partial_cmp(&(b.1[0] - theta).abs()).unwrap())
            .unwrap()
            .0;
        w[i] = 1.0;
        Belief::from_weights(&w)
    }

    fn s(v: &[usize]) -> ActionSet {
        ActionSet::from_indices(v.iter().copied())
    }

    #[test]
    fn negative_reinforcement_myopic() {
        let env = ex1();
        assert_eq!(myopic_actions(&env, &belief_at(&env, 0.3), 1e-9), s(&[0]));
        assert_eq!(myopic_actions(&env, &belief_at(&env, 0.5), 1e-9), s(&[0, 1]));
        assert_eq!(myopic_actions(&env, &belief_at(&env, 0.8), 1e-9), s(&[1]));
    }

    #[test]
    fn single_action_is_always_chosen() {
        let spec = EnvironmentSpec {
            actions: vec!["only".into()],
            truth: ConsequenceModel::Discrete { support: vec!["0".into(), "1".into()], pmf: vec![vec![0.5, 0.5]] },
            payoff: Payoff::Table(vec![vec![0.0, 1.0]]),
            models: ModelGrid::interval(FamilyKind::BernoulliCommon, 0.0, 1.0, 11),
        };
        let env = Environment::new(spec).unwrap();
        let b = crate::bayes::init_belief(env.models());
        assert_eq!(myopic_actions(&env, &b, 1e-9), s(&[0]));
    }

    #[test]
    fn table_policies_at_mean() {
        let env: Environment<f64> = presets::environment("one-dimensional").unwrap();
        let policy = presets::policy(&env, "one-dimensional").unwrap();
        assert_eq!(policy.actions_at_point(&env, &ModelPoint::Param(vec![0.5])).unwrap(), s(&[1]));
        assert_eq!(policy.actions_at_point(&env, &ModelPoint::Param(vec![1.0 / 3.0])).unwrap(), s(&[0, 1]));
        let b = belief_at(&env, 0.5);
        assert_eq!(policy.actions(&env, &b).unwrap(), s(&[1]));

        let tri: Environment<f64> = presets::environment("triangle").unwrap();
        let p = presets::policy(&tri, "triangle").unwrap();
        assert_eq!(p.actions_at_point(&tri, &ModelPoint::Param(vec![0.8, 0.1, 0.1])).unwrap(), s(&[1]));
    }

    #[test]
    fn simplex_table_needs_simplex_models() {
        let env = ex1();
        let err = Policy::new(&env, PolicySpec::TableSimplex(table::cyclic_shift())).unwrap_err();
        assert!(matches!(err, Error::UnsupportedBeliefReduction(_)));
    }

    #[test]
    fn selection_rules() {
        let mut rng = RandomState::new(4, 1);
        for rule in [SelectionRule::Lexicographic, SelectionRule::UniformRandom, SelectionRule::StickyPrevious(Some(1))] {
            assert_eq!(select_action(s(&[3]), rule, &mut rng).unwrap(), 3);
        }
        assert_eq!(select_action(s(&[0, 1]), SelectionRule::Lexicographic, &mut rng).unwrap(), 0);
        assert_eq!(select_action(s(&[0, 1]), SelectionRule::StickyPrevious(Some(1)), &mut rng).unwrap(), 1);
        assert_eq!(select_action(s(&[0, 1]), SelectionRule::StickyPrevious(Some(2)), &mut rng).unwrap(), 0);
        assert!(matches!(select_action(ActionSet::EMPTY, SelectionRule::Lexicographic, &mut rng), Err(Error::EmptyActionSet)));
        let n = 10_000;
        let ones = (0..n)
            .filter(|_| select_action(s(&[0, 1]), SelectionRule::UniformRandom, &mut rng).unwrap() == 1)
            .count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    fn scaled(env: &Environment<f64>, a: f64, b: f64) -> Environment<f64> {
        let mut spec = env.spec().clone();
        if let Payoff::Table(t) = &mut spec.payoff {
            for row in t.iter_mut() {
                for v in row.iter_mut() {
                    *v = a * *v + b;
                }
            }
        }
        Environment::new(spec).unwrap()
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_affine_rescaling(theta in 0.0f64..1.0, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let env = ex1();
            let other = scaled(&env, a, b);
            let belief = belief_at(&env, theta);
            // ties at exactly 1/2 are scale dependent through the tolerance; skip that sliver
            prop_assume!((belief.mean(&env)[0] - 0.5).abs() > 1e-6);
            prop_assert_eq!(myopic_actions(&env, &belief, 1e-9), myopic_actions(&other, &belief, 1e-9));
        }

        #[test]
        fn breakpoint_sets_contain_neighbours(k in 0usize..2) {
            let env: Environment<f64> = presets::environment("one-dimensional").unwrap();
            let policy = presets::policy(&env, "one-dimensional").unwrap();
            let PolicySpec::Table1D(t) = policy.spec() else { panic!() };
            let b = t.breakpoints()[k];
            let at = t.at(b);
            prop_assert!(t.at(b - 1e-6).is_subset(at));
            prop_assert!(t.at(b + 1e-6).is_subset(at));
        }
    }
}
