//! The limit dynamic `sigma' in Delta F(Delta Theta(sigma)) - sigma` and its
//! epsilon-perturbed variant.
//!
//! Between policy switches the field is `p - sigma` for a fixed target `p`
//! (a vertex, a sliding mixture, or `sigma` itself at rest), whose solution
//! `sigma(t) = p + (sigma0 - p) e^{-t}` is used exactly. The integrator
//! advances in chunks of `step`, and a change of the action set inside a
//! chunk is located by bisection on time.
//!
//! Which motion to take at a multivalued point is decided by probing the
//! action set a distance [`PROBE`] along each candidate motion: a pure action
//! `x` is consistent when `x` is still allowed after moving toward `delta_x`.
//! When two allowed actions each push the state across to where the other is
//! chosen, the sliding mixture is found by bisection on the mixing weight.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::kld::{closest_models, DEFAULT_TIE_TOL};
use crate::policy::Policy;
use crate::rng::RandomState;
use crate::scalar::Scalar;
use crate::simplex::{hull_distance, ActionDist, ActionSet};

/// Bisection resolution for switching times.
pub const EVENT_TOL: f64 = 1e-12;
/// Probe length for motion consistency.
pub const PROBE: f64 = 1e-7;
/// Default number of branches for [`Strategy::BranchSample`].
pub const DEFAULT_BRANCHES: usize = 32;
/// Hull distance below which resting is admissible.
pub const REST_TOL: f64 = 1e-10;
/// Consecutive events with negligible progress tolerated before giving up.
const ZENO_LIMIT: usize = 10_000;

/// Resolution of multivalued points for [`Strategy::FixedSelection`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The first consistent action in this order (unlisted actions follow in index order).
    Priority(Vec<usize>),
    /// Stay put whenever that is admissible, else act as index-order priority.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FixedSelection(Selection),
    /// Rest when admissible, else the lowest consistent action, else slide.
    Filippov,
    /// `count` paths, each choosing uniformly among admissible motions.
    BranchSample { count: usize, seed: u64 },
}

impl Strategy {
    pub fn describe(&self) -> String {
        match self {
            Strategy::FixedSelection(Selection::Priority(p)) => format!("fixed:priority{p:?}"),
            Strategy::FixedSelection(Selection::Stationary) => "fixed:stationary".into(),
            Strategy::Filippov => "filippov".into(),
            Strategy::BranchSample { count, seed } => format!("branch_sample:{count}:{seed}"),
        }
    }
}

/// What the state does until the next switch.
#[derive(Clone, Debug, PartialEq)]
pub enum Motion<T> {
    Pure(usize),
    /// Toward `lambda delta_x + (1 - lambda) delta_y`.
    Slide { x: usize, y: usize, lambda: T },
    Rest,
}

impl<T: Scalar> Motion<T> {
    fn target(&self, sigma: &[T]) -> Vec<T> {
        match self {
            Motion::Pure(x) => unit(sigma.len(), *x),
            Motion::Slide { x, y, lambda } => {
                let mut p = vec![T::zero(); sigma.len()];
                p[*x] = *lambda;
                p[*y] = T::one() - *lambda;
                p
            }
            Motion::Rest => sigma.to_vec(),
        }
    }

    fn admissible(&self, set: ActionSet) -> bool {
        match self {
            Motion::Pure(x) => set.contains(*x),
            Motion::Slide { x, y, .. } => set.contains(*x) && set.contains(*y),
            Motion::Rest => true,
        }
    }

    pub fn label(&self, actions: &[String]) -> String {
        match self {
            Motion::Pure(x) => actions[*x].clone(),
            Motion::Slide { x, y, lambda } => format!("slide({}:{},{}:{})", actions[*x], lambda, actions[*y], T::one() - *lambda),
            Motion::Rest => "rest".into(),
        }
    }
}

fn unit<T: Scalar>(n: usize, x: usize) -> Vec<T> {
    let mut v = vec![T::zero(); n];
    v[x] = T::one();
    v
}

/// `p + (sigma - p) e^{-s}`.
fn segment<T: Scalar>(sigma: &[T], target: &[T], s: T) -> Vec<T> {
    let decay = (-s).exp();
    sigma.iter().zip(target).map(|(&a, &p)| p + (a - p) * decay).collect()
}

/// A logged switch of the action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiEvent<T> {
    pub time: T,
    pub state: Vec<T>,
    /// Action set in effect after the switch, e.g. `{x2,x3}`.
    pub boundary: String,
    /// Motion chosen at the switch.
    pub selection: String,
}

/// One solution branch sampled at chunk ends and switching times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DIPath<T> {
    pub times: Vec<T>,
    pub states: Vec<ActionDist<T>>,
    /// Whether the sample is a switching time.
    pub event_flags: Vec<bool>,
    /// Motion taken from each sample onward.
    pub selections: Vec<String>,
    pub events: Vec<DiEvent<T>>,
    pub strategy: String,
}

impl<T: Scalar> DIPath<T> {
    pub fn final_state(&self) -> &ActionDist<T> {
        self.states.last().expect("paths hold the initial state")
    }

    /// State at time `t` by exact interpolation within the containing segment's chord.
    pub fn state_at(&self, t: T) -> Option<Vec<T>> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return None;
        }
        let k = k - 1;
        if k + 1 == self.times.len() {
            return (self.times[k] == t).then(|| self.states[k].weights().to_vec());
        }
        let (a, b) = (self.times[k], self.times[k + 1]);
        let s = if b > a { (t - a) / (b - a) } else { T::zero() };
        Some(
            self.states[k]
                .weights()
                .iter()
                .zip(self.states[k + 1].weights())
                .map(|(&u, &v)| u + s * (v - u))
                .collect(),
        )
    }
}

/// `F(Delta Theta(sigma))` for the unperturbed dynamic.
pub fn di_actions<T: Scalar>(env: &Environment<T>, policy: &Policy<T>, sigma: &ActionDist<T>) -> Result<ActionSet> {
    let models = closest_models(env, sigma, T::lit(DEFAULT_TIE_TOL))?;
    policy.actions_on_set(env, &models)
}

/// Extreme velocities `delta_x - sigma` of the right-hand side.
pub fn di_rhs<T: Scalar>(env: &Environment<T>, policy: &Policy<T>, sigma: &ActionDist<T>) -> Result<Vec<Vec<T>>> {
    let set = di_actions(env, policy, sigma)?;
    Ok(set
        .iter()
        .map(|x| {
            let mut v: Vec<T> = sigma.weights().iter().map(|&s| -s).collect();
            v[x] += T::one();
            v
        })
        .collect())
}

/// Unit tangent directions of the perturbation stencil: `±(e_i - 1/n)` normalized
/// for every action, then `±(e_i - e_j)/√2` for every pair `i < j`.
pub fn stencil_directions<T: Scalar>(n: usize) -> Vec<Vec<T>> {
    let mut dirs = Vec::new();
    let nn = T::count(n);
    let axis_norm = ((nn - T::one()) / nn).sqrt();
    for i in 0..n {
        let mut d: Vec<T> = (0..n).map(|k| if k == i { T::one() - T::one() / nn } else { -T::one() / nn }).collect();
        d.iter_mut().for_each(|v| *v /= axis_norm);
        dirs.push(d.iter().map(|&v| -v).collect());
        dirs.push(d);
    }
    let r2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    for i in 0..n {
        for j in i + 1..n {
            let mut d = vec![T::zero(); n];
            d[i] = r2;
            d[j] = -r2;
            dirs.push(d.iter().map(|&v| -v).collect());
            dirs.push(d);
        }
    }
    dirs
}

/// Action sets of the (possibly perturbed) dynamic.
struct Oracle<'a, T> {
    env: &'a Environment<T>,
    policy: &'a Policy<T>,
    epsilon: T,
    dirs: Vec<Vec<T>>,
}

impl<'a, T: Scalar> Oracle<'a, T> {
    fn new(env: &'a Environment<T>, policy: &'a Policy<T>, epsilon: T) -> Self {
        let dirs = if epsilon > T::zero() { stencil_directions(env.n_actions()) } else { Vec::new() };
        Self { env, policy, epsilon, dirs }
    }

    fn actions(&self, sigma: &[T]) -> Result<ActionSet> {
        if let Some(bad) = sigma.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(bad.f64()));
        }
        let mut set = di_actions(self.env, self.policy, &ActionDist::from_raw(sigma.to_vec()))?;
        for d in &self.dirs {
            let moved: Vec<T> = sigma.iter().zip(d).map(|(&s, &v)| s + self.epsilon * v).collect();
            set = set.union(di_actions(self.env, self.policy, &ActionDist::project(&moved))?);
        }
        Ok(set)
    }
}

/// Union of `F(Delta Theta(.))` over `sigma` and its stencil of radius `epsilon`.
pub fn perturbed_actions<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    sigma: &ActionDist<T>,
    epsilon: T,
) -> Result<ActionSet> {
    Oracle::new(env, policy, epsilon).actions(sigma.weights())
}

/// Options available at `sigma` given its action set.
struct Options<T> {
    consistent: Vec<usize>,
    rest: bool,
    slide: Option<Motion<T>>,
}

fn options<T: Scalar>(oracle: &Oracle<'_, T>, sigma: &[T], set: ActionSet) -> Result<Options<T>> {
    let probe = T::lit(PROBE);
    let rest = hull_distance(sigma, set) <= T::lit(REST_TOL);
    if set.len() == 1 {
        return Ok(Options { consistent: set.to_vec(), rest, slide: None });
    }
    let mut consistent = Vec::new();
    for x in set.iter() {
        let p = segment(sigma, &unit(sigma.len(), x), probe);
        if oracle.actions(&p)?.contains(x) {
            consistent.push(x);
        }
    }
    let mut slide = None;
    if consistent.is_empty() && !rest {
        let acts = set.to_vec();
        'pairs: for (k, &x) in acts.iter().enumerate() {
            for &y in &acts[k + 1..] {
                if let Some(m) = find_slide(oracle, sigma, x, y)? {
                    slide = Some(m);
                    break 'pairs;
                }
            }
        }
    }
    Ok(Options { consistent, rest, slide })
}

/// Mixing weight whose motion keeps both `x` and `y` allowed.
fn find_slide<T: Scalar>(oracle: &Oracle<'_, T>, sigma: &[T], x: usize, y: usize) -> Result<Option<Motion<T>>> {
    let probe = T::lit(PROBE);
    let side = |lambda: T| -> Result<ActionSet> {
        let m = Motion::Slide { x, y, lambda };
        oracle.actions(&segment(sigma, &m.target(sigma), probe))
    };
    // lambda = 1 heads for delta_x, which drops x; lambda = 0 drops y.
    let (mut lo, mut hi) = (T::zero(), T::one());
    if side(lo)?.contains(y) || !side(hi)?.contains(y) {
        return Ok(None);
    }
    for _ in 0..60 {
        let mid = (lo + hi) * T::lit(0.5);
        if side(mid)?.contains(x) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = (lo + hi) * T::lit(0.5);
    let m = Motion::Slide { x, y, lambda };
    Ok(m.admissible(side(lambda)?).then_some(m))
}

enum Chooser {
    Priority(Vec<usize>),
    Stationary,
    Filippov,
    Random(RandomState),
}

impl Chooser {
    fn choose<T: Scalar>(&mut self, set: ActionSet, opts: Options<T>) -> Motion<T> {
        let fallback = |order: &[usize]| {
            order.iter().copied().find(|x| set.contains(*x)).or(set.first()).map_or(Motion::Rest, Motion::Pure)
        };
        match self {
            Chooser::Priority(order) => {
                if let Some(x) = order.iter().copied().find(|x| opts.consistent.contains(x)) {
                    Motion::Pure(x)
                } else if opts.rest {
                    Motion::Rest
                } else {
                    opts.slide.unwrap_or_else(|| fallback(order))
                }
            }
            Chooser::Stationary | Chooser::Filippov => {
                if opts.rest && (set.len() > 1 || matches!(self, Chooser::Stationary)) {
                    Motion::Rest
                } else if let Some(&x) = opts.consistent.first() {
                    Motion::Pure(x)
                } else if let Some(s) = opts.slide {
                    s
                } else if opts.rest {
                    Motion::Rest
                } else {
                    fallback(&[])
                }
            }
            Chooser::Random(rng) => {
                let mut choices: Vec<Motion<T>> = opts.consistent.iter().map(|&x| Motion::Pure(x)).collect();
                if opts.rest {
                    choices.push(Motion::Rest);
                }
                if let Some(s) = opts.slide {
                    choices.push(s);
                }
                if choices.is_empty() {
                    return fallback(&[]);
                }
                let k = rng.below(choices.len());
                choices.swap_remove(k)
            }
        }
    }
}

fn full_order(n: usize, order: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = order.iter().copied().filter(|&x| x < n).collect();
    out.extend((0..n).filter(|x| !order.contains(x)));
    out
}

fn integrate_one<T: Scalar>(
    oracle: &Oracle<'_, T>,
    sigma0: &ActionDist<T>,
    t_end: T,
    step: T,
    mut chooser: Chooser,
    strategy: String,
) -> Result<DIPath<T>> {
    let actions = oracle.env.actions();
    let event_tol = T::lit(EVENT_TOL).max(T::epsilon() * T::lit(16.0));
    let tiny = T::lit(1e-9);
    let mut path = DIPath {
        times: Vec::new(),
        states: Vec::new(),
        event_flags: Vec::new(),
        selections: Vec::new(),
        events: Vec::new(),
        strategy,
    };
    let mut sigma = ActionDist::project(sigma0.weights()).into_weights();
    let mut t = T::zero();
    let mut set = oracle.actions(&sigma)?;
    let mut motion = chooser.choose(set, options(oracle, &sigma, set)?);
    path.times.push(t);
    path.states.push(ActionDist::from_raw(sigma.clone()));
    path.event_flags.push(false);
    path.selections.push(motion.label(actions));
    let mut stalled = 0usize;

    while t < t_end {
        let h = step.min(t_end - t);
        let target = motion.target(&sigma);
        let valid = |s: T| -> Result<bool> {
            let next = oracle.actions(&segment(&sigma, &target, s))?;
            Ok(motion.admissible(next) && next.is_subset(set))
        };
        let at_end = matches!(motion, Motion::Rest) || valid(h)?;
        let (advance, event) = if at_end {
            (h, false)
        } else {
            let (mut lo, mut hi) = (T::zero(), h);
            while hi - lo > event_tol {
                let mid = (lo + hi) * T::lit(0.5);
                if valid(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (hi, true)
        };
        sigma = ActionDist::project(&segment(&sigma, &target, advance)).into_weights();
        if let Some(bad) = sigma.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(bad.f64()));
        }
        t = if event { t + advance } else if h == t_end - t { t_end } else { t + h };
        stalled = if event && advance < tiny { stalled + 1 } else { 0 };
        if stalled > ZENO_LIMIT {
            return Err(Error::StepTooLarge(step.f64()));
        }
        let new_set = oracle.actions(&sigma)?;
        if event || new_set != set || !matches!(motion, Motion::Pure(_)) || !matches!(chooser, Chooser::Priority(_)) {
            set = new_set;
            motion = chooser.choose(set, options(oracle, &sigma, set)?);
        }
        if event {
            path.events.push(DiEvent {
                time: t,
                state: sigma.clone(),
                boundary: set.label(actions),
                selection: motion.label(actions),
            });
        }
        path.times.push(t);
        path.states.push(ActionDist::from_raw(sigma.clone()));
        path.event_flags.push(event);
        path.selections.push(motion.label(actions));
    }
    Ok(path)
}

fn run<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    sigma0: &ActionDist<T>,
    t_end: T,
    step: T,
    epsilon: T,
    strategy: &Strategy,
) -> Result<Vec<DIPath<T>>> {
    if !(step > T::zero()) || !(t_end > T::zero()) {
        return Err(Error::InvalidArgument("step and horizon must be positive".into()));
    }
    if sigma0.len() != env.n_actions() {
        return Err(Error::InvalidDistribution(format!("{} weights for {} actions", sigma0.len(), env.n_actions())));
    }
    let oracle = Oracle::new(env, policy, epsilon);
    let n = env.n_actions();
    let label = strategy.describe();
    match strategy {
        Strategy::FixedSelection(Selection::Priority(order)) => Ok(vec![integrate_one(
            &oracle,
            sigma0,
            t_end,
            step,
            Chooser::Priority(full_order(n, order)),
            label,
        )?]),
        Strategy::FixedSelection(Selection::Stationary) => {
            Ok(vec![integrate_one(&oracle, sigma0, t_end, step, Chooser::Stationary, label)?])
        }
        Strategy::Filippov => Ok(vec![integrate_one(&oracle, sigma0, t_end, step, Chooser::Filippov, label)?]),
        Strategy::BranchSample { count, seed } => (0..*count as u64)
            .into_par_iter()
            .map(|b| {
                let rng = RandomState::new(*seed, 1000 + b);
                integrate_one(&oracle, sigma0, t_end, step, Chooser::Random(rng), format!("{label}#{b}"))
            })
            .collect(),
    }
}

/// Integrates the inclusion from `sigma0` over `[0, t_end]`.
pub fn integrate_di<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    sigma0: &ActionDist<T>,
    t_end: T,
    step: T,
    strategy: &Strategy,
) -> Result<Vec<DIPath<T>>> {
    run(env, policy, sigma0, t_end, step, T::zero(), strategy)
}

/// Integrates the perturbed inclusion, whose action set at `sigma` is the union
/// over a deterministic stencil of radius `epsilon` around it.
pub fn integrate_perturbed_di<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    sigma0: &ActionDist<T>,
    t_end: T,
    step: T,
    epsilon: T,
    strategy: &Strategy,
) -> Result<Vec<DIPath<T>>> {
    if !(epsilon >= T::zero()) {
        return Err(Error::InvalidArgument("epsilon must be nonnegative".into()));
    }
    run(env, policy, sigma0, t_end, step, epsilon, strategy)
}

/// Writes a path as CSV: `time, sigma_<action>..., event, selection`.
pub fn write_path_csv<T: Scalar, W: Write>(actions: &[String], path: &DIPath<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(actions.iter().map(|a| format!("sigma_{a}")));
    header.extend(["event".into(), "selection".into()]);
    w.write_record(&header)?;
    for k in 0..path.times.len() {
        let mut row = vec![path.times[k].to_string()];
        row.extend(path.states[k].weights().iter().map(|v| v.to_string()));
        row.push(u8::from(path.event_flags[k]).to_string());
        row.push(path.selections[k].clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a path CSV; event details other than the flags are not stored in it.
pub fn read_path_csv<T: Scalar, R: Read>(n_actions: usize, strategy: &str, input: R) -> Result<DIPath<T>> {
    let mut r = csv::Reader::from_reader(input);
    let mut path = DIPath {
        times: Vec::new(),
        states: Vec::new(),
        event_flags: Vec::new(),
        selections: Vec::new(),
        events: Vec::new(),
        strategy: strategy.to_string(),
    };
    for row in r.records() {
        let row = row?;
        if row.len() != n_actions + 3 {
            return Err(Error::Schema(format!("expected {} columns, found {}", n_actions + 3, row.len())));
        }
        let num = |k: usize| row[k].parse::<T>().map_err(|_| Error::Schema(format!("bad number `{}`", &row[k])));
        path.times.push(num(0)?);
        path.states.push(ActionDist::from_raw((1..=n_actions).map(num).collect::<Result<_>>()?));
        path.event_flags.push(&row[n_actions + 1] == "1");
        path.selections.push(row[n_actions + 2].to_string());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::simplex::euclid;

    fn preset(name: &str) -> (Environment<f64>, Policy<f64>) {
        let env = presets::environment(name).unwrap();
        let p = presets::policy(&env, name).unwrap();
        (env, p)
    }

    fn dist(w: &[f64]) -> ActionDist<f64> {
        ActionDist::new(w.to_vec()).unwrap()
    }

    #[test]
    fn rhs_of_negative_reinforcement() {
        let (env, p) = preset("negative-reinforcement");
        let v = di_rhs(&env, &p, &dist(&[1.0, 0.0])).unwrap();
        assert_eq!(v, vec![vec![-1.0, 1.0]]);
        let v = di_rhs(&env, &p, &dist(&[0.5, 0.5])).unwrap();
        assert_eq!(v, vec![vec![0.5, -0.5], vec![-0.5, 0.5]]);
    }

    #[test]
    fn negative_reinforcement_slides_onto_indifference() {
        let (env, p) = preset("negative-reinforcement");
        let paths = integrate_di(&env, &p, &dist(&[1.0, 0.0]), 5.0, 1e-3, &Strategy::Filippov).unwrap();
        let path = &paths[0];
        let ln2 = std::f64::consts::LN_2;
        for (t, s) in path.times.iter().zip(&path.states) {
            let s1 = s.get(0);
            if *t <= ln2 {
                assert!((s1 - (-t).exp()).abs() <= 1e-3, "t={t} s1={s1}");
            } else {
                assert!((s1 - 0.5).abs() <= 1e-3, "t={t} s1={s1}");
            }
        }
        assert_eq!(path.events.len(), 1);
        assert!((path.events[0].time - ln2).abs() < 1e-4);
        assert_eq!(path.selections.last().unwrap(), "rest");
    }

    #[test]
    fn table_switch_time_is_analytic() {
        // one-dimensional preset: theta(sigma) = sigma(x1); starting at (0.5, 0.5) plays x1
        // until sigma(x1) = 2/3, i.e. at t = ln(3/2)
        let (env, p) = preset("one-dimensional");
        let paths = integrate_di(&env, &p, &dist(&[0.5, 0.5]), 1.0, 1e-2, &Strategy::Filippov).unwrap();
        let ev = &paths[0].events[0];
        assert!((ev.time - 1.5f64.ln()).abs() < 1e-8, "{}", ev.time);
    }

    #[test]
    fn stationary_selection_at_equilibrium_is_constant() {
        for name in ["negative-reinforcement", "triangle"] {
            let (env, p) = preset(name);
            let n = env.n_actions();
            let star = ActionDist::uniform(n);
            let paths =
                integrate_di(&env, &p, &star, 3.0, 0.1, &Strategy::FixedSelection(Selection::Stationary)).unwrap();
            assert!(paths[0].states.iter().all(|s| s == &star), "{name}");
        }
    }

    #[test]
    fn zero_epsilon_reduces_exactly() {
        let (env, p) = preset("triangle");
        let s0 = dist(&[0.5, 0.3, 0.2]);
        let strat = Strategy::FixedSelection(Selection::Priority(vec![1, 2, 0]));
        let a = integrate_di(&env, &p, &s0, 4.0, 0.05, &strat).unwrap();
        let b = integrate_perturbed_di(&env, &p, &s0, 4.0, 0.05, 0.0, &strat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn states_stay_in_simplex() {
        let (env, p) = preset("triangle");
        let paths = integrate_di(&env, &p, &dist(&[0.3, 0.34, 0.36]), 10.0, 0.05, &Strategy::Filippov).unwrap();
        for s in &paths[0].states {
            assert!(s.simplex_residual() < 1e-12);
        }
    }

    #[test]
    fn velocity_between_events_matches_selection() {
        let (env, p) = preset("triangle");
        let path = &integrate_di(&env, &p, &dist(&[0.6, 0.2, 0.2]), 3.0, 1e-3, &Strategy::Filippov).unwrap()[0];
        for k in 0..path.times.len() - 1 {
            if path.event_flags[k + 1] || path.event_flags[k] {
                continue;
            }
            let dt = path.times[k + 1] - path.times[k];
            let x = env.action_index(&path.selections[k]).unwrap();
            let s = path.states[k].weights();
            for i in 0..3 {
                let num = (path.states[k + 1].get(i) - s[i]) / dt;
                let exact = if i == x { 1.0 } else { 0.0 } - s[i];
                assert!((num - exact).abs() < 2.0 * dt, "k={k}");
            }
        }
    }

    #[test]
    fn step_halving_is_consistent() {
        for name in presets::NAMES {
            let (env, p) = preset(name);
            let n = env.n_actions();
            let mut w = vec![0.1; n];
            w[0] = 1.0 - 0.1 * (n - 1) as f64;
            let s0 = dist(&w);
            let a = integrate_di(&env, &p, &s0, 2.0, 0.02, &Strategy::Filippov).unwrap();
            let b = integrate_di(&env, &p, &s0, 2.0, 0.01, &Strategy::Filippov).unwrap();
            let d = euclid(a[0].final_state().weights(), b[0].final_state().weights());
            assert!(d < 2.0 * 0.02, "{name}: {d}");
        }
    }

    #[test]
    fn branch_bundle_is_deterministic() {
        let (env, p) = preset("triangle");
        let s = Strategy::BranchSample { count: 4, seed: 9 };
        let a = integrate_perturbed_di(&env, &p, &dist(&[0.4, 0.3, 0.3]), 2.0, 0.05, 0.02, &s).unwrap();
        let b = integrate_perturbed_di(&env, &p, &dist(&[0.4, 0.3, 0.3]), 2.0, 0.05, 0.02, &s).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
    }

    #[test]
    fn stencil_is_unit_and_tangent() {
        let d = stencil_directions::<f64>(4);
        assert_eq!(d.len(), 2 * 4 + 4 * 3);
        for v in d {
            assert!(v.iter().sum::<f64>().abs() < 1e-15);
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_round_trip() {
        let (env, p) = preset("triangle");
        let path = &integrate_di(&env, &p, &dist(&[0.5, 0.3, 0.2]), 2.0, 0.1, &Strategy::Filippov).unwrap()[0];
        let mut buf = Vec::new();
        write_path_csv(env.actions(), path, &mut buf).unwrap();
        let back: DIPath<f64> = read_path_csv(3, &path.strategy, buf.as_slice()).unwrap();
        assert_eq!(back.times, path.times);
        assert_eq!(back.states, path.states);
        assert_eq!(back.event_flags, path.event_flags);
        assert_eq!(back.selections, path.selections);
    }

    #[test]
    fn invalid_arguments() {
        let (env, p) = preset("negative-reinforcement");
        let s = dist(&[0.5, 0.5]);
        assert!(integrate_di(&env, &p, &s, 1.0, 0.0, &Strategy::Filippov).is_err());
        assert!(integrate_di(&env, &p, &s, 0.0, 0.1, &Strategy::Filippov).is_err());
        assert!(integrate_perturbed_di(&env, &p, &s, 1.0, 0.1, -1.0, &Strategy::Filippov).is_err());
    }
}
