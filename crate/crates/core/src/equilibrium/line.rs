//! One-dimensional model spaces: the correspondence `B(theta) = theta(Delta F(delta_theta))`,
//! its fixed points, the staircase form, and attracting/repelling models.

use serde::{Deserialize, Serialize};

use crate::env::{Environment, ModelDomain};
use crate::error::{Error, Result};
use crate::kld::{pure_action_models, ModelPoint};
use crate::policy::{Policy, PolicySpec};
use crate::scalar::Scalar;
use crate::simplex::ActionSet;

/// Samples per unit length when locating switches of a non-table policy.
const SCAN_SAMPLES: usize = 4000;
const SWITCH_BISECTIONS: usize = 80;
/// Two parameters closer than this are the same point.
const SAME_POINT: f64 = 1e-12;
/// Gap left on each side of the tested model when reading the two windows.
const WINDOW_GAP: f64 = 1e-8;

/// Piecewise-constant description of `theta -> F(delta_theta)` on the model interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepStructure<T> {
    /// Domain ends and every switching point, increasing.
    pub breakpoints: Vec<T>,
    /// Action set at each breakpoint.
    pub point_sets: Vec<ActionSet>,
    /// Action set on each open interval between consecutive breakpoints.
    pub interval_sets: Vec<ActionSet>,
    /// `theta(delta_x)` for every action.
    pub pure_models: Vec<T>,
}

impl<T: Scalar> StepStructure<T> {
    /// Hull `[min, max]` of `theta(delta_x)` over `set`.
    pub fn band(&self, set: ActionSet) -> (T, T) {
        set.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), x| {
            (lo.min(self.pure_models[x]), hi.max(self.pure_models[x]))
        })
    }

    /// `F(delta_theta)`.
    pub fn set_at(&self, theta: T) -> ActionSet {
        let same = T::lit(SAME_POINT);
        if let Some(i) = self.breakpoints.iter().position(|&b| (b - theta).abs() <= same) {
            return self.point_sets[i];
        }
        let k = self.breakpoints.partition_point(|&b| b < theta);
        self.interval_sets[k.clamp(1, self.interval_sets.len()) - 1]
    }

    /// Every action set taken on the open window `(a, b)`.
    fn sets_on(&self, a: T, b: T) -> ActionSet {
        let mut out = ActionSet::EMPTY;
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            if w[0] < b && w[1] > a {
                out = out.union(self.interval_sets[i]);
            }
        }
        for (&p, &s) in self.breakpoints.iter().zip(&self.point_sets) {
            if p > a && p < b {
                out = out.union(s);
            }
        }
        out
    }

    /// Fixed points of `B`, increasing. Where `B` is a band on an interval the
    /// ends of its intersection with the diagonal are listed.
    pub fn fixed_points(&self) -> Vec<(T, Location)> {
        let same = T::lit(SAME_POINT);
        let mut out = Vec::new();
        for (i, (&a, &s)) in self.breakpoints.iter().zip(&self.point_sets).enumerate() {
            let (lo, hi) = self.band(s);
            if a >= lo - same && a <= hi + same {
                out.push((a, Location::Breakpoint(i)));
            }
        }
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            let (lo, hi) = self.band(self.interval_sets[i]);
            let (from, to) = (lo.max(w[0]), hi.min(w[1]));
            if from <= to {
                for t in [from, to] {
                    if t > w[0] + same && t < w[1] - same && !out.iter().any(|(u, _)| (*u - t).abs() <= same) {
                        out.push((t, Location::Interval(i)));
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        out
    }
}

/// Where a fixed point of `B` sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Breakpoint(usize),
    Interval(usize),
}

fn domain_ends<T: Scalar>(env: &Environment<T>) -> (T, T) {
    let grid = env.models();
    match &grid.domain {
        ModelDomain::Box { lo, hi } => (lo[0], hi[0]),
        _ => grid
            .points
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(a, b), p| (a.min(p[0]), b.max(p[0]))),
    }
}

fn identified<T: Scalar>(env: &Environment<T>) -> Result<Vec<T>> {
    pure_action_models(env).map_err(|e| match e {
        Error::NonUniqueMinimizer { .. } => Error::IdentifiabilityFailure(e.to_string()),
        other => other,
    })
}

/// Builds the step structure of `theta -> F(delta_theta)` on a one-dimensional model interval.
///
/// Interval tables are read off directly. Other policies are sampled densely
/// and each switch is located by bisection; the set at a switch is the
/// policy's own value there, enlarged by both neighbouring sets.
pub fn step_structure<T: Scalar>(env: &Environment<T>, policy: &Policy<T>) -> Result<StepStructure<T>> {
    if env.models().dim() != 1 {
        return Err(Error::UnsupportedSize("model space is not one-dimensional".into()));
    }
    let pure_models = identified(env)?;
    let (lo, hi) = domain_ends(env);
    let at = |t: T| policy.actions_at_point(env, &ModelPoint::Param(vec![t]));
    let mut breakpoints = vec![lo];
    let mut point_sets = vec![at(lo)?];
    let mut interval_sets = Vec::new();
    match policy.spec() {
        PolicySpec::Table1D(table) => {
            let mut prev = lo;
            for &b in table.breakpoints().iter().filter(|&&b| b > lo && b < hi) {
                interval_sets.push(table.at((prev + b) * T::lit(0.5)));
                breakpoints.push(b);
                point_sets.push(table.at(b));
                prev = b;
            }
            interval_sets.push(table.at((prev + hi) * T::lit(0.5)));
        }
        _ => {
            let n = SCAN_SAMPLES;
            let mut samples = Vec::with_capacity(n);
            for k in 1..n {
                let t = lo + (hi - lo) * T::count(k) / T::count(n);
                samples.push((t, at(t)?));
            }
            // A lone sample landing on a switch carries both neighbours' actions.
            let lone = |j: usize| {
                j > 0
                    && j + 1 < samples.len()
                    && samples[j].1 != samples[j - 1].1
                    && samples[j].1 != samples[j + 1].1
                    && samples[j - 1].1.union(samples[j + 1].1).is_subset(samples[j].1)
            };
            let kept: Vec<(T, ActionSet)> =
                (0..samples.len()).filter(|&j| !lone(j)).map(|j| samples[j]).collect();
            let mut prev = kept[0];
            interval_sets.push(prev.1);
            for &cur in &kept[1..] {
                if cur.1 != prev.1 {
                    // Both edges of the band where neither neighbour's set holds.
                    let edge = |keep: ActionSet, from_left: bool| -> Result<T> {
                        let (mut a, mut b) = (prev.0, cur.0);
                        for _ in 0..SWITCH_BISECTIONS {
                            let m = (a + b) * T::lit(0.5);
                            if (at(m)? == keep) == from_left {
                                a = m;
                            } else {
                                b = m;
                            }
                        }
                        Ok((a + b) * T::lit(0.5))
                    };
                    let m = (edge(prev.1, true)? + edge(cur.1, false)?) * T::lit(0.5);
                    breakpoints.push(m);
                    point_sets.push(at(m)?.union(prev.1).union(cur.1));
                    interval_sets.push(cur.1);
                }
                prev = cur;
            }
        }
    }
    breakpoints.push(hi);
    point_sets.push(at(hi)?);
    Ok(StepStructure { breakpoints, point_sets, interval_sets, pure_models })
}

/// Equilibrium models: fixed points of `B`, increasing.
pub fn equilibrium_models<T: Scalar>(env: &Environment<T>, policy: &Policy<T>) -> Result<Vec<T>> {
    Ok(step_structure(env, policy)?.fixed_points().into_iter().map(|(t, _)| t).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    AttractingModel,
    RepellingModel,
    Neither,
}

/// Classifies `theta_star` by the sign conditions on the windows
/// `(theta_star - eps, theta_star)` and `(theta_star, theta_star + eps)`.
pub fn classify_model<T: Scalar>(env: &Environment<T>, policy: &Policy<T>, theta_star: T, eps: T) -> Result<ModelClass> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let st = step_structure(env, policy)?;
    let (lo, hi) = (st.breakpoints[0], *st.breakpoints.last().expect("two ends"));
    let m = &st.pure_models;
    let gap = T::lit(WINDOW_GAP).min(eps * T::lit(0.5));
    let left = st.sets_on(theta_star - eps, theta_star - gap);
    let right = st.sets_on(theta_star + gap, theta_star + eps);
    let attracting = left.iter().all(|x| m[x] >= theta_star) && right.iter().all(|x| m[x] <= theta_star);
    if attracting {
        return Ok(ModelClass::AttractingModel);
    }
    let same = T::lit(SAME_POINT);
    let repelling = theta_star > lo
        && theta_star < hi
        && st.set_at(theta_star).iter().all(|x| (m[x] - theta_star).abs() > same)
        && left.iter().all(|x| m[x] <= theta_star - eps)
        && right.iter().all(|x| m[x] >= theta_star + eps);
    Ok(if repelling { ModelClass::RepellingModel } else { ModelClass::Neither })
}

/// The four forms a fixed point of a staircase can take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointCase {
    /// An end of a vertical segment.
    SegmentEnd,
    /// Strictly inside a vertical segment.
    SegmentInterior,
    /// Strictly inside a horizontal segment.
    Level,
    /// A domain end where `B` is flat at that end.
    DomainEnd,
}

impl FixedPointCase {
    pub fn number(self) -> u8 {
        match self {
            FixedPointCase::SegmentEnd => 1,
            FixedPointCase::SegmentInterior => 2,
            FixedPointCase::Level => 3,
            FixedPointCase::DomainEnd => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Level<T> {
    pub action: usize,
    pub theta: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StaircasePoint<T> {
    pub theta: T,
    pub case: FixedPointCase,
    /// `F(delta_theta)` at the fixed point.
    pub actions: ActionSet,
}

/// `B` in staircase form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Staircase<T> {
    /// `a_0 < a_1 < ... < a_K`, the domain ends included.
    pub breakpoints: Vec<T>,
    /// Vertical segment `[min, max]` of `B(a_i)`.
    pub segments: Vec<(T, T)>,
    /// Value of `B` on `(a_i, a_{i+1})`.
    pub levels: Vec<Level<T>>,
    pub fixed_points: Vec<StaircasePoint<T>>,
}

/// Staircase form of `B` for a monotone policy.
///
/// Requires `x -> theta(delta_x)` to increase with the action index, a single
/// action on every open interval, and `max F(delta_theta) <= min F(delta_theta')`
/// whenever `theta < theta'`.
pub fn build_staircase<T: Scalar>(env: &Environment<T>, policy: &Policy<T>) -> Result<Staircase<T>> {
    let st = step_structure(env, policy)?;
    let m = &st.pure_models;
    if let Some(w) = m.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::MonotonicityViolation(format!(
            "theta(delta_x) does not increase from action {} to {}",
            env.actions()[w],
            env.actions()[w + 1]
        )));
    }
    let mut sequence = vec![st.point_sets[0]];
    for (i, &s) in st.interval_sets.iter().enumerate() {
        if s.len() != 1 {
            return Err(Error::MonotonicityViolation(format!("several actions on interval {i}")));
        }
        sequence.push(s);
        sequence.push(st.point_sets[i + 1]);
    }
    for w in sequence.windows(2) {
        if w[0].last() > w[1].first() {
            return Err(Error::MonotonicityViolation(format!(
                "{} precedes {}",
                w[0].label(env.actions()),
                w[1].label(env.actions())
            )));
        }
    }
    let levels: Vec<Level<T>> = st
        .interval_sets
        .iter()
        .map(|s| {
            let x = s.first().expect("single action");
            Level { action: x, theta: m[x] }
        })
        .collect();
    for (i, l) in levels.iter().enumerate() {
        if st.point_sets[i].last() != Some(l.action) || st.point_sets[i + 1].first() != Some(l.action) {
            return Err(Error::MonotonicityViolation(format!("sets around interval {i} are not adjacent")));
        }
    }
    let segments: Vec<(T, T)> = st.point_sets.iter().map(|&s| st.band(s)).collect();
    let k = st.breakpoints.len() - 1;
    let same = T::lit(SAME_POINT);
    let fixed_points = st
        .fixed_points()
        .into_iter()
        .map(|(theta, loc)| {
            let case = match loc {
                Location::Interval(_) => FixedPointCase::Level,
                Location::Breakpoint(i) => {
                    let (lo, hi) = segments[i];
                    let flat_end = (i == 0 && (levels[0].theta - theta).abs() <= same)
                        || (i == k && (levels[k - 1].theta - theta).abs() <= same);
                    if flat_end {
                        FixedPointCase::DomainEnd
                    } else if (theta - lo).abs() <= same || (theta - hi).abs() <= same {
                        FixedPointCase::SegmentEnd
                    } else {
                        FixedPointCase::SegmentInterior
                    }
                }
            };
            StaircasePoint { theta, case, actions: st.set_at(theta) }
        })
        .collect();
    Ok(Staircase { breakpoints: st.breakpoints, segments, levels, fixed_points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{EnvironmentDoc, PolicyDoc};
    use crate::presets;

    fn setup(name: &str) -> (Environment<f64>, Policy<f64>) {
        let env = presets::environment(name).unwrap();
        let pol = presets::policy(&env, name).unwrap();
        (env, pol)
    }

    fn with_table(name: &str, means: &[f64], table: PolicyDoc) -> (Environment<f64>, Policy<f64>) {
        let mut doc: EnvironmentDoc = presets::document(name).unwrap();
        if let crate::config::TruthDoc::GaussianIso { means: m, .. } = &mut doc.truth {
            *m = means.iter().map(|v| vec![*v]).collect();
        }
        doc.actions = (0..means.len()).map(|k| format!("a{k}")).collect();
        doc.payoff = crate::config::PayoffDoc {
            table: None,
            affine: Some(crate::config::AffineDoc { intercept: vec![0.0; means.len()], slope: vec![vec![0.0]; means.len()] }),
        };
        doc.policy = Some(table);
        let env: Environment<f64> = doc.build().unwrap();
        let pol = Policy::new(&env, doc.policy_spec(&env).unwrap().unwrap()).unwrap();
        (env, pol)
    }

    fn labels(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect()
    }

    #[test]
    fn one_dimensional_models_and_classes() {
        let (env, pol) = setup("one-dimensional");
        let models = equilibrium_models(&env, &pol).unwrap();
        assert_eq!(models.len(), 3);
        for (m, want) in models.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((m - want).abs() < 1e-9);
        }
        let class = |t: f64| classify_model(&env, &pol, t, 0.01).unwrap();
        assert_eq!(class(0.0), ModelClass::AttractingModel);
        assert_eq!(class(2.0 / 3.0), ModelClass::AttractingModel);
        assert_eq!(class(1.0 / 3.0), ModelClass::RepellingModel);
        assert_eq!(class(0.5), ModelClass::Neither);
        let st = step_structure(&env, &pol).unwrap();
        assert_eq!(st.breakpoints.len(), 4);
        assert!((st.breakpoints[1] - 1.0 / 3.0).abs() < 1e-15 && (st.breakpoints[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(build_staircase(&env, &pol), Err(Error::MonotonicityViolation(_))));
    }

    #[test]
    fn positively_reinforcing_staircase() {
        let (env, pol) = setup("positively-reinforcing");
        let s = build_staircase(&env, &pol).unwrap();
        let got: Vec<(f64, u8)> = s.fixed_points.iter().map(|p| (p.theta, p.case.number())).collect();
        assert_eq!(got.len(), 3, "{got:?}");
        assert!((got[0].0 - 0.3).abs() < 1e-12 && got[0].1 == 3);
        assert!((got[1].0 - 0.7).abs() < 1e-12 && got[1].1 == 2);
        assert!((got[2].0 - 0.9).abs() < 1e-12 && got[2].1 == 3);
        for (i, w) in s.segments.windows(2).enumerate() {
            assert_eq!(w[0].1, s.levels[i].theta);
            assert_eq!(w[1].0, s.levels[i].theta);
        }
        for p in &s.fixed_points {
            let want = if p.case.number() == 2 { ModelClass::RepellingModel } else { ModelClass::AttractingModel };
            assert_eq!(classify_model(&env, &pol, p.theta, 0.01).unwrap(), want);
        }
    }

    #[test]
    fn single_action_policy() {
        let table = PolicyDoc::Table1d { breakpoints: vec![], interval_actions: labels(&[&["a0"]]), breakpoint_actions: vec![] };
        let (env, pol) = with_table("one-dimensional", &[0.4], table);
        let s = build_staircase(&env, &pol).unwrap();
        assert_eq!(s.levels.len(), 1);
        assert_eq!(s.fixed_points.len(), 1);
        assert!((s.fixed_points[0].theta - 0.4).abs() < 1e-12);
        assert_eq!(equilibrium_models(&env, &pol).unwrap().len(), 1);
    }

    #[test]
    fn pure_equilibrium_at_threshold_is_neither() {
        let table = PolicyDoc::Table1d {
            breakpoints: vec![0.5],
            interval_actions: labels(&[&["a0"], &["a2"]]),
            breakpoint_actions: labels(&[&["a0", "a1", "a2"]]),
        };
        let (env, pol) = with_table("one-dimensional", &[0.0, 0.5, 1.0], table);
        assert_eq!(classify_model(&env, &pol, 0.5, 0.01).unwrap(), ModelClass::Neither);
    }

    #[test]
    fn myopic_switches_located() {
        let (env, _) = setup("negative-reinforcement");
        let pol = Policy::new(&env, PolicySpec::myopic()).unwrap();
        let st = step_structure(&env, &pol).unwrap();
        assert_eq!(st.breakpoints.len(), 3);
        assert!((st.breakpoints[1] - 0.5).abs() < 1e-9);
        assert_eq!(st.point_sets[1], ActionSet::full(2));
        let models = equilibrium_models(&env, &pol).unwrap();
        assert_eq!(models.len(), 1);
        assert!((models[0] - 0.5).abs() < 1e-9);
        assert_eq!(classify_model(&env, &pol, 0.5, 0.01).unwrap(), ModelClass::AttractingModel);
    }
}
