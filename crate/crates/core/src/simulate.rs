//! The discrete-time learner: belief, policy, action, consequence, update.
//!
//! Action frequencies are kept as integer counts, so `sigma_t` is always the
//! exact empirical frequency (to one rounding) and the recursive form
//! `sigma_{t+1} = sigma_t + (1(x_{t+1}) - sigma_t) / (t + 1)` holds to the
//! same precision.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{init_belief, Belief};
use crate::config::{EnvironmentDoc, PolicyDoc};
use crate::env::{Consequence, ConsequenceModel, Environment};
use crate::error::{Error, Result};
use crate::inclusion::{integrate_di, Strategy};
use crate::kld::{closest_point, weighted_kl_gap};
use crate::policy::{select_action, Policy, SelectionRule};
use crate::rng::Streams;
use crate::scalar::Scalar;
use crate::simplex::{euclid, ActionDist};

/// Steps `1..=ALWAYS_RECORDED` are recorded regardless of thinning.
pub const ALWAYS_RECORDED: u64 = 1000;

/// How ties in the policy's action set are broken during simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    Lexicographic,
    UniformRandom,
    /// Keep the previous action when it is still allowed.
    Sticky,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepRecord<T> {
    pub t: u64,
    pub action: usize,
    pub consequence: Consequence<T>,
    pub sigma: Vec<T>,
    /// Posterior-weighted divergence gap at `(sigma_t, mu_t)`.
    pub kl_gap: T,
    /// Refined closest model at `sigma_t`, when unique.
    pub theta_hat: Option<Vec<T>>,
    pub belief_mean: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Trajectory<T> {
    pub actions: Vec<String>,
    pub steps: Vec<StepRecord<T>>,
    pub seed: u64,
    /// Hex SHA-256 of the environment, policy and run settings.
    pub config_hash: String,
    pub horizon: u64,
    pub record_every: u64,
    /// Steps at which the selection was randomized among several actions.
    pub tie_events: u64,
    /// Sum over tie events of `1(x_t) - E[1(x_t) | mu_t]`, per action.
    pub innovation_sum: Vec<f64>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_sigma(&self) -> Option<&[T]> {
        self.steps.last().map(|s| s.sigma.as_slice())
    }

    pub fn final_step(&self) -> Option<&StepRecord<T>> {
        self.steps.last()
    }
}

/// Digest identifying a simulation setup (the seed is kept separately).
pub fn config_hash<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    horizon: u64,
    tie_rule: TieRule,
    record_every: u64,
) -> String {
    let doc = serde_json::json!({
        "environment": EnvironmentDoc::from_environment(env),
        "policy": PolicyDoc::from_spec(env, policy.spec()),
        "horizon": horizon,
        "tie_rule": tie_rule,
        "record_every": record_every,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

/// Runs the learner for `horizon` periods.
pub fn run_learning<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    horizon: u64,
    seed: u64,
    tie_rule: TieRule,
    record_every: u64,
) -> Result<Trajectory<T>> {
    if horizon == 0 || record_every == 0 {
        return Err(Error::InvalidArgument("horizon and record_every must be positive".into()));
    }
    let nx = env.n_actions();
    let mut streams = Streams::new(seed);
    let mut belief = init_belief(env.models());
    let mut counts = vec![0u64; nx];
    let mut prev: Option<usize> = None;
    let mut steps = Vec::new();
    let mut tie_events = 0;
    let mut innovation_sum = vec![0.0; nx];

    for t in 1..=horizon {
        let set = policy.actions(env, &belief)?;
        let rule = match tie_rule {
            TieRule::Lexicographic => SelectionRule::Lexicographic,
            TieRule::UniformRandom => SelectionRule::UniformRandom,
            TieRule::Sticky => SelectionRule::StickyPrevious(prev),
        };
        let x = select_action(set, rule, &mut streams.ties)?;
        if tie_rule == TieRule::UniformRandom && set.len() > 1 {
            tie_events += 1;
            let share = 1.0 / set.len() as f64;
            for a in set.iter() {
                innovation_sum[a] += if a == x { 1.0 - share } else { -share };
            }
        }
        let y = env.sample_consequence(x, &mut streams.consequences)?;
        belief.update(env, x, &y)?;
        counts[x] += 1;
        prev = Some(x);

        if t <= ALWAYS_RECORDED || t % record_every == 0 || t == horizon {
            steps.push(record(env, &belief, &counts, t, x, y)?);
        }
    }
    Ok(Trajectory {
        actions: env.actions().to_vec(),
        steps,
        seed,
        config_hash: config_hash(env, policy, horizon, tie_rule, record_every),
        horizon,
        record_every,
        tie_events,
        innovation_sum,
    })
}

fn frequencies<T: Scalar>(counts: &[u64], t: u64) -> Vec<T> {
    let tt = T::lit(t as f64);
    counts.iter().map(|&c| T::lit(c as f64) / tt).collect()
}

fn record<T: Scalar>(
    env: &Environment<T>,
    belief: &Belief<T>,
    counts: &[u64],
    t: u64,
    action: usize,
    consequence: Consequence<T>,
) -> Result<StepRecord<T>> {
    let sigma = ActionDist::from_raw(frequencies(counts, t));
    Ok(StepRecord {
        t,
        action,
        consequence,
        kl_gap: weighted_kl_gap(env, &sigma, belief)?,
        theta_hat: closest_point(env, &sigma).ok(),
        belief_mean: belief.mean(env),
        sigma: sigma.into_weights(),
    })
}

/// Empirical frequency of a list of action labels.
pub fn action_frequency<T: Scalar>(actions: &[&str], env: &Environment<T>) -> Result<ActionDist<T>> {
    if actions.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut counts = vec![0u64; env.n_actions()];
    for a in actions {
        counts[env.action_index(a)?] += 1;
    }
    Ok(ActionDist::from_raw(frequencies(&counts, actions.len() as u64)))
}

/// Piecewise-linear interpolation of recorded frequencies against
/// harmonic time `tau_t = 1 + 1/2 + ... + 1/t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Interpolation<T> {
    pub tau_breaks: Vec<T>,
    pub values: Vec<Vec<T>>,
}

/// `1 + 1/2 + ... + 1/t`.
pub fn harmonic(t: u64) -> f64 {
    (1..=t).map(|i| 1.0 / i as f64).sum()
}

pub fn interpolate<T: Scalar>(trajectory: &Trajectory<T>) -> Result<Interpolation<T>> {
    let steps = &trajectory.steps;
    if steps.len() < 2 {
        return Err(Error::TooShort(steps.len()));
    }
    let mut tau = 0.0;
    let mut last = 0u64;
    let mut tau_breaks = Vec::with_capacity(steps.len());
    for s in steps {
        for i in last + 1..=s.t {
            tau += 1.0 / i as f64;
        }
        last = s.t;
        tau_breaks.push(T::lit(tau));
    }
    Ok(Interpolation { tau_breaks, values: steps.iter().map(|s| s.sigma.clone()).collect() })
}

impl<T: Scalar> Interpolation<T> {
    /// Covered interval of harmonic time.
    pub fn span(&self) -> (T, T) {
        (self.tau_breaks[0], *self.tau_breaks.last().expect("nonempty"))
    }

    /// Value at harmonic time `tau`, or `None` outside the covered span.
    pub fn eval(&self, tau: T) -> Option<Vec<T>> {
        let (lo, hi) = self.span();
        if tau < lo || tau > hi {
            return None;
        }
        let k = self.tau_breaks.partition_point(|&b| b <= tau);
        if k == 0 {
            return Some(self.values[0].clone());
        }
        let k = k - 1;
        if self.tau_breaks[k] == tau || k + 1 == self.tau_breaks.len() {
            return Some(self.values[k].clone());
        }
        let (a, b) = (self.tau_breaks[k], self.tau_breaks[k + 1]);
        let s = (tau - a) / (b - a);
        Some(
            self.values[k]
                .iter()
                .zip(&self.values[k + 1])
                .map(|(&u, &v)| u + s * (v - u))
                .collect(),
        )
    }
}

/// Integrator settings used to shadow a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowSettings<T> {
    pub step: T,
    pub strategy: Strategy,
}

/// `min` over integrated branches of `sup_{s in [0, horizon]} |w(t_start + s) - sigma(s)|`,
/// with the branches started from `w(t_start)`.
pub fn apt_distance<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    interpolation: &Interpolation<T>,
    t_start: T,
    horizon: T,
    settings: &ShadowSettings<T>,
) -> Result<T> {
    let (lo, hi) = interpolation.span();
    if t_start < lo || t_start + horizon > hi || horizon < T::zero() {
        return Err(Error::Coverage { lo: lo.f64(), hi: hi.f64(), start: t_start.f64(), end: (t_start + horizon).f64() });
    }
    if horizon == T::zero() {
        return Ok(T::zero());
    }
    let w0 = interpolation.eval(t_start).expect("covered");
    let start = ActionDist::project(&w0);
    let paths = integrate_di(env, policy, &start, horizon, settings.step, &settings.strategy)?;
    let mut best = T::infinity();
    for path in &paths {
        let mut worst = T::zero();
        for (time, state) in path.times.iter().zip(&path.states) {
            let w = interpolation.eval(t_start + *time).expect("covered");
            worst = worst.max(euclid(&w, state.weights()));
            if worst >= best {
                break;
            }
        }
        best = best.min(worst);
    }
    Ok(best)
}

fn join<T: Scalar>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split<T: Scalar>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| p.parse::<T>().map_err(|_| Error::Schema(format!("bad number `{p}`"))))
        .collect()
}

/// Writes recorded steps as CSV with columns `t, action, consequence,
/// sigma_<action>..., kl_gap, theta_hat, belief_mean`.
pub fn write_trajectory_csv<T: Scalar, W: Write>(env: &Environment<T>, trajectory: &Trajectory<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "action".into(), "consequence".into()];
    header.extend(env.actions().iter().map(|a| format!("sigma_{a}")));
    header.extend(["kl_gap".into(), "theta_hat".into(), "belief_mean".into()]);
    w.write_record(&header)?;
    for s in &trajectory.steps {
        let consequence = match (&s.consequence, env.truth()) {
            (Consequence::Label(k), ConsequenceModel::Discrete { support, .. }) => support[*k].clone(),
            (Consequence::Vector(v), _) => join(v),
            (Consequence::Label(k), _) => k.to_string(),
        };
        let mut row = vec![s.t.to_string(), env.actions()[s.action].clone(), consequence];
        row.extend(s.sigma.iter().map(|v| v.to_string()));
        row.push(s.kl_gap.to_string());
        row.push(s.theta_hat.as_deref().map(join).unwrap_or_default());
        row.push(join(&s.belief_mean));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trajectory CSV back into step records.
pub fn read_trajectory_csv<T: Scalar, R: Read>(env: &Environment<T>, input: R) -> Result<Vec<StepRecord<T>>> {
    let mut r = csv::Reader::from_reader(input);
    let nx = env.n_actions();
    let expected = 3 + nx + 3;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        if row.len() != expected {
            return Err(Error::Schema(format!("expected {expected} columns, found {}", row.len())));
        }
        let num = |k: usize| row[k].parse::<T>().map_err(|_| Error::Schema(format!("bad number `{}`", &row[k])));
        let consequence = match env.truth() {
            ConsequenceModel::Discrete { support, .. } => Consequence::Label(
                support
                    .iter()
                    .position(|l| l == &row[2])
                    .ok_or_else(|| Error::Schema(format!("unknown consequence `{}`", &row[2])))?,
            ),
            ConsequenceModel::GaussianIso { .. } => Consequence::Vector(split(&row[2])?),
        };
        let theta = &row[3 + nx + 1];
        out.push(StepRecord {
            t: row[0].parse().map_err(|_| Error::Schema(format!("bad step `{}`", &row[0])))?,
            action: env.action_index(&row[1])?,
            consequence,
            sigma: (0..nx).map(|k| num(3 + k)).collect::<Result<_>>()?,
            kl_gap: num(3 + nx)?,
            theta_hat: if theta.is_empty() { None } else { Some(split(theta)?) },
            belief_mean: split(&row[3 + nx + 2])?,
        });
    }
    Ok(out)
}
