//! The objective environment and the agent's parametric family.
//!
//! An [`EnvironmentSpec`] is plain data and may be invalid; [`Environment::new`]
//! validates it and precomputes the per-model tables the learner uses on every
//! step (log-likelihoods, divergences against pure actions, expected payoffs).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomState;
use crate::scalar::Scalar;
use crate::simplex::MAX_ACTIONS;

/// An observed consequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Consequence<T> {
    /// Index into the discrete support.
    Label(usize),
    Vector(Vec<T>),
}

/// The true kernel `Q(. | x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ConsequenceModel<T> {
    Discrete { support: Vec<String>, pmf: Vec<Vec<T>> },
    GaussianIso { dim: usize, means: Vec<Vec<T>> },
}

/// How a grid point `theta` maps to a consequence distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Two-label support; `theta` is the probability of the second label under every action.
    BernoulliCommon,
    /// `N(theta, I)` under every action.
    GaussianCommonMean,
    /// Explicit `table[model][action][label]`.
    DiscreteTable,
}

/// The continuum the grid discretizes, if any.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelDomain<T> {
    Box { lo: Vec<T>, hi: Vec<T> },
    /// The probability simplex in the parameter coordinates.
    Simplex,
    /// The grid is the whole model set.
    Finite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrid<T> {
    pub family: FamilyKind,
    pub points: Vec<Vec<T>>,
    /// Natural-log prior weights, not necessarily normalized.
    pub log_prior: Vec<T>,
    pub table: Option<Vec<Vec<Vec<T>>>>,
    pub domain: ModelDomain<T>,
}

impl<T: Scalar> ModelGrid<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// True when the grid samples a continuum, so sub-grid refinement is meaningful.
    pub fn is_continuum(&self) -> bool {
        !matches!(self.domain, ModelDomain::Finite)
    }

    /// Evenly spaced 1-d grid with a uniform prior.
    pub fn interval(family: FamilyKind, lo: T, hi: T, n: usize) -> Self {
        let points = if n == 1 {
            vec![vec![lo]]
        } else {
            (0..n)
                .map(|i| vec![lo + (hi - lo) * T::count(i) / T::count(n - 1)])
                .collect()
        };
        Self {
            family,
            log_prior: vec![T::zero(); n],
            points,
            table: None,
            domain: ModelDomain::Box { lo: vec![lo], hi: vec![hi] },
        }
    }

    /// Barycentric lattice on the simplex with a uniform prior.
    pub fn simplex(family: FamilyKind, dim: usize, resolution: usize) -> Self {
        let points = crate::simplex::lattice_points(dim, resolution);
        Self {
            family,
            log_prior: vec![T::zero(); points.len()],
            points,
            table: None,
            domain: ModelDomain::Simplex,
        }
    }

    /// Projects a parameter onto the domain (identity for finite grids).
    pub fn project(&self, theta: &[T]) -> Vec<T> {
        match &self.domain {
            ModelDomain::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&t, (&l, &h))| t.max(l).min(h))
                .collect(),
            ModelDomain::Simplex => crate::simplex::project_to_simplex(theta),
            ModelDomain::Finite => theta.to_vec(),
        }
    }

    /// Whether `theta` lies in the domain (box or simplex, with a small slack).
    pub fn contains(&self, theta: &[T]) -> bool {
        if theta.len() != self.dim() {
            return false;
        }
        let slack = T::lit(1e-12);
        match &self.domain {
            ModelDomain::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&t, (&l, &h))| t >= l - slack && t <= h + slack),
            ModelDomain::Simplex => {
                theta.iter().all(|&t| t >= -slack)
                    && (theta.iter().copied().sum::<T>() - T::one()).abs() <= T::sum_tol()
            }
            ModelDomain::Finite => self.points.iter().any(|p| p.as_slice() == theta),
        }
    }
}

/// Payoff `pi(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Payoff<T> {
    /// `table[action][label]` for discrete consequences.
    Table(Vec<Vec<T>>),
    /// `intercept[x] + slope[x] . y` for Gaussian consequences.
    Affine { intercept: Vec<T>, slope: Vec<Vec<T>> },
}

/// Unvalidated environment data.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSpec<T> {
    pub actions: Vec<String>,
    pub truth: ConsequenceModel<T>,
    pub payoff: Payoff<T>,
    pub models: ModelGrid<T>,
}

/// One row of a validation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, failure: Option<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed: failure.is_none(),
            detail: failure.unwrap_or_else(|| "ok".into()),
        });
    }
}

/// Runs every checkable condition and reports each one; never fails.
pub fn validate_environment<T: Scalar>(spec: &EnvironmentSpec<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let nx = spec.actions.len();
    let g = &spec.models;

    report.push("actions", check_actions(&spec.actions));
    let truth_ok = check_truth(&spec.truth, nx);
    let truth_valid = truth_ok.is_none();
    report.push(
        match spec.truth {
            ConsequenceModel::Discrete { .. } => "pmf_normalized",
            ConsequenceModel::GaussianIso { .. } => "gaussian_dimensions",
        },
        truth_ok,
    );
    report.push("grid_nonempty", (g.points.is_empty()).then(|| "model grid is empty".to_string()));
    report.push("prior_full_support", check_prior(g));
    report.push("family_matches_truth", check_family(spec));
    report.push(
        "support_containment",
        if truth_valid { check_support(spec) } else { Some("truth invalid".into()) },
    );
    report.push("payoff_dimensions", check_payoff(spec));
    report.push(
        "payoff_integrable",
        check_payoff_finite(&spec.payoff),
    );
    report.push("grid_in_domain", check_domain(g));
    report
}

fn check_actions(actions: &[String]) -> Option<String> {
    if actions.is_empty() {
        return Some("no actions".into());
    }
    if actions.len() > MAX_ACTIONS {
        return Some(format!("more than {MAX_ACTIONS} actions"));
    }
    for (i, a) in actions.iter().enumerate() {
        if actions[..i].contains(a) {
            return Some(format!("duplicate action label `{a}`"));
        }
    }
    None
}

fn check_row<T: Scalar>(row: &[T], what: &str) -> Option<String> {
    if row.iter().any(|p| !p.is_finite() || *p < T::zero()) {
        return Some(format!("{what} has a negative or non-finite entry"));
    }
    let s: T = row.iter().copied().sum();
    if (s - T::one()).abs() > T::sum_tol() {
        return Some(format!("{what} sums to {s}"));
    }
    None
}

fn check_truth<T: Scalar>(truth: &ConsequenceModel<T>, nx: usize) -> Option<String> {
    match truth {
        ConsequenceModel::Discrete { support, pmf } => {
            if support.is_empty() {
                return Some("empty support".into());
            }
            if pmf.len() != nx {
                return Some(format!("{} pmf rows for {nx} actions", pmf.len()));
            }
            for (x, row) in pmf.iter().enumerate() {
                if row.len() != support.len() {
                    return Some(format!("pmf row {x} has {} entries for {} labels", row.len(), support.len()));
                }
                if let Some(e) = check_row(row, &format!("pmf row {x}")) {
                    return Some(e);
                }
            }
            None
        }
        ConsequenceModel::GaussianIso { dim, means } => {
            if *dim == 0 {
                return Some("dimension must be positive".into());
            }
            if means.len() != nx {
                return Some(format!("{} means for {nx} actions", means.len()));
            }
            means
                .iter()
                .enumerate()
                .find(|(_, m)| m.len() != *dim || m.iter().any(|v| !v.is_finite()))
                .map(|(x, _)| format!("mean of action {x} is not a finite vector of length {dim}"))
        }
    }
}

fn check_prior<T: Scalar>(g: &ModelGrid<T>) -> Option<String> {
    if g.log_prior.len() != g.points.len() {
        return Some(format!("{} prior weights for {} grid points", g.log_prior.len(), g.points.len()));
    }
    g.log_prior
        .iter()
        .position(|w| !w.is_finite())
        .map(|i| format!("grid point {i} has zero or invalid prior weight"))
}

fn check_family<T: Scalar>(spec: &EnvironmentSpec<T>) -> Option<String> {
    let g = &spec.models;
    let nx = spec.actions.len();
    if g.points.iter().any(|p| p.len() != g.dim() || p.iter().any(|v| !v.is_finite())) {
        return Some("grid points have inconsistent dimensions".into());
    }
    match (g.family, &spec.truth) {
        (FamilyKind::BernoulliCommon, ConsequenceModel::Discrete { support, .. }) => {
            if support.len() != 2 {
                return Some("bernoulli family needs a two-label support".into());
            }
            if g.dim() != 1 {
                return Some("bernoulli parameters are scalars".into());
            }
            g.points
                .iter()
                .find(|p| p[0] < T::zero() || p[0] > T::one())
                .map(|p| format!("bernoulli parameter {} outside [0,1]", p[0]))
        }
        (FamilyKind::GaussianCommonMean, ConsequenceModel::GaussianIso { dim, .. }) => {
            (g.dim() != *dim).then(|| format!("parameter dimension {} differs from consequence dimension {dim}", g.dim()))
        }
        (FamilyKind::DiscreteTable, ConsequenceModel::Discrete { support, .. }) => {
            let Some(table) = &g.table else {
                return Some("discrete table family needs a table".into());
            };
            if table.len() != g.points.len() {
                return Some(format!("table has {} models for {} grid points", table.len(), g.points.len()));
            }
            for (i, per_model) in table.iter().enumerate() {
                if per_model.len() != nx {
                    return Some(format!("table model {i} has {} actions", per_model.len()));
                }
                for (x, row) in per_model.iter().enumerate() {
                    if row.len() != support.len() {
                        return Some(format!("table model {i} action {x} has wrong support size"));
                    }
                    if let Some(e) = check_row(row, &format!("table model {i} action {x}")) {
                        return Some(e);
                    }
                }
            }
            None
        }
        (family, _) => Some(format!("family {family:?} does not match the truth's consequence space")),
    }
}

fn check_support<T: Scalar>(spec: &EnvironmentSpec<T>) -> Option<String> {
    let (FamilyKind::DiscreteTable, ConsequenceModel::Discrete { pmf, .. }, Some(table)) =
        (spec.models.family, &spec.truth, &spec.models.table)
    else {
        return None;
    };
    for (i, per_model) in table.iter().enumerate() {
        for (x, row) in per_model.iter().enumerate() {
            for (y, &q) in row.iter().enumerate() {
                if pmf.get(x).and_then(|r| r.get(y)).is_some_and(|&p| p > T::zero()) && q <= T::zero() {
                    return Some(format!("model {i} gives zero probability to label {y} under action {x}"));
                }
            }
        }
    }
    None
}

fn check_payoff<T: Scalar>(spec: &EnvironmentSpec<T>) -> Option<String> {
    let nx = spec.actions.len();
    match (&spec.payoff, &spec.truth) {
        (Payoff::Table(t), ConsequenceModel::Discrete { support, .. }) => {
            if t.len() != nx || t.iter().any(|r| r.len() != support.len()) {
                Some(format!("payoff table must be {nx} x {}", support.len()))
            } else {
                None
            }
        }
        (Payoff::Affine { intercept, slope }, ConsequenceModel::GaussianIso { dim, .. }) => {
            if intercept.len() != nx || slope.len() != nx || slope.iter().any(|s| s.len() != *dim) {
                Some(format!("affine payoff must have {nx} intercepts and {nx} slopes of length {dim}"))
            } else {
                None
            }
        }
        (Payoff::Table(_), _) => Some("payoff tables need a discrete consequence model".into()),
        (Payoff::Affine { .. }, _) => Some("affine payoffs need a gaussian consequence model".into()),
    }
}

fn check_payoff_finite<T: Scalar>(payoff: &Payoff<T>) -> Option<String> {
    let finite = match payoff {
        Payoff::Table(t) => t.iter().flatten().all(|v| v.is_finite()),
        Payoff::Affine { intercept, slope } => {
            intercept.iter().chain(slope.iter().flatten()).all(|v| v.is_finite())
        }
    };
    (!finite).then(|| "payoff has non-finite entries".into())
}

fn check_domain<T: Scalar>(g: &ModelGrid<T>) -> Option<String> {
    if let ModelDomain::Box { lo, hi } = &g.domain {
        if lo.len() != g.dim() || hi.len() != g.dim() || lo.iter().zip(hi).any(|(l, h)| l > h) {
            return Some("box bounds do not match the parameter dimension".into());
        }
    }
    if matches!(g.domain, ModelDomain::Finite) {
        return None;
    }
    g.points
        .iter()
        .position(|p| !g.contains(p))
        .map(|i| format!("grid point {i} lies outside the domain"))
}

/// A validated environment with precomputed per-model tables.
#[derive(Clone, Debug)]
pub struct Environment<T> {
    spec: EnvironmentSpec<T>,
    n_labels: usize,
    /// `K(theta_i, delta_x)` at `[i * nx + x]`; may be infinite.
    kl_pure: Vec<T>,
    /// Expected payoff of `x` under model `i` at `[i * nx + x]`.
    payoff_model: Vec<T>,
    /// `ln q_i(y | x)` at `[(x * ny + y) * n_models + i]` for discrete families.
    loglik: Arc<[T]>,
    /// Maximum of each `loglik` row.
    loglik_row_max: Vec<T>,
    /// `ln q(y | x)` at `[x * ny + y]` for discrete truths.
    truth_loglik: Vec<T>,
    /// Half squared norms of Gaussian grid points.
    half_norm2: Vec<T>,
}

impl<T: Scalar> Environment<T> {
    /// Validates `spec`; the first failing check becomes a validation error.
    pub fn new(spec: EnvironmentSpec<T>) -> Result<Self> {
        let report = validate_environment(&spec);
        if let Some(c) = report.failures().next() {
            return Err(Error::validation(&c.name, c.detail.clone()));
        }
        let nx = spec.actions.len();
        let n = spec.models.len();
        let n_labels = match &spec.truth {
            ConsequenceModel::Discrete { support, .. } => support.len(),
            ConsequenceModel::GaussianIso { .. } => 0,
        };
        let mut env = Self {
            spec,
            n_labels,
            kl_pure: vec![T::zero(); n * nx],
            payoff_model: vec![T::zero(); n * nx],
            loglik: Arc::from(Vec::new()),
            loglik_row_max: Vec::new(),
            truth_loglik: Vec::new(),
            half_norm2: Vec::new(),
        };
        let e = &env;
        let (truth_loglik, loglik, half_norm2) = match &e.spec.truth {
            ConsequenceModel::Discrete { pmf, .. } => {
                let ny = n_labels;
                let mut loglik = vec![T::zero(); nx * ny * n];
                for x in 0..nx {
                    for y in 0..ny {
                        for i in 0..n {
                            loglik[(x * ny + y) * n + i] = e.model_pmf(i, x, y).ln();
                        }
                    }
                }
                (pmf.iter().flatten().map(|p| p.ln()).collect(), loglik, Vec::new())
            }
            ConsequenceModel::GaussianIso { .. } => {
                let half = e
                    .spec
                    .models
                    .points
                    .iter()
                    .map(|p| p.iter().map(|&v| v * v).sum::<T>() * T::lit(0.5))
                    .collect();
                (Vec::new(), Vec::new(), half)
            }
        };
        let mut kl_pure = vec![T::zero(); n * nx];
        let mut payoff_model = vec![T::zero(); n * nx];
        for i in 0..n {
            let theta = &e.spec.models.points[i];
            for x in 0..nx {
                kl_pure[i * nx + x] = match e.spec.models.family {
                    FamilyKind::DiscreteTable => e.kl_table(i, x),
                    _ => e.kl_param_pure(theta, x),
                };
                payoff_model[i * nx + x] = match e.spec.models.family {
                    FamilyKind::DiscreteTable => {
                        let row = &e.spec.models.table.as_ref().expect("validated")[i][x];
                        e.payoff_under_pmf(x, row)
                    }
                    _ => e.expected_payoff_param(theta, x),
                };
            }
        }
        env.truth_loglik = truth_loglik;
        env.loglik_row_max = if n == 0 { Vec::new() } else { loglik.chunks(n).map(|r| r.iter().copied().fold(T::neg_infinity(), T::max)).collect() };
        env.loglik = Arc::from(loglik);
        env.half_norm2 = half_norm2;
        env.kl_pure = kl_pure;
        env.payoff_model = payoff_model;
        Ok(env)
    }

    pub fn spec(&self) -> &EnvironmentSpec<T> {
        &self.spec
    }

    pub fn actions(&self) -> &[String] {
        &self.spec.actions
    }

    pub fn n_actions(&self) -> usize {
        self.spec.actions.len()
    }

    pub fn truth(&self) -> &ConsequenceModel<T> {
        &self.spec.truth
    }

    pub fn payoff(&self) -> &Payoff<T> {
        &self.spec.payoff
    }

    pub fn models(&self) -> &ModelGrid<T> {
        &self.spec.models
    }

    pub fn n_models(&self) -> usize {
        self.spec.models.len()
    }

    pub fn family(&self) -> FamilyKind {
        self.spec.models.family
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.spec.truth, ConsequenceModel::Discrete { .. })
    }

    /// Number of discrete labels (0 for Gaussian consequences).
    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    /// Consequence dimension for Gaussian truths.
    pub fn consequence_dim(&self) -> usize {
        match &self.spec.truth {
            ConsequenceModel::GaussianIso { dim, .. } => *dim,
            ConsequenceModel::Discrete { .. } => 1,
        }
    }

    pub fn action_index(&self, label: &str) -> Result<usize> {
        self.spec
            .actions
            .iter()
            .position(|a| a == label)
            .ok_or_else(|| Error::UnknownAction(label.to_string()))
    }

    pub(crate) fn check_action(&self, x: usize) -> Result<()> {
        if x < self.n_actions() {
            Ok(())
        } else {
            Err(Error::UnknownAction(format!("#{x}")))
        }
    }

    /// Draws `y ~ Q(. | x)`.
    pub fn sample_consequence(&self, x: usize, rng: &mut RandomState) -> Result<Consequence<T>> {
        self.check_action(x)?;
        Ok(match &self.spec.truth {
            ConsequenceModel::Discrete { pmf, .. } => {
                let u = T::lit(rng.uniform());
                let row = &pmf[x];
                let mut acc = T::zero();
                let mut last = 0;
                for (y, &p) in row.iter().enumerate() {
                    if p > T::zero() {
                        last = y;
                        acc += p;
                        if u < acc {
                            return Ok(Consequence::Label(y));
                        }
                    }
                }
                Consequence::Label(last)
            }
            ConsequenceModel::GaussianIso { dim, means } => {
                let mut z = Vec::with_capacity(*dim);
                rng.normals(*dim, &mut z);
                Consequence::Vector(means[x].iter().zip(z).map(|(&m, e)| m + T::lit(e)).collect())
            }
        })
    }

    /// `q_i(y | x)` for discrete families.
    pub fn model_pmf(&self, i: usize, x: usize, y: usize) -> T {
        match self.spec.models.family {
            FamilyKind::BernoulliCommon => bernoulli(self.spec.models.points[i][0], y),
            FamilyKind::DiscreteTable => self.spec.models.table.as_ref().expect("validated")[i][x][y],
            FamilyKind::GaussianCommonMean => T::nan(),
        }
    }

    /// `ln q(y | x)` under the truth.
    pub fn truth_loglik(&self, x: usize, y: &Consequence<T>) -> Result<T> {
        match (y, &self.spec.truth) {
            (Consequence::Label(l), ConsequenceModel::Discrete { .. }) if *l < self.n_labels => {
                Ok(self.truth_loglik[x * self.n_labels + l])
            }
            (Consequence::Vector(v), ConsequenceModel::GaussianIso { dim, means }) if v.len() == *dim => {
                Ok(-half_sq_dist(v, &means[x]))
            }
            _ => Err(Error::InvalidArgument("consequence does not match the truth".into())),
        }
    }

    /// Adds `ln q_i(y | x)` for every grid model to `acc`.
    pub(crate) fn accumulate_loglik(&self, x: usize, y: &Consequence<T>, acc: &mut [T]) -> Result<()> {
        let n = self.n_models();
        match y {
            Consequence::Label(l) if self.is_discrete() && *l < self.n_labels => {
                let base = (x * self.n_labels + l) * n;
                for (a, &l) in acc.iter_mut().zip(&self.loglik[base..base + n]) {
                    *a += l;
                }
            }
            Consequence::Vector(v) if !self.is_discrete() && v.len() == self.consequence_dim() => {
                let half_y2: T = v.iter().map(|&c| c * c).sum::<T>() * T::lit(0.5);
                for ((a, p), &h) in acc.iter_mut().zip(&self.spec.models.points).zip(&self.half_norm2) {
                    let dot: T = p.iter().zip(v).map(|(&a, &b)| a * b).sum();
                    *a += dot - h - half_y2;
                }
            }
            _ => return Err(Error::InvalidArgument("consequence does not match the truth".into())),
        }
        Ok(())
    }

    /// Row index into the discrete log-likelihood table for `(x, y)`.
    pub(crate) fn loglik_row_index(&self, x: usize, y: &Consequence<T>) -> Option<usize> {
        match y {
            Consequence::Label(l) if self.is_discrete() && *l < self.n_labels && x < self.n_actions() => {
                Some(x * self.n_labels + l)
            }
            _ => None,
        }
    }

    /// Discrete log-likelihood table, one row of `n_models` entries per `(x, y)`.
    pub(crate) fn loglik_table(&self) -> &Arc<[T]> {
        &self.loglik
    }

    pub(crate) fn loglik_row_max(&self, r: usize) -> T {
        self.loglik_row_max[r]
    }

    /// `ln q_i(y | x)` for one grid model.
    pub fn model_loglik(&self, i: usize, x: usize, y: &Consequence<T>) -> Result<T> {
        match y {
            Consequence::Label(l) if self.is_discrete() && *l < self.n_labels => {
                Ok(self.loglik[(x * self.n_labels + l) * self.n_models() + i])
            }
            Consequence::Vector(v) if !self.is_discrete() && v.len() == self.consequence_dim() => {
                Ok(-half_sq_dist(v, &self.spec.models.points[i]))
            }
            _ => Err(Error::InvalidArgument("consequence does not match the truth".into())),
        }
    }

    /// `K(theta_i, delta_x)`.
    #[inline]
    pub fn kl_pure(&self, i: usize, x: usize) -> T {
        self.kl_pure[i * self.n_actions() + x]
    }

    /// Expected payoff of `x` if model `i` were true.
    #[inline]
    pub fn payoff_model(&self, i: usize, x: usize) -> T {
        self.payoff_model[i * self.n_actions() + x]
    }

    /// `K(theta, delta_x)` for a parametric family at an arbitrary parameter.
    pub(crate) fn kl_param_pure(&self, theta: &[T], x: usize) -> T {
        match (&self.spec.truth, self.spec.models.family) {
            (ConsequenceModel::Discrete { pmf, .. }, FamilyKind::BernoulliCommon) => {
                let mut k = T::zero();
                for (y, &q) in pmf[x].iter().enumerate() {
                    if q > T::zero() {
                        let m = bernoulli(theta[0], y);
                        if m <= T::zero() {
                            return T::infinity();
                        }
                        k += q * (q / m).ln();
                    }
                }
                k
            }
            (ConsequenceModel::GaussianIso { means, .. }, FamilyKind::GaussianCommonMean) => {
                half_sq_dist(&means[x], theta)
            }
            _ => T::nan(),
        }
    }

    fn kl_table(&self, i: usize, x: usize) -> T {
        let ConsequenceModel::Discrete { pmf, .. } = &self.spec.truth else {
            return T::nan();
        };
        let row = &self.spec.models.table.as_ref().expect("validated")[i][x];
        let mut k = T::zero();
        for (&q, &m) in pmf[x].iter().zip(row) {
            if q > T::zero() {
                if m <= T::zero() {
                    return T::infinity();
                }
                k += q * (q / m).ln();
            }
        }
        k
    }

    fn payoff_under_pmf(&self, x: usize, row: &[T]) -> T {
        match &self.spec.payoff {
            Payoff::Table(t) => t[x].iter().zip(row).map(|(&p, &q)| p * q).sum(),
            Payoff::Affine { .. } => T::nan(),
        }
    }

    /// Expected payoff of `x` under the model with parameter `theta`.
    pub fn expected_payoff_param(&self, theta: &[T], x: usize) -> T {
        match (&self.spec.payoff, self.spec.models.family) {
            (Payoff::Table(t), FamilyKind::BernoulliCommon) => {
                t[x][0] * (T::one() - theta[0]) + t[x][1] * theta[0]
            }
            (Payoff::Affine { intercept, slope }, FamilyKind::GaussianCommonMean) => {
                intercept[x] + slope[x].iter().zip(theta).map(|(&b, &m)| b * m).sum::<T>()
            }
            (Payoff::Table(_), FamilyKind::DiscreteTable) => {
                match self.spec.models.points.iter().position(|p| p.as_slice() == theta) {
                    Some(i) => self.payoff_model(i, x),
                    None => T::nan(),
                }
            }
            _ => T::nan(),
        }
    }
}

#[inline]
fn bernoulli<T: Scalar>(theta: T, y: usize) -> T {
    if y == 1 {
        theta
    } else {
        T::one() - theta
    }
}

#[inline]
pub(crate) fn half_sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum::<T>() * T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn negative_reinforcement() -> Environment<f64> {
        presets::environment("negative-reinforcement").unwrap()
    }

    #[test]
    fn negative_reinforcement_shape() {
        let env = negative_reinforcement();
        assert_eq!(env.actions(), ["x1", "x2"]);
        match env.truth() {
            ConsequenceModel::Discrete { support, pmf } => {
                assert_eq!(support.len(), 2);
                assert_eq!(pmf[0], vec![0.25, 0.75]);
                assert_eq!(pmf[1], vec![0.75, 0.25]);
            }
            _ => panic!("discrete expected"),
        }
        assert!(validate_environment(env.spec()).all_passed());
    }

    #[test]
    fn trivially_valid_single_action() {
        let spec = EnvironmentSpec {
            actions: vec!["only".into()],
            truth: ConsequenceModel::Discrete { support: vec!["y".into()], pmf: vec![vec![1.0]] },
            payoff: Payoff::Table(vec![vec![0.0]]),
            models: ModelGrid {
                family: FamilyKind::DiscreteTable,
                points: vec![vec![0.0]],
                log_prior: vec![0.0],
                table: Some(vec![vec![vec![1.0]]]),
                domain: ModelDomain::Finite,
            },
        };
        assert!(Environment::new(spec).is_ok());
    }

    #[test]
    fn bad_pmf_names_the_invariant() {
        let mut spec = negative_reinforcement().spec().clone();
        if let ConsequenceModel::Discrete { pmf, .. } = &mut spec.truth {
            pmf[0] = vec![0.2, 0.7];
        }
        match Environment::new(spec) {
            Err(Error::Validation { invariant, .. }) => assert_eq!(invariant, "pmf_normalized"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn support_and_prior_failures_are_flagged() {
        let spec = EnvironmentSpec {
            actions: vec!["a".into()],
            truth: ConsequenceModel::Discrete {
                support: vec!["0".into(), "1".into()],
                pmf: vec![vec![0.5, 0.5]],
            },
            payoff: Payoff::Table(vec![vec![0.0, 1.0]]),
            models: ModelGrid {
                family: FamilyKind::DiscreteTable,
                points: vec![vec![0.0], vec![1.0]],
                log_prior: vec![0.0, f64::NEG_INFINITY],
                table: Some(vec![vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]]]),
                domain: ModelDomain::Finite,
            },
        };
        let report = validate_environment(&spec);
        assert!(!report.get("support_containment").unwrap().passed);
        assert!(!report.get("prior_full_support").unwrap().passed);
        assert!(report.get("pmf_normalized").unwrap().passed);
    }

    #[test]
    fn discrete_sampling_frequency() {
        let env = negative_reinforcement();
        let mut rng = RandomState::new(42, 0);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| env.sample_consequence(0, &mut rng).unwrap() == Consequence::Label(1))
            .count();
        assert!((ones as f64 / n as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn degenerate_pmf_always_first_label() {
        let mut spec = negative_reinforcement().spec().clone();
        if let ConsequenceModel::Discrete { pmf, .. } = &mut spec.truth {
            pmf[0] = vec![1.0, 0.0];
        }
        let env = Environment::new(spec).unwrap();
        let mut rng = RandomState::new(1, 0);
        for _ in 0..1000 {
            assert_eq!(env.sample_consequence(0, &mut rng).unwrap(), Consequence::Label(0));
        }
    }

    #[test]
    fn gaussian_sample_mean() {
        let env: Environment<f64> = presets::environment("triangle").unwrap();
        let mut rng = RandomState::new(9, 0);
        let n = 10_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let Consequence::Vector(v) = env.sample_consequence(1, &mut rng).unwrap() else {
                panic!()
            };
            for k in 0..3 {
                mean[k] += v[k] / n as f64;
            }
        }
        let target = [0.0, 1.0, 0.0];
        for k in 0..3 {
            assert!((mean[k] - target[k]).abs() < 0.05, "{mean:?}");
        }
    }

    #[test]
    fn identical_rng_state_identical_draws() {
        let env: Environment<f64> = presets::environment("triangle").unwrap();
        let mut a = RandomState::new(3, 0);
        let mut b = a.clone();
        for x in 0..3 {
            assert_eq!(env.sample_consequence(x, &mut a).unwrap(), env.sample_consequence(x, &mut b).unwrap());
        }
    }

    #[test]
    fn unknown_action_rejected() {
        let env = negative_reinforcement();
        let mut rng = RandomState::new(0, 0);
        assert!(matches!(env.sample_consequence(5, &mut rng), Err(Error::UnknownAction(_))));
        assert!(matches!(env.action_index("x9"), Err(Error::UnknownAction(_))));
    }

    #[test]
    fn presets_validate() {
        for name in presets::NAMES {
            let env: Environment<f64> = presets::environment(name).unwrap();
            assert!(validate_environment(env.spec()).all_passed(), "{name}");
        }
    }

    #[test]
    fn single_precision_environment_builds() {
        let env: Environment<f32> = presets::environment("one-dimensional").unwrap();
        assert_eq!(env.n_actions(), 2);
        assert!((env.kl_pure(0, 1) - 0.5).abs() < 1e-6);
    }
}
