//! Sampling certificates for attracting, repelling and robustly attracting sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{near_residual, EQUILIBRIUM_TOL};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::inclusion::{integrate_di, integrate_perturbed_di, perturbed_actions, DIPath, Strategy};
use crate::policy::Policy;
use crate::rng::RandomState;
use crate::scalar::Scalar;
use crate::simplex::{euclid, ActionDist};

/// Radius at which the actions prescribed at an equilibrium are read.
const SUPPORT_PROBE: f64 = 1e-9;
/// Chord subdivisions when a target is not convex.
const CHORD_SPLITS: usize = 8;

/// Candidate attracting set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case")]
pub enum TargetSet<T> {
    Point(Vec<T>),
    Segment(Vec<T>, Vec<T>),
    /// Closed polygon through the vertices, in order.
    Polygon(Vec<Vec<T>>),
    /// Finite set of points.
    Points(Vec<Vec<T>>),
}

fn segment_distance<T: Scalar>(p: &[T], a: &[T], b: &[T]) -> T {
    let mut dot = T::zero();
    let mut len2 = T::zero();
    for ((&p, &a), &b) in p.iter().zip(a).zip(b) {
        dot += (p - a) * (b - a);
        len2 += (b - a) * (b - a);
    }
    let s = if len2 > T::zero() { (dot / len2).max(T::zero()).min(T::one()) } else { T::zero() };
    p.iter()
        .zip(a)
        .zip(b)
        .map(|((&p, &a), &b)| {
            let d = p - (a + s * (b - a));
            d * d
        })
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}

impl<T: Scalar> TargetSet<T> {
    pub fn point(sigma: &ActionDist<T>) -> Self {
        TargetSet::Point(sigma.weights().to_vec())
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSet::Point(p) | TargetSet::Segment(p, _) => p.len(),
            TargetSet::Polygon(v) | TargetSet::Points(v) => v.first().map_or(0, Vec::len),
        }
    }

    pub fn distance(&self, sigma: &[T]) -> T {
        match self {
            TargetSet::Point(p) => euclid(sigma, p),
            TargetSet::Segment(a, b) => segment_distance(sigma, a, b),
            TargetSet::Polygon(v) => (0..v.len())
                .map(|k| segment_distance(sigma, &v[k], &v[(k + 1) % v.len()]))
                .fold(T::infinity(), T::min),
            TargetSet::Points(v) => v.iter().map(|p| euclid(sigma, p)).fold(T::infinity(), T::min),
        }
    }

    fn is_convex(&self) -> bool {
        matches!(self, TargetSet::Point(_) | TargetSet::Segment(..))
    }

    /// A point of the set chosen at random.
    fn anchor(&self, rng: &mut RandomState) -> Vec<T> {
        let lerp = |a: &[T], b: &[T], s: T| -> Vec<T> { a.iter().zip(b).map(|(&a, &b)| a + s * (b - a)).collect() };
        match self {
            TargetSet::Point(p) => p.clone(),
            TargetSet::Segment(a, b) => lerp(a, b, T::lit(rng.uniform())),
            TargetSet::Polygon(v) => {
                let k = rng.below(v.len());
                lerp(&v[k], &v[(k + 1) % v.len()], T::lit(rng.uniform()))
            }
            TargetSet::Points(v) => v[rng.below(v.len())].clone(),
        }
    }

    /// A point of the simplex strictly within `radius` of the set.
    fn sample_near(&self, radius: T, rng: &mut RandomState) -> ActionDist<T> {
        let n = self.dim();
        loop {
            let base = self.anchor(rng);
            let dir = tangent_direction::<T>(n, rng);
            let r = radius * T::lit(rng.uniform().powf(1.0 / (n.max(2) - 1) as f64));
            let moved: Vec<T> = base.iter().zip(&dir).map(|(&b, &d)| b + r * d).collect();
            let sigma = ActionDist::project(&moved);
            if self.distance(sigma.weights()) < radius {
                return sigma;
            }
        }
    }
}

/// Uniform unit direction in the plane of the simplex.
fn tangent_direction<T: Scalar>(n: usize, rng: &mut RandomState) -> Vec<T> {
    let mut g = Vec::new();
    loop {
        rng.normals(n, &mut g);
        let mean = g.iter().sum::<f64>() / n as f64;
        g.iter_mut().for_each(|v| *v -= mean);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.iter().map(|v| T::lit(v / norm)).collect();
        }
    }
}

/// Region a solution must stay in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", rename_all = "snake_case")]
pub enum Basin<T> {
    /// Points closer than `radius` to the target set.
    Radius { radius: T },
    /// The simplex without the closed ball around `center`.
    SimplexExcludingBall { center: Vec<T>, radius: T },
}

impl<T: Scalar> Basin<T> {
    pub fn contains(&self, target: &TargetSet<T>, sigma: &[T]) -> bool {
        match self {
            Basin::Radius { radius } => target.distance(sigma) < *radius,
            Basin::SimplexExcludingBall { center, radius } => euclid(sigma, center) > *radius,
        }
    }

    fn sample(&self, target: &TargetSet<T>, rng: &mut RandomState) -> ActionDist<T> {
        match self {
            Basin::Radius { radius } => target.sample_near(*radius, rng),
            Basin::SimplexExcludingBall { center, radius } => loop {
                let p: Vec<T> = rng.simplex_point(center.len()).into_iter().map(T::lit).collect();
                if euclid(&p, center) > *radius {
                    return ActionDist::project(&p);
                }
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Attracting,
    RobustlyAttracting,
    Repelling,
    Inconclusive,
}

/// Settings a certificate was produced with. Fields a test does not use stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CertificateParameters<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basin: Option<Basin<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_radius: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<T>,
    pub horizon: T,
    pub step: T,
    pub samples: usize,
    pub branches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_ladder: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas_per_rung: Option<usize>,
    pub seed: u64,
}

/// Outcome for one sampled start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SampleEvidence<T> {
    pub start: Vec<T>,
    /// Worst distance to the target over the checked window, across branches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_distance: Option<T>,
    /// Latest first exit time across branches, for the `beta` that exited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_time: Option<T>,
    /// Action mixed into the start, for repelling tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_floor: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<T>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StabilityCertificate<T> {
    pub test: String,
    pub subject: TargetSet<T>,
    pub verdict: Verdict,
    pub parameters: CertificateParameters<T>,
    pub evidence: Vec<SampleEvidence<T>>,
}

impl<T: Scalar> StabilityCertificate<T> {
    pub fn passed(&self) -> usize {
        self.evidence.iter().filter(|e| e.passed).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AttractSettings<T> {
    pub basin: Basin<T>,
    pub epsilon: T,
    pub horizon: T,
    pub n_init: usize,
    pub n_branch: usize,
    pub step: T,
    pub seed: u64,
}

impl<T: Scalar> AttractSettings<T> {
    pub fn new(u_radius: T, epsilon: T, horizon: T) -> Self {
        AttractSettings {
            basin: Basin::Radius { radius: u_radius },
            epsilon,
            horizon,
            n_init: 16,
            n_branch: 4,
            step: T::lit(0.01),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RepelSettings<T> {
    pub u_radius: T,
    pub horizon: T,
    pub n_sigma: usize,
    pub beta_ladder: Vec<T>,
    pub betas_per_rung: usize,
    pub n_branch: usize,
    pub step: T,
    pub seed: u64,
}

impl<T: Scalar> RepelSettings<T> {
    pub fn new(u_radius: T, horizon: T) -> Self {
        RepelSettings {
            u_radius,
            horizon,
            n_sigma: 8,
            beta_ladder: [0.9, 0.99, 0.999].into_iter().map(T::lit).collect(),
            betas_per_rung: 3,
            n_branch: 4,
            step: T::lit(0.01),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RobustSettings<T> {
    pub zeta: T,
    pub epsilon: T,
    pub n_init: usize,
    pub n_branch: usize,
    pub step: T,
    pub seed: u64,
}

impl<T: Scalar> RobustSettings<T> {
    pub fn new(zeta: T, epsilon: T) -> Self {
        RobustSettings { zeta, epsilon, n_init: 16, n_branch: 4, step: T::lit(0.01), seed: 0 }
    }
}

fn validate<T: Scalar>(horizon: T, step: T, samples: usize, branches: usize) -> Result<()> {
    if !(horizon > T::zero()) || !(step > T::zero()) {
        return Err(Error::InvalidArgument("horizon and step must be positive".into()));
    }
    if samples == 0 || branches == 0 {
        return Err(Error::InvalidArgument("sample and branch counts must be positive".into()));
    }
    Ok(())
}

/// Starts drawn up front so results do not depend on scheduling.
fn starts<T: Scalar>(seed: u64, stream: u64, n: usize, mut draw: impl FnMut(&mut RandomState) -> ActionDist<T>) -> Vec<ActionDist<T>> {
    let mut rng = RandomState::new(seed, stream);
    (0..n).map(|_| draw(&mut rng)).collect()
}

/// Sampled states of a path, with extra points along chords when asked.
fn path_points<T: Scalar>(path: &DIPath<T>, from: T, split: bool) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    if let Some(p) = path.state_at(from) {
        out.push(p);
    }
    for k in 0..path.times.len() {
        if path.times[k] < from {
            continue;
        }
        let cur = path.states[k].weights();
        if split && k > 0 && path.times[k - 1] >= from {
            let prev = path.states[k - 1].weights();
            for j in 1..CHORD_SPLITS {
                let s = T::count(j) / T::count(CHORD_SPLITS);
                out.push(prev.iter().zip(cur).map(|(&a, &b)| a + s * (b - a)).collect());
            }
        }
        out.push(cur.to_vec());
    }
    out
}

/// Checks that every sampled solution from the basin stays within `epsilon`
/// of `target` over `[T, 2T]`.
pub fn test_attracting<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    target: &TargetSet<T>,
    settings: &AttractSettings<T>,
) -> Result<StabilityCertificate<T>> {
    let s = settings;
    validate(s.horizon, s.step, s.n_init, s.n_branch)?;
    if target.dim() != env.n_actions() {
        return Err(Error::InvalidDistribution("target has the wrong number of actions".into()));
    }
    if let Basin::Radius { radius } = s.basin {
        if !(s.epsilon < radius) {
            return Err(Error::InvalidArgument("epsilon must be below the basin radius".into()));
        }
    }
    let inits = starts(s.seed, 1, s.n_init, |rng| s.basin.sample(target, rng));
    let evidence = inits
        .par_iter()
        .enumerate()
        .map(|(k, sigma0)| {
            let strategy = Strategy::BranchSample { count: s.n_branch, seed: s.seed.wrapping_add(k as u64) };
            let paths = integrate_di(env, policy, sigma0, s.horizon * T::lit(2.0), s.step, &strategy)?;
            let worst = paths
                .iter()
                .flat_map(|p| path_points(p, s.horizon, !target.is_convex()))
                .map(|p| target.distance(&p))
                .fold(T::zero(), T::max);
            Ok(SampleEvidence {
                start: sigma0.weights().to_vec(),
                worst_distance: Some(worst),
                exit_time: None,
                action: None,
                beta_floor: None,
                beta: None,
                passed: worst < s.epsilon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all = evidence.iter().all(|e| e.passed);
    Ok(StabilityCertificate {
        test: "attracting".into(),
        subject: target.clone(),
        verdict: if all { Verdict::Attracting } else { Verdict::Inconclusive },
        parameters: CertificateParameters {
            basin: Some(s.basin.clone()),
            u_radius: match s.basin {
                Basin::Radius { radius } => Some(radius),
                _ => None,
            },
            epsilon: Some(s.epsilon),
            horizon: s.horizon,
            step: s.step,
            samples: s.n_init,
            branches: s.n_branch,
            seed: s.seed,
            ..Default::default()
        },
        evidence,
    })
}

/// Latest first exit time from the ball across `paths`, if all of them exit.
fn exit_time<T: Scalar>(paths: &[DIPath<T>], center: &[T], radius: T) -> Option<T> {
    let mut latest = T::zero();
    for p in paths {
        let k = p.states.iter().position(|s| euclid(s.weights(), center) > radius)?;
        latest = latest.max(p.times[k]);
    }
    Some(latest)
}

/// Checks that starts pulled toward each prescribed action leave the
/// `u_radius` ball around `sigma_star` by the horizon, for some `beta` above
/// every rung of the ladder.
pub fn test_repelling<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    sigma_star: &ActionDist<T>,
    settings: &RepelSettings<T>,
) -> Result<StabilityCertificate<T>> {
    let s = settings;
    validate(s.horizon, s.step, s.n_sigma, s.n_branch)?;
    if s.betas_per_rung == 0 || s.beta_ladder.iter().any(|&b| !(b > T::zero() && b < T::one())) {
        return Err(Error::InvalidArgument("ladder rungs must lie in (0, 1) with at least one beta each".into()));
    }
    let residual = near_residual(env, policy, sigma_star)?;
    if residual > T::lit(EQUILIBRIUM_TOL) {
        return Err(Error::NotAnEquilibrium(residual.f64()));
    }
    let target = TargetSet::point(sigma_star);
    let prescribed = perturbed_actions(env, policy, sigma_star, T::lit(SUPPORT_PROBE))?;
    let sigmas = starts(s.seed, 2, s.n_sigma, |rng| target.sample_near(s.u_radius, rng));
    let mut cases = Vec::new();
    for sigma in &sigmas {
        for x in prescribed.iter() {
            for &floor in &s.beta_ladder {
                cases.push((sigma, x, floor));
            }
        }
    }
    let center = sigma_star.weights();
    let m = T::count(s.betas_per_rung + 1);
    let evidence = cases
        .par_iter()
        .enumerate()
        .map(|(k, &(sigma, x, floor))| {
            let vertex = ActionDist::vertex(sigma.len(), x);
            let mut record = SampleEvidence {
                start: sigma.weights().to_vec(),
                worst_distance: None,
                exit_time: None,
                action: Some(x),
                beta_floor: Some(floor),
                beta: None,
                passed: false,
            };
            for j in 1..=s.betas_per_rung {
                let beta = floor + (T::one() - floor) * T::count(j) / m;
                let start = sigma.mix(&vertex, beta);
                let seed = s.seed.wrapping_add((k * s.betas_per_rung + j) as u64);
                let strategy = Strategy::BranchSample { count: s.n_branch, seed };
                let paths = integrate_di(env, policy, &start, s.horizon, s.step, &strategy)?;
                if let Some(t) = exit_time(&paths, center, s.u_radius) {
                    record.beta = Some(beta);
                    record.exit_time = Some(t);
                    record.passed = true;
                    break;
                }
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    let all = evidence.iter().all(|e| e.passed);
    Ok(StabilityCertificate {
        test: "repelling".into(),
        subject: target,
        verdict: if all { Verdict::Repelling } else { Verdict::Inconclusive },
        parameters: CertificateParameters {
            u_radius: Some(s.u_radius),
            horizon: s.horizon,
            step: s.step,
            samples: s.n_sigma,
            branches: s.n_branch,
            beta_ladder: Some(s.beta_ladder.clone()),
            betas_per_rung: Some(s.betas_per_rung),
            seed: s.seed,
            ..Default::default()
        },
        evidence,
    })
}

/// Checks that perturbed solutions started within `zeta` of an attracting set
/// never leave the basin recorded in its certificate, up to twice its horizon.
pub fn test_robust_attracting<T: Scalar>(
    env: &Environment<T>,
    policy: &Policy<T>,
    certificate: &StabilityCertificate<T>,
    settings: &RobustSettings<T>,
) -> Result<StabilityCertificate<T>> {
    let basin = match (&certificate.verdict, &certificate.parameters.basin) {
        (Verdict::Attracting, Some(b)) => b.clone(),
        _ => return Err(Error::MissingBasin),
    };
    let s = settings;
    let horizon = certificate.parameters.horizon;
    validate(horizon, s.step, s.n_init, s.n_branch)?;
    if !(s.zeta > T::zero()) || !(s.epsilon >= T::zero()) {
        return Err(Error::InvalidArgument("zeta must be positive and epsilon nonnegative".into()));
    }
    let target = &certificate.subject;
    let inits = starts(s.seed, 3, s.n_init, |rng| target.sample_near(s.zeta, rng));
    let evidence = inits
        .par_iter()
        .enumerate()
        .map(|(k, sigma0)| {
            let strategy = Strategy::BranchSample { count: s.n_branch, seed: s.seed.wrapping_add(k as u64) };
            let paths =
                integrate_perturbed_di(env, policy, sigma0, horizon * T::lit(2.0), s.step, s.epsilon, &strategy)?;
            let points: Vec<Vec<T>> = paths.iter().flat_map(|p| path_points(p, T::zero(), true)).collect();
            let worst = points.iter().map(|p| target.distance(p)).fold(T::zero(), T::max);
            Ok(SampleEvidence {
                start: sigma0.weights().to_vec(),
                worst_distance: Some(worst),
                exit_time: None,
                action: None,
                beta_floor: None,
                beta: None,
                passed: points.iter().all(|p| basin.contains(target, p)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all = evidence.iter().all(|e| e.passed);
    Ok(StabilityCertificate {
        test: "robust_attracting".into(),
        subject: target.clone(),
        verdict: if all { Verdict::RobustlyAttracting } else { Verdict::Inconclusive },
        parameters: CertificateParameters {
            basin: Some(basin),
            epsilon: Some(s.epsilon),
            zeta: Some(s.zeta),
            horizon,
            step: s.step,
            samples: s.n_init,
            branches: s.n_branch,
            seed: s.seed,
            ..Default::default()
        },
        evidence,
    })
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
    fn target_distances() {
        let seg: TargetSet<f64> = TargetSet::Segment(vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]);
        assert!((seg.distance(&[0.5, 0.0, 0.5])).abs() < 1e-15);
        assert!((seg.distance(&[0.0, 1.0, 0.0]) - 1.5f64.sqrt()).abs() < 1e-12);
        let tri: TargetSet<f64> = TargetSet::Polygon(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert!(tri.distance(&[0.5, 0.5, 0.0]).abs() < 1e-15);
        let cyc: Vec<[f64; 3]> = presets::triangle_cycle();
        let poly = TargetSet::Polygon(cyc.iter().map(|v| v.to_vec()).collect());
        let mut rng = RandomState::new(3, 0);
        for _ in 0..50 {
            let p: Vec<f64> = rng.simplex_point(3);
            assert!((poly.distance(&p) - presets::polygon_distance(&p, &cyc)).abs() < 1e-14);
            let near = poly.sample_near(0.05, &mut rng);
            assert!(poly.distance(near.weights()) < 0.05);
            assert!(near.simplex_residual() < 1e-12);
        }
    }

    #[test]
    fn two_action_interior_equilibrium() {
        let (env, pol) = setup("negative-reinforcement");
        let star = ActionDist::uniform(2);
        let target = TargetSet::point(&star);
        let cert = test_attracting(&env, &pol, &target, &AttractSettings::new(0.4, 0.01, 5.0)).unwrap();
        assert_eq!(cert.verdict, Verdict::Attracting);
        let robust = test_robust_attracting(&env, &pol, &cert, &RobustSettings::new(0.05, 0.01)).unwrap();
        assert_eq!(robust.verdict, Verdict::RobustlyAttracting);
        let repel = test_repelling(&env, &pol, &star, &RepelSettings::new(0.1, 5.0)).unwrap();
        assert_eq!(repel.verdict, Verdict::Inconclusive);
        let text = serde_json::to_string(&cert).unwrap();
        let back: StabilityCertificate<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cert);
    }

    #[test]
    fn robust_test_needs_a_basin() {
        let (env, pol) = setup("negative-reinforcement");
        let star = ActionDist::uniform(2);
        let mut cert =
            test_attracting(&env, &pol, &TargetSet::point(&star), &AttractSettings::new(0.4, 0.01, 5.0)).unwrap();
        cert.parameters.basin = None;
        let err = test_robust_attracting(&env, &pol, &cert, &RobustSettings::new(0.05, 0.01));
        assert!(matches!(err, Err(Error::MissingBasin)));
        cert.verdict = Verdict::Inconclusive;
        assert!(matches!(test_robust_attracting(&env, &pol, &cert, &RobustSettings::new(0.05, 0.01)), Err(Error::MissingBasin)));
    }

    #[test]
    fn perturbation_wider_than_basin() {
        let (env, pol) = setup("negative-reinforcement");
        let star = ActionDist::uniform(2);
        let mut settings = AttractSettings::new(0.05, 0.01, 5.0);
        settings.n_init = 4;
        let cert = test_attracting(&env, &pol, &TargetSet::point(&star), &settings).unwrap();
        assert_eq!(cert.verdict, Verdict::Attracting);
        let robust = test_robust_attracting(&env, &pol, &cert, &RobustSettings::new(0.01, 0.2)).unwrap();
        assert_eq!(robust.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn repelling_requires_equilibrium() {
        let (env, pol) = setup("triangle");
        let err = test_repelling(&env, &pol, &ActionDist::vertex(3, 0), &RepelSettings::new(0.1, 5.0));
        assert!(matches!(err, Err(Error::NotAnEquilibrium(_))));
    }
}
