use misspec::equilibrium::{
    classify_model, equilibrium_models, find_equilibria, test_attracting, test_repelling, test_robust_attracting,
    AttractSettings, Basin, ModelClass, RepelSettings, RobustSettings, TargetSet, Verdict, EQUILIBRIUM_TOL,
};
use misspec::kld::closest_model;
use misspec::simplex::euclid;
use misspec::simulate::{run_learning, TieRule};
use misspec::{presets, ActionDist};

fn setup(name: &str) -> (misspec::f64::Environment, misspec::f64::Policy) {
    let env = presets::environment(name).unwrap();
    let pol = presets::policy(&env, name).unwrap();
    (env, pol)
}

/// For a one-dimensional model θ*, the mixed action that both best responds
/// to δ_θ* and has θ* as its closest model.
fn equilibrium_mix(env: &misspec::f64::Environment, pol: &misspec::f64::Policy, theta: f64) -> ActionDist<f64> {
    let n = env.n_actions();
    let vertices: Vec<ActionDist<f64>> = (0..n).map(|x| ActionDist::vertex(n, x)).collect();
    for a in 0..n {
        for b in a..n {
            // θ(σ) is monotone along the edge from δ_a to δ_b, so bisection finds the mix.
            let (ta, tb) = (closest_model(env, &vertices[a]).unwrap(), closest_model(env, &vertices[b]).unwrap());
            if (theta - ta) * (theta - tb) > 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let t = closest_model(env, &vertices[b].mix(&vertices[a], mid)).unwrap();
                if (t - theta) * (tb - ta) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let sigma = vertices[b].mix(&vertices[a], 0.5 * (lo + hi));
            if misspec::equilibrium::equilibrium_residual(env, pol, &sigma).unwrap() <= EQUILIBRIUM_TOL {
                return sigma;
            }
        }
    }
    panic!("no equilibrium mix for θ = {theta}");
}

#[test]
fn attracting_models_carry_stable_equilibria() {
    let (env, pol) = setup("one-dimensional");
    let mut seen = 0;
    for theta in equilibrium_models(&env, &pol).unwrap() {
        let sigma = equilibrium_mix(&env, &pol, theta);
        match classify_model(&env, &pol, theta, 0.01).unwrap() {
            ModelClass::AttractingModel => {
                let cert =
                    test_attracting(&env, &pol, &TargetSet::point(&sigma), &AttractSettings::new(0.1, 0.01, 10.0)).unwrap();
                assert_eq!(cert.verdict, Verdict::Attracting, "θ = {theta}");
                let robust = test_robust_attracting(&env, &pol, &cert, &RobustSettings::new(0.02, 0.01)).unwrap();
                assert_eq!(robust.verdict, Verdict::RobustlyAttracting, "θ = {theta}");
            }
            ModelClass::RepellingModel => {
                let cert = test_repelling(&env, &pol, &sigma, &RepelSettings::new(0.1, 5.0)).unwrap();
                assert_eq!(cert.verdict, Verdict::Repelling, "θ = {theta}");
            }
            ModelClass::Neither => panic!("θ = {theta} left unclassified"),
        }
        seen += 1;
    }
    assert_eq!(seen, 3);
}

#[test]
fn triangle_cycle_attracts_and_centre_repels() {
    let (env, pol) = setup("triangle");
    let cycle: Vec<Vec<f64>> = presets::triangle_cycle::<f64>().iter().map(|v| v.to_vec()).collect();
    let target = TargetSet::Polygon(cycle);
    let centre = ActionDist::uniform(3);
    let mut settings = AttractSettings::new(0.1, 0.01, 20.0);
    settings.basin = Basin::SimplexExcludingBall { center: centre.weights().to_vec(), radius: 0.02 };
    settings.n_init = 8;
    let cert = test_attracting(&env, &pol, &target, &settings).unwrap();
    assert_eq!(cert.verdict, Verdict::Attracting);
    let repel = test_repelling(&env, &pol, &centre, &RepelSettings::new(0.1, 5.0)).unwrap();
    assert_eq!(repel.verdict, Verdict::Repelling);
}

#[test]
fn redundant_action_point_repels() {
    let (env, pol) = setup("redundant-action");
    let sigma = ActionDist::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]).unwrap();
    let cert = test_repelling(&env, &pol, &sigma, &RepelSettings::new(0.1, 5.0)).unwrap();
    assert_eq!(cert.verdict, Verdict::Repelling);
}

/// Runs that have settled end near an equilibrium found by the lattice search.
#[test]
fn settled_runs_end_near_an_equilibrium() {
    let mut settled = 0;
    for name in ["negative-reinforcement", "one-dimensional", "positively-reinforcing"] {
        let (env, pol) = setup(name);
        let resolution = 20;
        let eqs = find_equilibria(&env, &pol, resolution, EQUILIBRIUM_TOL).unwrap();
        for seed in 0..8 {
            let traj = run_learning(&env, &pol, 100_000, seed, TieRule::Lexicographic, 1000).unwrap();
            let last = traj.final_sigma().unwrap();
            let variation = traj
                .steps
                .iter()
                .filter(|s| s.t >= 10_000)
                .map(|s| euclid(&s.sigma, last))
                .fold(0.0, f64::max);
            if variation >= 1e-3 {
                continue;
            }
            settled += 1;
            let nearest = eqs
                .iter()
                .flat_map(|e| e.continuum.clone().unwrap_or_else(|| vec![e.sigma.clone()]))
                .map(|p| euclid(p.weights(), last))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 10.0 / resolution as f64, "{name} seed {seed}: {nearest}");
        }
    }
    assert!(settled > 0);
}
