//! Built-in example environments and policies.

use crate::config::{
    AffineDoc, EnvironmentDoc, GridDoc, ModelsDoc, PayoffDoc, PolicyDoc, PriorDoc, RegionDoc, RegionsDoc, TruthDoc,
};
use crate::env::{Environment, FamilyKind};
use crate::error::{Error, Result};
use crate::policy::{table, Policy, PolicySpec};
use crate::scalar::Scalar;

pub const NAMES: [&str; 6] = [
    "negative-reinforcement",
    "triangle",
    "one-dimensional",
    "redundant-action",
    "positively-reinforcing",
    "robust-counterexample-base",
];

/// Grid size for one-dimensional presets.
pub const LINE_POINTS: usize = 201;

/// Lattice resolution for presets whose models live on the 2-simplex.
pub const SIMPLEX_RESOLUTION: usize = 30;

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn unit(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

fn zero_affine(nx: usize, dim: usize) -> PayoffDoc {
    PayoffDoc { table: None, affine: Some(AffineDoc { intercept: vec![0.0; nx], slope: vec![vec![0.0; dim]; nx] }) }
}

fn gaussian_line(actions: &[&str], means: &[f64], policy: PolicyDoc) -> EnvironmentDoc {
    EnvironmentDoc {
        actions: labels(actions),
        truth: TruthDoc::GaussianIso { dim: 1, means: means.iter().map(|m| vec![*m]).collect() },
        payoff: zero_affine(actions.len(), 1),
        models: ModelsDoc {
            family_kind: FamilyKind::GaussianCommonMean,
            grid: GridDoc::Range { lo: 0.0, hi: 1.0, n: LINE_POINTS },
            prior: PriorDoc::default(),
            table: None,
            domain: None,
        },
        policy: Some(policy),
    }
}

fn gaussian_triangle(actions: &[&str], means: Vec<Vec<f64>>, regions: RegionsDoc) -> EnvironmentDoc {
    EnvironmentDoc {
        actions: labels(actions),
        truth: TruthDoc::GaussianIso { dim: 3, means },
        payoff: zero_affine(actions.len(), 3),
        models: ModelsDoc {
            family_kind: FamilyKind::GaussianCommonMean,
            grid: GridDoc::Simplex { simplex: SIMPLEX_RESOLUTION },
            prior: PriorDoc::default(),
            table: None,
            domain: None,
        },
        policy: Some(PolicyDoc::TableSimplex { regions }),
    }
}

fn sets(list: &[&[&str]]) -> Vec<Vec<String>> {
    list.iter().map(|s| labels(s)).collect()
}

/// Full document (environment and policy) of a named preset.
pub fn document(name: &str) -> Result<EnvironmentDoc> {
    Ok(match name {
        "negative-reinforcement" => EnvironmentDoc {
            actions: labels(&["x1", "x2"]),
            truth: TruthDoc::Discrete {
                support: labels(&["0", "1"]),
                pmf: vec![vec![0.25, 0.75], vec![0.75, 0.25]],
            },
            payoff: PayoffDoc { table: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), affine: None },
            models: ModelsDoc {
                family_kind: FamilyKind::BernoulliCommon,
                grid: GridDoc::Range { lo: 0.0, hi: 1.0, n: LINE_POINTS },
                prior: PriorDoc::default(),
                table: None,
                domain: None,
            },
            policy: Some(PolicyDoc::Myopic { tie_tol: None }),
        },
        "triangle" => gaussian_triangle(
            &["x1", "x2", "x3"],
            (0..3).map(|k| unit(3, k)).collect(),
            RegionsDoc::Builtin("cyclic_shift".into()),
        ),
        "robust-counterexample-base" => gaussian_triangle(
            &["x1", "x2", "x3"],
            (0..3).map(|k| unit(3, k)).collect(),
            RegionsDoc::Builtin("robust_base".into()),
        ),
        "redundant-action" => {
            let base = table::cyclic_shift::<f64>();
            let names = ["x1", "x2", "x3", "x3p"];
            let regions = base
                .regions()
                .iter()
                .map(|r| {
                    let mut acts: Vec<String> = r.actions.iter().map(|x| names[x].to_string()).collect();
                    if r.actions.contains(2) {
                        acts.push("x3p".into());
                    }
                    RegionDoc { vertices: r.vertices.clone(), actions: acts }
                })
                .collect();
            gaussian_triangle(
                &names,
                vec![unit(3, 0), unit(3, 1), unit(3, 2), unit(3, 2)],
                RegionsDoc::Explicit(regions),
            )
        }
        "one-dimensional" => gaussian_line(
            &["x0", "x1"],
            &[0.0, 1.0],
            PolicyDoc::Table1d {
                breakpoints: vec![1.0 / 3.0, 2.0 / 3.0],
                interval_actions: sets(&[&["x0"], &["x1"], &["x0"]]),
                breakpoint_actions: sets(&[&["x0", "x1"], &["x0", "x1"]]),
            },
        ),
        "positively-reinforcing" => gaussian_line(
            &["x1", "x2", "x3", "x4"],
            &[0.1, 0.3, 0.45, 0.9],
            PolicyDoc::Table1d {
                breakpoints: vec![0.05, 0.5, 0.7],
                interval_actions: sets(&[&["x1"], &["x2"], &["x3"], &["x4"]]),
                breakpoint_actions: sets(&[&["x1", "x2"], &["x2", "x3"], &["x3", "x4"]]),
            },
        ),
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

pub fn environment<T: Scalar>(name: &str) -> Result<Environment<T>> {
    document(name)?.build()
}

/// The preset's own policy, built for `env`.
pub fn policy<T: Scalar>(env: &Environment<T>, name: &str) -> Result<Policy<T>> {
    let spec = document(name)?.policy_spec(env)?.unwrap_or_else(PolicySpec::myopic);
    Policy::new(env, spec)
}

/// Switching points `a1, b1, c1, a2, b2, c2, ...` of the path from
/// `a1 = (2/3, 0, 1/3)` under the `robust-counterexample-base` policy, for
/// `laps` laps, from the closed-form recursion.
pub fn robust_base_switches(laps: usize) -> Vec<[f64; 3]> {
    let third = 1.0 / 3.0;
    let mut out = Vec::with_capacity(3 * laps);
    let mut a = [2.0 / 3.0, 0.0, third];
    for _ in 0..laps {
        let b3 = 1.0 / (9.0 * a[0]);
        let b = [third, 1.0 - third - b3, b3];
        let c1 = 1.0 / (9.0 * b[1]);
        let c = [c1, third, 1.0 - third - c1];
        out.extend([a, b, c]);
        let a2 = 1.0 / (9.0 * c[2]);
        a = [1.0 - third - a2, a2, third];
    }
    out
}

/// Where the straight path from `p` toward vertex `v` meets the segment
/// `c + r (q - c)`; returns `(r, point)`.
fn hit_spoke(p: [f64; 3], v: usize, c: [f64; 3], q: [f64; 3]) -> Option<(f64, [f64; 3])> {
    let mut e = [0.0; 3];
    e[v] = 1.0;
    // p + s (e - p) = c + r (q - c), solved on the first two coordinates.
    let (a11, a12, b1) = (e[0] - p[0], c[0] - q[0], c[0] - p[0]);
    let (a21, a22, b2) = (e[1] - p[1], c[1] - q[1], c[1] - p[1]);
    let det = a11 * a22 - a12 * a21;
    if det.abs() < 1e-15 {
        return None;
    }
    let s = (b1 * a22 - a12 * b2) / det;
    let r = (a11 * b2 - b1 * a21) / det;
    if s < 0.0 || !(0.0..=1.0).contains(&r) {
        return None;
    }
    Some((r, [c[0] + r * (q[0] - c[0]), c[1] + r * (q[1] - c[1]), c[2] + r * (q[2] - c[2])]))
}

/// One lap of the `triangle` inclusion started on the spoke toward
/// `(3/4, 0, 1/4)` at parameter `r`; returns the three spoke crossings.
fn triangle_lap(r: f64) -> Option<[(f64, [f64; 3]); 3]> {
    let third = 1.0 / 3.0;
    let c = [third; 3];
    let [p12, p23, p31] = table::cyclic_shift_spokes::<f64>();
    let start = [c[0] + r * (p31[0] - c[0]), c[1] + r * (p31[1] - c[1]), c[2] + r * (p31[2] - c[2])];
    let h1 = hit_spoke(start, 1, c, p12)?;
    let h2 = hit_spoke(h1.1, 2, c, p23)?;
    let h3 = hit_spoke(h2.1, 0, c, p31)?;
    Some([h1, h2, h3])
}

/// Vertices of the limit cycle of the `triangle` inclusion: the three spoke
/// crossings of the periodic orbit, in the order visited.
pub fn triangle_cycle<T: Scalar>() -> Vec<[T; 3]> {
    // Iterating the lap map converges: the orbit attracts from both sides.
    let mut r = 0.5;
    for _ in 0..10_000 {
        let next = triangle_lap(r).expect("laps stay on the spokes")[2].0;
        let done = (next - r).abs() < 1e-15;
        r = next;
        if done {
            break;
        }
    }
    let lap = triangle_lap(r).expect("laps stay on the spokes");
    [lap[2].1, lap[0].1, lap[1].1]
        .iter()
        .map(|p| [T::lit(p[0]), T::lit(p[1]), T::lit(p[2])])
        .collect()
}

/// Distance from `sigma` to the closed polygon through `vertices`.
pub fn polygon_distance<T: Scalar>(sigma: &[T], vertices: &[[T; 3]]) -> T {
    let n = vertices.len();
    let mut best = T::infinity();
    for k in 0..n {
        let a = &vertices[k];
        let b = &vertices[(k + 1) % n];
        let mut dot = T::zero();
        let mut len2 = T::zero();
        for i in 0..3 {
            dot += (sigma[i] - a[i]) * (b[i] - a[i]);
            len2 += (b[i] - a[i]) * (b[i] - a[i]);
        }
        let s = if len2 > T::zero() { (dot / len2).max(T::zero()).min(T::one()) } else { T::zero() };
        let mut d2 = T::zero();
        for i in 0..3 {
            let p = a[i] + s * (b[i] - a[i]);
            d2 += (sigma[i] - p) * (sigma[i] - p);
        }
        best = best.min(d2.sqrt());
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for name in NAMES {
            let env: Environment<f64> = environment(name).unwrap();
            policy(&env, name).unwrap();
            let env32: Environment<f32> = environment(name).unwrap();
            policy(&env32, name).unwrap();
        }
        assert!(matches!(document("no-such"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn switching_recursion_starts_at_known_points() {
        let pts = robust_base_switches(2);
        let expect = [
            [2.0 / 3.0, 0.0, 1.0 / 3.0],
            [1.0 / 3.0, 0.5, 1.0 / 6.0],
            [2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0],
            [5.0 / 12.0, 0.25, 1.0 / 3.0],
        ];
        for (p, e) in pts.iter().zip(expect) {
            for k in 0..3 {
                assert!((p[k] - e[k]).abs() < 1e-15, "{p:?} vs {e:?}");
            }
        }
        // spiralling inward
        let third = [1.0 / 3.0; 3];
        let d = |p: &[f64; 3]| crate::simplex::euclid(p, &third);
        assert!(d(&pts[3]) < d(&pts[0]));
    }

    #[test]
    fn triangle_cycle_is_periodic_and_away_from_center() {
        let cyc = triangle_cycle::<f64>();
        assert_eq!(cyc.len(), 3);
        let center = [1.0 / 3.0; 3];
        for v in &cyc {
            assert!(crate::simplex::euclid(v, &center) > 0.05);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // the lap map expands near the center and contracts near the edges
        let small = triangle_lap(0.05).unwrap()[2].0;
        let big = triangle_lap(0.99).unwrap()[2].0;
        assert!(small > 0.05 && big < 0.99);
    }

    #[test]
    fn polygon_distance_basics() {
        let tri: Vec<[f64; 3]> = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(polygon_distance(&[0.5, 0.5, 0.0], &tri) < 1e-15);
        let c = [1.0 / 3.0; 3];
        let expect = crate::simplex::euclid(&c, &[0.5, 0.5, 0.0]);
        assert!((polygon_distance(&c, &tri) - expect).abs() < 1e-15);
    }
}
