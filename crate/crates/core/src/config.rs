//! Configuration documents (JSON or TOML) and their conversion to domain types.
//!
//! Documents always carry `f64` numbers; conversion picks the scalar type.
//! Actions are referred to by label everywhere in a document.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::{ConsequenceModel, Environment, EnvironmentSpec, FamilyKind, ModelDomain, ModelGrid, Payoff};
use crate::error::{Error, Result};
use crate::policy::{table, PolicySpec, Region, Table1D, TableSimplex, DEFAULT_TIE_TOL};
use crate::scalar::Scalar;
use crate::simplex::ActionSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDoc {
    pub actions: Vec<String>,
    pub truth: TruthDoc,
    pub payoff: PayoffDoc,
    pub models: ModelsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthDoc {
    Discrete { support: Vec<String>, pmf: Vec<Vec<f64>> },
    GaussianIso { dim: usize, means: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineDoc {
    pub intercept: Vec<f64>,
    pub slope: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsDoc {
    pub family_kind: FamilyKind,
    pub grid: GridDoc,
    #[serde(default)]
    pub prior: PriorDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<Vec<f64>>>>,
    /// Overrides the domain implied by `grid` (explicit points default to a finite model set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridDoc {
    Range { lo: f64, hi: f64, n: usize },
    Simplex { simplex: usize },
    Points(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainDoc {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Simplex,
    Finite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorDoc {
    /// Only `"uniform"` is recognised.
    Named(String),
    Weights(Vec<f64>),
    Log { log_weights: Vec<f64> },
}

impl Default for PriorDoc {
    fn default() -> Self {
        PriorDoc::Named("uniform".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyDoc {
    Myopic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tie_tol: Option<f64>,
    },
    #[serde(rename = "table_1d")]
    Table1d {
        breakpoints: Vec<f64>,
        interval_actions: Vec<Vec<String>>,
        breakpoint_actions: Vec<Vec<String>>,
    },
    TableSimplex { regions: RegionsDoc },
    Bellman {
        beta: f64,
        resolution: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionsDoc {
    /// `"cyclic_shift"` or `"robust_base"`.
    Builtin(String),
    Explicit(Vec<RegionDoc>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDoc {
    pub vertices: Vec<[f64; 3]>,
    pub actions: Vec<String>,
}

/// Document syntax.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Toml,
}

impl Format {
    /// From a file extension (`.toml` is TOML, anything else JSON).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Format::Toml,
            _ => Format::Json,
        }
    }

    /// Guesses from content: JSON documents start with `{`.
    pub fn sniff(text: &str) -> Self {
        if text.trim_start().starts_with('{') {
            Format::Json
        } else {
            Format::Toml
        }
    }
}

pub fn parse<D: DeserializeOwned>(text: &str, format: Format) -> Result<D> {
    match format {
        Format::Json => serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string())),
        Format::Toml => toml::from_str(text).map_err(|e| Error::Schema(e.to_string())),
    }
}

pub fn to_text<S: Serialize>(doc: &S, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(doc)?),
        Format::Toml => toml::to_string(doc).map_err(|e| Error::Schema(e.to_string())),
    }
}

/// Parses and validates an environment document.
pub fn load_environment<T: Scalar>(text: &str, format: Format) -> Result<Environment<T>> {
    parse::<EnvironmentDoc>(text, format)?.build()
}

/// Inverse of [`load_environment`].
pub fn serialize_environment<T: Scalar>(env: &Environment<T>, format: Format) -> Result<String> {
    to_text(&EnvironmentDoc::from_environment(env), format)
}

fn conv<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn conv2<T: Scalar>(v: &[Vec<f64>]) -> Vec<Vec<T>> {
    v.iter().map(|r| conv(r)).collect()
}

fn back<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.f64()).collect()
}

fn back2<T: Scalar>(v: &[Vec<T>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| back(r)).collect()
}

impl EnvironmentDoc {
    pub fn to_spec<T: Scalar>(&self) -> Result<EnvironmentSpec<T>> {
        let truth = match &self.truth {
            TruthDoc::Discrete { support, pmf } => {
                ConsequenceModel::Discrete { support: support.clone(), pmf: conv2(pmf) }
            }
            TruthDoc::GaussianIso { dim, means } => ConsequenceModel::GaussianIso { dim: *dim, means: conv2(means) },
        };
        let payoff = match (&self.payoff.table, &self.payoff.affine) {
            (Some(t), None) => Payoff::Table(conv2(t)),
            (None, Some(a)) => Payoff::Affine { intercept: conv(&a.intercept), slope: conv2(&a.slope) },
            _ => return Err(Error::Schema("payoff needs exactly one of `table` or `affine`".into())),
        };
        let m = &self.models;
        let mut grid = match &m.grid {
            GridDoc::Range { lo, hi, n } => {
                if *n == 0 {
                    return Err(Error::Schema("grid needs at least one point".into()));
                }
                ModelGrid::interval(m.family_kind, T::lit(*lo), T::lit(*hi), *n)
            }
            GridDoc::Simplex { simplex } => {
                let dim = match &self.truth {
                    TruthDoc::GaussianIso { dim, .. } => *dim,
                    TruthDoc::Discrete { .. } => {
                        return Err(Error::Schema("simplex grids need a gaussian truth".into()))
                    }
                };
                ModelGrid::simplex(m.family_kind, dim, *simplex)
            }
            GridDoc::Points(points) => ModelGrid {
                family: m.family_kind,
                points: conv2(points),
                log_prior: vec![T::zero(); points.len()],
                table: None,
                domain: ModelDomain::Finite,
            },
        };
        if let Some(d) = &m.domain {
            grid.domain = match d {
                DomainDoc::Box { lo, hi } => ModelDomain::Box { lo: conv(lo), hi: conv(hi) },
                DomainDoc::Simplex => ModelDomain::Simplex,
                DomainDoc::Finite => ModelDomain::Finite,
            };
        }
        grid.log_prior = match &m.prior {
            PriorDoc::Named(name) if name == "uniform" => vec![T::zero(); grid.len()],
            PriorDoc::Named(name) => return Err(Error::Schema(format!("unknown prior `{name}`"))),
            PriorDoc::Weights(w) => w.iter().map(|&v| T::lit(v).ln()).collect(),
            PriorDoc::Log { log_weights } => conv(log_weights),
        };
        grid.table = m.table.as_ref().map(|t| t.iter().map(|per| conv2(per)).collect());
        Ok(EnvironmentSpec { actions: self.actions.clone(), truth, payoff, models: grid })
    }

    /// Builds and validates the environment.
    pub fn build<T: Scalar>(&self) -> Result<Environment<T>> {
        Environment::new(self.to_spec()?)
    }

    /// Document describing `env` exactly (explicit points and log prior).
    pub fn from_environment<T: Scalar>(env: &Environment<T>) -> Self {
        let spec = env.spec();
        let truth = match &spec.truth {
            ConsequenceModel::Discrete { support, pmf } => TruthDoc::Discrete { support: support.clone(), pmf: back2(pmf) },
            ConsequenceModel::GaussianIso { dim, means } => TruthDoc::GaussianIso { dim: *dim, means: back2(means) },
        };
        let payoff = match &spec.payoff {
            Payoff::Table(t) => PayoffDoc { table: Some(back2(t)), affine: None },
            Payoff::Affine { intercept, slope } => PayoffDoc {
                table: None,
                affine: Some(AffineDoc { intercept: back(intercept), slope: back2(slope) }),
            },
        };
        let g = &spec.models;
        let domain = match &g.domain {
            ModelDomain::Box { lo, hi } => DomainDoc::Box { lo: back(lo), hi: back(hi) },
            ModelDomain::Simplex => DomainDoc::Simplex,
            ModelDomain::Finite => DomainDoc::Finite,
        };
        EnvironmentDoc {
            actions: spec.actions.clone(),
            truth,
            payoff,
            models: ModelsDoc {
                family_kind: g.family,
                grid: GridDoc::Points(back2(&g.points)),
                prior: PriorDoc::Log { log_weights: back(&g.log_prior) },
                table: g.table.as_ref().map(|t| t.iter().map(|per| back2(per)).collect()),
                domain: Some(domain),
            },
            policy: None,
        }
    }

    /// The policy section, if present.
    pub fn policy_spec<T: Scalar>(&self, env: &Environment<T>) -> Result<Option<PolicySpec<T>>> {
        self.policy.as_ref().map(|p| p.to_spec(env)).transpose()
    }
}

fn action_set<T: Scalar>(env: &Environment<T>, labels: &[String]) -> Result<ActionSet> {
    let mut s = ActionSet::EMPTY;
    for l in labels {
        s.insert(env.action_index(l)?);
    }
    Ok(s)
}

fn labels<T: Scalar>(env: &Environment<T>, set: ActionSet) -> Vec<String> {
    set.iter().map(|x| env.actions()[x].clone()).collect()
}

impl PolicyDoc {
    pub fn to_spec<T: Scalar>(&self, env: &Environment<T>) -> Result<PolicySpec<T>> {
        Ok(match self {
            PolicyDoc::Myopic { tie_tol } => PolicySpec::Myopic { tie_tol: T::lit(tie_tol.unwrap_or(DEFAULT_TIE_TOL)) },
            PolicyDoc::Table1d { breakpoints, interval_actions, breakpoint_actions } => {
                let ints = interval_actions.iter().map(|l| action_set(env, l)).collect::<Result<Vec<_>>>()?;
                let bps = breakpoint_actions.iter().map(|l| action_set(env, l)).collect::<Result<Vec<_>>>()?;
                PolicySpec::Table1D(Table1D::new(conv(breakpoints), ints, bps)?)
            }
            PolicyDoc::TableSimplex { regions } => PolicySpec::TableSimplex(match regions {
                RegionsDoc::Builtin(name) => match name.as_str() {
                    "cyclic_shift" => table::cyclic_shift(),
                    "robust_base" => table::robust_base(),
                    other => return Err(Error::Schema(format!("unknown builtin regions `{other}`"))),
                },
                RegionsDoc::Explicit(list) => {
                    let regions = list
                        .iter()
                        .map(|r| {
                            Ok(Region {
                                vertices: r.vertices.iter().map(|v| [T::lit(v[0]), T::lit(v[1]), T::lit(v[2])]).collect(),
                                actions: action_set(env, &r.actions)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    TableSimplex::new(regions)?
                }
            }),
            PolicyDoc::Bellman { beta, resolution, tol } => PolicySpec::Bellman {
                beta: T::lit(*beta),
                resolution: *resolution,
                tol: T::lit(tol.unwrap_or(1e-9)),
            },
        })
    }

    /// Document form of a policy (simplex tables are written out region by region).
    pub fn from_spec<T: Scalar>(env: &Environment<T>, spec: &PolicySpec<T>) -> Self {
        match spec {
            PolicySpec::Myopic { tie_tol } => PolicyDoc::Myopic { tie_tol: Some(tie_tol.f64()) },
            PolicySpec::Table1D(t) => PolicyDoc::Table1d {
                breakpoints: back(t.breakpoints()),
                interval_actions: t.interval_actions().iter().map(|s| labels(env, *s)).collect(),
                breakpoint_actions: t.breakpoint_actions().iter().map(|s| labels(env, *s)).collect(),
            },
            PolicySpec::TableSimplex(t) => PolicyDoc::TableSimplex {
                regions: RegionsDoc::Explicit(
                    t.regions()
                        .iter()
                        .map(|r| RegionDoc {
                            vertices: r.vertices.iter().map(|v| [v[0].f64(), v[1].f64(), v[2].f64()]).collect(),
                            actions: labels(env, r.actions),
                        })
                        .collect(),
                ),
            },
            PolicySpec::Bellman { beta, resolution, tol } => PolicyDoc::Bellman {
                beta: beta.f64(),
                resolution: *resolution,
                tol: Some(tol.f64()),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    const EXAMPLE_JSON: &str = r#"{
        "actions": ["x1", "x2"],
        "truth": {"kind": "discrete", "support": ["0", "1"], "pmf": [[0.25, 0.75], [0.75, 0.25]]},
        "payoff": {"table": [[1, 0], [0, 1]]},
        "models": {"family_kind": "bernoulli_common", "grid": {"lo": 0, "hi": 1, "n": 201}, "prior": "uniform"},
        "policy": {"kind": "myopic"}
    }"#;

    const EXAMPLE_TOML: &str = r#"
        actions = ["x1", "x2"]
        [truth]
        kind = "discrete"
        support = ["0", "1"]
        pmf = [[0.25, 0.75], [0.75, 0.25]]
        [payoff]
        table = [[1.0, 0.0], [0.0, 1.0]]
        [models]
        family_kind = "bernoulli_common"
        grid = { lo = 0.0, hi = 1.0, n = 201 }
        prior = "uniform"
        [policy]
        kind = "myopic"
    "#;

    #[test]
    fn json_and_toml_agree() {
        let a: Environment<f64> = load_environment(EXAMPLE_JSON, Format::Json).unwrap();
        let b: Environment<f64> = load_environment(EXAMPLE_TOML, Format::Toml).unwrap();
        assert_eq!(a.spec(), b.spec());
        assert_eq!(Format::sniff(EXAMPLE_JSON), Format::Json);
        assert_eq!(Format::sniff(EXAMPLE_TOML), Format::Toml);
    }

    #[test]
    fn malformed_documents_are_schema_errors() {
        assert!(matches!(load_environment::<f64>("{\"actions\": 3}", Format::Json), Err(Error::Schema(_))));
        let bad = EXAMPLE_JSON.replace("\"table\": [[1, 0], [0, 1]]", "");
        assert!(matches!(load_environment::<f64>(&bad, Format::Json), Err(Error::Schema(_))));
    }

    #[test]
    fn round_trip_every_preset_both_formats() {
        for name in presets::NAMES {
            let env: Environment<f64> = presets::environment(name).unwrap();
            for format in [Format::Json, Format::Toml] {
                let text = serialize_environment(&env, format).unwrap();
                let back: Environment<f64> = load_environment(&text, format).unwrap();
                assert_eq!(back.spec(), env.spec(), "{name} {format:?}");
            }
        }
    }

    #[test]
    fn policies_round_trip() {
        for name in presets::NAMES {
            let env: Environment<f64> = presets::environment(name).unwrap();
            let policy = presets::policy(&env, name).unwrap();
            let doc = PolicyDoc::from_spec(&env, policy.spec());
            let text = serde_json::to_string(&doc).unwrap();
            let parsed: PolicyDoc = serde_json::from_str(&text).unwrap();
            assert_eq!(&parsed.to_spec(&env).unwrap(), policy.spec(), "{name}");
        }
    }

    #[test]
    fn unknown_action_in_policy() {
        let env: Environment<f64> = load_environment(EXAMPLE_JSON, Format::Json).unwrap();
        let doc = PolicyDoc::Table1d {
            breakpoints: vec![0.5],
            interval_actions: vec![vec!["x1".into()], vec!["x9".into()]],
            breakpoint_actions: vec![vec!["x1".into(), "x9".into()]],
        };
        assert!(matches!(doc.to_spec(&env), Err(Error::UnknownAction(_))));
    }

    #[test]
    fn zero_prior_weight_fails_validation() {
        let text = EXAMPLE_JSON.replace(
            "\"grid\": {\"lo\": 0, \"hi\": 1, \"n\": 201}, \"prior\": \"uniform\"",
            "\"grid\": [[0.25], [0.75]], \"prior\": [1.0, 0.0]",
        );
        match load_environment::<f64>(&text, Format::Json) {
            Err(Error::Validation { invariant, .. }) => assert_eq!(invariant, "prior_full_support"),
            other => panic!("{other:?}"),
        }
    }
}
