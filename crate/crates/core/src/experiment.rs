//! Config-driven experiment runs that write CSV files, reports and a manifest.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse, to_text, EnvironmentDoc, Format};
use crate::env::Environment;
use crate::equilibrium::{
    berk_nash_residual, build_staircase, check_weak_identification, classify_model, equilibrium_models,
    find_equilibria, test_attracting, test_repelling, AttractSettings, ModelClass, RepelSettings, Staircase,
    StabilityCertificate, TargetSet, WeakIdentification,
};
use crate::error::{Error, Result};
use crate::inclusion::{integrate_perturbed_di, write_path_csv, Selection, Strategy};
use crate::policy::{Policy, PolicySpec};
use crate::presets;
use crate::simplex::ActionDist;
use crate::simulate::{apt_distance, harmonic, interpolate, run_learning, write_trajectory_csv, ShadowSettings, TieRule};

/// Caps the worker threads of a run.
pub const THREADS_VAR: &str = "MISSPEC_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Di,
    Equilibria,
    Classify,
    Apt,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Di => "di",
            Command::Equilibria => "equilibria",
            Command::Classify => "classify",
            Command::Apt => "apt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub record_every: u64,
    pub tie_rule: TieRule,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings { horizon: 10_000, seeds: vec![0], record_every: 1, tie_rule: TieRule::Lexicographic }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiSettings {
    /// Initial mixed action; the uniform mix when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    pub horizon: f64,
    pub step: f64,
    /// Stencil radius of the perturbed inclusion; zero integrates the plain one.
    pub epsilon: f64,
    pub strategy: Strategy,
}

impl Default for DiSettings {
    fn default() -> Self {
        DiSettings { start: None, horizon: 10.0, step: 1e-3, epsilon: 0.0, strategy: Strategy::Filippov }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub resolution: usize,
    pub tol: f64,
    /// Run stability tests on each equilibrium found.
    pub stability: bool,
    pub u_radius: f64,
    pub epsilon: f64,
    pub horizon: f64,
    pub samples: usize,
    pub branches: usize,
    pub step: f64,
    pub seed: u64,
    pub belief_resolution: usize,
    /// Half-width of the windows used to classify one-dimensional models.
    pub classify_window: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            resolution: 30,
            tol: crate::equilibrium::EQUILIBRIUM_TOL,
            stability: true,
            u_radius: 0.1,
            epsilon: 0.01,
            horizon: 10.0,
            samples: 8,
            branches: 4,
            step: 0.01,
            seed: 0,
            belief_resolution: 200,
            classify_window: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AptSettings {
    /// Periods at which shadowing starts.
    pub start_periods: Vec<u64>,
    /// Length of the shadowed window in inclusion time.
    pub window: f64,
    pub step: f64,
    pub strategy: Strategy,
}

impl Default for AptSettings {
    fn default() -> Self {
        AptSettings { start_periods: vec![100, 1000], window: 5.0, step: 1e-3, strategy: Strategy::Filippov }
    }
}

/// Everything a run needs, and everything a manifest records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Environment and policy.
    pub environment: EnvironmentDoc,
    #[serde(default)]
    pub simulate: SimulateSettings,
    #[serde(default)]
    pub di: DiSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub apt: AptSettings,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Syntax of written reports and the manifest.
    #[serde(default)]
    pub report_format: ReportFormat,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Toml,
}

impl ReportFormat {
    fn format(self) -> Format {
        match self {
            ReportFormat::Json => Format::Json,
            ReportFormat::Toml => Format::Toml,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Toml => "toml",
        }
    }
}

/// The named example with run settings suited to it.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let environment = presets::document(name)?;
    let mut config = ExperimentConfig {
        preset: Some(name.to_string()),
        environment,
        simulate: SimulateSettings::default(),
        di: DiSettings::default(),
        analysis: AnalysisSettings::default(),
        apt: AptSettings::default(),
        out: default_out(),
        report_format: ReportFormat::Json,
    };
    match name {
        "negative-reinforcement" => {
            config.di.start = Some(vec![1.0, 0.0]);
            config.di.horizon = 5.0;
            config.analysis.resolution = 20;
            config.analysis.u_radius = 0.4;
        }
        "triangle" | "robust-counterexample-base" => {
            config.di.start = Some(vec![2.0 / 3.0, 0.0, 1.0 / 3.0]);
            config.di.horizon = 20.0;
            config.di.strategy = Strategy::FixedSelection(Selection::Priority(vec![1, 2, 0]));
        }
        "redundant-action" => config.analysis.resolution = 12,
        "one-dimensional" | "positively-reinforcing" => config.analysis.resolution = 20,
        _ => {}
    }
    Ok(config)
}

/// Parses `a..b` (exclusive), `a..=b` or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let num = |s: &str| u64::from_str(s.trim()).map_err(|_| Error::InvalidArgument(format!("bad seed `{s}`")));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(format!("seed range `{text}` is empty")));
    }
    Ok(seeds)
}

/// Record written next to the outputs of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub outputs: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

/// Reads an experiment config, or the config recorded in a manifest.
pub fn load_config(text: &str, format: Format) -> Result<ExperimentConfig> {
    match parse::<ExperimentConfig>(text, format) {
        Ok(c) => Ok(c),
        Err(first) => parse::<Manifest>(text, format).map(|m| m.config).map_err(|_| first),
    }
}

pub fn config_digest(config: &ExperimentConfig) -> Result<String> {
    let text = serde_json::to_string(config)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Worker count from [`THREADS_VAR`], if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidArgument(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Serialize)]
struct EquilibriumEntry {
    sigma: Vec<f64>,
    residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    continuum: Option<Vec<Vec<f64>>>,
    weak_identification: WeakIdentification<f64>,
    berk_nash_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    attracting: Option<StabilityCertificate<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repelling: Option<StabilityCertificate<f64>>,
}

#[derive(Serialize)]
struct EquilibriaReport {
    equilibria: Vec<EquilibriumEntry>,
}

#[derive(Serialize)]
struct ModelEntry {
    theta: f64,
    class: ModelClass,
}

#[derive(Serialize)]
struct ClassifyReport {
    models: Vec<ModelEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    staircase: Option<Staircase<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    staircase_error: Option<String>,
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    env: Environment<f64>,
    policy: Policy<f64>,
    outputs: Vec<PathBuf>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn csv_out(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p)?;
        self.outputs.push(p);
        Ok(BufWriter::new(f))
    }

    fn report<S: Serialize>(&mut self, stem: &str, doc: &S) -> Result<()> {
        let fmt = self.config.report_format;
        let p = self.path(&format!("{stem}.{}", fmt.extension()));
        fs::write(&p, to_text(doc, fmt.format())?)?;
        self.outputs.push(p);
        Ok(())
    }

    fn simulate(&mut self) -> Result<()> {
        let s = &self.config.simulate;
        let runs = s
            .seeds
            .par_iter()
            .map(|&seed| run_learning(&self.env, &self.policy, s.horizon, seed, s.tie_rule, s.record_every))
            .collect::<Result<Vec<_>>>()?;
        for traj in &runs {
            let out = self.csv_out(&format!("trajectory_seed{}.csv", traj.seed))?;
            write_trajectory_csv(&self.env, traj, out)?;
        }
        Ok(())
    }

    fn di(&mut self) -> Result<()> {
        let d = &self.config.di;
        let n = self.env.n_actions();
        let start = match &d.start {
            Some(v) => ActionDist::new(v.clone())?,
            None => ActionDist::uniform(n),
        };
        let paths = integrate_perturbed_di(&self.env, &self.policy, &start, d.horizon, d.step, d.epsilon, &d.strategy)?;
        for (k, p) in paths.iter().enumerate() {
            let out = self.csv_out(&format!("di_path_{k}.csv"))?;
            write_path_csv(self.env.actions(), p, out)?;
        }
        Ok(())
    }

    fn equilibria(&mut self) -> Result<()> {
        let a = &self.config.analysis;
        let found = find_equilibria(&self.env, &self.policy, a.resolution, a.tol)?;
        let mut entries = Vec::new();
        for e in &found {
            let (attracting, repelling) = if a.stability {
                let mut att = AttractSettings::new(a.u_radius, a.epsilon, a.horizon);
                att.n_init = a.samples;
                att.n_branch = a.branches;
                att.step = a.step;
                att.seed = a.seed;
                let mut rep = RepelSettings::new(a.u_radius, a.horizon);
                rep.n_sigma = a.samples;
                rep.n_branch = a.branches;
                rep.step = a.step;
                rep.seed = a.seed;
                let cert = test_attracting(&self.env, &self.policy, &TargetSet::point(&e.sigma), &att)?;
                (Some(cert), test_repelling(&self.env, &self.policy, &e.sigma, &rep).ok())
            } else {
                (None, None)
            };
            entries.push(EquilibriumEntry {
                sigma: e.sigma.weights().to_vec(),
                residual: e.residual,
                continuum: e.continuum.as_ref().map(|c| c.iter().map(|p| p.weights().to_vec()).collect()),
                weak_identification: check_weak_identification(&self.env, &e.sigma, a.tol)?,
                berk_nash_residual: berk_nash_residual(&self.env, &e.sigma, a.belief_resolution)?,
                attracting,
                repelling,
            });
        }
        self.report("equilibria", &EquilibriaReport { equilibria: entries })
    }

    fn classify(&mut self) -> Result<()> {
        let w = self.config.analysis.classify_window;
        let models = equilibrium_models(&self.env, &self.policy)?
            .into_iter()
            .map(|theta| Ok(ModelEntry { theta, class: classify_model(&self.env, &self.policy, theta, w)? }))
            .collect::<Result<Vec<_>>>()?;
        let (staircase, staircase_error) = match build_staircase(&self.env, &self.policy) {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.report("classify", &ClassifyReport { models, staircase, staircase_error })
    }

    fn apt(&mut self) -> Result<()> {
        let s = &self.config.simulate;
        let a = &self.config.apt;
        let last = a.start_periods.iter().copied().max().unwrap_or(0);
        let settings = ShadowSettings { step: a.step, strategy: a.strategy.clone() };
        let rows = s
            .seeds
            .par_iter()
            .map(|&seed| {
                let traj = run_learning(&self.env, &self.policy, s.horizon, seed, s.tie_rule, s.record_every)?;
                let interp = interpolate(&traj)?;
                a.start_periods
                    .iter()
                    .map(|&t| {
                        let tau = harmonic(t);
                        let d = apt_distance(&self.env, &self.policy, &interp, tau, a.window, &settings)?;
                        Ok((seed, t, tau, d))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::Coverage { .. } => {
                    Error::InvalidArgument(format!("horizon {} does not cover period {last} plus the window: {e}", s.horizon))
                }
                other => other,
            })?;
        let mut w = csv::Writer::from_writer(self.csv_out("apt.csv")?);
        w.write_record(["seed", "start_period", "tau", "distance"])?;
        for (seed, t, tau, d) in rows.into_iter().flatten() {
            w.write_record([seed.to_string(), t.to_string(), tau.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validate(config: &ExperimentConfig, command: Command) -> Result<()> {
    if let Some(name) = &config.preset {
        if !presets::NAMES.contains(&name.as_str()) {
            return Err(Error::UnknownPreset(name.clone()));
        }
    }
    if matches!(command, Command::Simulate | Command::Apt) && config.simulate.seeds.is_empty() {
        return Err(Error::InvalidArgument("the seed list is empty".into()));
    }
    Ok(())
}

/// Runs `command`, writing its outputs and `manifest.<ext>` into the output
/// directory. Returns every path written, the manifest last.
pub fn run_experiment(config: &ExperimentConfig, command: Command) -> Result<Vec<PathBuf>> {
    validate(config, command)?;
    let started = Instant::now();
    let env: Environment<f64> = config.environment.build()?;
    let spec = config.environment.policy_spec(&env)?.unwrap_or_else(PolicySpec::myopic);
    let policy = Policy::new(&env, spec)?;
    fs::create_dir_all(&config.out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let threads = pool.current_num_threads();
    let mut run = Run { config, env, policy, outputs: Vec::new() };
    pool.install(|| match command {
        Command::Simulate => run.simulate(),
        Command::Di => run.di(),
        Command::Equilibria => run.equilibria(),
        Command::Classify => run.classify(),
        Command::Apt => run.apt(),
    })?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_digest(config)?,
        seeds: if matches!(command, Command::Simulate | Command::Apt) { config.simulate.seeds.clone() } else { vec![] },
        threads,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        outputs: run.outputs.clone(),
        config: config.clone(),
    };
    let fmt = config.report_format;
    let path = config.out.join(format!("manifest.{}", fmt.extension()));
    fs::write(&path, to_text(&manifest, fmt.format())?)?;
    let mut outputs = run.outputs;
    outputs.push(path);
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 9").unwrap(), vec![7, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn presets_resolve() {
        for name in presets::NAMES {
            let c = preset(name).unwrap();
            assert_eq!(c.preset.as_deref(), Some(name));
            let text = to_text(&c, Format::Json).unwrap();
            assert_eq!(load_config(&text, Format::Json).unwrap(), c);
        }
        assert!(matches!(preset("no-such"), Err(Error::UnknownPreset(_))));
        let one = preset("one-dimensional").unwrap();
        let Some(crate::config::PolicyDoc::Table1d { breakpoints, .. }) = &one.environment.policy else {
            panic!("interval table expected");
        };
        assert_eq!(breakpoints, &vec![1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn toml_round_trip() {
        let c = preset("triangle").unwrap();
        let text = to_text(&c, Format::Toml).unwrap();
        assert_eq!(load_config(&text, Format::Toml).unwrap(), c);
    }

    #[test]
    fn simulate_writes_one_file_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = preset("negative-reinforcement").unwrap();
        c.simulate.seeds = (0..10).collect();
        c.simulate.horizon = 200;
        c.out = dir.path().to_path_buf();
        let out = run_experiment(&c, Command::Simulate).unwrap();
        assert_eq!(out.len(), 11);
        assert!(out.last().unwrap().ends_with("manifest.json"));
        let text = fs::read_to_string(out.last().unwrap()).unwrap();
        let again = load_config(&text, Format::Json).unwrap();
        assert_eq!(again, c);
    }
}
