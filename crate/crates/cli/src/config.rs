//! Experiment configuration files.
//!
//! A config names the source tasks, the test tasks, the caution factor and
//! the methods to run. Task files referenced by path are resolved relative to
//! the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cat_core::gridworld::GridConfig;
use cat_core::mdp::TabularMdp;
use cat_core::{CautionSpec, GridWorld, OccupancyMeasure};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RiskNeutral,
    Cat,
    CatSf,
    PrimalVariance,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::RiskNeutral,
        Method::Cat,
        Method::CatSf,
        Method::PrimalVariance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::RiskNeutral => "risk_neutral",
            Method::Cat => "cat",
            Method::CatSf => "cat_sf",
            Method::PrimalVariance => "primal_variance",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                CliError::Schema(format!(
                    "unknown method `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Method::from_str)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(CliError::Schema("empty method list".into()));
    }
    Ok(methods)
}

/// Where a task comes from. Exactly one of `grid`, `grid_file` and
/// `mdp_file` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp_file: Option<PathBuf>,
    /// Danger states of a raw MDP task; grid tasks take them from the layout.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub danger_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            episodes: default_episodes(),
            seed: 0,
        }
    }
}

/// Parameters of the return-variance baseline. `c` defaults to the
/// experiment's caution weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default = "default_variance_rollouts")]
    pub n_rollouts: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Kept apart from the evaluation seed so that reseeding the rollouts
    /// leaves every transferred policy unchanged.
    #[serde(default)]
    pub seed: u64,
}

impl Default for PrimalConfig {
    fn default() -> Self {
        Self {
            c: None,
            n_rollouts: default_variance_rollouts(),
            horizon: default_horizon(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_instances")]
    pub random_instances: usize,
    #[serde(default = "default_bounds_seed")]
    pub seed: u64,
    #[serde(default = "default_margin")]
    pub feasible_margin: f64,
    /// Also check every test task against the trained library.
    #[serde(default = "default_true")]
    pub include_tasks: bool,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            random_instances: default_instances(),
            seed: default_bounds_seed(),
            feasible_margin: default_margin(),
            include_tasks: true,
        }
    }
}

fn default_horizon() -> usize {
    200
}
fn default_episodes() -> usize {
    1000
}
fn default_variance_rollouts() -> usize {
    300
}
fn default_instances() -> usize {
    200
}
fn default_bounds_seed() -> u64 {
    2024
}
fn default_margin() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_caution() -> CautionConfig {
    CautionConfig::Barrier {
        danger_states: Vec::new(),
        delta: 0.5,
    }
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Caution factor as written in a config. The KL expert occupancy may be
/// given inline or as a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CautionConfig {
    None,
    Barrier {
        #[serde(default)]
        danger_states: Vec<usize>,
        delta: f64,
    },
    Variance,
    Kl {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expert_occupancy: Option<OccupancyMeasure>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expert_occupancy_file: Option<PathBuf>,
    },
}

impl CautionConfig {
    fn resolve(&self, base: &Path) -> Result<CautionSpec> {
        Ok(match self {
            CautionConfig::None => CautionSpec::None,
            CautionConfig::Barrier {
                danger_states,
                delta,
            } => CautionSpec::barrier(danger_states.clone(), *delta),
            CautionConfig::Variance => CautionSpec::Variance,
            CautionConfig::Kl {
                expert_occupancy,
                expert_occupancy_file,
            } => {
                let expert = match (expert_occupancy, expert_occupancy_file) {
                    (Some(d), None) => d.clone(),
                    (None, Some(path)) => read_json(&base.join(path))?,
                    _ => {
                        return Err(CliError::Schema(
                            "kl caution needs exactly one of `expert_occupancy`, `expert_occupancy_file`".into(),
                        ))
                    }
                };
                CautionSpec::KlToExpert {
                    expert_occupancy: expert,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub sources: Vec<TaskSpec>,
    pub tests: Vec<TaskSpec>,
    /// With an empty danger list a barrier uses each test task's own danger
    /// cells.
    #[serde(default = "default_caution")]
    pub caution: CautionConfig,
    pub c: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub primal_variance: PrimalConfig,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A task with its MDP built.
#[derive(Debug, Clone)]
pub struct Task {
    pub id: String,
    pub mdp: TabularMdp,
    pub grid: Option<GridWorld>,
    pub danger_states: Vec<usize>,
}

impl Task {
    /// Reward weights for one-hot next-state features, when the task's
    /// rewards depend only on the entered state.
    pub fn one_hot_weights(&self) -> Result<Vec<f64>> {
        if let Some(grid) = &self.grid {
            return Ok(grid.reward_weights());
        }
        let features = cat_core::FeatureMap::one_hot_next_state(self.mdp.n_states());
        let raw = self.mdp.reward_raw().ok_or_else(|| {
            CliError::Schema(format!(
                "task `{}` has no transition rewards to fit features to",
                self.id
            ))
        })?;
        let fit = cat_core::successor::fit_weights(&features, self.mdp.n_actions(), raw)?;
        if fit.max_residual > 1e-9 {
            return Err(CliError::Runtime(format!(
                "task `{}` rewards are not a function of the next state (fit residual {:.3e})",
                self.id, fit.max_residual
            )));
        }
        Ok(fit.weights)
    }
}

/// A loaded config with task files resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// The config's caution with any referenced file loaded.
    pub caution: CautionSpec,
    pub sources: Vec<Task>,
    pub tests: Vec<Task>,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

impl TaskSpec {
    fn build(&self, base: &Path) -> Result<Task> {
        let set = [
            self.grid.is_some(),
            self.grid_file.is_some(),
            self.mdp_file.is_some(),
        ];
        if set.iter().filter(|x| **x).count() != 1 {
            return Err(CliError::Schema(format!(
                "task `{}` needs exactly one of `grid`, `grid_file`, `mdp_file`",
                self.id
            )));
        }
        let schema = |e: cat_core::CatError| CliError::Schema(format!("task `{}`: {e}", self.id));
        let grid = match (&self.grid, &self.grid_file) {
            (Some(g), _) => Some(g.clone()),
            (_, Some(path)) => Some(read_json::<GridConfig>(&base.join(path))?),
            _ => None,
        };
        if let Some(g) = grid {
            if !self.danger_states.is_empty() {
                return Err(CliError::Schema(format!(
                    "task `{}`: grid tasks take danger cells from the layout",
                    self.id
                )));
            }
            let world = GridWorld::new(g).map_err(schema)?;
            return Ok(Task {
                id: self.id.clone(),
                mdp: world.mdp().clone(),
                danger_states: world.danger_states().to_vec(),
                grid: Some(world),
            });
        }
        let path = base.join(self.mdp_file.as_ref().expect("checked above"));
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mdp = TabularMdp::from_json(&text).map_err(schema)?;
        if let Some(&bad) = self.danger_states.iter().find(|&&s| s >= mdp.n_states()) {
            return Err(CliError::Schema(format!(
                "task `{}`: danger state {bad} out of range",
                self.id
            )));
        }
        Ok(Task {
            id: self.id.clone(),
            mdp,
            grid: None,
            danger_states: self.danger_states.clone(),
        })
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.sources.is_empty() || self.tests.is_empty() {
            return Err(CliError::Schema(
                "need at least one source and one test task".into(),
            ));
        }
        let mut ids: Vec<&str> = self
            .sources
            .iter()
            .chain(&self.tests)
            .map(|t| t.id.as_str())
            .collect();
        if let Some(bad) = ids
            .iter()
            .find(|id| id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.'))
        {
            return Err(CliError::Schema(format!(
                "task id `{bad}` is not a valid file name"
            )));
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Schema(format!("duplicate task id `{}`", w[0])));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(CliError::Schema(format!(
                "c must be a finite value >= 0, got {}",
                self.c
            )));
        }
        if let Some(c) = self.primal_variance.c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(CliError::Schema(format!(
                    "primal_variance.c must be >= 0, got {c}"
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(CliError::Schema("empty method list".into()));
        }
        if self.rollout.horizon == 0 || self.rollout.episodes == 0 {
            return Err(CliError::Schema(
                "rollout horizon and episodes must be positive".into(),
            ));
        }
        if self.primal_variance.horizon == 0 || self.primal_variance.n_rollouts == 0 {
            return Err(CliError::Schema(
                "primal_variance horizon and n_rollouts must be positive".into(),
            ));
        }
        if let CautionConfig::Barrier { delta, .. } = self.caution {
            if !(delta > 0.0 && delta <= 1.0) {
                return Err(CliError::Schema(format!(
                    "barrier delta {delta} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Hash of the part of the config that determines the trained library.
    pub fn sources_hash(&self) -> String {
        hash_json(&self.sources)
    }

    /// Primal-variance weight, defaulting to the caution weight.
    pub fn primal_c(&self) -> f64 {
        self.primal_variance.c.unwrap_or(self.c)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    hex::encode(Sha256::digest(&bytes))
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let config: ExperimentConfig = read_json(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(config, base_dir)
    }

    pub fn from_config(config: ExperimentConfig, base_dir: PathBuf) -> Result<Self> {
        config.validate()?;
        let sources = config
            .sources
            .iter()
            .map(|t| t.build(&base_dir))
            .collect::<Result<Vec<_>>>()?;
        let tests = config
            .tests
            .iter()
            .map(|t| t.build(&base_dir))
            .collect::<Result<Vec<_>>>()?;
        let first = &sources[0].mdp;
        for task in sources.iter().chain(&tests) {
            if !task.mdp.same_dynamics(first) {
                return Err(CliError::Schema(format!(
                    "task `{}` does not share the dynamics of `{}`",
                    task.id, sources[0].id
                )));
            }
        }
        let caution = config.caution.resolve(&base_dir)?;
        caution
            .validate(first.n_states(), first.n_actions())
            .map_err(|e| CliError::Schema(format!("caution: {e}")))?;
        Ok(Self {
            config,
            base_dir,
            caution,
            sources,
            tests,
        })
    }

    /// Caution spec for one test task: an empty barrier danger list picks up
    /// the task's danger states.
    pub fn caution_for(&self, task: &Task) -> CautionSpec {
        match &self.caution {
            CautionSpec::Barrier {
                danger_states,
                delta,
            } if danger_states.is_empty() => {
                CautionSpec::barrier(task.danger_states.clone(), *delta)
            }
            other => other.clone(),
        }
    }

    /// Output directory: the command-line value, else the config's
    /// `output_dir` (relative to the config file), else `out/<name>`.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        match (cli, &self.config.output_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.base_dir.join(p),
            (None, None) => PathBuf::from("out").join(&self.config.name),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        let grid = GridConfig::new(3, 1, [0, 0], [2, 0]);
        ExperimentConfig {
            schema_version: 1,
            name: "tiny".into(),
            description: None,
            sources: vec![TaskSpec {
                id: "src".into(),
                grid: Some(grid.clone()),
                grid_file: None,
                mdp_file: None,
                danger_states: vec![],
            }],
            tests: vec![TaskSpec {
                id: "test".into(),
                grid: Some(grid.with_danger(vec![[1, 0]])),
                grid_file: None,
                mdp_file: None,
                danger_states: vec![],
            }],
            caution: default_caution(),
            c: 1.0,
            methods: default_methods(),
            primal_variance: PrimalConfig::default(),
            rollout: RolloutConfig::default(),
            bounds: BoundsConfig::default(),
            output_dir: None,
        }
    }

    #[test]
    fn methods_parse() {
        assert_eq!(
            parse_methods("cat, risk_neutral").unwrap(),
            vec![Method::Cat, Method::RiskNeutral]
        );
        assert_eq!(parse_methods("bogus").unwrap_err().exit_code(), 2);
        assert!(parse_methods(",").is_err());
    }

    #[test]
    fn validation() {
        assert!(minimal().validate().is_ok());
        let mut c = minimal();
        c.c = -1.0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = minimal();
        c.tests[0].id = "src".into();
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.schema_version = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn barrier_defaults_to_task_danger() {
        let exp = Experiment::from_config(minimal(), PathBuf::new()).unwrap();
        assert_eq!(
            exp.caution_for(&exp.tests[0]),
            CautionSpec::barrier(vec![1], 0.5)
        );
    }

    #[test]
    fn kl_expert_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::from_config(minimal(), PathBuf::new()).unwrap();
        let mdp = &exp.tests[0].mdp;
        let uniform = cat_core::TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        let d = cat_core::occupancy::compute_occupancy(mdp, &uniform).unwrap();
        std::fs::write(
            dir.path().join("expert.json"),
            serde_json::to_vec(&d).unwrap(),
        )
        .unwrap();
        let mut c = minimal();
        c.caution = CautionConfig::Kl {
            expert_occupancy: None,
            expert_occupancy_file: Some("expert.json".into()),
        };
        let exp = Experiment::from_config(c.clone(), dir.path().to_path_buf()).unwrap();
        assert_eq!(
            exp.caution,
            CautionSpec::KlToExpert {
                expert_occupancy: d
            }
        );
        assert_eq!(
            Experiment::from_config(c, PathBuf::from("/nowhere"))
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = minimal();
        let mut b = minimal();
        assert_eq!(a.hash(), b.hash());
        b.c = 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.sources_hash(), b.sources_hash());
    }

    #[test]
    fn task_needs_one_source() {
        let mut c = minimal();
        c.tests[0].grid_file = Some("x.json".into());
        assert_eq!(
            Experiment::from_config(c, PathBuf::new())
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn missing_file_is_a_schema_error() {
        let mut c = minimal();
        c.tests[0].grid = None;
        c.tests[0].grid_file = Some("does-not-exist.json".into());
        let err = Experiment::from_config(c, PathBuf::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("does-not-exist.json"));
    }
}
